import numpy as np
import pytest

from polymodel.errors import NumericalError
from polymodel.itf import (DOWN, UNCHANGED, UP, ModelConfig, NormStats,
                           SampleTensor, TrainSchedule, apply_norm, attention,
                           build_dataset, embed, fit_norm_stats, forward,
                           init_params, label_trend, layer_norm,
                           load_checkpoint, loss_and_gradients, predict_panel,
                           save_checkpoint, train)
from polymodel.features import FEATURE_NAMES, FeatureFrame
from polymodel.panel import MonthIndex, fund

SMALL = ModelConfig(lookback=6, n_variates=5, d_model=8, n_heads=2, n_blocks=1)
FRAME_CFG = ModelConfig(lookback=6, n_variates=9, d_model=8, n_heads=2,
                        n_blocks=1)


def random_batch(rng, cfg, size=3):
    return [SampleTensor(values=rng.normal(size=(cfg.n_variates,
                                                 cfg.lookback)),
                         label=int(rng.integers(0, 3)))
            for _ in range(size)]


class TestLabelTrend:
    @pytest.mark.parametrize("r,tau,expected", [
        (0.02, 0.005, UP),
        (-0.001, 0.005, UNCHANGED),
        (-0.005, 0.005, UNCHANGED),   # boundary inclusive
        (0.005, 0.005, UNCHANGED),
        (-0.02, 0.005, DOWN),
    ])
    def test_cases(self, r, tau, expected):
        assert label_trend(r, tau) == expected


class TestEmbed:
    def test_zero_weights_constant_token(self):
        params = init_params(SMALL, seed=0)
        params["embed.W1"][:] = 0.0
        params["embed.W2"][:] = 0.0
        params["embed.b2"][:] = np.arange(SMALL.d_model)
        out = embed(np.random.default_rng(0).normal(size=(5, 6)), params)
        for row in out:
            np.testing.assert_array_equal(row, np.arange(SMALL.d_model))

    def test_permuting_variates_permutes_tokens(self):
        params = init_params(SMALL, seed=1)
        x = np.random.default_rng(1).normal(size=(5, 6))
        perm = np.array([3, 0, 4, 1, 2])
        np.testing.assert_allclose(embed(x[perm], params),
                                   embed(x, params)[perm], rtol=1e-12)

    def test_matches_matrix_oracle(self):
        rng = np.random.default_rng(2)
        cfg = ModelConfig(lookback=8, n_variates=4, d_model=8, n_heads=2,
                          n_blocks=1)
        params = init_params(cfg, seed=2)
        x = rng.normal(size=(4, 8))
        oracle = np.tanh(x @ params["embed.W1"] + params["embed.b1"]) \
            @ params["embed.W2"] + params["embed.b2"]
        np.testing.assert_allclose(embed(x, params), oracle, atol=1e-12)


class TestLayerNorm:
    def test_hand_computation(self):
        out = layer_norm(np.array([[1.0, 2.0, 3.0]]), np.ones(3), np.zeros(3))
        np.testing.assert_allclose(out[0], [-1.2247, 0.0, 1.2247], atol=1e-3)

    def test_constant_token_all_zeros(self):
        out = layer_norm(np.full((2, 8), 3.3), np.ones(8), np.zeros(8))
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_gain_bias_on_normalized_token(self):
        t = np.array([[-1.0, 1.0, -1.0, 1.0]])
        t = t / t.std()  # already zero mean, unit population variance
        g, b = np.full(4, 2.0), np.full(4, 0.5)
        out = layer_norm(t, g, b)
        np.testing.assert_allclose(out, g * t * (1 / np.sqrt(1 + 1e-5)) + b,
                                   atol=1e-12)

    def test_output_statistics(self):
        rng = np.random.default_rng(3)
        out = layer_norm(rng.normal(size=(7, 32)), np.ones(32), np.zeros(32))
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-4)


class TestAttention:
    def test_single_token(self):
        params = init_params(SMALL, seed=4)
        x = np.random.default_rng(4).normal(size=(1, SMALL.d_model))
        out = attention(x, params, block=0, n_heads=SMALL.n_heads)
        # with one token, softmax weight is 1: output = v @ wo + residual
        v = x @ params["block0.wv"]
        expected = v @ params["block0.wo"] + x
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_permutation_equivariance(self):
        params = init_params(SMALL, seed=5)
        x = np.random.default_rng(5).normal(size=(5, SMALL.d_model))
        perm = np.array([4, 2, 0, 3, 1])
        out = attention(x, params, 0, SMALL.n_heads)
        out_p = attention(x[perm], params, 0, SMALL.n_heads)
        np.testing.assert_allclose(out_p, out[perm], atol=1e-10)

    def test_softmax_rows_sum_to_one(self):
        from polymodel.itf import _softmax

        rng = np.random.default_rng(6)
        s = _softmax(rng.normal(size=(3, 2, 5, 5)))
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-9)


class TestForward:
    def test_zero_head_uniform(self):
        params = init_params(SMALL, seed=7)
        params["head.W"][:] = 0.0
        params["head.b"][:] = 0.0
        x = np.random.default_rng(7).normal(size=(5, 6))
        np.testing.assert_allclose(forward(x, params, SMALL), 1 / 3,
                                   atol=1e-12)

    def test_probs_sum_to_one(self):
        rng = np.random.default_rng(8)
        for seed in range(5):
            params = init_params(SMALL, seed=seed)
            probs = forward(rng.normal(size=(5, 6)), params, SMALL)
            assert probs.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(probs >= 0)

    def test_variate_permutation_invariance(self):
        rng = np.random.default_rng(9)
        params = init_params(SMALL, seed=9)
        x = rng.normal(size=(5, 6))
        perm = rng.permutation(5)
        np.testing.assert_allclose(forward(x[perm], params, SMALL),
                                   forward(x, params, SMALL), atol=1e-9)

    def test_nonfinite_input_raises(self):
        params = init_params(SMALL, seed=10)
        x = np.zeros((5, 6))
        x[0, 0] = np.nan
        with pytest.raises(NumericalError):
            forward(x, params, SMALL)


def finite_difference_grads(batch, params, cfg, name, eps=1e-5):
    grad = np.zeros_like(params[name])
    flat = params[name].ravel()
    out = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up, _ = loss_and_gradients(batch, params, cfg)
        flat[i] = orig - eps
        down, _ = loss_and_gradients(batch, params, cfg)
        flat[i] = orig
        out[i] = (up - down) / (2 * eps)
    return grad


class TestGradients:
    def test_uniform_loss_is_log3(self):
        params = init_params(SMALL, seed=11)
        params["head.W"][:] = 0.0
        params["head.b"][:] = 0.0
        batch = random_batch(np.random.default_rng(11), SMALL)
        loss, _ = loss_and_gradients(batch, params, SMALL)
        assert loss == pytest.approx(np.log(3.0), rel=1e-12)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        params = init_params(SMALL, seed=12)
        batch = random_batch(rng, SMALL, size=2)
        _, grads = loss_and_gradients(batch, params, SMALL)
        for name in params:
            fd = finite_difference_grads(batch, params, SMALL, name)
            np.testing.assert_allclose(grads[name], fd, rtol=1e-4, atol=1e-7,
                                       err_msg=name)

    def test_duplicated_sample_reweights_gradient(self):
        rng = np.random.default_rng(13)
        params = init_params(SMALL, seed=13)
        a, b = random_batch(rng, SMALL, size=2)
        _, g_ab = loss_and_gradients([a, b], params, SMALL)
        _, g_aab = loss_and_gradients([a, a, b], params, SMALL)
        _, g_a = loss_and_gradients([a], params, SMALL)
        _, g_b = loss_and_gradients([b], params, SMALL)
        for name in params:
            expected = (2 * g_a[name] + g_b[name]) / 3
            np.testing.assert_allclose(g_aab[name], expected, atol=1e-12,
                                       err_msg=name)
            np.testing.assert_allclose(g_ab[name],
                                       (g_a[name] + g_b[name]) / 2,
                                       atol=1e-12)


def toy_dataset(rng, cfg, size=120):
    """The first variate's last value alone determines the class."""
    samples = []
    for _ in range(size):
        x = rng.normal(size=(cfg.n_variates, cfg.lookback))
        v = x[0, -1]
        label = UP if v > 0.5 else DOWN if v < -0.5 else UNCHANGED
        samples.append(SampleTensor(values=x, label=label))
    return samples


class TestTrain:
    def test_planted_rule_reaches_95pct(self):
        rng = np.random.default_rng(14)
        dataset = toy_dataset(rng, SMALL)
        params = init_params(SMALL, seed=14)
        schedule = TrainSchedule(epochs=200, batch_size=32, seed=14)
        fitted, trace = train(dataset, params, SMALL, schedule)
        assert trace[-1].accuracy >= 0.95
        assert trace[-1].loss < trace[0].loss

    def test_zero_learning_rate_keeps_params(self):
        rng = np.random.default_rng(15)
        dataset = toy_dataset(rng, SMALL, size=20)
        params = init_params(SMALL, seed=15)
        schedule = TrainSchedule(epochs=3, learning_rate=0.0, seed=15)
        fitted, _ = train(dataset, params, SMALL, schedule)
        for name in params:
            np.testing.assert_array_equal(fitted[name], params[name])

    def test_deterministic_trace(self):
        rng = np.random.default_rng(16)
        dataset = toy_dataset(rng, SMALL, size=40)
        params = init_params(SMALL, seed=16)
        schedule = TrainSchedule(epochs=5, seed=16)
        _, t1 = train(dataset, params, SMALL, schedule)
        _, t2 = train(dataset, params, SMALL, schedule)
        assert t1 == t2


def make_frames(fund_name, start, n, valid_mask=None):
    frames = []
    rng = np.random.default_rng(hash(fund_name) % 2 ** 32)
    for k in range(n):
        fr = FeatureFrame(fund=fund(fund_name), month=start.shift(k))
        for name in FEATURE_NAMES:
            setattr(fr, name, float(rng.normal()))
        fr.valid = True if valid_mask is None else bool(valid_mask[k])
        frames.append(fr)
    return frames


class TestDatasetAssembly:
    def test_build_dataset_counts_and_labels(self):
        cfg = FRAME_CFG
        start = MonthIndex(2010, 1)
        frames = make_frames("A", start, 10)
        returns = {start.shift(k): 0.02 if k % 2 else -0.02 for k in range(11)}

        def next_ret(fund_id, month):
            return returns.get(month.shift(1))

        samples = build_dataset(frames, next_ret, cfg, tau=0.005)
        # lookback 6 over 10 months -> ends at offsets 5..9
        assert len(samples) == 5
        for _, month, s in samples:
            k = month.ordinal() - start.ordinal() + 1
            expected = UP if k % 2 else DOWN
            assert s.label == expected

    def test_invalid_frame_breaks_lookback(self):
        cfg = FRAME_CFG
        start = MonthIndex(2010, 1)
        mask = [True] * 10
        mask[7] = False
        frames = make_frames("A", start, 10, valid_mask=mask)
        samples = build_dataset(frames, lambda f, m: 0.01, cfg, tau=0.005)
        months = {m for _, m, _ in samples}
        assert months == {start.shift(5), start.shift(6)}

    def test_predict_panel_eligibility(self):
        cfg = FRAME_CFG
        start = MonthIndex(2010, 1)
        frames = make_frames("A", start, 10) + make_frames("B", start, 3)
        params = init_params(cfg, seed=17)
        stats = NormStats(mean=np.zeros(cfg.n_variates),
                          sd=np.ones(cfg.n_variates))
        forecasts, skipped = predict_panel(frames, params, cfg, stats,
                                           start.shift(9))
        assert [f.fund for f in forecasts] == [fund("A")]
        assert skipped == {fund("B"): "IncompleteLookback"}
        assert forecasts[0].probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_norm_stats_roundtrip(self):
        rng = np.random.default_rng(18)
        samples = [SampleTensor(values=rng.normal(2.0, 3.0, size=(5, 6)),
                                label=0) for _ in range(10)]
        stats = fit_norm_stats(samples)
        normed = [apply_norm(s, stats) for s in samples]
        stacked = np.concatenate([s.values for s in normed], axis=1)
        np.testing.assert_allclose(stacked.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(stacked.std(axis=1), 1.0, atol=1e-12)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        params = init_params(SMALL, seed=19)
        stats = NormStats(mean=np.arange(5.0), sd=np.ones(5) * 2)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, params, SMALL, stats)
        params2, cfg2, stats2 = load_checkpoint(path)
        assert cfg2 == SMALL
        np.testing.assert_array_equal(stats2.mean, stats.mean)
        assert set(params2) == set(params)
        for name in params:
            np.testing.assert_array_equal(params2[name], params[name])
