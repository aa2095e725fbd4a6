"""Inverted-transformer trend classifier, implemented from scratch in numpy.

Each feature's whole lookback row becomes one token (no positional encoding);
self-attention runs across feature tokens; a mean-pooled affine head gives
3-class trend probabilities. Gradients are hand-derived reverse mode and are
checked against central finite differences in the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .features import FEATURE_NAMES, FeatureFrame
from .panel import MonthIndex, SeriesId

DOWN, UNCHANGED, UP = 0, 1, 2
CLASS_NAMES = ("down", "unchanged", "up")
LN_EPS = 1e-5


def label_trend(next_return: float, tau: float) -> int:
    """Up if r > tau, Down if r < -tau, Unchanged otherwise (boundaries in)."""
    if next_return > tau:
        return UP
    if next_return < -tau:
        return DOWN
    return UNCHANGED


@dataclass(frozen=True)
class ModelConfig:
    lookback: int = 12      # T, months per token
    n_variates: int = len(FEATURE_NAMES)
    d_model: int = 32       # D
    n_heads: int = 2
    n_blocks: int = 2

    @property
    def d_head(self) -> int:
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        return self.d_model // self.n_heads

    @property
    def d_ff(self) -> int:
        return 4 * self.d_model


@dataclass
class SampleTensor:
    values: np.ndarray      # (n_variates, lookback)
    label: int


@dataclass
class TrendForecast:
    fund: SeriesId
    month: MonthIndex
    probs: np.ndarray       # (down, unchanged, up), sums to 1

    def p_positive(self, include_half_unchanged: bool = False) -> float:
        p = float(self.probs[UP])
        if include_half_unchanged:
            p += 0.5 * float(self.probs[UNCHANGED])
        return p


Params = dict[str, np.ndarray]


def init_params(cfg: ModelConfig, seed: int) -> Params:
    rng = np.random.Generator(np.random.Philox(key=seed))
    T, D, F = cfg.lookback, cfg.d_model, cfg.d_ff

    def mat(rows, cols):
        return rng.normal(0.0, 1.0 / np.sqrt(rows), size=(rows, cols))

    params: Params = {
        "embed.W1": mat(T, D), "embed.b1": np.zeros(D),
        "embed.W2": mat(D, D), "embed.b2": np.zeros(D),
        "head.W": mat(D, 3), "head.b": np.zeros(3),
    }
    for l in range(cfg.n_blocks):
        p = f"block{l}."
        params[p + "ln1.g"] = np.ones(D)
        params[p + "ln1.b"] = np.zeros(D)
        params[p + "wq"] = mat(D, D)
        params[p + "wk"] = mat(D, D)
        params[p + "wv"] = mat(D, D)
        params[p + "wo"] = mat(D, D)
        params[p + "ln2.g"] = np.ones(D)
        params[p + "ln2.b"] = np.zeros(D)
        params[p + "ff.W1"] = mat(D, F)
        params[p + "ff.b1"] = np.zeros(F)
        params[p + "ff.W2"] = mat(F, D)
        params[p + "ff.b2"] = np.zeros(D)
    return params


def _check_finite(x: np.ndarray, layer: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite activations in {layer}")


def _layer_norm_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv, g)


def _layer_norm_backward(dy, cache):
    xhat, inv, g = cache
    dg = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    db = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dg, db


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x, n_heads):
    # (B, N, D) -> (B, h, N, d_head)
    B, N, D = x.shape
    return x.reshape(B, N, n_heads, D // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, h, N, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, N, h * dh)


def embed(values: np.ndarray, params: Params) -> np.ndarray:
    """Shared two-layer MLP mapping each variate's lookback row to a token."""
    x = np.asarray(values, dtype=float)
    hidden = np.tanh(x @ params["embed.W1"] + params["embed.b1"])
    return hidden @ params["embed.W2"] + params["embed.b2"]


def layer_norm(tokens: np.ndarray, gain: np.ndarray, bias: np.ndarray
               ) -> np.ndarray:
    out, _ = _layer_norm_forward(np.asarray(tokens, dtype=float), gain, bias)
    return out


def attention(tokens: np.ndarray, params: Params, block: int,
              n_heads: int) -> np.ndarray:
    """Multi-head self-attention over variate tokens plus residual."""
    x = np.asarray(tokens, dtype=float)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    out, _ = _attention_forward(x, params, f"block{block}.", n_heads)
    out = out + x
    return out[0] if squeeze else out


def _attention_forward(h, params, prefix, n_heads):
    dh = h.shape[-1] // n_heads
    q = _split_heads(h @ params[prefix + "wq"], n_heads)
    k = _split_heads(h @ params[prefix + "wk"], n_heads)
    v = _split_heads(h @ params[prefix + "wv"], n_heads)
    scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh)
    attn = _softmax(scores)
    ctx = _merge_heads(attn @ v)
    out = ctx @ params[prefix + "wo"]
    return out, (h, q, k, v, attn, ctx)


def _attention_backward(dout, cache, params, prefix, n_heads, grads):
    h, q, k, v, attn, ctx = cache
    dh_dim = h.shape[-1] // n_heads
    grads[prefix + "wo"] += np.einsum("bnd,bne->de", ctx, dout)
    dctx = dout @ params[prefix + "wo"].T
    dctx_h = _split_heads(dctx, n_heads)
    dattn = dctx_h @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dctx_h
    # softmax backward per row
    dscores = attn * (dattn - np.sum(dattn * attn, axis=-1, keepdims=True))
    dscores = dscores / np.sqrt(dh_dim)
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    dh = np.zeros_like(h)
    for name, grad_heads in (("wq", dq), ("wk", dk), ("wv", dv)):
        merged = _merge_heads(grad_heads)
        grads[prefix + name] += np.einsum("bnd,bne->de", h, merged)
        dh += merged @ params[prefix + name].T
    return dh


def _forward_full(batch_values: np.ndarray, params: Params, cfg: ModelConfig):
    """Forward pass on (B, N, T) inputs; returns probs and the full cache."""
    x = np.asarray(batch_values, dtype=float)
    caches: dict = {"input": x}
    hidden = np.tanh(x @ params["embed.W1"] + params["embed.b1"])
    tokens = hidden @ params["embed.W2"] + params["embed.b2"]
    caches["embed_hidden"] = hidden
    _check_finite(tokens, "embed")
    for l in range(cfg.n_blocks):
        p = f"block{l}."
        ln1_out, ln1_cache = _layer_norm_forward(
            tokens, params[p + "ln1.g"], params[p + "ln1.b"])
        attn_out, attn_cache = _attention_forward(
            ln1_out, params, p, cfg.n_heads)
        tokens = tokens + attn_out
        ln2_out, ln2_cache = _layer_norm_forward(
            tokens, params[p + "ln2.g"], params[p + "ln2.b"])
        ff_hidden = np.tanh(ln2_out @ params[p + "ff.W1"] + params[p + "ff.b1"])
        ff_out = ff_hidden @ params[p + "ff.W2"] + params[p + "ff.b2"]
        caches[p] = (ln1_cache, attn_cache, ln2_cache, ln2_out, ff_hidden,
                     tokens)
        tokens = tokens + ff_out
        _check_finite(tokens, f"block{l}")
    pooled = tokens.mean(axis=1)
    logits = pooled @ params["head.W"] + params["head.b"]
    _check_finite(logits, "head")
    probs = _softmax(logits)
    caches["tokens"] = tokens
    caches["pooled"] = pooled
    return probs, caches


def forward(sample: SampleTensor | np.ndarray, params: Params,
            cfg: ModelConfig) -> np.ndarray:
    """Class probabilities (down, unchanged, up) for one sample."""
    values = sample.values if isinstance(sample, SampleTensor) else sample
    probs, _ = _forward_full(values[None], params, cfg)
    return probs[0]


def loss_and_gradients(batch: list[SampleTensor], params: Params,
                       cfg: ModelConfig) -> tuple[float, Params]:
    """Mean cross-entropy over the batch and gradients for every parameter."""
    if not batch:
        raise ValueError("batch must be nonempty")
    values = np.stack([s.values for s in batch]).astype(float)
    labels = np.array([s.label for s in batch])
    B, N = values.shape[0], values.shape[1]
    probs, caches = _forward_full(values, params, cfg)
    eps = 1e-300
    loss = float(-np.mean(np.log(probs[np.arange(B), labels] + eps)))

    grads: Params = {k: np.zeros_like(v) for k, v in params.items()}
    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B

    grads["head.W"] += caches["pooled"].T @ dlogits
    grads["head.b"] += dlogits.sum(axis=0)
    dpooled = dlogits @ params["head.W"].T
    dtokens = np.repeat(dpooled[:, None, :], N, axis=1) / N

    for l in reversed(range(cfg.n_blocks)):
        p = f"block{l}."
        ln1_cache, attn_cache, ln2_cache, ln2_out, ff_hidden, pre_ff = \
            caches[p]
        # feed-forward branch
        dff_out = dtokens
        grads[p + "ff.W2"] += np.einsum("bnf,bnd->fd", ff_hidden, dff_out)
        grads[p + "ff.b2"] += dff_out.sum(axis=(0, 1))
        dff_hidden = dff_out @ params[p + "ff.W2"].T
        dff_pre = dff_hidden * (1.0 - ff_hidden ** 2)
        grads[p + "ff.W1"] += np.einsum("bnd,bnf->df", ln2_out, dff_pre)
        grads[p + "ff.b1"] += dff_pre.sum(axis=(0, 1))
        dln2_out = dff_pre @ params[p + "ff.W1"].T
        dpre_ff, dg2, db2 = _layer_norm_backward(dln2_out, ln2_cache)
        grads[p + "ln2.g"] += dg2
        grads[p + "ln2.b"] += db2
        dtokens = dtokens + dpre_ff   # residual around feed-forward
        # attention branch
        dattn_out = dtokens
        dln1_out = _attention_backward(dattn_out, attn_cache, params, p,
                                       cfg.n_heads, grads)
        dpre_attn, dg1, db1 = _layer_norm_backward(dln1_out, ln1_cache)
        grads[p + "ln1.g"] += dg1
        grads[p + "ln1.b"] += db1
        dtokens = dtokens + dpre_attn  # residual around attention

    hidden = caches["embed_hidden"]
    grads["embed.W2"] += np.einsum("bnd,bne->de", hidden, dtokens)
    grads["embed.b2"] += dtokens.sum(axis=(0, 1))
    dhidden = dtokens @ params["embed.W2"].T
    dpre = dhidden * (1.0 - hidden ** 2)
    grads["embed.W1"] += np.einsum("bnt,bnd->td", caches["input"], dpre)
    grads["embed.b1"] += dpre.sum(axis=(0, 1))
    return loss, grads


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    decay: float = 0.999      # multiplicative step-size decay per epoch
    seed: int = 0
    divergence_factor: float = 10.0


@dataclass
class TraceRow:
    epoch: int
    split: str
    loss: float
    accuracy: float


def _evaluate(samples: list[SampleTensor], params: Params, cfg: ModelConfig
              ) -> tuple[float, float]:
    values = np.stack([s.values for s in samples]).astype(float)
    labels = np.array([s.label for s in samples])
    probs, _ = _forward_full(values, params, cfg)
    n = len(samples)
    loss = float(-np.mean(np.log(probs[np.arange(n), labels] + 1e-300)))
    acc = float(np.mean(probs.argmax(axis=1) == labels))
    return loss, acc


def train(dataset: list[SampleTensor], params: Params, cfg: ModelConfig,
          schedule: TrainSchedule,
          eval_set: list[SampleTensor] | None = None
          ) -> tuple[Params, list[TraceRow]]:
    """Mini-batch gradient descent with momentum; deterministic given seed."""
    params = {k: v.copy() for k, v in params.items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.Generator(np.random.Philox(key=schedule.seed))
    trace: list[TraceRow] = []
    initial_loss, acc = _evaluate(dataset, params, cfg)
    trace.append(TraceRow(0, "train", initial_loss, acc))
    lr = schedule.learning_rate
    for epoch in range(1, schedule.epochs + 1):
        order = rng.permutation(len(dataset))
        for start in range(0, len(dataset), schedule.batch_size):
            batch = [dataset[i] for i in order[start:start + schedule.batch_size]]
            _, grads = loss_and_gradients(batch, params, cfg)
            for k in params:
                velocity[k] = schedule.momentum * velocity[k] - lr * grads[k]
                params[k] = params[k] + velocity[k]
        lr *= schedule.decay
        loss, acc = _evaluate(dataset, params, cfg)
        trace.append(TraceRow(epoch, "train", loss, acc))
        if eval_set:
            eloss, eacc = _evaluate(eval_set, params, cfg)
            trace.append(TraceRow(epoch, "eval", eloss, eacc))
        if not np.isfinite(loss) or \
                loss > schedule.divergence_factor * max(initial_loss, 1e-9):
            raise NumericalError(
                f"training diverged at epoch {epoch}: loss {loss:.4g} "
                f"vs initial {initial_loss:.4g}")
    return params, trace


# ---------------------------------------------------------------------------
# Dataset assembly from feature frames

@dataclass
class NormStats:
    mean: np.ndarray   # per variate
    sd: np.ndarray


def _frames_by_fund(frames: list[FeatureFrame]
                    ) -> dict[SeriesId, dict[int, FeatureFrame]]:
    out: dict[SeriesId, dict[int, FeatureFrame]] = {}
    for fr in frames:
        out.setdefault(fr.fund, {})[fr.month.ordinal()] = fr
    return out


def _lookback_matrix(by_month: dict[int, FeatureFrame], end_ord: int,
                     lookback: int) -> np.ndarray | None:
    """(n_variates, lookback) matrix if all lookback frames exist and are
    valid, else None."""
    cols = []
    for k in range(end_ord - lookback + 1, end_ord + 1):
        fr = by_month.get(k)
        if fr is None or not fr.valid:
            return None
        vec = fr.numeric_vector()
        # missing AUM/volume are tolerated as zeros rather than dropping funds
        vec = np.where(np.isnan(vec), 0.0, vec)
        cols.append(vec)
    return np.stack(cols, axis=1)


def build_dataset(frames: list[FeatureFrame], next_returns, cfg: ModelConfig,
                  tau: float) -> list[tuple[SeriesId, MonthIndex, SampleTensor]]:
    """Training samples: one per (fund, month) with a full valid lookback and
    a known next-month return. next_returns(fund, month) -> float or None."""
    samples = []
    for fund_id, by_month in sorted(_frames_by_fund(frames).items()):
        for end_ord in sorted(by_month):
            mat = _lookback_matrix(by_month, end_ord, cfg.lookback)
            if mat is None:
                continue
            month = MonthIndex.from_ordinal(end_ord)
            nxt = next_returns(fund_id, month)
            if nxt is None:
                continue
            samples.append((fund_id, month,
                            SampleTensor(values=mat, label=label_trend(nxt, tau))))
    return samples


def fit_norm_stats(samples: list[SampleTensor]) -> NormStats:
    stacked = np.concatenate([s.values for s in samples], axis=1)
    sd = stacked.std(axis=1)
    sd[sd == 0.0] = 1.0
    return NormStats(mean=stacked.mean(axis=1), sd=sd)


def apply_norm(sample: SampleTensor, stats: NormStats) -> SampleTensor:
    z = (sample.values - stats.mean[:, None]) / stats.sd[:, None]
    return SampleTensor(values=z, label=sample.label)


def predict_panel(frames: list[FeatureFrame], params: Params,
                  cfg: ModelConfig, stats: NormStats, month: MonthIndex
                  ) -> tuple[list[TrendForecast], dict[SeriesId, str]]:
    """One forecast per fund with a complete valid lookback ending at month."""
    forecasts: list[TrendForecast] = []
    skipped: dict[SeriesId, str] = {}
    for fund_id, by_month in sorted(_frames_by_fund(frames).items()):
        mat = _lookback_matrix(by_month, month.ordinal(), cfg.lookback)
        if mat is None:
            skipped[fund_id] = "IncompleteLookback"
            continue
        sample = apply_norm(SampleTensor(values=mat, label=0), stats)
        probs = forward(sample, params, cfg)
        forecasts.append(TrendForecast(fund=fund_id, month=month, probs=probs))
    return forecasts, skipped


# ---------------------------------------------------------------------------
# Checkpoint I/O (npz: little-endian float64 arrays with shape headers)

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: Params, cfg: ModelConfig,
                    stats: NormStats) -> None:
    meta = np.array([CHECKPOINT_VERSION, cfg.lookback, cfg.n_variates,
                     cfg.d_model, cfg.n_heads, cfg.n_blocks], dtype=np.int64)
    np.savez(path, __meta__=meta, __norm_mean__=stats.mean,
             __norm_sd__=stats.sd,
             **{k: v.astype("<f8") for k, v in params.items()})


def load_checkpoint(path) -> tuple[Params, ModelConfig, NormStats]:
    with np.load(path) as data:
        meta = data["__meta__"]
        if int(meta[0]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(meta[0])}")
        cfg = ModelConfig(lookback=int(meta[1]), n_variates=int(meta[2]),
                          d_model=int(meta[3]), n_heads=int(meta[4]),
                          n_blocks=int(meta[5]))
        stats = NormStats(mean=data["__norm_mean__"], sd=data["__norm_sd__"])
        params = {k: data[k] for k in data.files
                  if not k.startswith("__")}
    return params, cfg, stats


def write_trace_csv(trace: list[TraceRow], path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "split", "loss", "accuracy"])
        for row in trace:
            w.writerow([row.epoch, row.split, repr(row.loss),
                        repr(row.accuracy)])
