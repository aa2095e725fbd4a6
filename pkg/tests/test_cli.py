"""End-to-end CLI tests over a small synthetic pipeline."""
import json

import pytest

from polymodel.cli import main

SPEC = {
    "n_factors": 2,
    "n_months": 70,
    "seed": 0,
    "noise_funds": 2,
    "signals": [
        {"fund": "S0", "factor": "F0",
         "coeffs": [0.004, 0.02, 0.0, 0.003, 0.0], "noise_sd": 0.004},
        {"fund": "S1", "factor": "F1",
         "coeffs": [0.004, 0.02, 0.0, 0.003, 0.0], "noise_sd": 0.004},
    ],
}

CONFIG_TEMPLATE = """\
returns_path = {d}/returns.csv
aum_path = {d}/aum.csv
volume_path = {d}/volume.csv
window_len = 24
n_shuffles = 100
lookback = 4
d_model = 8
n_heads = 2
n_blocks = 1
epochs = 8
batch_size = 16
seed = 0
out_dir = {d}
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    spec_path = d / "spec.json"
    spec_path.write_text(json.dumps(SPEC))
    cfg_path = d / "run.cfg"
    cfg_path.write_text(CONFIG_TEMPLATE.format(d=d))
    assert main(["synth", "--spec", str(spec_path), "--out", str(d)]) == 0
    return d


class TestSynth:
    def test_outputs(self, workdir):
        for name in ("returns.csv", "aum.csv", "volume.csv",
                     "ground_truth.json"):
            assert (workdir / name).exists()
        truth = json.loads((workdir / "ground_truth.json").read_text())
        assert sorted(truth["planted"]) == ["S0", "S1"]

    def test_malformed_spec_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["synth", "--spec", str(bad), "--out",
                     str(tmp_path)]) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_spec_exit_2(self, tmp_path):
        assert main(["synth", "--spec", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path)]) == 2


class TestFeatures:
    def test_run(self, workdir):
        cfg = str(workdir / "run.cfg")
        assert main(["features", "--config", cfg]) == 0
        assert (workdir / "features.csv").exists()
        assert (workdir / "scores.csv").exists()
        assert (workdir / "config.txt").read_text() == \
            (workdir / "run.cfg").read_text()

    def test_rerun_byte_identical(self, workdir, tmp_path):
        cfg2 = tmp_path / "run2.cfg"
        text = (workdir / "run.cfg").read_text()
        cfg2.write_text(text.replace(f"out_dir = {workdir}",
                                     f"out_dir = {tmp_path}"))
        assert main(["features", "--config", str(cfg2)]) == 0
        assert (tmp_path / "features.csv").read_bytes() == \
            (workdir / "features.csv").read_bytes()
        assert (tmp_path / "scores.csv").read_bytes() == \
            (workdir / "scores.csv").read_bytes()

    def test_missing_returns_exit_2(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"returns_path = {tmp_path}/none.csv\n"
                       f"out_dir = {tmp_path}\n")
        assert main(["features", "--config", str(cfg)]) == 2

    def test_unknown_config_key_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("no_such_key = 1\n")
        assert main(["features", "--config", str(cfg)]) == 2
        assert "unknown key" in capsys.readouterr().err


class TestTrainBacktestReport:
    def test_train(self, workdir):
        cfg = str(workdir / "run.cfg")
        assert main(["train", "--config", cfg]) == 0
        assert (workdir / "checkpoint.npz").exists()
        trace = (workdir / "loss_trace.csv").read_text().splitlines()
        assert trace[0] == "epoch,split,loss,accuracy"
        # epoch-0 baseline row plus one row per epoch
        assert sum(1 for row in trace[1:]
                   if row.split(",")[1] == "train") == 1 + 8

    def test_train_without_features_exit_2(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        src = (tmp_path / ".." ).resolve()
        cfg.write_text(CONFIG_TEMPLATE.format(d=tmp_path))
        assert main(["train", "--config", str(cfg)]) == 2

    def test_backtest(self, workdir):
        cfg = str(workdir / "run.cfg")
        assert main(["backtest", "--config", cfg]) == 0
        stats = json.loads((workdir / "stats.json").read_text())
        assert set(stats) == {"SA", "WA"}
        for rec in stats.values():
            assert rec["final_value"] > 0
        curve = (workdir / "curve.csv").read_text().splitlines()
        assert curve[0] == "month,strategy,value"
        trades = (workdir / "trades.csv").read_text().splitlines()
        assert trades[0] == "strategy,month,fund,action,amount"
        assert len(trades) > 1

    def test_backtest_missing_checkpoint_exit_2(self, workdir, tmp_path):
        cfg = str(workdir / "run.cfg")
        assert main(["backtest", "--config", cfg, "--checkpoint",
                     str(tmp_path / "nope.npz")]) == 2

    def test_report(self, workdir, capsys):
        assert main(["report", "--out", str(workdir)]) == 0
        lines = (workdir / "summary.csv").read_text().splitlines()
        assert lines[0] == ("strategy,final_value,annualized_return,"
                            "annualized_volatility,sharpe,max_drawdown")
        assert {row.split(",")[0] for row in lines[1:]} == {"SA", "WA"}
        assert "strategy" in capsys.readouterr().out

    def test_report_without_stats_exit_2(self, tmp_path):
        assert main(["report", "--out", str(tmp_path)]) == 2
