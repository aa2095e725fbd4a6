import pytest

from polymodel.config import RunConfig, echo_config, parse_config
from polymodel.errors import ConfigError


def write(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


class TestParseConfig:
    def test_defaults_when_empty(self, tmp_path):
        cfg = parse_config(write(tmp_path, ""))
        assert cfg == RunConfig(raw_text="")

    def test_values_and_comments(self, tmp_path):
        cfg = parse_config(write(tmp_path, """
# pipeline settings
returns_path = data/returns.csv
window_len = 24          # shorter window
ridge_lambda = 1e-3
strategies = SA
seed = 42
"""))
        assert cfg.returns_path == "data/returns.csv"
        assert cfg.window_len == 24
        assert cfg.ridge_lambda == pytest.approx(1e-3)
        assert cfg.strategy_list() == ["SA"]
        assert cfg.seed == 42

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config(write(tmp_path, "widnow_len = 36\n"))

    def test_bad_int_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="bad value"):
            parse_config(write(tmp_path, "window_len = many\n"))

    def test_missing_equals_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config(write(tmp_path, "window_len 36\n"))

    def test_unknown_strategy_rejected(self, tmp_path):
        cfg = parse_config(write(tmp_path, "strategies = SA,XX\n"))
        with pytest.raises(ConfigError, match="strategy"):
            cfg.strategy_list()

    def test_raw_text_preserved(self, tmp_path):
        text = "seed = 1\n# trailing comment\n"
        cfg = parse_config(write(tmp_path, text))
        assert cfg.raw_text == text


def test_echo_config(tmp_path):
    text = "seed = 9\nwindow_len = 24\n"
    cfg = parse_config(write(tmp_path, text))
    echo_config(cfg, tmp_path / "out")
    assert (tmp_path / "out" / "config.txt").read_text() == text
