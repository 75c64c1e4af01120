from dataclasses import fields

import pytest

from fusedfraud.config import ConfigError, PipelineConfig, env_overrides, parse_config_text, resolve, save_config


def test_defaults():
    c = PipelineConfig()
    assert (c.lam, c.window_days, c.rel_dim, c.edge_dim, c.node_dim, c.att_dim, c.heads) == (1.0, 7, 8, 64, 52, 8, 3)
    assert (c.lr, c.max_epochs, c.seed_quantile, c.propagation_threshold, c.kappa, c.margin) == \
        (1e-4, 2000, 0.012, 0.65, 3.0, 1.0)


def test_echo_has_every_key(tmp_path):
    save_config(PipelineConfig(), tmp_path / "c.txt")
    text = (tmp_path / "c.txt").read_text()
    assert text.startswith("# config_sha256=" + PipelineConfig().digest())
    keys = parse_config_text(text)
    assert set(keys) == {f.name for f in fields(PipelineConfig)}
    assert resolve(tmp_path / "c.txt") == PipelineConfig()


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key 'nope'"):
        parse_config_text("lam=1\nnope=3\n")


def test_comments_and_blank_lines():
    assert parse_config_text("# header\n\nlam = 2  # trailing\n") == {"lam": "2"}


def test_malformed_line():
    with pytest.raises(ConfigError, match=":1:"):
        parse_config_text("lam\n")


def test_type_errors():
    with pytest.raises(ConfigError):
        PipelineConfig().with_overrides({"max_epochs": "many"})


@pytest.mark.parametrize("kw", [dict(edge_dim=32), dict(seed_quantile=0), dict(window_days=0),
                                dict(metric_policy="x"), dict(lr=-1.0)])
def test_validation(kw):
    with pytest.raises(ConfigError):
        PipelineConfig(**kw).validate()


def test_precedence(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("lam=2\nseed=5\n")
    env = {"FUSEDFRAUD_LAM": "3", "FUSEDFRAUD_KAPPA": "4"}
    cfg = resolve(path, {"seed": "9", "heads": None}, env)
    assert (cfg.lam, cfg.kappa, cfg.seed, cfg.heads) == (2.0, 4.0, 9, 3)


def test_env_unknown_key():
    with pytest.raises(ConfigError):
        env_overrides({"FUSEDFRAUD_WHAT": "1"})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        resolve(tmp_path / "absent.txt")


def test_digest_tracks_values():
    assert PipelineConfig().digest() == PipelineConfig().digest()
    assert PipelineConfig().digest() != PipelineConfig(seed=1).digest()
