"""Tests for odf.config: YAML load/dump, overrides, hashing, domain checks."""

from pathlib import Path

import pytest

from odf.config import (
    ExperimentConfig,
    check_same_domain,
    config_hash,
    domain_dict,
    dump_config,
    from_dict,
    load_config,
    override,
    to_dict,
)
from odf.domain import DomainConfig
from odf.errors import ConfigError

EXAMPLE = Path(__file__).parent.parent / "config.example.yaml"


def test_defaults_without_file(tmp_path):
    assert load_config(None) == ExperimentConfig()
    assert load_config(tmp_path / "missing.yaml") == ExperimentConfig()


def test_required_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.yaml", required=True)


def test_example_matches_defaults():
    assert load_config(EXAMPLE, required=True) == ExperimentConfig()


def test_dump_load_round_trip(tmp_path):
    cfg = override(ExperimentConfig(), {"train.epochs": 7, "train.betas": (0.8, 0.99), "seed": 5,
                                        "model.skip_layer": 3, "augment.enable_b": True})
    path = tmp_path / "cfg" / "c.yaml"
    text = dump_config(cfg, path)
    assert path.read_text() == text
    assert load_config(path) == cfg
    assert load_config(path).train.betas == (0.8, 0.99)


def test_partial_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("metrics:\n  n_eval_rays: 500\n")
    cfg = load_config(path)
    assert cfg.metrics.n_eval_rays == 500
    assert cfg.model == ExperimentConfig().model


@pytest.mark.parametrize("data,match", [
    ({"bogus": 1}, "unknown config key"),
    ({"train": {"bogus": 1}}, "unknown key"),
    ({"train": [1, 2]}, "mapping"),
    ({"model": {"n_layers": 2}}, "n_layers"),
    ({"domain": {"depth_clamp": 0}}, "depth_clamp"),
    ({"train": {"mode": "finetune"}}, "mode"),
])
def test_invalid_configs(data, match):
    with pytest.raises(ConfigError, match=match):
        from_dict(data)


def test_invalid_yaml(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("train: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(path)


class TestOverride:
    def test_dotted_keys(self):
        cfg = override(ExperimentConfig(), {"train.epochs": 3, "inference.n": 5, "seed": 9})
        assert (cfg.train.epochs, cfg.inference.n, cfg.seed) == (3, 5, 9)

    def test_none_is_skipped(self):
        assert override(ExperimentConfig(), {"train.epochs": None, "seed": None}) == ExperimentConfig()

    @pytest.mark.parametrize("key", ["train.bogus", "bogus.epochs", "bogus"])
    def test_unknown_key(self, key):
        with pytest.raises(ConfigError, match="unknown override"):
            override(ExperimentConfig(), {key: 1})

    def test_validation_runs(self):
        with pytest.raises(ConfigError):
            override(ExperimentConfig(), {"train.batch_size": 0})


class TestHash:
    def test_stable_hex(self):
        h = config_hash(ExperimentConfig())
        assert len(h) == 16
        int(h, 16)
        assert config_hash(ExperimentConfig()) == h

    def test_changes_with_values(self):
        base = ExperimentConfig()
        assert config_hash(override(base, {"seed": 1})) != config_hash(base)
        assert config_hash(override(base, {"loss.lambda_depth": 4.0})) != config_hash(base)

    def test_survives_round_trip(self, tmp_path):
        cfg = override(ExperimentConfig(), {"train.lr": 3e-4})
        dump_config(cfg, tmp_path / "c.yaml")
        assert config_hash(load_config(tmp_path / "c.yaml")) == config_hash(cfg)


def test_to_dict_is_plain():
    d = to_dict(ExperimentConfig())
    assert d["train"]["betas"] == [0.9, 0.999]
    assert d["domain"] == {"sphere_radius": 1.3, "depth_clamp": 0.5, "nonintersect_sentinel": 0.5}


def test_check_same_domain():
    a = domain_dict(DomainConfig())
    check_same_domain(a, dict(a))
    check_same_domain(a, None)
    check_same_domain(None, a)
    with pytest.raises(ConfigError, match="domain mismatch"):
        check_same_domain(a, domain_dict(DomainConfig(sphere_radius=1.5)))


def test_jc_config_carries_domain():
    cfg = override(ExperimentConfig(), {"jumping_cubes.n": 32, "jumping_cubes.b": 2.0,
                                        "domain.depth_clamp": 0.4})
    jc = cfg.jc_config()
    assert (jc.n, jc.b, jc.psi) == (32, 2.0, 0.4)
    assert jc.domain == cfg.domain


def test_jumping_cubes_settings_validation():
    with pytest.raises(ConfigError):
        from_dict({"jumping_cubes": {"n": 4}})


def test_depth_clamp_is_shared(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("domain:\n  depth_clamp: 0.3\n")
    cfg = load_config(path)
    assert cfg.domain.depth_clamp == 0.3
    assert cfg.loss.psi == 0.3
    assert cfg.inference.psi == 0.3
    assert cfg.inference.with_n(5).psi == 0.3
    assert cfg.jc_config().psi == 0.3


def test_depth_clamp_follows_overrides_and_round_trip(tmp_path):
    cfg = override(ExperimentConfig(), {"domain.depth_clamp": 0.25})
    assert (cfg.loss.psi, cfg.inference.psi) == (0.25, 0.25)
    dump_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg
    assert "psi" not in to_dict(cfg)["loss"]


@pytest.mark.parametrize("section", ["loss", "inference"])
def test_per_section_clamp_is_rejected(section):
    with pytest.raises(ConfigError, match="domain.depth_clamp"):
        from_dict({section: {"psi": 0.3}})
    with pytest.raises(ConfigError, match="unknown override"):
        override(ExperimentConfig(), {f"{section}.psi": 0.3})
