"""Tests for JSON run configuration."""

import json

import pytest

import dorakit as dk
from dorakit.config import RunConfig, config_from_dict, default_out_dir, load_config


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.model == dk.ModelConfig()
        assert cfg.loss.alpha == 0.7
        assert cfg.loss.tau == 0.1
        assert cfg.pretrain.epochs == 150
        assert cfg.finetune.epochs == 200

    def test_override(self):
        cfg = RunConfig().override("model", d_z=32, feature_subset="RF+PoI")
        assert cfg.model.d_z == 32
        assert cfg.model.feature_subset is dk.FeatureSubset.RF_POI
        assert cfg.pretrain == dk.PretrainConfig()

    def test_override_skips_none(self):
        cfg = RunConfig()
        assert cfg.override("pretrain", epochs=None) is cfg

    def test_override_loss(self):
        cfg = RunConfig().override("loss", alpha=1.0)
        assert cfg.pretrain.loss.alpha == 1.0
        assert cfg.loss.tau == 0.1

    def test_unknown_section(self):
        with pytest.raises(dk.ConfigError):
            RunConfig().override("optimizer", lr=1.0)

    def test_unknown_key(self):
        with pytest.raises(dk.ConfigError, match="dropout"):
            RunConfig().override("model", dropout=0.1)

    def test_invalid_value(self):
        with pytest.raises(dk.ConfigError):
            RunConfig().override("pretrain", batch_size=1)


class TestConfigFromDict:
    def test_partial_sections(self):
        cfg = config_from_dict({"finetune": {"freeze_encoder": True, "k_shots": 1}})
        assert cfg.finetune.freeze_encoder
        assert cfg.finetune.k_shots == 1
        assert cfg.model == dk.ModelConfig()

    def test_round_trip(self):
        cfg = (
            RunConfig()
            .override("model", d_z=16, encoder_multipliers=(2, 1), head_depth=1)
            .override("loss", alpha=0.5)
            .override("pretrain", corpus_filter="house")
        )
        assert config_from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_unknown_section(self):
        with pytest.raises(dk.ConfigError, match="extras"):
            config_from_dict({"extras": {}})

    def test_loss_inside_pretrain(self):
        with pytest.raises(dk.ConfigError):
            config_from_dict({"pretrain": {"loss": {"alpha": 0.5}}})

    def test_section_must_be_object(self):
        with pytest.raises(dk.ConfigError):
            config_from_dict({"model": [1, 2]})

    def test_root_must_be_object(self):
        with pytest.raises(dk.ConfigError):
            config_from_dict([])


class TestLoadConfig:
    def test_none_gives_defaults(self):
        assert load_config(None) == RunConfig()

    def test_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"loss": {"tau": 0.5}, "pretrain": {"epochs": 3}}))
        cfg = load_config(path)
        assert cfg.loss.tau == 0.5
        assert cfg.pretrain.epochs == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "absent.json")

    def test_bad_json(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{model: }")
        with pytest.raises(dk.ConfigError, match="invalid JSON"):
            load_config(path)


class TestOutDir:
    def test_default(self, monkeypatch):
        monkeypatch.delenv("DORAKIT_OUT_DIR", raising=False)
        assert str(default_out_dir()) == "dorakit-out"

    def test_environment(self, monkeypatch, tmp_path):
        monkeypatch.setenv("DORAKIT_OUT_DIR", str(tmp_path))
        assert default_out_dir() == tmp_path
