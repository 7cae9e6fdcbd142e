import json
from datetime import date

import pytest

from riskagent.config import RunConfig
from riskagent.errors import ConfigError


def test_defaults_and_seed_flow():
    cfg = RunConfig.from_dict({"seed": 7})
    assert cfg.seed == 7 and cfg.train.seed == 7
    pinned = RunConfig.from_dict({"seed": 7, "train": {"seed": 3}})
    assert pinned.train.seed == 3
    assert RunConfig().with_seed(9).train.seed == 9


def test_unknown_sections_and_keys_rejected():
    with pytest.raises(ConfigError, match="section"):
        RunConfig.from_dict({"trian": {}})
    with pytest.raises(ConfigError, match="clip_epsilon"):
        RunConfig.from_dict({"train": {"clip_epsilon": 0.1}})


def test_type_checks():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"train": {"epochs": "ten"}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"env": {"random_start": 1}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"seed": True})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"data": {"train_start": "last week"}})
    cfg = RunConfig.from_dict({"train": {"epochs": 3.0, "learning_rate": 1},
                               "data": {"train_start": "2021-01-04", "indicators": ["rsi_14"]},
                               "policy": {"hidden": [8, 8]}})
    assert cfg.train.epochs == 3 and cfg.train.learning_rate == 1.0
    assert cfg.data.train_start == date(2021, 1, 4) and cfg.data.indicators == ("rsi_14",)
    assert cfg.policy.hidden == (8, 8)


def test_flag_overrides_ignore_none():
    cfg = RunConfig().with_section("train", epochs=None, steps_per_epoch=100)
    assert cfg.train.epochs == 25 and cfg.train.steps_per_epoch == 100
    assert RunConfig().with_section("cvar") == RunConfig()
    with pytest.raises(ConfigError):
        RunConfig().with_section("train", clip_eps=2.0)


def test_load_yaml_and_json(tmp_path):
    (tmp_path / "a.yaml").write_text("seed: 5\ncvar:\n  alpha: 0.9\n")
    assert RunConfig.load(tmp_path / "a.yaml").cvar.alpha == 0.9
    (tmp_path / "b.json").write_text(json.dumps({"infusion": {"mode": "risk"}}))
    assert RunConfig.load(tmp_path / "b.json").infusion.mode == "risk"
    (tmp_path / "c.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        RunConfig.load(tmp_path / "c.yaml")
    with pytest.raises(ConfigError, match="not found"):
        RunConfig.load(tmp_path / "missing.yaml")


def test_dump_round_trip_and_redaction(tmp_path):
    cfg = RunConfig.from_dict({"endpoint": {"api_key": "sk-secret", "model_name": "m"},
                               "data": {"train_end": "2022-12-30"}})
    assert cfg.to_dict(redact=False)["endpoint"]["api_key"] == "sk-secret"
    cfg.dump(tmp_path / "c.json")
    text = (tmp_path / "c.json").read_text()
    assert "sk-secret" not in text and "***" in text
    back = RunConfig.load(tmp_path / "c.json")
    assert back.data == cfg.data and back.train == cfg.train


def test_yaml_exponent_without_point(tmp_path):
    (tmp_path / "e.yaml").write_text("train:\n  adam_eps: 1e-08\n")
    assert RunConfig.load(tmp_path / "e.yaml").train.adam_eps == 1e-8
