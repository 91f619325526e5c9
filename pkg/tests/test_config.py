from __future__ import annotations

import json

import pytest

from consentledger.config import Config, resolve


def test_defaults():
    assert resolve({}, env={}) == Config()


def test_precedence_flag_env_file_default(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"seed": 1, "nodes": 7, "max_batch": 10, "drop_rate": 0.25}))
    env = {"CONSENTLEDGER_SEED": "2", "CONSENTLEDGER_NODES": "9"}
    cfg = resolve({"seed": 3, "config": str(cfg_file)}, env=env)
    assert cfg.seed == 3          # flag
    assert cfg.nodes == 9         # env
    assert cfg.max_batch == 10    # file
    assert cfg.drop_rate == 0.25  # file
    assert cfg.clock == "real"    # default


def test_config_path_from_env(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text('{"format": "table"}')
    assert resolve({}, env={"CONSENTLEDGER_CONFIG": str(cfg_file)}).format == "table"


@pytest.mark.parametrize("bad", [{"clock": "sundial"}, {"format": "xml"}, {"max_batch": 0}])
def test_invalid_values(bad):
    with pytest.raises(ValueError):
        resolve(bad, env={})


def test_unknown_file_keys(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text('{"colour": "blue"}')
    with pytest.raises(ValueError):
        resolve({}, env={}, config_path=cfg_file)
