import json

import pytest

from rwre.config import (ConfigError, build_environment, config_hash, load_config, resolve,
                         seeds)
from rwre.report import Artifact, dumps


def test_defaults_resolve():
    cfg = resolve({})
    env = build_environment(cfg)
    assert env.dimension == 2 and env.epsilon == 0.1 and env.period is None
    assert env.seed == seeds(cfg)["environment"]


def test_json_and_toml_load(tmp_path):
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"seed": 4, "environment": {"epsilon": 0.05}}))
    t = tmp_path / "c.toml"
    t.write_text("seed = 4\n[environment]\nepsilon = 0.05\n")
    assert resolve(load_config(str(j))) == resolve(load_config(str(t)))


def test_validation_names_the_field():
    with pytest.raises(ConfigError, match="environment/epsilon"):
        resolve({"environment": {"epsilon": "big"}})
    with pytest.raises(ConfigError, match="Additional properties"):
        resolve({"velocity": {"n_wlaks": 3}})


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(str(bad))


def test_seed_precedence(monkeypatch):
    monkeypatch.setenv("RWRE_SEED", "17")
    assert resolve({"seed": 3})["seed"] == 17
    assert resolve({"seed": 3}, seed=5)["seed"] == 5
    monkeypatch.setenv("RWRE_SEED", "x")
    with pytest.raises(ConfigError):
        resolve({})


def test_seeds_are_derived_and_distinct():
    s = seeds(resolve({"seed": 1}))
    assert s["environment"] != s["walk"]
    assert seeds(resolve({"seed": 1, "environment": {"seed": 99}}))["environment"] == 99


def test_config_hash_is_order_independent():
    a = resolve({"seed": 1, "environment": {"epsilon": 0.05, "dimension": 2}})
    b = resolve({"environment": {"dimension": 2, "epsilon": 0.05}, "seed": 1})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(resolve({"seed": 2}))


def test_dumps_is_canonical():
    text = dumps({"b": 1, "a": float("nan"), "c": (1, 2), "d": {(1, 0): 0.5}})
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": "nan", "b": 1, "c": [1, 2], "d": {"1 0": 0.5}}


def test_artifact_writes_timing_sidecar(tmp_path):
    art = Artifact("torus-oracle", {"seed": 0}, "h", {"root": 0}, {"x": 1.5}, {"ok": True},
                   {"t.csv": "a,b\n1,2\n"})
    paths = art.save(tmp_path)
    assert [p.name for p in paths] == ["torus_oracle.json", "t.csv"]
    doc = json.loads((tmp_path / "torus_oracle.json").read_text())
    assert doc["passed"] is True and "wall_clock_seconds" not in json.dumps(doc)
    timing = json.loads((tmp_path / "torus_oracle.timing.json").read_text())
    assert timing["wall_clock_seconds"] >= 0
