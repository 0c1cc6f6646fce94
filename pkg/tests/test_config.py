import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uniscatter.config import parse_config, validate
from uniscatter.errors import ConfigError

MINIMAL = {"model": {"half_width": 64, "coin_left": {"a": 1.0}, "coin_right": {"a": 1.0}}}


def test_minimal_config_parses(tmp_path):
    path = tmp_path / "minimal.json"
    path.write_text(json.dumps(MINIMAL))
    cfg = parse_config(path)
    assert cfg.half_width == 64
    assert cfg.numerics.sched.eps == (0.04, 0.02, 0.01)
    assert cfg.numerics.exclusion == 0.05
    assert len(cfg.digest) == 64


def test_all_violations_are_reported_together():
    raw = {"bogus": 1, "model": {"half_width": 64, "coin_left": {"a": 0}, "coin_right": {"a": 1.2, "zz": 3}}}
    with pytest.raises(ConfigError) as info:
        validate(raw)
    msgs = info.value.messages
    assert "bogus: unknown key" in msgs
    assert "model.coin_right.zz: unknown key" in msgs
    assert any(m.startswith("model.coin_left.a:") for m in msgs)
    assert any(m.startswith("model.coin_right.a:") for m in msgs)
    assert info.value.exit_code == 1


def test_semantic_checks():
    raw = {
        "model": {"half_width": 10, "coin_left": {"a": 0.6, "b": 0.6}, "coin_right": {"a": 1.0},
                  "deviations": [{"site": 5, "coin": {"a": 0.0}}, {"site": 5, "coin": {"a": 1.0}}]},
        "numerics": {"eps_schedule": [0.01, 0.02], "n_k": 300},
    }
    with pytest.raises(ConfigError) as info:
        validate(raw)
    text = "\n".join(info.value.messages)
    for needle in ("a^2 + b^2", "duplicate site", "half_width >= 13", "strictly decreasing", "power of two"):
        assert needle in text


@settings(max_examples=25, deadline=None)
@given(st.text(alphabet="abcdefghijklmnopqrstuvwxyz_", min_size=1, max_size=12))
def test_unknown_model_key_is_named(key):
    raw = json.loads(json.dumps(MINIMAL))
    if key in ("half_width", "coin_left", "coin_right", "deviations", "generator", "decay", "s"):
        return
    raw["model"][key] = 0
    with pytest.raises(ConfigError) as info:
        validate(raw)
    assert f"model.{key}: unknown key" in info.value.messages


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="file not found"):
        parse_config(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    with pytest.raises(ConfigError):
        parse_config(bad)
    raw_bytes = tmp_path / "latin.json"
    raw_bytes.write_bytes(b"\xff\xfe{}")
    with pytest.raises(ConfigError, match="UTF-8"):
        parse_config(raw_bytes)


def test_theta_range_and_states():
    raw = json.loads(json.dumps(MINIMAL))
    raw["run"] = {"theta": {"start": 0.5, "stop": 1.5, "count": 3},
                  "states": [{"side": "l", "direction": 1, "theta": 0.0, "sigma": 0.1}]}
    cfg = validate(raw)
    assert cfg.run.theta == (0.5, 1.0, 1.5)
    assert cfg.run.states[0].side == "l"
