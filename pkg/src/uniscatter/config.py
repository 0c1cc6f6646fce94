"""Run configuration: JSON schema, validation and model construction."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from jsonschema import Draft202012Validator

from .coins import CoinField, CoinGenerator, CoinParams, DecayBound
from .errors import ConfigError
from .operators import LatticeWindow
from .resolvent import EpsSchedule
from .walk import WalkModel, build_walk

_ANGLE = {"type": "number", "exclusiveMinimum": -math.pi, "maximum": math.pi}
_POS = {"type": "number", "exclusiveMinimum": 0}

_COIN = {
    "type": "object",
    "additionalProperties": False,
    "required": ["a"],
    "properties": {
        # a = 0 leaves no absolutely continuous spectrum, so it is excluded here
        "a": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "b": {"type": "number", "minimum": 0, "maximum": 1},
        "alpha": _ANGLE,
        "beta": _ANGLE,
        "delta": _ANGLE,
    },
}

# table coins may be fully reflecting (a = 0); only asymptotes need a > 0
_TABLE_COIN = {**_COIN, "properties": {**_COIN["properties"], "a": {"type": "number", "minimum": 0, "maximum": 1}}}

_STATE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["side", "direction", "theta", "sigma"],
    "properties": {
        "side": {"enum": ["l", "r"]},
        "direction": {"enum": [-1, 1]},
        "theta": {"type": "number"},
        "sigma": _POS,
        "x0": {"type": "number"},
    },
}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["half_width", "coin_left", "coin_right"],
            "properties": {
                "half_width": {"type": "integer", "minimum": 4, "maximum": 65536},
                "coin_left": _COIN,
                "coin_right": _COIN,
                "deviations": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["site", "coin"],
                        "properties": {"site": {"type": "integer"}, "coin": _TABLE_COIN},
                    },
                },
                "generator": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["seed", "kappa_left", "kappa_right", "eps_left", "eps_right"],
                    "properties": {
                        "seed": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
                        "kappa_left": {"type": "number", "minimum": 0},
                        "kappa_right": {"type": "number", "minimum": 0},
                        "eps_left": _POS,
                        "eps_right": _POS,
                    },
                },
                "decay": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"kappa_left": _POS, "kappa_right": _POS, "eps_left": _POS, "eps_right": _POS},
                },
                "s": {"type": "number", "exclusiveMinimum": 0.5},
            },
        },
        "numerics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps_schedule": {
                    "type": "array", "minItems": 1,
                    "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                },
                "extrapolation_order": {"type": "integer", "minimum": 0, "maximum": 2},
                "wave_schedule": {
                    "type": "array", "minItems": 1,
                    "items": {
                        "type": "array", "minItems": 2, "maxItems": 2,
                        "prefixItems": [
                            {"type": "number", "exclusiveMinimum": 1e-5, "exclusiveMaximum": 0.5},
                            {"type": "integer", "minimum": 1},
                        ],
                    },
                },
                "n_theta": {"type": "integer", "minimum": 512},
                "n_k": {"type": "integer", "minimum": 256},
                "sigma_schedule": {"type": "array", "minItems": 1, "items": _POS},
                "horizon": {"type": "integer", "minimum": 1},
                "exclusion": {"type": "number", "minimum": 0, "maximum": 0.5},
                "tolerance": _POS,
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "theta": {
                    "oneOf": [
                        {"type": "array", "items": {"type": "number"}, "minItems": 1},
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["start", "stop", "count"],
                            "properties": {
                                "start": {"type": "number"},
                                "stop": {"type": "number"},
                                "count": {"type": "integer", "minimum": 1},
                            },
                        },
                    ]
                },
                "states": {"type": "array", "items": _STATE},
                "output": {"type": "string"},
                "threads": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
    },
}

_VALIDATOR = Draft202012Validator(SCHEMA)


@dataclass(frozen=True)
class Numerics:
    eps_schedule: tuple[float, ...] = (0.04, 0.02, 0.01)
    extrapolation_order: int = 2
    wave_schedule: tuple[tuple[float, int], ...] = ((1e-2, 500), (5e-3, 1000), (2.5e-3, 2000))
    n_theta: int = 2048
    n_k: int = 1024
    sigma_schedule: tuple[float, ...] = (0.08, 0.04)
    horizon: int | None = None
    exclusion: float = 0.05
    tolerance: float = 1e-8

    @property
    def sched(self) -> EpsSchedule:
        order = min(self.extrapolation_order, len(self.eps_schedule) - 1)
        return EpsSchedule(tuple(self.eps_schedule), order)


@dataclass(frozen=True)
class StateSpec:
    side: str
    direction: int
    theta: float
    sigma: float
    x0: float = 0.0


@dataclass(frozen=True)
class RunSettings:
    theta: tuple[float, ...] = ()
    states: tuple[StateSpec, ...] = ()
    output: str = "uniscatter-out"
    threads: int = 1
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    raw: dict = field(repr=False)
    half_width: int
    coin_left: CoinParams
    coin_right: CoinParams
    field: CoinField
    s: float
    numerics: Numerics
    run: RunSettings
    digest: str

    def build_model(self) -> WalkModel:
        return build_walk(self.field, LatticeWindow(self.half_width), self.s, self.numerics.n_k,
                          self.numerics.exclusion)


def _path(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    return ".".join(parts) if parts else "<root>"


def _message(err) -> str:
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        base = _path(err)
        return "; ".join(f"{base + '.' if base != '<root>' else ''}{k}: unknown key" for k in extra)
    return f"{_path(err)}: {err.message}"


def _coin(raw: dict, where: str, problems: list[str]) -> CoinParams | None:
    a = float(raw["a"])
    b = raw.get("b")
    b = math.sqrt(max(0.0, 1.0 - a * a)) if b is None else float(b)
    if abs(a * a + b * b - 1.0) > 1e-12:
        problems.append(f"{where}: a^2 + b^2 = {a * a + b * b!r} must equal 1")
        return None
    return CoinParams(a, b, float(raw.get("alpha", 0.0)), float(raw.get("beta", 0.0)), float(raw.get("delta", 0.0)))


def validate(raw: Any) -> RunConfig:
    """Validate a decoded JSON document; every violation is reported at once."""
    errors = sorted(_VALIDATOR.iter_errors(raw), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        raise ConfigError([_message(e) for e in errors])
    problems: list[str] = []
    m = raw["model"]
    left = _coin(m["coin_left"], "model.coin_left", problems)
    right = _coin(m["coin_right"], "model.coin_right", problems)
    table = {}
    for i, dev in enumerate(m.get("deviations", [])):
        c = _coin(dev["coin"], f"model.deviations.{i}.coin", problems)
        if dev["site"] in table:
            problems.append(f"model.deviations.{i}.site: duplicate site {dev['site']}")
        if c is not None:
            table[int(dev["site"])] = c.matrix
    half_width = int(m["half_width"])
    radius = max((abs(x) for x in table), default=0)
    if radius + 8 > half_width:
        problems.append(f"model.half_width: deviation table radius {radius} needs half_width >= {radius + 8}")
    num_raw = raw.get("numerics", {})
    eps = tuple(num_raw.get("eps_schedule", Numerics.eps_schedule))
    if any(b >= a for a, b in zip(eps, eps[1:])):
        problems.append("numerics.eps_schedule: must be strictly decreasing")
    order = num_raw.get("extrapolation_order", Numerics.extrapolation_order)
    n_theta = num_raw.get("n_theta", Numerics.n_theta)
    if n_theta % 2:
        problems.append("numerics.n_theta: must be even")
    n_k = num_raw.get("n_k", Numerics.n_k)
    if n_k & (n_k - 1):
        problems.append("numerics.n_k: must be a power of two")
    if problems:
        raise ConfigError(problems)

    gen = m.get("generator")
    generator = None
    if gen:
        generator = CoinGenerator(tuple(gen["seed"]), gen["kappa_left"], gen["kappa_right"],
                                  gen["eps_left"], gen["eps_right"])
    dec = m.get("decay", {})
    cf = CoinField(
        left, right, table, generator,
        DecayBound(dec.get("kappa_left", 1.0), dec.get("eps_left", 1.0)),
        DecayBound(dec.get("kappa_right", 1.0), dec.get("eps_right", 1.0)),
    )
    numerics = Numerics(
        eps_schedule=eps,
        extrapolation_order=min(order, len(eps) - 1),
        wave_schedule=tuple((float(e), int(n)) for e, n in num_raw.get("wave_schedule", Numerics.wave_schedule)),
        n_theta=n_theta,
        n_k=n_k,
        sigma_schedule=tuple(num_raw.get("sigma_schedule", Numerics.sigma_schedule)),
        horizon=num_raw.get("horizon"),
        exclusion=num_raw.get("exclusion", Numerics.exclusion),
        tolerance=num_raw.get("tolerance", Numerics.tolerance),
    )
    run_raw = raw.get("run", {})
    th = run_raw.get("theta", ())
    if isinstance(th, dict):
        th = tuple(float(t) for t in np.linspace(th["start"], th["stop"], th["count"]))
    run = RunSettings(
        theta=tuple(float(t) for t in th),
        states=tuple(StateSpec(**s) for s in run_raw.get("states", ())),
        output=run_raw.get("output", RunSettings.output),
        threads=run_raw.get("threads", 1),
        seed=run_raw.get("seed", 0),
    )
    digest = hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()
    return RunConfig(raw, half_width, left, right, cf, float(m.get("s", 1.0)), numerics, run, digest)


def parse_config(path: str | Path) -> RunConfig:
    """Read and validate a JSON configuration file.

    Raises
    ------
    ConfigError
        With one path-qualified message per violation.
    """
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError([f"{p}: file not found"]) from None
    except UnicodeDecodeError as exc:
        raise ConfigError([f"{p}: not valid UTF-8 ({exc.reason})"]) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{p}:{exc.lineno}:{exc.colno}: {exc.msg}"]) from None
    return validate(raw)
