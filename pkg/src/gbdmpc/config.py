"""Run configuration: one JSON document with a schema version.

Every constant the experiments need, including those chosen here rather
than taken from the published settings, lives in this file so it can be
inspected and overridden.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .benchmarks.cartpole import CartPoleParams, WallMotion
from .benchmarks.freeflyer import FreeFlyerParams

SCHEMA_VERSION = 1
OUT_ENV = "GBDMPC_OUT"

EXPERIMENTS = ("cartpole", "freeflyer", "random-miqp")
MODES = ("gbd-warm", "gbd-cold", "enum-miqp")
MASTERS = ("greedy", "enum")

# (experiment, N) -> (I_max, K_feas)
PUBLISHED = {
    ("cartpole", 10): (5, 45),
    ("cartpole", 15): (10, 150),
    ("freeflyer", 9): (15, 50),
    ("freeflyer", 12): (80, 150),
    ("freeflyer", 15): (200, 700),
}
OBSTACLES_FOR_N = {9: 3, 12: 6, 15: 9}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    experiment: str = "cartpole"
    N: int = 10
    mode: str = "gbd-warm"
    master: str = "greedy"
    G_a: float | None = None  # None: 0.1 for the control experiments, 1e-6 for random-miqp
    I_max: int | None = None  # None: published value for (experiment, N)
    K_feas: int | None = None
    K_opt: int | None = None  # None: unlimited
    epsilon: float = 5000.0
    alpha_deg: float = 15.0
    seed: int = 0
    episodes: int = 1
    duration: float | None = None  # seconds; None: 3 s cart-pole, 10 s free-flyer
    out: str | None = None
    diagnostics: bool = False
    lookahead: bool | None = None  # None: on for free-flyer, off for cart-pole
    sticky_ties: bool | None = None  # None: on for free-flyer, off for cart-pole
    greedy_starts: int = 1
    M_o: int | None = None  # None: 3/6/9 obstacles for N = 9/12/15
    count: int = 100  # random-miqp instances
    check_oracle: bool = False
    cartpole: CartPoleParams = field(default_factory=CartPoleParams)
    walls: WallMotion = field(default_factory=WallMotion)
    freeflyer: FreeFlyerParams = field(default_factory=FreeFlyerParams)

    def resolved(self) -> "RunConfig":
        """Copy with every None default replaced by its experiment-specific value."""
        c = dataclasses.replace(self)
        validate(c)
        if c.I_max is None or c.K_feas is None:
            key = (c.experiment, c.N)
            if c.experiment == "random-miqp":
                I_max, K_feas = 10_000, None
            elif key in PUBLISHED:
                I_max, K_feas = PUBLISHED[key]
            else:
                raise ConfigError(f"no published I_max/K_feas for {c.experiment} N={c.N}; set them explicitly")
            c.I_max = I_max if c.I_max is None else c.I_max
            c.K_feas = K_feas if c.K_feas is None else c.K_feas
        ff = c.experiment == "freeflyer"
        if c.lookahead is None:
            c.lookahead = ff
        if c.sticky_ties is None:
            c.sticky_ties = ff
        if c.duration is None:
            c.duration = 10.0 if ff else 3.0
        if c.M_o is None:
            c.M_o = OBSTACLES_FOR_N.get(c.N, 3)
        if c.out is None:
            c.out = os.environ.get(OUT_ENV, "runs")
        if c.G_a is None:
            c.G_a = 1e-6 if c.experiment == "random-miqp" else 0.1
        return c

    @property
    def alpha(self) -> float:
        return math.radians(self.alpha_deg)

    def steps(self, dt: float) -> int:
        return int(round(self.duration / dt))

    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.episodes)]


def validate(c: RunConfig) -> None:
    if c.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {c.schema_version}; expected {SCHEMA_VERSION}")
    if c.experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {c.experiment!r}")
    if c.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {c.mode!r}")
    if c.master not in MASTERS:
        raise ConfigError(f"master must be one of {MASTERS}, got {c.master!r}")
    if c.N < 1:
        raise ConfigError("N must be positive")
    if c.G_a is not None and not (c.G_a >= 0 and math.isfinite(c.G_a)):
        raise ConfigError("G_a must be finite and non-negative")
    if c.episodes < 1 or c.count < 1:
        raise ConfigError("episodes and count must be positive")
    for name in ("I_max", "K_feas", "K_opt"):
        v = getattr(c, name)
        if v is not None and v < 0:
            raise ConfigError(f"{name} must be non-negative")


_NESTED = {"cartpole": CartPoleParams, "walls": WallMotion, "freeflyer": FreeFlyerParams}


def to_dict(c: RunConfig) -> dict:
    d = {}
    for f in dataclasses.fields(c):
        v = getattr(c, f.name)
        if f.name in _NESTED:
            v = {g.name: _plain(getattr(v, g.name)) for g in dataclasses.fields(v)}
        d[f.name] = v
    return d


def _plain(v):
    if hasattr(v, "tolist"):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    return v


def from_dict(data: dict) -> RunConfig:
    data = dict(data)
    if "schema_version" not in data:
        raise ConfigError("config is missing schema_version")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw = {}
    for name, value in data.items():
        if name in _NESTED:
            cls = _NESTED[name]
            fields = {g.name: g for g in dataclasses.fields(cls)}
            bad = set(value) - set(fields)
            if bad:
                raise ConfigError(f"unknown keys in {name}: {sorted(bad)}")
            defaults = cls()
            sub = {}
            for k, v in value.items():
                ref = getattr(defaults, k)
                if isinstance(ref, tuple):
                    v = tuple(v)
                elif isinstance(ref, np.ndarray):
                    v = np.asarray(v, float)
                sub[k] = v
            value = cls(**sub)
        kw[name] = value
    c = RunConfig(**kw)
    validate(c)
    return c


def dumps(c: RunConfig) -> str:
    return json.dumps(to_dict(c), indent=2, sort_keys=True) + "\n"


def loads(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return from_dict(data)


def load(path) -> RunConfig:
    return loads(Path(path).read_text())


def save(c: RunConfig, path) -> None:
    Path(path).write_text(dumps(c))
