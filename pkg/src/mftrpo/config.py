"""Experiment configuration files and the bundled presets.

Grammar::

    # comment (also allowed after a value)
    [section]
    key = value
    list_key = 1, 2, 3
    cell_list = 1:2, 2:2, 3:2      # x:y pairs, x = column, y = row, origin top-left

Sections are ``env`` and ``solver`` (required) plus ``output`` and ``run``.
Unknown sections or keys, duplicate keys and malformed values are errors
that carry the file name and line number.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError

ALGORITHMS = ("exact-mftrpo", "sampled-mftrpo", "exact-fixed-point", "fp", "omd")
REQUIRED_SECTIONS = ("env", "solver")
_HEADER = re.compile(r"^\[([A-Za-z0-9_-]+)\]$")
_ASSIGN = re.compile(r"^([A-Za-z0-9_]+)\s*=\s*(.*)$")


# value converters ---------------------------------------------------------


def _int(text):
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _pos_int(text):
    value = _int(text)
    if value < 1:
        raise ValueError(f"expected a positive integer, got {text!r}")
    return value


def _nonneg_int(text):
    value = _int(text)
    if value < 0:
        raise ValueError(f"expected a non-negative integer, got {text!r}")
    return value


def _float(text):
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"expected a finite number, got {text!r}")
    return value


def _pos_float(text):
    value = _float(text)
    if value <= 0:
        raise ValueError(f"expected a positive number, got {text!r}")
    return value


def _unit(text):
    value = _float(text)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"expected a number in [0, 1], got {text!r}")
    return value


def _discount(text):
    value = _float(text)
    if not 0.0 <= value < 1.0:
        raise ValueError(f"expected a discount in [0, 1), got {text!r}")
    return value


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _choice(*options):
    def convert(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return convert


def _cell(text):
    parts = text.split(":")
    if len(parts) != 2:
        raise ValueError(f"expected a cell as x:y, got {text!r}")
    return (_nonneg_int(parts[0]), _nonneg_int(parts[1]))


def _optional_cell(text):
    return None if text.lower() == "none" else _cell(text)


def _list(item):
    def convert(text):
        if not text.strip() or text.strip().lower() == "none":
            return ()
        return tuple(item(part.strip()) for part in text.split(","))
    return convert


def _optional(convert):
    def wrapped(text):
        return None if text.lower() in ("none", "auto", "") else convert(text)
    return wrapped


# schema -------------------------------------------------------------------

SCHEMA = {
    "env": {
        "family": _choice("grid", "islands"),
        "layout": _choice("walled5", "four-rooms", "custom"),
        "width": _pos_int,
        "height": _pos_int,
        "walls": _list(_cell),
        "target": _optional_cell,
        "kappa": _float,
        "slipperiness": _unit,
        "mu_floor": _pos_float,
        "initial_cell": _cell,
        "initial_state": _nonneg_int,
        "islands_seed": _nonneg_int,
        "reset": _choice("start", "uniform"),
        "gamma": _discount,
    },
    "solver": {
        "algorithm": _choice(*ALGORITHMS),
        "eta": _pos_float,
        "inner_iters": _nonneg_int,
        "outer_iters": _pos_int,
        "beta": _unit,
        "beta_schedule": _choice("constant", "harmonic"),
        "kernel_power": _nonneg_int,
        "samples_per_iter": _pos_int,
        "sample_growth": _choice("constant", "quadratic"),
        "trajectories": _pos_int,
        "rollout_horizon": _optional(_pos_int),
        "epsilon": _pos_float,
        "delta": _pos_float,
        "warm_start": _bool,
        "learning_rate": _float,
        "q_estimator": _choice("importance", "per_action"),
        "population": _choice("damped", "stationary"),
    },
    "output": {
        "directory": str,
        "snapshots": _list(_nonneg_int),
        "heatmaps": _bool,
        "eval_every": _optional(_pos_int),
        "wall_time": _bool,
    },
    "run": {
        "seeds": _list(_nonneg_int),
    },
}

GRID_ONLY = {"layout", "width", "height", "walls", "target", "slipperiness", "initial_cell"}
ISLANDS_ONLY = {"initial_state", "islands_seed"}


@dataclass
class EnvSection:
    family: str = "grid"
    layout: str = "walled5"
    width: int = 5
    height: int = 5
    walls: tuple = ()
    target: Optional[tuple] = None
    kappa: float = 0.2
    slipperiness: float = 0.1
    mu_floor: float = 1e-10
    initial_cell: tuple = (0, 0)
    initial_state: int = 2
    islands_seed: int = 0
    reset: str = "start"
    gamma: float = 0.9


@dataclass
class SolverSection:
    algorithm: str = "exact-mftrpo"
    eta: float = 0.05
    inner_iters: int = 10
    outer_iters: int = 5000
    beta: float = 0.01
    beta_schedule: str = "constant"
    kernel_power: int = 1
    samples_per_iter: int = 10_000
    sample_growth: str = "constant"
    trajectories: int = 10_000
    rollout_horizon: Optional[int] = None
    epsilon: float = 0.5
    delta: float = 0.1
    warm_start: bool = True
    learning_rate: float = 1.0
    q_estimator: str = "importance"
    population: str = "damped"


@dataclass
class OutputSection:
    directory: str = "out"
    snapshots: tuple = (0,)
    heatmaps: bool = True
    eval_every: Optional[int] = None
    wall_time: bool = False


@dataclass
class ExperimentConfig:
    env: EnvSection = field(default_factory=EnvSection)
    solver: SolverSection = field(default_factory=SolverSection)
    output: OutputSection = field(default_factory=OutputSection)
    seeds: tuple = (0,)
    source: Optional[str] = None


def parse_config_text(text: str, path: Optional[str] = None) -> ExperimentConfig:
    raw: dict = {}
    lines: dict = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        header = _HEADER.match(stripped)
        if header:
            section = header.group(1)
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno, path)
            if section in raw:
                raise ConfigError(f"duplicate section [{section}]", lineno, path)
            raw[section] = {}
            continue
        assign = _ASSIGN.match(stripped)
        if not assign:
            raise ConfigError(f"cannot parse {stripped!r}; expected 'key = value'", lineno, path)
        if section is None:
            raise ConfigError("key outside of any section", lineno, path)
        key, value = assign.group(1), assign.group(2).strip()
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, path)
        if key in raw[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno, path)
        try:
            raw[section][key] = SCHEMA[section][key](value)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: {exc}", lineno, path) from None
        lines[(section, key)] = lineno
    for name in REQUIRED_SECTIONS:
        if name not in raw:
            raise ConfigError(f"missing required section [{name}]", None, path)
    cfg = ExperimentConfig(EnvSection(**raw["env"]), SolverSection(**raw["solver"]),
                           OutputSection(**raw.get("output", {})),
                           raw.get("run", {}).get("seeds", (0,)) or (0,), path)
    _cross_check(cfg, raw, lines, path)
    return cfg


def _cross_check(cfg, raw, lines, path):
    env = raw["env"]
    banned = ISLANDS_ONLY if cfg.env.family == "grid" else GRID_ONLY
    for key in env:
        if key in banned:
            raise ConfigError(f"key {key!r} does not apply to family {cfg.env.family!r}",
                              lines[("env", key)], path)
    if cfg.env.family == "grid" and cfg.env.layout != "custom":
        for key in ("width", "height", "walls"):
            if key in env:
                raise ConfigError(f"key {key!r} requires layout = custom",
                                  lines[("env", key)], path)
    solver = cfg.solver
    if solver.algorithm == "exact-mftrpo" and solver.inner_iters < 1:
        raise ConfigError("solver.inner_iters must be >= 1 for exact-mftrpo",
                          lines.get(("solver", "inner_iters")), path)
    if solver.algorithm != "sampled-mftrpo" and solver.kernel_power < 1:
        raise ConfigError("solver.kernel_power must be >= 1 for this algorithm",
                          lines.get(("solver", "kernel_power")), path)
    if len(set(cfg.seeds)) != len(cfg.seeds):
        raise ConfigError("run.seeds contains duplicates", lines.get(("run", "seeds")), path)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError("config file not found", None, str(path)) from None
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config_text(text, str(path))


# presets ------------------------------------------------------------------

_GRID_TARGET = """\
[env]
family = grid
layout = walled5
target = 4:4
kappa = 0.2
gamma = 0.9
"""

_EXACT = """\
[solver]
algorithm = exact-mftrpo
eta = {eta}
inner_iters = 10
outer_iters = 5000
beta = 0.01
kernel_power = 1

[output]
directory = out/{name}
snapshots = 0, 10, 200
heatmaps = true

[run]
seeds = 0
"""

_SAMPLED = """\
[solver]
algorithm = sampled-mftrpo
eta = {eta}
inner_iters = {L}
outer_iters = {K}
beta = 0.1
kernel_power = {M}
samples_per_iter = {I}
trajectories = {I}
epsilon = 0.5
delta = 0.1
q_estimator = importance

[output]
directory = out/{name}
snapshots = 0, 10, {K}
heatmaps = true
eval_every = {every}

[run]
seeds = {seeds}
"""

_BASELINE = """\
[solver]
algorithm = {alg}
eta = 0.05
outer_iters = 5000
beta = 0.01
kernel_power = 1
learning_rate = 0.1

[output]
directory = out/{name}
snapshots = 0, 10, 200

[run]
seeds = 0
"""


def _presets():
    p = {}
    for eta, tag in ((0.05, ""), (0.3, "-eta03")):
        p["exact-table2" + tag] = _GRID_TARGET + "\n" + _EXACT.format(eta=eta, name="exact-table2" + tag)
        p["sampled-table2" + tag] = _GRID_TARGET + "\n" + _SAMPLED.format(
            eta=eta, L=100, K=200, M=100, I=300000, every=1, seeds="0, 1, 2",
            name="sampled-table2" + tag)
        p["sampled-desk" + tag] = _GRID_TARGET + "\n" + _SAMPLED.format(
            eta=eta, L=20, K=50, M=20, I=10000, every=1, seeds="0, 1, 2",
            name="sampled-desk" + tag)
    p["four-rooms-exact"] = ("[env]\nfamily = grid\nlayout = four-rooms\nkappa = 0.2\ngamma = 0.9\n\n"
                             + _EXACT.format(eta=0.05, name="four-rooms-exact"))
    p["islands-exact"] = ("[env]\nfamily = islands\nkappa = 0.2\ninitial_state = 2\n"
                          "islands_seed = 0\ngamma = 0.9\n\n"
                          + _EXACT.format(eta=0.05, name="islands-exact"))
    for alg in ("fp", "omd"):
        p[f"{alg}-grid"] = _GRID_TARGET + "\n" + _BASELINE.format(alg=alg, name=f"{alg}-grid")
    return p


PRESETS = _presets()


def preset_names():
    return sorted(PRESETS)


def preset_text(name: str) -> str:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}") from None


def load_preset(name: str) -> ExperimentConfig:
    return parse_config_text(preset_text(name), f"<preset {name}>")
