"""TOML experiment configs.

A config is one document with top-level run settings and optional
``[problem]``, ``[schedule]``, ``[record]``, ``[sweep]`` and ``[check]``
tables. Unknown keys anywhere are errors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from ..shuffle import SCHEMES

MODES = ("trajectories", "variance-sweep", "bound-check")

# default ensemble sizes differ by mode: plots mirror small figure
# ensembles, bound checks need many runs for tight intervals
DEFAULT_SEEDS = {"trajectories": 20, "variance-sweep": 1, "bound-check": 500}


class ConfigError(ValueError):
    pass


_TOP = {"mode", "methods", "epochs", "seeds", "tau", "out", "threads", "x0", "problem", "schedule", "record", "sweep", "check"}
_PROBLEM = {"kind", "centers", "curvatures", "n", "d", "seed", "path", "N", "density", "lam", "pl_mu", "scale"}
_SCHEDULE = {"kind", "gamma", "c", "k0"}
_RECORD = {"inner", "every"}
_SWEEP = {"over", "gammas", "num_gammas", "gamma_min_factor", "taus", "gamma", "num_perms", "distribution_samples", "seed"}
_CHECK = {"theorems", "gamma", "slack", "num_perms"}


def _reject_unknown(table: dict, allowed: set, where: str):
    extra = sorted(set(table) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def parse_seeds(value) -> list[int]:
    """Seeds from a list, an int count, or an inclusive ``"a..b"`` range."""
    if isinstance(value, bool):
        raise ConfigError("seeds must be a list, a count or 'a..b'")
    if isinstance(value, int):
        if value < 1:
            raise ConfigError("seed count must be positive")
        return list(range(value))
    if isinstance(value, str):
        a, sep, b = value.partition("..")
        try:
            lo, hi = int(a), int(b)
        except ValueError:
            raise ConfigError(f"bad seed range {value!r}; expected 'a..b'") from None
        if not sep or hi < lo or lo < 0:
            raise ConfigError(f"bad seed range {value!r}")
        return list(range(lo, hi + 1))
    seeds = [int(s) for s in value]
    if not seeds or any(s < 0 for s in seeds):
        raise ConfigError("seeds must be a nonempty list of nonnegative integers")
    return seeds


@dataclass
class ExperimentConfig:
    mode: str = "trajectories"
    methods: list = field(default_factory=lambda: ["RR"])
    epochs: int = 30
    seeds: list = field(default_factory=lambda: list(range(20)))
    tau: int = 1
    out: str = "results"
    threads: Optional[int] = None
    x0: Any = None
    problem: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=lambda: {"kind": "constant", "gamma": 0.1})
    record: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    check: dict = field(default_factory=dict)
    source: str = "<config>"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        for m in self.methods:
            if m not in SCHEMES:
                raise ConfigError(f"unknown method {m!r}; expected one of {SCHEMES}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if int(self.epochs) < 1:
            raise ConfigError("epochs must be at least 1")
        if int(self.tau) < 1:
            raise ConfigError("tau must be at least 1")
        _reject_unknown(self.problem, _PROBLEM, "[problem]")
        _reject_unknown(self.schedule, _SCHEDULE, "[schedule]")
        _reject_unknown(self.record, _RECORD, "[record]")
        _reject_unknown(self.sweep, _SWEEP, "[sweep]")
        _reject_unknown(self.check, _CHECK, "[check]")
        if "kind" not in self.problem:
            raise ConfigError("[problem] needs a kind")


def config_from_dict(doc: dict, source: str = "<config>") -> ExperimentConfig:
    _reject_unknown(doc, _TOP, "top level")
    mode = doc.get("mode", "trajectories")
    kw = dict(doc)
    kw["seeds"] = parse_seeds(doc["seeds"]) if "seeds" in doc else list(range(DEFAULT_SEEDS.get(mode, 20)))
    kw["source"] = source
    try:
        return ExperimentConfig(**kw)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    cfg = config_from_dict(doc, str(path))
    # relative dataset paths resolve against the config file
    p = cfg.problem.get("path")
    if p and not Path(p).is_absolute():
        cfg.problem["path"] = str(path.parent / p)
    return cfg
