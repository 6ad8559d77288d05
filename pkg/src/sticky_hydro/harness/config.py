"""Line-based experiment configuration.

Format: one ``key = value`` per line; ``#`` starts a comment; blank lines are
ignored.  Lists are comma separated.  Recognised keys and defaults:

==============  =======================================================  ==========================
key             meaning                                                  default
==============  =======================================================  ==========================
experiment      hydro-convergence | chaos-decay | walk-diagnostics |     required
                fbp-selftest
N_list          strictly ascending channel sizes                         per experiment (below)
datum           linear | step | sine | constant:<c> | table:<csv path>   linear
T               macroscopic horizon                                      per experiment (below)
tau_list        macroscopic sample times in (0, T]                       per experiment (below)
replicas        Monte Carlo replicas / paths per start                   per experiment (below)
seed            64-bit unsigned seed                                     20240601
h               Volterra time step                                       0.001
output_dir      directory for CSV, metadata and plot script              sticky_hydro_out
v0_minus        left reservoir density, overrides the datum              datum value
v0_plus         right reservoir density, overrides the datum             datum value
exact_N         channel size of the exact chaos branch                   8
==============  =======================================================  ==========================

Per-experiment defaults (N_list; T; tau_list; replicas):

* hydro-convergence: 50,100,200,400; 0.5; 0.1,0.5; unused
* chaos-decay: 25,50,100; 0.25; 0.25; 50000
* walk-diagnostics: 6,10; 1.0; 1.0; 10000  (``T`` is the transition-check
  time in microscopic units)
* fbp-selftest: 2; 1.0; 0.1,0.5,1.0; unused

A ``table`` datum is a CSV with columns ``r,u`` (header optional); relative
paths resolve against the configuration file.
"""

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..lattice import InitialData

EXPERIMENTS = ("hydro-convergence", "chaos-decay", "walk-diagnostics", "fbp-selftest")

_EXPERIMENT_DEFAULTS = {
    "hydro-convergence": {"N_list": (50, 100, 200, 400), "T": 0.5, "tau_list": (0.1, 0.5), "replicas": 10000},
    "chaos-decay": {"N_list": (25, 50, 100), "T": 0.25, "tau_list": (0.25,), "replicas": 50000},
    "walk-diagnostics": {"N_list": (6, 10), "T": 1.0, "tau_list": (1.0,), "replicas": 10000},
    "fbp-selftest": {"N_list": (2,), "T": 1.0, "tau_list": (0.1, 0.5, 1.0), "replicas": 10000},
}

KEYS = (
    "experiment", "N_list", "datum", "T", "tau_list", "replicas", "seed",
    "h", "output_dir", "v0_minus", "v0_plus", "exact_N",
)


class ConfigError(ValueError):
    """Invalid configuration file or value."""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    N_list: tuple = ()
    datum: str = "linear"
    T: float = 0.0
    tau_list: tuple = ()
    replicas: int = 0
    seed: int = 20240601
    h: float = 1e-3
    output_dir: str = "sticky_hydro_out"
    v0_minus: float = None
    v0_plus: float = None
    exact_N: int = 8
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        defaults = _EXPERIMENT_DEFAULTS[self.experiment]
        for key in ("N_list", "T", "tau_list", "replicas"):
            if not getattr(self, key):
                object.__setattr__(self, key, defaults[key])
        N_list = tuple(int(n) for n in self.N_list)
        if not N_list:
            raise ConfigError("N_list must be nonempty")
        if any(b <= a for a, b in zip(N_list, N_list[1:])):
            raise ConfigError(f"N_list must be ascending, got {','.join(map(str, N_list))}")
        if min(N_list) < 2:
            raise ConfigError("N_list entries must be >= 2")
        object.__setattr__(self, "N_list", N_list)
        if not self.T > 0:
            raise ConfigError("T must be > 0")
        if not self.h > 0:
            raise ConfigError("h must be > 0")
        if int(self.replicas) < 2:
            raise ConfigError("replicas must be >= 2")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if int(self.exact_N) < 2:
            raise ConfigError("exact_N must be >= 2")
        taus = tuple(float(t) for t in self.tau_list)
        if any(not 0 < t <= self.T * (1 + 1e-12) for t in taus):
            raise ConfigError("tau_list entries must lie in (0, T]")
        object.__setattr__(self, "tau_list", taus)
        for key in ("v0_minus", "v0_plus"):
            val = getattr(self, key)
            if val is not None and not 0.0 <= val <= 1.0:
                raise ConfigError(f"{key} must lie in [0, 1]")
        self.initial_data()

    def initial_data(self):
        """Resolve ``datum`` (plus reservoir overrides) to an :class:`InitialData`."""
        name, _, arg = self.datum.partition(":")
        try:
            if name == "linear" and not arg:
                d = InitialData.linear()
            elif name == "step" and not arg:
                d = InitialData.step()
            elif name == "sine" and not arg:
                d = InitialData.sine()
            elif name == "constant":
                d = InitialData.constant(float(arg))
            elif name == "table":
                d = _load_table(Path(self.base_dir) / arg)
            else:
                raise ConfigError(f"unknown datum {self.datum!r}")
        except (ValueError, OSError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad datum {self.datum!r}: {exc}") from exc
        if self.v0_minus is not None or self.v0_plus is not None:
            d = replace(
                d,
                v0_minus=d.v0_minus if self.v0_minus is None else self.v0_minus,
                v0_plus=d.v0_plus if self.v0_plus is None else self.v0_plus,
                name=f"{d.name}+reservoirs",
            )
        return d

    def as_lines(self):
        out = []
        for key in KEYS:
            val = getattr(self, key)
            if val is None:
                continue
            if isinstance(val, tuple):
                val = ",".join(repr(v) if isinstance(v, float) else str(v) for v in val)
            out.append(f"{key} = {val}")
        return out


def _load_table(path):
    raw = np.genfromtxt(path, delimiter=",", dtype=float)
    if raw.ndim == 2 and np.isnan(raw[0]).all():
        raw = raw[1:]
    if raw.ndim != 2 or raw.shape[1] != 2:
        raise ConfigError(f"table {path} must have two columns r,u")
    return InitialData.from_table(raw[:, 0], raw[:, 1])


def _convert(key, text, lineno=None):
    where = f"line {lineno}: " if lineno is not None else ""
    try:
        if key in ("N_list",):
            return tuple(int(x) for x in text.split(",") if x.strip())
        if key == "tau_list":
            return tuple(float(x) for x in text.split(",") if x.strip())
        if key in ("replicas", "seed", "exact_N"):
            try:
                return int(text)
            except ValueError:
                # allow forms like 1e4
                val = float(text)
                if val != int(val):
                    raise ValueError("not an integer") from None
                return int(val)
        if key in ("T", "h", "v0_minus", "v0_plus"):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{where}bad value for {key!r}: {text!r} ({exc})") from None
    return text


def parse_config_text(text, overrides=None, base_dir="."):
    """Parse configuration text; ``overrides`` (already typed) win over file values."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key or not val:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, val, lineno)
    for key, val in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        if val is not None:
            values[key] = _convert(key, val) if isinstance(val, str) else val
    if "experiment" not in values:
        raise ConfigError("missing required key 'experiment'")
    return ExperimentConfig(base_dir=os.fspath(base_dir), **values)


def parse_config(path=None, overrides=None):
    """Read a configuration file (or none) and apply command-line overrides."""
    if path is None:
        return parse_config_text("", overrides)
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, overrides, base_dir=path.parent)
