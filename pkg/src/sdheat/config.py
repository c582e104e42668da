"""Experiment configuration: a flat key-value file with sections.

Every key is listed in ``CONFIG_KEYS`` below; unknown sections or keys are
rejected instead of ignored, so a config file always means what it says.  All
experiment state lives in the config plus the seed; nothing is read from the
environment.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

import numpy as np

from .mesh import build_mesh
from .weights import WeightParams

__all__ = [
    "ConfigError",
    "SweepPointRejected",
    "ExperimentConfig",
    "load_config",
    "delta_schedule",
    "CONFIG_KEYS",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Malformed or unknown configuration content."""


class SweepPointRejected(ValueError):
    """A sweep point fell outside the admissible schedule window."""


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


@dataclass
class ExperimentConfig:
    # mesh
    n_list: tuple[int, ...] = (7, 15, 31)
    g0: tuple[float, float] = (0.4, 0.85)
    g1: tuple[float, float] = (0.45, 0.8)
    g2: tuple[float, float] = (0.55, 0.7)
    # tree
    m_steps: int = 10
    seed: int = 20240901
    # weights
    T: float = 0.5
    lam: float = 1.0
    mu: float = 1.0
    m: int = 1
    delta: float = 0.3        # fixed delta for the weight/expansion checks
    delta0: float = 0.49      # schedule anchor for scheduled runs
    eps0: float = 0.52
    profile: str = "desk"
    alpha: float | None = None
    beta: float | None = None
    # hum
    c_cal: float = 1.0
    eps: float | None = None  # explicit penalty; default is the schedule
    cg_tol: float = 1e-9
    cg_max_iter: int = 5000
    picard_tol: float = 1e-10
    picard_max_iter: int = 60
    kkt_tol: float = 1e-6
    # nonlinearity
    kind: str = "zero"
    L: float = 0.2
    gamma_f: float = 0.0
    gamma_g: float = 0.0
    # carleman
    carleman_samples: int = 100
    sweep_carleman_samples: int = 25
    # output
    out_dir: str = "out"

    def mesh_for(self, n: int):
        return build_mesh(n, self.g0, self.g1, self.g2)

    def weight_params(self, delta: float | None = None) -> WeightParams:
        return WeightParams(lam=self.lam, mu=self.mu, m=self.m,
                            delta=self.delta if delta is None else delta,
                            T=self.T, profile=self.profile,
                            alpha=self.alpha, beta=self.beta)

    def initial_profile(self, mesh) -> np.ndarray:
        return np.sin(np.pi * mesh.primal_nodes)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


CONFIG_KEYS = {
    "mesh": {
        "n_list": ("n_list", _ints),
        "g0": ("g0", _floats),
        "g1": ("g1", _floats),
        "g2": ("g2", _floats),
    },
    "tree": {
        "m_steps": ("m_steps", int),
        "seed": ("seed", int),
    },
    "weights": {
        "t": ("T", float),
        "lam": ("lam", float),
        "mu": ("mu", float),
        "m": ("m", int),
        "delta": ("delta", float),
        "delta0": ("delta0", float),
        "eps0": ("eps0", float),
        "profile": ("profile", str),
        "alpha": ("alpha", float),
        "beta": ("beta", float),
    },
    "hum": {
        "c_cal": ("c_cal", float),
        "eps": ("eps", float),
        "cg_tol": ("cg_tol", float),
        "cg_max_iter": ("cg_max_iter", int),
        "picard_tol": ("picard_tol", float),
        "picard_max_iter": ("picard_max_iter", int),
        "kkt_tol": ("kkt_tol", float),
    },
    "nonlinearity": {
        "kind": ("kind", str),
        "l": ("L", float),
        "gamma_f": ("gamma_f", float),
        "gamma_g": ("gamma_g", float),
    },
    "carleman": {
        "samples": ("carleman_samples", int),
        "sweep_samples": ("sweep_carleman_samples", int),
    },
    "output": {
        "out_dir": ("out_dir", str),
    },
}


def load_config(path: str | None) -> ExperimentConfig:
    """Parse a config file against the key registry; None gives the defaults."""
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    for section in parser.sections():
        if section not in CONFIG_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        registry = CONFIG_KEYS[section]
        for key, raw in parser.items(section):
            if key not in registry:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            attr, conv = registry[key]
            try:
                setattr(cfg, attr, conv(raw))
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for [{section}] {key} = {raw!r}: {exc}") from exc
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if not 0.0 < cfg.T < 1.0:
        raise ConfigError(f"need 0 < T < 1, got T={cfg.T}")
    if not cfg.n_list:
        raise ConfigError("n_list must not be empty")
    if cfg.kind not in ("zero", "sine", "linear"):
        raise ConfigError(f"unknown nonlinearity kind {cfg.kind!r}")
    if cfg.profile not in ("classical", "desk"):
        raise ConfigError(f"unknown weight profile {cfg.profile!r}")
    for name in ("g0", "g1", "g2"):
        if len(getattr(cfg, name)) != 2:
            raise ConfigError(f"{name} needs exactly two endpoints")


def delta_schedule(h: float, lam: float, eps0: float, delta0: float,
                   T: float) -> float:
    """delta = (h / h1) * delta0 with h1 = eps0*delta0*T/lam, which pins
    lam * h / (delta*T) = eps0 exactly; points with h > h1 are rejected."""
    h1 = eps0 * delta0 * T / lam
    if h > h1:
        raise SweepPointRejected(
            f"h={h:.6g} exceeds the schedule window h1={h1:.6g}")
    return (h / h1) * delta0
