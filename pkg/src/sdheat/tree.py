"""Binary scenario trees: an exact finite model of the filtered probability
space driving the noise.

Level k holds 2**k nodes; the two children of node j at level k are 2j (up,
increment +sqrt(dt)) and 2j+1 (down, -sqrt(dt)).  Expectations reduce by
repeated pairwise halving, which makes tower properties, martingale identities
and the comparison against full path enumeration exact in floating point (the
halving tree is the same in both).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ScenarioTree",
    "AdaptedProcess",
    "build_tree",
    "dyadic_mean",
    "expectation",
    "conditional_expectation",
    "ito_product_residual",
    "sample_paths",
    "MAX_DEPTH",
]

MAX_DEPTH = 14


def dyadic_mean(values: np.ndarray) -> np.ndarray:
    """Mean over axis 0 (length a power of two) by repeated pairwise halving."""
    v = np.asarray(values, dtype=float)
    while v.shape[0] > 1:
        v = 0.5 * (v[0::2] + v[1::2])
    return v[0]


@dataclass(frozen=True)
class ScenarioTree:
    """Binary tree of Brownian increments +-sqrt(dt) over M steps of [0, T]."""

    M: int
    T: float
    dt: float = field(init=False)
    sqrt_dt: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "dt", self.T / self.M)
        object.__setattr__(self, "sqrt_dt", float(np.sqrt(self.dt)))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.dt

    def level_size(self, k: int) -> int:
        return 1 << k

    def node_probability(self, k: int) -> float:
        return 0.5 ** k

    def increments(self, k: int) -> np.ndarray:
        """Signed increments from level k to its 2**(k+1) children."""
        out = np.empty(1 << (k + 1))
        out[0::2] = self.sqrt_dt
        out[1::2] = -self.sqrt_dt
        return out

    def brownian(self) -> "AdaptedProcess":
        levels = [np.zeros(1)]
        for k in range(self.M):
            w = levels[-1]
            child = np.repeat(w, 2) + self.increments(k)
            levels.append(child)
        return AdaptedProcess(self, levels)

    def zeros(self, width: int | None = None) -> "AdaptedProcess":
        shape = (lambda k: (1 << k,)) if width is None else (lambda k: (1 << k, width))
        return AdaptedProcess(self, [np.zeros(shape(k)) for k in range(self.M + 1)])


@dataclass
class AdaptedProcess:
    """One array per tree level; adaptedness is enforced by the storage layout
    (the value at a node is indexed by the path to it and nothing else)."""

    tree: ScenarioTree
    levels: list[np.ndarray]

    def __post_init__(self):
        if len(self.levels) != self.tree.M + 1:
            raise ValueError(
                f"need {self.tree.M + 1} level arrays, got {len(self.levels)}")
        self.levels = [np.asarray(a, dtype=float) for a in self.levels]
        for k, a in enumerate(self.levels):
            if a.shape[0] != 1 << k:
                raise ValueError(f"level {k} must have {1 << k} nodes, got {a.shape[0]}")

    @property
    def width(self) -> int:
        a = self.levels[0]
        return 1 if a.ndim == 1 else a.shape[1]

    def __getitem__(self, k: int) -> np.ndarray:
        return self.levels[k]

    def map(self, fn) -> "AdaptedProcess":
        return AdaptedProcess(self.tree, [fn(a) for a in self.levels])

    def __add__(self, other: "AdaptedProcess") -> "AdaptedProcess":
        return AdaptedProcess(
            self.tree, [a + b for a, b in zip(self.levels, other.levels)])

    def __sub__(self, other: "AdaptedProcess") -> "AdaptedProcess":
        return AdaptedProcess(
            self.tree, [a - b for a, b in zip(self.levels, other.levels)])

    def __mul__(self, scalar: float) -> "AdaptedProcess":
        return AdaptedProcess(self.tree, [scalar * a for a in self.levels])

    __rmul__ = __mul__

    def copy(self) -> "AdaptedProcess":
        return AdaptedProcess(self.tree, [a.copy() for a in self.levels])


def build_tree(M: int, T: float, seed: int | None = None) -> ScenarioTree:
    """Build the scenario tree; the seed only matters to Monte Carlo helpers,
    the tree itself is deterministic."""
    if not 1 <= M <= MAX_DEPTH:
        raise ValueError(f"tree depth must satisfy 1 <= M <= {MAX_DEPTH}, got {M}")
    if T <= 0:
        raise ValueError("horizon T must be positive")
    return ScenarioTree(M, T)


def expectation(values: np.ndarray) -> np.ndarray:
    """Expectation of a level array under the uniform node probabilities."""
    return dyadic_mean(values)


def conditional_expectation(child_values: np.ndarray) -> np.ndarray:
    """E[. | parent]: pairwise mean of the two children of every parent."""
    return 0.5 * (child_values[0::2] + child_values[1::2])


def conditional_increment_expectation(child_values: np.ndarray,
                                      tree: ScenarioTree) -> np.ndarray:
    """E[X * dW | parent] for a level-(k+1) array X."""
    return 0.5 * tree.sqrt_dt * (child_values[0::2] - child_values[1::2])


def ito_product_residual(a: AdaptedProcess, b: AdaptedProcess) -> float:
    """Max residual of the per-edge product rule
    delta(ab) = a*delta(b) + b*delta(a) + delta(a)*delta(b)."""
    worst = 0.0
    for k in range(a.tree.M):
        ak, bk = np.repeat(a[k], 2, axis=0), np.repeat(b[k], 2, axis=0)
        a1, b1 = a[k + 1], b[k + 1]
        da, db = a1 - ak, b1 - bk
        r = a1 * b1 - ak * bk - ak * db - bk * da - da * db
        worst = max(worst, float(np.max(np.abs(r))))
    return worst


def sample_paths(M: int, T: float, n_paths: int, seed: int) -> np.ndarray:
    """(n_paths, M) i.i.d. Gaussian increments N(0, dt) for Monte Carlo
    cross-checks; deterministic under the seed."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, np.sqrt(T / M), size=(n_paths, M))
