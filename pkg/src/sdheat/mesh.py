"""Regular 1-D meshes on (0, 1): dual meshes, boundary normals, control regions.

Nodes are addressed by *double indices*: the point ``x = j * h / 2`` is stored
as the integer ``j``.  Whole nodes are even, half-shifted (dual) nodes are odd,
so the shift maps ``tau_plus`` / ``tau_minus`` and all set algebra (``prime``,
``star``, closure, interior) are exact integer operations.  Region membership
is decided with rational arithmetic on the exact node coordinates ``i/(N+1)``
so masks never flicker with N.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

__all__ = [
    "Interval",
    "MeshError",
    "RegionNestingError",
    "RegionResolutionError",
    "NodeSet",
    "Mesh",
    "build_mesh",
    "outward_normal",
    "DEFAULT_REGIONS",
]


class MeshError(ValueError):
    """Invalid mesh construction request."""


class RegionNestingError(MeshError):
    """Control regions violate the required strict nesting."""


class RegionResolutionError(MeshError):
    """A control region is unusable at the requested resolution N."""


def _as_fraction(x) -> Fraction:
    # str() round-trips the shortest decimal literal, so 0.4 -> Fraction(2, 5).
    if isinstance(x, Fraction):
        return x
    return Fraction(str(x))


@dataclass(frozen=True)
class Interval:
    """Open interval (lo, hi) with exact rational endpoints."""

    lo: Fraction
    hi: Fraction

    @staticmethod
    def of(lo, hi) -> "Interval":
        lo_f, hi_f = _as_fraction(lo), _as_fraction(hi)
        if not lo_f < hi_f:
            raise MeshError(f"empty interval ({lo}, {hi})")
        return Interval(lo_f, hi_f)

    def contains(self, x: Fraction) -> bool:
        return self.lo < x < self.hi

    def strictly_inside(self, other: "Interval") -> bool:
        """Closure of self contained in the open interval other."""
        return other.lo < self.lo and self.hi < other.hi

    def as_floats(self) -> tuple[float, float]:
        return float(self.lo), float(self.hi)


DEFAULT_REGIONS = (
    Interval.of("0.3", "0.9"),
    Interval.of("0.4", "0.8"),
    Interval.of("0.45", "0.75"),
)


class NodeSet(frozenset):
    """A set of nodes given by their double indices.

    Supports the dual-mesh algebra: ``tau_plus``/``tau_minus`` shift by half a
    step, ``prime`` is their intersection, ``star`` their union, ``closure`` is
    ``star`` twice and ``interior`` is ``prime`` twice.
    """

    def tau_plus(self) -> "NodeSet":
        return NodeSet(j + 1 for j in self)

    def tau_minus(self) -> "NodeSet":
        return NodeSet(j - 1 for j in self)

    def prime(self) -> "NodeSet":
        return NodeSet(self.tau_plus() & self.tau_minus())

    def star(self) -> "NodeSet":
        return NodeSet(self.tau_plus() | self.tau_minus())

    def closure(self) -> "NodeSet":
        return self.star().star()

    def interior(self) -> "NodeSet":
        return self.prime().prime()

    def boundary(self) -> "NodeSet":
        return NodeSet(self.closure() - self)

    def is_regular(self) -> bool:
        """Ring-of-closure identity: interior of the closure recovers the set."""
        return NodeSet(self.closure().interior()) == self

    def sorted_indices(self) -> np.ndarray:
        return np.array(sorted(self), dtype=np.int64)


@dataclass(frozen=True)
class Mesh:
    """Uniform interior mesh of (0, 1) with N nodes and step h = 1/(N+1)."""

    N: int
    g0: Interval
    g1: Interval
    g2: Interval
    h: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "h", 1.0 / (self.N + 1))

    # -- canonical node sets (double indices) --------------------------------

    @property
    def primal(self) -> NodeSet:
        return NodeSet(range(2, 2 * self.N + 1, 2))

    @property
    def closure_set(self) -> NodeSet:
        return NodeSet(range(0, 2 * self.N + 3, 2))

    @property
    def dual(self) -> NodeSet:
        return NodeSet(range(1, 2 * self.N + 2, 2))

    @property
    def boundary_set(self) -> NodeSet:
        return NodeSet({0, 2 * self.N + 2})

    # -- coordinates ----------------------------------------------------------

    def coord(self, j: int) -> float:
        return j / (2.0 * (self.N + 1))

    def coord_exact(self, j: int) -> Fraction:
        return Fraction(j, 2 * (self.N + 1))

    @property
    def primal_nodes(self) -> np.ndarray:
        return np.arange(1, self.N + 1) * self.h

    @property
    def closure_nodes(self) -> np.ndarray:
        return np.arange(0, self.N + 2) * self.h

    @property
    def dual_nodes(self) -> np.ndarray:
        return (np.arange(0, self.N + 1) + 0.5) * self.h

    def nodes(self, tag: str) -> np.ndarray:
        if tag == "primal":
            return self.primal_nodes
        if tag == "closure":
            return self.closure_nodes
        if tag == "dual":
            return self.dual_nodes
        if tag == "boundary":
            return np.array([0.0, 1.0])
        raise MeshError(f"unknown node-set tag {tag!r}")

    def size(self, tag: str) -> int:
        return {"primal": self.N, "closure": self.N + 2,
                "dual": self.N + 1, "boundary": 2}[tag]

    # -- regions ---------------------------------------------------------------

    def _mask(self, region: Interval, tag: str) -> np.ndarray:
        if tag == "primal":
            idx = range(2, 2 * self.N + 1, 2)
        elif tag == "dual":
            idx = range(1, 2 * self.N + 2, 2)
        else:
            raise MeshError(f"masks are defined on primal/dual, not {tag!r}")
        return np.array([region.contains(self.coord_exact(j)) for j in idx])

    def region_mask(self, which: str, tag: str = "primal") -> np.ndarray:
        region = {"g0": self.g0, "g1": self.g1, "g2": self.g2}[which]
        return self._mask(region, tag)

    @property
    def g0_primal_indices(self) -> np.ndarray:
        """0-based indices into the interior vector of the nodes in G0."""
        return np.nonzero(self.region_mask("g0", "primal"))[0]

    def discrete_inclusion_ok(self) -> bool:
        """Closure of the G2 node set stays inside the G1 node set.

        The weight construction requires this; it can fail at coarse N for
        otherwise admissible intervals, in which case the (N, regions) pair is
        rejected by the weight builder rather than silently relaxed.
        """
        g2_nodes = np.nonzero(self.region_mask("g2", "primal"))[0]
        g1_nodes = set(np.nonzero(self.region_mask("g1", "primal"))[0])
        if g2_nodes.size == 0:
            return False
        lo, hi = int(g2_nodes.min()), int(g2_nodes.max())
        return all(0 <= j < self.N and j in g1_nodes for j in (lo - 1, hi + 1))


def _check_regions(N: int, g0: Interval, g1: Interval, g2: Interval) -> None:
    unit = Interval.of(0, 1)
    if not (g2.strictly_inside(g1) and g1.strictly_inside(g0)
            and g0.strictly_inside(unit)):
        raise RegionNestingError(
            "regions must satisfy closure(G2) in G1, closure(G1) in G0, "
            "closure(G0) in (0,1)")
    mesh = Mesh(N, g0, g1, g2)
    for name in ("g0", "g1", "g2"):
        if not mesh.region_mask(name, "primal").any():
            raise RegionResolutionError(
                f"region {name} contains no interior node at N={N}")


def build_mesh(N: int, g0=None, g1=None, g2=None) -> Mesh:
    """Build the interior mesh with validated nested control regions.

    N >= 2; the regions default to (0.3,0.9), (0.4,0.8), (0.45,0.75).
    Raises when nesting is violated or a region is empty / loses its discrete
    closure inclusion at this resolution (such pairs are rejected, not fixed).
    """
    if N < 2:
        raise MeshError(f"need N >= 2, got {N}")
    d0, d1, d2 = DEFAULT_REGIONS
    g0 = d0 if g0 is None else (g0 if isinstance(g0, Interval) else Interval.of(*g0))
    g1 = d1 if g1 is None else (g1 if isinstance(g1, Interval) else Interval.of(*g1))
    g2 = d2 if g2 is None else (g2 if isinstance(g2, Interval) else Interval.of(*g2))
    _check_regions(N, g0, g1, g2)
    return Mesh(N, g0, g1, g2)


def outward_normal(mesh: Mesh, x: float) -> int:
    """Outward normal at a boundary node of the interior mesh.

    +1 when only the left half-shift lands in the dual set, -1 when only the
    right one does, 0 otherwise.
    """
    j = int(round(2 * x * (mesh.N + 1)))
    if abs(2 * x * (mesh.N + 1) - j) > 1e-12 or j not in mesh.boundary_set:
        raise MeshError(f"x={x} is not a boundary node")
    return _normal_at(mesh.dual, j)


def _normal_at(dual: NodeSet, j: int) -> int:
    minus_in = (j - 1) in dual
    plus_in = (j + 1) in dual
    if minus_in and not plus_in:
        return 1
    if plus_in and not minus_in:
        return -1
    return 0
