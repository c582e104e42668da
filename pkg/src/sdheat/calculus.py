"""Difference/average operators on staggered grids and their exact identities.

``diff`` and ``avg`` hop between a node set and its dual: closure -> dual and
dual -> primal.  Everything here is algebraically exact; the residual
evaluators exist so tests (and the ``check-calculus`` suite) can verify that
the implementation reproduces the product rules, the summation-by-parts
formulas and the boundary trace identity to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, MeshError, outward_normal

__all__ = [
    "GridFunction",
    "diff",
    "avg",
    "laplace",
    "laplace_interior",
    "integrate",
    "inner",
    "zero_extend",
    "trace",
    "identity_residuals",
    "IDENTITY_NAMES",
]


@dataclass(frozen=True)
class GridFunction:
    """Real values attached to one of the tagged node sets of a mesh."""

    mesh: Mesh
    tag: str
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        expected = self.mesh.size(self.tag)
        if vals.shape[-1] != expected:
            raise MeshError(
                f"{self.tag} grid function needs {expected} values, "
                f"got {vals.shape[-1]}")

    def nodes(self) -> np.ndarray:
        return self.mesh.nodes(self.tag)


def _require(u: GridFunction, *tags: str) -> None:
    if u.tag not in tags:
        raise MeshError(f"expected a function on {' or '.join(tags)}, got {u.tag}")


def diff(u: GridFunction) -> GridFunction:
    """Difference quotient between half-shifted neighbours; closure -> dual,
    dual -> primal."""
    _require(u, "closure", "dual")
    out_tag = "dual" if u.tag == "closure" else "primal"
    v = (u.values[..., 1:] - u.values[..., :-1]) / u.mesh.h
    return GridFunction(u.mesh, out_tag, v)


def avg(u: GridFunction) -> GridFunction:
    """Mean of half-shifted neighbours; closure -> dual, dual -> primal."""
    _require(u, "closure", "dual")
    out_tag = "dual" if u.tag == "closure" else "primal"
    v = 0.5 * (u.values[..., 1:] + u.values[..., :-1])
    return GridFunction(u.mesh, out_tag, v)


def laplace(u: GridFunction) -> GridFunction:
    """Second difference, closure -> primal (equals diff applied twice)."""
    _require(u, "closure")
    return diff(diff(u))


def laplace_interior(values: np.ndarray, h: float) -> np.ndarray:
    """Dirichlet second difference acting on interior values only.

    The standard tridiagonal (-2 diagonal, 1 off-diagonal) / h**2; this is the
    matrix the implicit time stepper factorizes.
    """
    out = -2.0 * values
    out[..., :-1] += values[..., 1:]
    out[..., 1:] += values[..., :-1]
    return out / (h * h)


def zero_extend(u: GridFunction) -> GridFunction:
    """Explicitly extend a primal function by zero boundary values."""
    _require(u, "primal")
    v = np.zeros(u.values.shape[:-1] + (u.mesh.N + 2,))
    v[..., 1:-1] = u.values
    return GridFunction(u.mesh, "closure", v)


def integrate(u: GridFunction) -> float:
    """h-weighted sum over volume sets, plain sum over the boundary set."""
    if u.tag == "boundary":
        return float(np.sum(u.values, axis=-1))
    return float(u.mesh.h * np.sum(u.values, axis=-1))


def inner(u: GridFunction, v: GridFunction) -> float:
    if u.tag != v.tag:
        raise MeshError(f"inner product needs matching tags, got {u.tag}/{v.tag}")
    if u.tag == "boundary":
        return float(np.sum(u.values * v.values, axis=-1))
    return float(u.mesh.h * np.sum(u.values * v.values, axis=-1))


def trace(u: GridFunction, x: float) -> float:
    """Trace of a dual-node function at a boundary node, following the sign of
    the outward normal (0 where the normal vanishes)."""
    _require(u, "dual")
    nu = outward_normal(u.mesh, x)
    j = int(round(2 * x * (u.mesh.N + 1)))
    dual_idx = sorted(u.mesh.dual)
    if nu == 1:
        return float(u.values[dual_idx.index(j - 1)])
    if nu == -1:
        return float(u.values[dual_idx.index(j + 1)])
    return 0.0


IDENTITY_NAMES = (
    "product_diff",
    "product_avg",
    "avg_square_recover",
    "square_avg",
    "square_avg_lower_bound",
    "square_diff",
    "sbp_diff",
    "sbp_avg",
    "trace_identity",
)


def _boundary_data(u: GridFunction, w: GridFunction):
    """(value of u, trace of w, normal) at both boundary nodes."""
    mesh = u.mesh
    out = []
    for x, i_u in ((0.0, 0), (1.0, mesh.N + 1)):
        out.append((u.values[i_u], trace(w, x), outward_normal(mesh, x)))
    return out


def identity_residuals(u: GridFunction, v: GridFunction) -> dict[str, float]:
    """Relative residuals of the staggered-grid identities for closure data.

    Each residual is max|lhs - rhs| scaled by the size of the quantities
    involved; all of them vanish in exact arithmetic.  The dual-node test
    function for the summation-by-parts identities is built as avg(v), which
    spans the whole dual space.
    """
    _require(u, "closure")
    _require(v, "closure")
    mesh = u.mesh
    h = mesh.h
    su = 1.0 + np.max(np.abs(u.values))
    sv = 1.0 + np.max(np.abs(v.values))

    uv = GridFunction(mesh, "closure", u.values * v.values)
    uu = GridFunction(mesh, "closure", u.values * u.values)
    du, dv = diff(u), diff(v)
    au, av = avg(u), avg(v)

    res: dict[str, float] = {}
    res["product_diff"] = float(np.max(np.abs(
        diff(uv).values - (du.values * av.values + au.values * dv.values)
    ))) / (su * sv / h)
    res["product_avg"] = float(np.max(np.abs(
        avg(uv).values - (au.values * av.values
                          + 0.25 * h * h * du.values * dv.values)
    ))) / (su * sv)
    res["avg_square_recover"] = float(np.max(np.abs(
        u.values[1:-1] - (avg(au).values - 0.25 * h * h * diff(du).values)
    ))) / su
    res["square_avg"] = float(np.max(np.abs(
        avg(uu).values - (au.values ** 2 + 0.25 * h * h * du.values ** 2)
    ))) / (su * su)
    res["square_avg_lower_bound"] = float(np.max(np.maximum(
        au.values ** 2 - avg(uu).values, 0.0
    ))) / (su * su)
    res["square_diff"] = float(np.max(np.abs(
        diff(uu).values - 2.0 * du.values * au.values
    ))) / (su * su / h)

    # summation by parts, with w = avg(v) as the dual-node test function
    w = av
    dw = diff(w)  # dual -> primal
    u_primal = u.values[1:-1]
    boundary = _boundary_data(u, w)
    lhs = h * np.sum(u_primal * dw.values)
    rhs = -h * np.sum(du.values * w.values) + sum(ub * tw * nu for ub, tw, nu in boundary)
    res["sbp_diff"] = abs(lhs - rhs) / (su * sv / h)

    aw = avg(w)  # dual -> primal
    lhs = h * np.sum(u_primal * aw.values)
    rhs = h * np.sum(au.values * w.values) - 0.5 * h * sum(
        ub * tw for ub, tw, _ in boundary)
    res["sbp_avg"] = abs(lhs - rhs) / (su * sv)

    # boundary trace identity for |avg u|^2 and |diff u|^2
    worst = 0.0
    aus = GridFunction(mesh, "dual", au.values ** 2)
    dus = GridFunction(mesh, "dual", du.values ** 2)
    for x, i_u in ((0.0, 0), (1.0, mesh.N + 1)):
        nu = outward_normal(mesh, x)
        lhs = trace(aus, x) * nu - 0.25 * h * h * trace(dus, x) * nu
        rhs = u.values[i_u] ** 2 * nu - h * u.values[i_u] * trace(du, x)
        worst = max(worst, abs(lhs - rhs))
    res["trace_identity"] = worst / (su * su)
    return res
