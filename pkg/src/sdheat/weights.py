"""Carleman-type weight functions on the space-time grid.

The weight family is

    psi:  concave quadratic spatial profile, 0 < psi <= 1 on an extended
          interval, vertex at the center of the inner region G2;
    theta: time factor, C^2 on [0,T], equal to 1 + (1-4t/T)^sigma on the first
          quarter, constant 1 on the second, a monotone quintic bridge on the
          third and (T-t+delta*T)^(-m) on the last (so it peaks at t=T but
          stays finite);
    phi  = exp(mu*(psi + alpha)) - mu*exp(mu*beta)   (negative everywhere),
    varphi = exp(mu*(psi + alpha)),
    s    = lam * theta,    r = exp(s*phi),    rho = 1/r.

Two offset profiles are provided.  The "classical" profile uses
(alpha, beta) = (6m, 6(m+1)); its exponents s*phi are of order 1e5 and
larger, so ``r`` and ``rho`` are far outside float64 range and every consumer
must combine exponents before exponentiating (the tabulated ``sphi`` array is
the primary representation).  The "desk" profile uses small offsets with the
same structure and margins; it keeps every weighted quantity representable,
which is what the experiment suites run with.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, build_mesh

__all__ = [
    "WeightError",
    "NonMonotoneBridgeError",
    "WeightRangeError",
    "PsiFunction",
    "TimeWeight",
    "WeightParams",
    "WeightSet",
    "build_psi",
    "build_time_weight",
    "build_weight_set",
    "admissible",
    "admissibility_product",
    "expansion_order",
    "EXPANSION_IDS",
    "SIGMA_MIN",
    "PSI_EXTENSION",
]

PSI_EXTENSION = (-0.1, 1.1)
PSI_FLOOR = 0.1
SIGMA_MIN = 2.5  # the first quarter of theta is C^2 at its right end only for sigma > 2
EXP_LIMIT = 690.0  # stay clear of the float64 exp overflow threshold


class WeightError(ValueError):
    """Invalid weight construction request."""


class NonMonotoneBridgeError(WeightError):
    """The C^2 bridge of the time weight failed its monotonicity check."""


class WeightRangeError(WeightError):
    """A weighted quantity left the representable floating-point range."""


# ---------------------------------------------------------------------------
# spatial profile


@dataclass(frozen=True)
class PsiFunction:
    """psi(x) = 1 - c (x - x0)^2 with one interior critical point in G2."""

    x0: float
    c: float
    extension: tuple[float, float]
    c0: float  # min |psi'| outside G2, strictly positive

    def value(self, x):
        return 1.0 - self.c * (np.asarray(x, dtype=float) - self.x0) ** 2

    def dx(self, x):
        return -2.0 * self.c * (np.asarray(x, dtype=float) - self.x0)

    def dxx(self, x):
        return np.full_like(np.asarray(x, dtype=float), -2.0 * self.c)


def build_psi(mesh_or_g2, extension: tuple[float, float] = PSI_EXTENSION) -> PsiFunction:
    """Concave quadratic profile for the given inner region.

    The vertex sits at the center of G2 and the curvature is the largest one
    keeping psi >= PSI_FLOOR on the extended interval, so 0 < psi <= 1 there,
    psi'(0) > 0 and psi'(1) < 0 hold automatically.
    """
    g2 = mesh_or_g2.g2 if isinstance(mesh_or_g2, Mesh) else mesh_or_g2
    a2, b2 = g2.as_floats() if hasattr(g2, "as_floats") else (float(g2[0]), float(g2[1]))
    lo, hi = extension
    x0 = 0.5 * (a2 + b2)
    d = max(x0 - lo, hi - x0)
    c = (1.0 - PSI_FLOOR) / (d * d)
    c0 = 2.0 * c * min(x0 - a2, b2 - x0)
    return PsiFunction(x0=x0, c=c, extension=extension, c0=c0)


# ---------------------------------------------------------------------------
# time profile


def _hermite_bridge(width: float, p1: float, d1: float, s1: float) -> np.ndarray:
    """Quintic on [0,1] with (value, slope, curvature) = (1, 0, 0) at 0 and
    (p1, d1*width, s1*width^2) at 1; returns ascending coefficients."""
    a = np.array([[1.0, 1.0, 1.0],
                  [3.0, 4.0, 5.0],
                  [6.0, 12.0, 20.0]])
    b = np.array([p1 - 1.0, d1 * width, s1 * width * width])
    c3, c4, c5 = np.linalg.solve(a, b)
    return np.array([1.0, 0.0, 0.0, c3, c4, c5])


@dataclass(frozen=True)
class TimeWeight:
    """Piecewise C^2 time factor theta with its first two derivatives."""

    T: float
    m: int
    delta: float
    sigma: float
    sigma_clamped: bool
    bridge: np.ndarray  # ascending quintic coefficients on the scaled third quarter

    def _pieces(self, t: np.ndarray):
        t = np.asarray(t, dtype=float)
        return (t < 0.25 * self.T,
                (t >= 0.25 * self.T) & (t < 0.5 * self.T),
                (t >= 0.5 * self.T) & (t < 0.75 * self.T),
                t >= 0.75 * self.T)

    def _tau(self, t):
        return (np.asarray(t, dtype=float) - 0.5 * self.T) / (0.25 * self.T)

    def theta(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        q1, q2, q3, q4 = self._pieces(t)
        out = np.empty_like(t)
        base = np.where(q1, 1.0 - 4.0 * t / self.T, 1.0)
        out[q1] = 1.0 + np.exp(self.sigma * np.log(base[q1]))
        out[q2] = 1.0
        out[q3] = np.polynomial.polynomial.polyval(self._tau(t[q3]), self.bridge)
        out[q4] = (self.T - t[q4] + self.delta * self.T) ** (-self.m)
        return out

    def theta_t(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        q1, q2, q3, q4 = self._pieces(t)
        out = np.empty_like(t)
        base = np.where(q1, 1.0 - 4.0 * t / self.T, 1.0)
        out[q1] = -(4.0 * self.sigma / self.T) * np.exp(
            (self.sigma - 1.0) * np.log(base[q1]))
        out[q2] = 0.0
        dbridge = np.polynomial.polynomial.polyder(self.bridge)
        out[q3] = np.polynomial.polynomial.polyval(
            self._tau(t[q3]), dbridge) / (0.25 * self.T)
        out[q4] = self.m * (self.T - t[q4] + self.delta * self.T) ** (-self.m - 1)
        return out

    def theta_tt(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        q1, q2, q3, q4 = self._pieces(t)
        out = np.empty_like(t)
        base = np.where(q1, 1.0 - 4.0 * t / self.T, 1.0)
        out[q1] = (16.0 * self.sigma * (self.sigma - 1.0) / self.T ** 2) * np.exp(
            (self.sigma - 2.0) * np.log(base[q1]))
        out[q2] = 0.0
        d2bridge = np.polynomial.polynomial.polyder(self.bridge, 2)
        out[q3] = np.polynomial.polynomial.polyval(
            self._tau(t[q3]), d2bridge) / (0.25 * self.T) ** 2
        out[q4] = (self.m * (self.m + 1)
                   * (self.T - t[q4] + self.delta * self.T) ** (-self.m - 2))
        return out

    def theta_terminal(self) -> float:
        return (self.delta * self.T) ** (-self.m)

    def junction_residuals(self) -> dict[str, float]:
        """Relative mismatch of (value, theta', theta'') across the three
        interior junctions; all should sit at rounding level."""
        T = self.T
        res = {}
        # left/right limits computed from the closed-form pieces
        db = np.polynomial.polynomial.polyder(self.bridge)
        d2b = np.polynomial.polynomial.polyder(self.bridge, 2)
        w = 0.25 * T
        right_end = (0.25 * T + self.delta * T)
        cases = {
            "t_quarter": ((1.0, 0.0, 0.0), (1.0, 0.0, 0.0)),
            "t_half": ((1.0, 0.0, 0.0),
                       (np.polynomial.polynomial.polyval(0.0, self.bridge),
                        np.polynomial.polynomial.polyval(0.0, db) / w,
                        np.polynomial.polynomial.polyval(0.0, d2b) / w ** 2)),
            "t_three_quarter": (
                (np.polynomial.polynomial.polyval(1.0, self.bridge),
                 np.polynomial.polynomial.polyval(1.0, db) / w,
                 np.polynomial.polynomial.polyval(1.0, d2b) / w ** 2),
                (right_end ** (-self.m),
                 self.m * right_end ** (-self.m - 1),
                 self.m * (self.m + 1) * right_end ** (-self.m - 2))),
        }
        for name, (left, right) in cases.items():
            res[name] = max(
                abs(l - r) / max(1.0, abs(l), abs(r)) for l, r in zip(left, right))
        return res


def build_time_weight(T: float, m: int, delta: float, lam: float, mu: float,
                      alpha: float | None = None) -> TimeWeight:
    """Time factor with sigma = lam * mu^2 * exp(mu*(alpha-4)).

    alpha defaults to the classical offset 6m.  sigma is floored at SIGMA_MIN
    (flagged) because C^2 continuity at T/4 requires sigma > 2; the floor only
    triggers for small desk-profile offsets.
    """
    if not 0.0 < T < 1.0:
        raise WeightError(f"need 0 < T < 1, got T={T}")
    if not 0.0 < delta < 0.5:
        raise WeightError(f"need 0 < delta < 1/2, got {delta}")
    if m < 1 or int(m) != m:
        raise WeightError(f"need integer m >= 1, got {m}")
    if lam < 1 or mu < 1:
        raise WeightError(f"need lam >= 1 and mu >= 1, got lam={lam}, mu={mu}")
    if alpha is None:
        alpha = 6.0 * m
    sigma_raw = lam * mu * mu * np.exp(mu * (alpha - 4.0))
    sigma = max(sigma_raw, SIGMA_MIN)
    right_end = 0.25 * T + delta * T
    bridge = _hermite_bridge(
        0.25 * T,
        right_end ** (-m),
        m * right_end ** (-m - 1),
        m * (m + 1) * right_end ** (-m - 2),
    )
    tw = TimeWeight(T=T, m=int(m), delta=float(delta), sigma=float(sigma),
                    sigma_clamped=bool(sigma_raw < SIGMA_MIN), bridge=bridge)
    tau = np.linspace(0.0, 1.0, 2001)
    slope = np.polynomial.polynomial.polyval(
        tau, np.polynomial.polynomial.polyder(bridge))
    if slope.min() < -1e-10 * max(1.0, slope.max()):
        raise NonMonotoneBridgeError(
            f"bridge slope dips to {slope.min():.3e}; refuse to use it")
    return tw


# ---------------------------------------------------------------------------
# parameters and the assembled weight set


def admissibility_product(lam: float, h: float, delta: float, T: float, m: int) -> float:
    return lam * h * (delta * T) ** (-m)


def admissible(lam: float, h: float, delta: float, T: float, m: int,
               eps0: float) -> bool:
    """Parameter coupling lam * h * (delta*T)^(-m) <= eps0.

    A relative slack of 1e-12 absorbs rounding in schedules that pin the
    product to eps0 exactly.
    """
    return admissibility_product(lam, h, delta, T, m) <= eps0 * (1.0 + 1e-12)


@dataclass(frozen=True)
class WeightParams:
    """Carleman parameters plus the offset pair of the spatial profile."""

    lam: float
    mu: float
    m: int
    delta: float
    T: float
    profile: str = "classical"
    alpha: float | None = None
    beta: float | None = None

    def offsets(self) -> tuple[float, float]:
        if self.alpha is not None and self.beta is not None:
            return float(self.alpha), float(self.beta)
        if self.profile == "classical":
            return 6.0 * self.m, 6.0 * (self.m + 1)
        if self.profile == "desk":
            return 0.0, 2.0
        raise WeightError(f"unknown weight profile {self.profile!r}")


@dataclass(frozen=True)
class WeightSet:
    """Weight family tabulated on a time grid x closure nodes.

    ``sphi`` (s(t_k) * phi(x_i)) is the log of r and the primary table; r and
    rho themselves may be out of float range for the classical profile, so
    consumers combine exponents before calling exp.
    """

    mesh: Mesh
    params: WeightParams
    psi: PsiFunction
    tw: TimeWeight
    t_grid: np.ndarray
    theta_grid: np.ndarray
    s_grid: np.ndarray
    phi_closure: np.ndarray
    varphi_closure: np.ndarray
    sphi: np.ndarray          # (len(t_grid), N+2)
    alpha: float
    beta: float

    # -- closed-form spatial evaluators (valid on the extended interval) ------

    def varphi(self, x):
        return np.exp(self.params.mu * (self.psi.value(x) + self.alpha))

    def phi(self, x):
        return self.varphi(x) - self.params.mu * np.exp(self.params.mu * self.beta)

    def phi_dx(self, x):
        return self.params.mu * self.varphi(x) * self.psi.dx(x)

    def phi_dxx(self, x):
        mu = self.params.mu
        return mu * self.varphi(x) * (mu * self.psi.dx(x) ** 2 + self.psi.dxx(x))

    # -- derived scalars -------------------------------------------------------

    @property
    def mu_exp_mu_beta(self) -> float:
        return self.params.mu * np.exp(self.params.mu * self.beta)

    @property
    def observation_weight(self) -> float:
        """lam^2 mu^3 exp(2 mu (alpha + 1)), the t=0 observation constant."""
        p = self.params
        return p.lam ** 2 * p.mu ** 3 * np.exp(2.0 * p.mu * (self.alpha + 1.0))

    @property
    def penalty_margin_ok(self) -> bool:
        """2 * max phi <= -mu * exp(mu*beta), the margin behind the terminal
        penalty schedule (implied by mu > 2 for the classical offsets)."""
        p = self.params
        return 2.0 * np.exp(p.mu * (1.0 + self.alpha)) <= self.mu_exp_mu_beta

    @property
    def representable(self) -> bool:
        """True when exp(+-2*s*phi) stays inside float64 range everywhere."""
        return bool(2.0 * np.max(np.abs(self.sphi)) < EXP_LIMIT)

    def r_values(self, k: int | None = None) -> np.ndarray:
        """exp(s*phi); always <= 1, underflows to 0 for steep profiles."""
        table = self.sphi if k is None else self.sphi[k]
        with np.errstate(under="ignore"):
            return np.exp(table)

    def weight_exp(self, k: int, sign: int, where: str = "primal") -> np.ndarray:
        """exp(sign * 2 * s_k * phi) on primal or dual nodes."""
        if where == "primal":
            expo = sign * 2.0 * self.sphi[k, 1:-1]
        elif where == "dual":
            expo = sign * 2.0 * self.s_grid[k] * self.phi(self.mesh.dual_nodes)
        else:
            raise WeightError(f"unknown node location {where!r}")
        if np.max(expo) > EXP_LIMIT:
            raise WeightRangeError(
                "weight exponent exceeds float64 range; use the desk profile "
                "or milder (lam, delta) for computations in weighted norms")
        with np.errstate(under="ignore"):
            return np.exp(expo)


def build_weight_set(mesh: Mesh, params: WeightParams, n_steps: int) -> WeightSet:
    """Tabulate the weight family on the scenario-tree time grid.

    Rejects (N, regions) pairs whose G2 node-set closure leaves G1; the weight
    construction is only meaningful under that discrete inclusion.
    """
    if not mesh.discrete_inclusion_ok():
        from .mesh import RegionResolutionError
        raise RegionResolutionError(
            f"closure of the G2 node set leaves G1 at N={mesh.N}; "
            "refine N or widen G1")
    alpha, beta = params.offsets()
    psi = build_psi(mesh)
    tw = build_time_weight(params.T, params.m, params.delta, params.lam,
                           params.mu, alpha=alpha)
    t_grid = np.linspace(0.0, params.T, n_steps + 1)
    theta_grid = tw.theta(t_grid)
    s_grid = params.lam * theta_grid
    x = mesh.closure_nodes
    varphi_closure = np.exp(params.mu * (psi.value(x) + alpha))
    phi_closure = varphi_closure - params.mu * np.exp(params.mu * beta)
    if np.max(phi_closure) >= 0.0 or np.exp(params.mu * (1.0 + alpha)) >= params.mu * np.exp(params.mu * beta):
        raise WeightError(
            f"phi must be negative everywhere; offsets (alpha={alpha}, "
            f"beta={beta}) are too close for mu={params.mu}")
    sphi = np.outer(s_grid, phi_closure)
    ws = WeightSet(mesh=mesh, params=params, psi=psi, tw=tw, t_grid=t_grid,
                   theta_grid=theta_grid, s_grid=s_grid,
                   phi_closure=phi_closure, varphi_closure=varphi_closure,
                   sphi=sphi, alpha=alpha, beta=beta)
    if np.min(s_grid) < params.lam - 1e-12:
        raise WeightError("theta dropped below 1; time weight is corrupt")
    bad = {k: v for k, v in tw.junction_residuals().items() if v > 1e-9}
    if bad:
        raise WeightError(f"time weight junctions are not C^2: {bad}")
    return ws


# ---------------------------------------------------------------------------
# discrete-vs-continuous expansion orders

EXPANSION_IDS = (
    "r_dh_rho",
    "r_dh2_rho",
    "ah_dh_r_dh_rho",
    "r2_dh2_rho_ah_dh_rho",
)


def _pair_exp(s, phi, xa, xb):
    """exp(s * (phi(xa) - phi(xb))), exponents combined before exp."""
    expo = np.asarray(s)[:, None] * (phi(xa) - phi(xb))[None, :]
    if expo.size and np.max(expo) > EXP_LIMIT:
        raise WeightRangeError(
            "expansion exponent out of float range; parameters are outside "
            "the admissible regime for this mesh")
    with np.errstate(under="ignore"):
        return np.exp(expo)


def expansion_errors(expr_id: str, s_vals: np.ndarray, h: float,
                     phi, dphi, ddphi, n_interior: int) -> np.ndarray:
    """Max-norm discrete-minus-continuous error, scaled by s^(-n), for one
    weight-product expression on the mesh of step h."""
    s = np.asarray(s_vals, dtype=float)[:, None]
    s_safe = np.where(s == 0.0, 1.0, s)
    primal = np.arange(1, n_interior + 1) * h
    dual = (np.arange(0, n_interior + 1) + 0.5) * h

    def pair(xa, xb):
        return _pair_exp(s_vals, phi, xa, xb)

    if expr_id == "r_dh_rho":
        x = dual
        disc = (pair(x, x + 0.5 * h) - pair(x, x - 0.5 * h)) / h
        cont = -s * dphi(x)[None, :]
        scale = s_safe
    elif expr_id == "r_dh2_rho":
        x = primal
        disc = (pair(x, x + h) - 2.0 + pair(x, x - h)) / (h * h)
        cont = (s * dphi(x)[None, :]) ** 2 - s * ddphi(x)[None, :]
        scale = s_safe ** 2
    elif expr_id == "ah_dh_r_dh_rho":
        x = dual

        def r_dh_rho(y):
            return (pair(y, y + 0.5 * h) - pair(y, y - 0.5 * h)) / h

        disc = (r_dh_rho(x + h) - r_dh_rho(x - h)) / (2.0 * h)
        cont = -s * ddphi(x)[None, :]
        scale = s_safe
    elif expr_id == "r2_dh2_rho_ah_dh_rho":
        x = primal
        d2 = (pair(x, x + h) - 2.0 + pair(x, x - h)) / (h * h)
        ad = (pair(x, x + h) - pair(x, x - h)) / (2.0 * h)
        disc = d2 * ad
        cont = ((s * dphi(x)[None, :]) ** 2 - s * ddphi(x)[None, :]) \
            * (-s * dphi(x)[None, :])
        scale = s_safe ** 3
    else:
        raise WeightError(f"unknown expansion id {expr_id!r}; "
                          f"choose one of {EXPANSION_IDS}")
    return np.abs(disc - cont) / scale


@dataclass(frozen=True)
class ExpansionFit:
    expr_id: str
    h_values: np.ndarray
    errors: np.ndarray
    slope: float


def expansion_order(expr_id: str, params: WeightParams, h_values,
                    n_time: int = 8, eps0: float = 1.0) -> ExpansionFit:
    """Fitted log-log slope of the scaled expansion error against h.

    Requires fixed (lam, mu, delta) admissible at every h in the sequence;
    the second-order law puts the slope near 2.
    """
    h_values = np.asarray(sorted(h_values, reverse=True), dtype=float)
    errs = []
    alpha, beta = params.offsets()
    tw = build_time_weight(params.T, params.m, params.delta, params.lam,
                           params.mu, alpha=alpha)
    t = np.linspace(0.0, params.T, n_time + 1)
    s_vals = params.lam * tw.theta(t)
    mu = params.mu
    for h in h_values:
        if not admissible(params.lam, h, params.delta, params.T, params.m, eps0):
            raise WeightError(
                f"parameters inadmissible at h={h}: "
                f"{admissibility_product(params.lam, h, params.delta, params.T, params.m):.3g} > {eps0}")
        n = int(round(1.0 / h)) - 1
        mesh = build_mesh(n)
        psi = build_psi(mesh)
        mu_off = mu * np.exp(mu * beta)

        def phi(x, psi=psi):
            return np.exp(mu * (psi.value(x) + alpha)) - mu_off

        def dphi(x, psi=psi):
            return mu * np.exp(mu * (psi.value(x) + alpha)) * psi.dx(x)

        def ddphi(x, psi=psi):
            e = np.exp(mu * (psi.value(x) + alpha))
            return mu * e * (mu * psi.dx(x) ** 2 + psi.dxx(x))

        err = expansion_errors(expr_id, s_vals, h, phi, dphi, ddphi, n)
        errs.append(float(np.max(err)))
    errs = np.asarray(errs)
    slope = float(np.polyfit(np.log(h_values), np.log(errs), 1)[0])
    return ExpansionFit(expr_id=expr_id, h_values=h_values, errors=errs,
                        slope=slope)
