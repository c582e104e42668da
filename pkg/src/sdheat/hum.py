"""Penalized control of the linear system and the semilinear fixed point.

The linear solve minimizes, over adapted control pairs (u, v),

    J_eps(u, v) = 1/2 [ sum_k dt E<e^{-2s phi} y_k, y_k>
                        + sum_k dt E<s^{-3} e^{-2s phi} u_k, u_k>|_{G0}
                        + sum_k dt E<s^{-2} e^{-2s phi} v_k, v_k> ]
                  + (1/eps) E|y_M|^2,

subject to the forward dynamics, by preconditioned conjugate gradients on the
control pair with adjoint-computed gradients (matrix free).  The adjoint runs
through the exact-transpose backward solver, so at convergence the
characterization

    u = -chi_{G0} s^3 e^{2 s phi} z,      v = -s^2 e^{2 s phi} Z

holds with (z, Z) solving the backward system with source -e^{-2s phi} y and
terminal datum (2/eps) y_M (the terminal factor is 2/eps because the penalty
is written with 1/eps and no half).

The whole quadratic problem is solved in globally rescaled units (all weights
and the penalty divided by their common maximum); the rescaling leaves the
minimizer unchanged and keeps every inner product inside float64 range.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, replace

import numpy as np

from .mesh import Mesh
from .solvers import (BackwardSolution, ImplicitStep, NonlinearitySpec,
                      backward_levels, forward_levels)
from .tree import AdaptedProcess, ScenarioTree, dyadic_mean
from .weights import (WeightParams, WeightRangeError, WeightSet, admissible,
                      admissibility_product, build_weight_set)

__all__ = [
    "EpsilonSchedule",
    "epsilon_schedule",
    "HUMProblem",
    "HUMResult",
    "solve_hum_linear",
    "snorm_squared",
    "weighted_initial_norm",
    "TerminalBoundReport",
    "terminal_bound_check",
    "SemilinearResult",
    "ContractionError",
    "solve_hum_semilinear",
    "lift_diffusion_control",
    "CarlemanReport",
    "carleman_ratio",
    "select_lambda",
]

_TINY = sys.float_info.min  # smallest positive normal double


# ---------------------------------------------------------------------------
# penalty schedule


@dataclass(frozen=True)
class EpsilonSchedule:
    value: float
    log_value: float
    exponent: float
    clamped: bool


def epsilon_schedule(ws: WeightSet, h: float, c_cal: float = 1.0) -> EpsilonSchedule:
    """Penalty eps = c_cal * h^(-2) * exp(-lam * theta(T) * mu * e^(mu*beta)).

    Requires the terminal-weight margin 2*max(phi) <= -mu*e^(mu*beta) (for the
    classical offsets this is what mu > 2 buys).  When the exponential
    underflows, the smallest positive normal double is returned and flagged.
    """
    if c_cal <= 0 or h <= 0:
        raise ValueError("c_cal and h must be positive")
    if not ws.penalty_margin_ok:
        raise ValueError(
            "terminal-weight margin violated: need 2*exp(mu*(1+alpha)) <= "
            "mu*exp(mu*beta) (classical profile: mu > 2)")
    p = ws.params
    exponent = p.lam * ws.tw.theta_terminal() * ws.mu_exp_mu_beta
    log_value = math.log(c_cal) - 2.0 * math.log(h) - exponent
    if log_value <= math.log(_TINY):
        return EpsilonSchedule(value=_TINY, log_value=log_value,
                               exponent=exponent, clamped=True)
    return EpsilonSchedule(value=math.exp(log_value), log_value=log_value,
                           exponent=exponent, clamped=False)


# ---------------------------------------------------------------------------
# control vectors (adapted (u, v) pairs on levels 0..M-1)


class ControlVec:
    """Adapted control pair; u restricted to the G0 nodes, v on the interior."""

    __slots__ = ("u", "v")

    def __init__(self, u: list[np.ndarray], v: list[np.ndarray]):
        self.u = u
        self.v = v

    @staticmethod
    def zeros(mesh: Mesh, tree: ScenarioTree) -> "ControlVec":
        nu = len(mesh.g0_primal_indices)
        return ControlVec(
            [np.zeros((1 << k, nu)) for k in range(tree.M)],
            [np.zeros((1 << k, mesh.N)) for k in range(tree.M)])

    def copy(self) -> "ControlVec":
        return ControlVec([a.copy() for a in self.u], [a.copy() for a in self.v])

    def axpy(self, alpha: float, other: "ControlVec") -> None:
        for a, b in zip(self.u, other.u):
            a += alpha * b
        for a, b in zip(self.v, other.v):
            a += alpha * b

    def scale_add(self, beta: float, other: "ControlVec") -> None:
        """self <- other + beta*self (the CG direction update)."""
        for a, b in zip(self.u, other.u):
            a *= beta
            a += b
        for a, b in zip(self.v, other.v):
            a *= beta
            a += b


def _dot(mesh: Mesh, tree: ScenarioTree, a: ControlVec, b: ControlVec) -> float:
    tot = 0.0
    for k in range(tree.M):
        per_node = mesh.h * (np.sum(a.u[k] * b.u[k], axis=1)
                             + np.sum(a.v[k] * b.v[k], axis=1))
        tot += tree.dt * float(dyadic_mean(per_node))
    return tot


def _norm(mesh: Mesh, tree: ScenarioTree, levels: list[np.ndarray]) -> float:
    tot = 0.0
    for k in range(tree.M):
        per_node = mesh.h * np.sum(levels[k] ** 2, axis=1)
        tot += tree.dt * float(dyadic_mean(per_node))
    return math.sqrt(tot)


def _pad(tree: ScenarioTree, levels: list[np.ndarray], width: int) -> AdaptedProcess:
    return AdaptedProcess(tree, levels + [np.zeros((1 << tree.M, width))])


# ---------------------------------------------------------------------------
# problem and result


@dataclass
class HUMProblem:
    mesh: Mesh
    tree: ScenarioTree
    ws: WeightSet
    y0: np.ndarray
    eps: float
    F: AdaptedProcess | None = None
    eps0: float = 1.0
    cg_tol: float = 1e-9
    cg_max_iter: int = 5000

    def __post_init__(self):
        self.y0 = np.asarray(self.y0, dtype=float)
        p = self.ws.params
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not admissible(p.lam, self.mesh.h, p.delta, p.T, p.m, self.eps0):
            raise ValueError(
                f"inadmissible parameters: lam*h*(delta*T)^-m = "
                f"{admissibility_product(p.lam, self.mesh.h, p.delta, p.T, p.m):.4g}"
                f" > eps0 = {self.eps0}")
        if not self.ws.representable:
            raise WeightRangeError(
                "weight exponents exceed float64 range; the control solver "
                "needs the desk profile (or milder lam/delta)")


@dataclass
class HUMResult:
    """Optimal controls with their state, adjoint and diagnostics.

    The adjoint pair is stored in the solver's rescaled units (true adjoint =
    scale * stored value); every reported residual is scale invariant.
    """

    u: AdaptedProcess
    v: AdaptedProcess
    y: AdaptedProcess
    z: AdaptedProcess
    Z: AdaptedProcess
    scale: float
    eps: float
    j_value: float
    terminal_second_moment: float
    cost_state: float
    cost_u: float
    cost_v: float
    kkt_residual: float
    duality_gap: float
    cg_iterations: int
    converged: bool

    @property
    def cost_total(self) -> float:
        return self.cost_state + self.cost_u + self.cost_v

    def scalars(self) -> dict:
        return {
            "eps": self.eps,
            "j_value": self.j_value,
            "terminal_second_moment": self.terminal_second_moment,
            "cost_state": self.cost_state,
            "cost_u": self.cost_u,
            "cost_v": self.cost_v,
            "kkt_residual": self.kkt_residual,
            "duality_gap": self.duality_gap,
            "cg_iterations": self.cg_iterations,
            "converged": self.converged,
            "scale": self.scale,
        }


class _Workspace:
    """Scaled weight tables and the two solver sweeps behind the quadratic."""

    def __init__(self, problem: HUMProblem):
        self.mesh, self.tree, self.ws = problem.mesh, problem.tree, problem.ws
        self.step = ImplicitStep(self.mesh, self.tree.dt)
        M = self.tree.M
        g0 = self.mesh.g0_primal_indices
        self.g0 = g0
        s = self.ws.s_grid
        self.wy = [self.ws.weight_exp(k, -1) for k in range(M + 1)]
        self.wu = [s[k] ** -3 * self.wy[k][g0] for k in range(M)]
        self.wv = [s[k] ** -2 * self.wy[k] for k in range(M)]
        self.penalty = 2.0 / problem.eps
        gamma = max(max(float(np.max(w)) for w in self.wy),
                    max(float(np.max(w)) for w in self.wu),
                    max(float(np.max(w)) for w in self.wv),
                    self.penalty)
        self.gamma = gamma
        self.swy = [w / gamma for w in self.wy]
        self.swu = [w / gamma for w in self.wu]
        self.swv = [w / gamma for w in self.wv]
        self.spenalty = self.penalty / gamma

    def forward(self, y0, F, c: ControlVec | None):
        return forward_levels(self.mesh, self.tree, self.step, y0,
                              F, c.u if c is not None else None,
                              c.v if c is not None else None, None)

    def adjoint(self, y_levels):
        """Backward sweep with the scaled optimality sources built from y."""
        M = self.tree.M
        p = [None] + [-self.swy[j] * y_levels[j] for j in range(1, M)] \
            + [np.zeros_like(y_levels[M])]
        q = self.spenalty * y_levels[M]
        return backward_levels(self.tree, self.step, q, p)

    def gradient_terms(self, y_levels):
        z, bz = self.adjoint(y_levels)
        return ControlVec([z[k][:, self.g0].copy() for k in range(self.tree.M)],
                          [bz[k].copy() for k in range(self.tree.M)]), (z, bz)

    def apply_hessian(self, c: ControlVec) -> ControlVec:
        y = self.forward(np.zeros(self.mesh.N), None, c)
        adj, _ = self.gradient_terms(y)
        out_u = [self.swu[k] * c.u[k] + adj.u[k] for k in range(self.tree.M)]
        out_v = [self.swv[k] * c.v[k] + adj.v[k] for k in range(self.tree.M)]
        return ControlVec(out_u, out_v)

    def precondition(self, r: ControlVec) -> ControlVec:
        return ControlVec([r.u[k] / self.swu[k] for k in range(self.tree.M)],
                          [r.v[k] / self.swv[k] for k in range(self.tree.M)])


def solve_hum_linear(problem: HUMProblem) -> HUMResult:
    """Minimize the penalized weighted objective by preconditioned CG."""
    wsp = _Workspace(problem)
    mesh, tree = problem.mesh, problem.tree
    M = tree.M
    F_levels = problem.F.levels if problem.F is not None else None

    free = wsp.forward(problem.y0, F_levels, None)
    g_free, _ = wsp.gradient_terms(free)
    b = ControlVec([-a for a in g_free.u], [-a for a in g_free.v])

    # Preconditioned CG.  Convergence is measured by the quantity the
    # optimality characterization is tested with: |M^-1 r| / |c| in the plain
    # tree norm (M^-1 r is the gap between the controls and their adjoint
    # characterization).  The weighted residual r'M^-1r alone can be tiny
    # while that gap is not, because M^-1 re-scales the low-weight components.
    c = ControlVec.zeros(mesh, tree)
    r = b.copy()
    z = wsp.precondition(r)
    p = z.copy()
    rz = _dot(mesh, tree, r, z)
    rz0 = rz
    iterations = 0
    converged = rz0 == 0.0
    stall = 0
    best_gap = np.inf
    for it in range(1, problem.cg_max_iter + 1):
        if converged:
            break
        hp = wsp.apply_hessian(p)
        php = _dot(mesh, tree, p, hp)
        if php <= 0.0:
            break
        alpha = rz / php
        c.axpy(alpha, p)
        r.axpy(-alpha, hp)
        z = wsp.precondition(r)
        rz_new = _dot(mesh, tree, r, z)
        iterations = it
        gap = math.sqrt(_dot(mesh, tree, z, z))
        cnorm = math.sqrt(_dot(mesh, tree, c, c))
        if cnorm > 0.0 and gap <= problem.cg_tol * cnorm:
            converged = True
            break
        if rz_new <= 1e-30 * rz0:
            converged = True
            break
        stall = stall + 1 if gap >= best_gap else 0
        best_gap = min(best_gap, gap)
        if stall >= 60:
            break
        p.scale_add(rz_new / rz, z)
        rz = rz_new

    y = wsp.forward(problem.y0, F_levels, c)
    adj, (z_lv, bz_lv) = wsp.gradient_terms(y)

    # KKT residual of the optimality characterization, scale invariant
    res_u = [c.u[k] + adj.u[k] / wsp.swu[k] for k in range(M)]
    res_v = [c.v[k] + adj.v[k] / wsp.swv[k] for k in range(M)]
    kkt = _norm(mesh, tree, res_u) + _norm(mesh, tree, res_v)
    ctrl = _norm(mesh, tree, c.u) + _norm(mesh, tree, c.v)
    kkt_rel = kkt / max(ctrl, 1e-300)
    if ctrl == 0.0 and kkt == 0.0:
        kkt_rel = 0.0

    # cost terms in true units
    def _wsum(weights, levels, ks):
        tot = 0.0
        for k in ks:
            per_node = mesh.h * np.sum(weights[k] * levels[k] ** 2, axis=1)
            tot += tree.dt * float(dyadic_mean(per_node))
        return tot

    cost_state = _wsum(wsp.wy, y, range(M))
    cost_u = _wsum(wsp.wu, c.u, range(M))
    cost_v = _wsum(wsp.wv, c.v, range(M))
    terminal = float(dyadic_mean(mesh.h * np.sum(y[M] ** 2, axis=1)))
    with np.errstate(over="ignore"):
        j_value = 0.5 * (cost_state + cost_u + cost_v) + terminal / problem.eps

    # duality identity at the optimum (all in scaled units; the identity is
    # homogeneous in the scale): state sum runs over k=1..M-1 by construction
    lhs = _wsum(wsp.swy, y, range(1, M)) \
        + _wsum(wsp.swu, c.u, range(M)) + _wsum(wsp.swv, c.v, range(M)) \
        + wsp.spenalty * terminal
    rhs = float(dyadic_mean(mesh.h * np.sum(problem.y0 * z_lv[0], axis=1)))
    if F_levels is not None:
        for k in range(M):
            per_node = mesh.h * np.sum(F_levels[k] * z_lv[k], axis=1)
            rhs += tree.dt * float(dyadic_mean(per_node))
    duality_gap = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
    if lhs == 0.0 and rhs == 0.0:
        duality_gap = 0.0

    nu = len(mesh.g0_primal_indices)
    return HUMResult(
        u=_pad(tree, c.u, nu), v=_pad(tree, c.v, mesh.N),
        y=AdaptedProcess(tree, y),
        z=AdaptedProcess(tree, z_lv), Z=_pad(tree, bz_lv[:M], mesh.N),
        scale=wsp.gamma, eps=problem.eps, j_value=float(j_value),
        terminal_second_moment=terminal, cost_state=cost_state,
        cost_u=cost_u, cost_v=cost_v, kkt_residual=kkt_rel,
        duality_gap=duality_gap, cg_iterations=iterations, converged=converged)


# ---------------------------------------------------------------------------
# weighted norms and the terminal bound


def snorm_squared(ws: WeightSet, F: AdaptedProcess | list[np.ndarray]) -> float:
    """Squared source norm: sum_k dt E<s^-3 e^{-2 s phi} F_k, F_k>."""
    levels = F.levels if isinstance(F, AdaptedProcess) else F
    mesh, M = ws.mesh, len(ws.s_grid) - 1
    tot = 0.0
    for k in range(M):
        w = ws.s_grid[k] ** -3 * ws.weight_exp(k, -1)
        per_node = mesh.h * np.sum(w * levels[k] ** 2, axis=1)
        tot += (ws.t_grid[1] - ws.t_grid[0]) * float(dyadic_mean(per_node))
    return tot


def weighted_initial_norm(ws: WeightSet, y0: np.ndarray) -> float:
    """E<s(0)^-2 e^{-2 s(0) phi} y0, y0> on the interior nodes."""
    w = ws.s_grid[0] ** -2 * ws.weight_exp(0, -1)
    return float(ws.mesh.h * np.sum(w * np.asarray(y0) ** 2))


@dataclass(frozen=True)
class TerminalBoundReport:
    terminal_second_moment: float
    data_norm: float
    eps_value: float
    ratio: float
    cost_ratio: float
    degenerate: bool  # 0/0 data counts as a pass


def terminal_bound_check(result: HUMResult, problem: HUMProblem,
                         eps_value: float | None = None) -> TerminalBoundReport:
    """Ratio E|y(T)|^2 / (eps * (weighted y0 + source norm)), plus the
    companion cost ratio; finite and h-stable by contract."""
    eps_value = problem.eps if eps_value is None else eps_value
    data = weighted_initial_norm(problem.ws, problem.y0)
    if problem.F is not None:
        data += snorm_squared(problem.ws, problem.F)
    if data == 0.0:
        degenerate = result.terminal_second_moment == 0.0
        return TerminalBoundReport(result.terminal_second_moment, 0.0,
                                   eps_value, 0.0, 0.0, degenerate)
    return TerminalBoundReport(
        terminal_second_moment=result.terminal_second_moment,
        data_norm=data, eps_value=eps_value,
        ratio=result.terminal_second_moment / (eps_value * data),
        cost_ratio=result.cost_total / data,
        degenerate=False)


# ---------------------------------------------------------------------------
# semilinear fixed point


class ContractionError(RuntimeError):
    """The measured contraction factor refused to drop below one."""


@dataclass
class SemilinearResult:
    result: HUMResult
    source: AdaptedProcess
    distances: list[float]
    factors: list[float]
    iterations: int
    converged: bool

    @property
    def contraction_factor(self) -> float:
        return max(self.factors) if self.factors else 0.0


def _source_from(mesh: Mesh, tree: ScenarioTree, y: AdaptedProcess,
                 nonlinearity: NonlinearitySpec) -> AdaptedProcess:
    x = mesh.primal_nodes
    return AdaptedProcess(
        tree, [nonlinearity.f(x, y[k]) for k in range(tree.M + 1)])


def solve_hum_semilinear(mesh: Mesh, tree: ScenarioTree, ws: WeightSet,
                         y0: np.ndarray, nonlinearity: NonlinearitySpec,
                         eps: float, tol: float = 1e-10, max_iter: int = 60,
                         eps0: float = 1.0, cg_tol: float = 1e-9,
                         cg_max_iter: int = 5000) -> SemilinearResult:
    """Picard iteration F -> f(state of the linear solve with source F).

    Stops when consecutive sources are closer than tol in the source norm;
    aborts when the measured contraction factor stays >= 1 after three
    iterations (pick a larger lam in that case).
    """
    F = AdaptedProcess(tree, [np.zeros((1 << k, mesh.N))
                              for k in range(tree.M + 1)])
    distances: list[float] = []
    factors: list[float] = []
    result = None
    for it in range(1, max_iter + 1):
        problem = HUMProblem(mesh=mesh, tree=tree, ws=ws, y0=y0, eps=eps,
                             F=F, eps0=eps0, cg_tol=cg_tol,
                             cg_max_iter=cg_max_iter)
        result = solve_hum_linear(problem)
        F_new = _source_from(mesh, tree, result.y, nonlinearity)
        dist = math.sqrt(snorm_squared(ws, F_new - F))
        if distances and distances[-1] > 0.0:
            factors.append(dist / distances[-1])
        distances.append(dist)
        F = F_new
        if dist <= tol:
            return SemilinearResult(result=result, source=F,
                                    distances=distances, factors=factors,
                                    iterations=it, converged=True)
        if it >= 3 and factors and min(factors) >= 1.0:
            raise ContractionError(
                f"contraction factor {min(factors):.3f} >= 1 after {it} "
                f"iterations; increase lam (current {ws.params.lam})")
    return SemilinearResult(result=result, source=F, distances=distances,
                            factors=factors, iterations=max_iter,
                            converged=False)


def lift_diffusion_control(mesh: Mesh, y: AdaptedProcess, v: AdaptedProcess,
                           nonlinearity: NonlinearitySpec) -> AdaptedProcess:
    """Absorb the diffusion nonlinearity into the distributed control:
    v* = v - g(y) steers the equation with multiplicative noise along the
    same trajectory."""
    x = mesh.primal_nodes
    levels = [v[k] - nonlinearity.g(x, y[k]) for k in range(v.tree.M + 1)]
    return AdaptedProcess(v.tree, levels)


# ---------------------------------------------------------------------------
# empirical Carleman constant


@dataclass
class CarlemanReport:
    ratios: np.ndarray
    skipped: int

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios)) if self.ratios.size else 0.0

    @property
    def mean_ratio(self) -> float:
        return float(np.mean(self.ratios)) if self.ratios.size else 0.0

    @property
    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.ratios)))


def _truncated_normal(rng, shape):
    return np.clip(rng.standard_normal(shape), -4.0, 4.0)


def carleman_ratio(mesh: Mesh, tree: ScenarioTree, ws: WeightSet,
                   n_samples: int, seed: int, eps0: float = 1.0) -> CarlemanReport:
    """Sampled ratio of the weighted-energy inequality for backward-type data.

    Each sample integrates dw = (f - Lap w) dt + g dW forward (explicit in the
    anti-diffusion, so w is adapted and satisfies the backward-form equation),
    then evaluates the three left-hand weighted terms against the four
    right-hand ones and records LHS/RHS.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    p = ws.params
    if not admissible(p.lam, mesh.h, p.delta, p.T, p.m, eps0):
        raise ValueError("inadmissible parameters for the Carleman sampling")
    rng = np.random.default_rng(seed)
    h, dt, sq, M = mesh.h, tree.dt, tree.sqrt_dt, tree.M
    n = mesh.N
    g0_mask = mesh.region_mask("g0", "primal").astype(float)
    s = ws.s_grid
    w_pr = [ws.weight_exp(k, +1, "primal") for k in range(M + 1)]
    w_du = [ws.weight_exp(k, +1, "dual") for k in range(M + 1)]
    obs = ws.observation_weight

    def dirichlet_lap(w):
        out = -2.0 * w
        out[:, :-1] += w[:, 1:]
        out[:, 1:] += w[:, :-1]
        return out / (h * h)

    def dh(w):
        ext = np.zeros((w.shape[0], n + 2))
        ext[:, 1:-1] = w
        return (ext[:, 1:] - ext[:, :-1]) / h

    ratios = []
    skipped = 0
    for _ in range(n_samples):
        w0 = _truncated_normal(rng, (n,))
        f = [_truncated_normal(rng, ((1 << k), n)) for k in range(M)]
        g = [_truncated_normal(rng, ((1 << k), n)) for k in range(M)]
        w = [None] * (M + 1)
        w[0] = w0[None, :].copy()
        for k in range(M):
            base = w[k] + dt * (f[k] - dirichlet_lap(w[k]))
            nxt = np.empty((2 << k, n))
            nxt[0::2] = base + sq * g[k]
            nxt[1::2] = base - sq * g[k]
            w[k + 1] = nxt

        def level_sum(arr, weights, extra=1.0, mask=None):
            vals = weights * arr ** 2
            if mask is not None:
                vals = vals * mask
            return extra * float(dyadic_mean(h * np.sum(vals, axis=1)))

        lhs = obs * level_sum(w[0], w_pr[0])
        rhs = level_sum(w[M], w_pr[M], extra=1.0 / (h * h))
        for k in range(M):
            lhs += dt * level_sum(w[k], s[k] ** 3 * w_pr[k])
            lhs += dt * level_sum(dh(w[k]), s[k] * w_du[k])
            rhs += dt * level_sum(w[k], s[k] ** 3 * w_pr[k], mask=g0_mask)
            rhs += dt * level_sum(f[k], w_pr[k])
            rhs += dt * level_sum(g[k], s[k] ** 2 * w_pr[k])
        if rhs == 0.0:
            if lhs == 0.0:
                skipped += 1
                continue
            ratios.append(np.inf)
        else:
            ratios.append(lhs / rhs)
    return CarlemanReport(ratios=np.asarray(ratios), skipped=skipped)


# ---------------------------------------------------------------------------
# lam selection for the semilinear regime


def select_lambda(mesh: Mesh, tree: ScenarioTree, params: WeightParams,
                  y0: np.ndarray, nonlinearity: NonlinearitySpec,
                  c_cal: float = 1.0, eps0: float = 1.0,
                  lam0: float = 1.0, max_doublings: int = 6,
                  target: float = 0.9) -> tuple[float, WeightSet]:
    """Smallest lam on the grid lam0 * 2^j whose measured contraction factor
    drops below the target (three-iteration probe)."""
    last_err = None
    for j in range(max_doublings + 1):
        lam = lam0 * 2.0 ** j
        p = replace(params, lam=lam)
        if not admissible(lam, mesh.h, p.delta, p.T, p.m, eps0):
            break
        ws = build_weight_set(mesh, p, tree.M)
        eps = epsilon_schedule(ws, mesh.h, c_cal).value
        try:
            probe = solve_hum_semilinear(mesh, tree, ws, y0, nonlinearity,
                                         eps, tol=0.0, max_iter=3, eps0=eps0)
        except ContractionError as exc:
            last_err = exc
            continue
        if probe.factors and max(probe.factors) < target:
            return lam, ws
    raise ContractionError(
        f"no lam in the grid reached a contraction factor below {target}"
        + (f" (last: {last_err})" if last_err else ""))
