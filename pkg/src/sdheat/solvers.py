"""Tree solvers for the controlled forward equation and its backward adjoint.

Forward step (drift-implicit Euler-Maruyama, noise explicit), per tree edge:

    (I - dt*Lap) y_{k+1} = y_k + dt*(f(y_k) + chi*u_k + F_k)
                           + (g(y_k) + v_k) * dW_k

Backward step, with S = (I - dt*Lap)^(-1), terminal z_M = q and a source p
read at the right endpoint of each interval:

    z_k = S * E_k[ z_{k+1} - dt * p_{k+1} ]
    Z_k = S * E_k[ (z_{k+1} - dt * p_{k+1}) * dW_k ] / dt

This backward recursion is the exact transpose of the forward one, which makes
the discrete duality identity

    E<y_M, q> - E<y_0, z_0>
        = sum_k dt * E[ <y_{k+1}, p_{k+1}> + <F_k + chi*u_k, z_k> + <v_k, Z_k> ]

hold to rounding error for arbitrary data, and makes the adjoint-based
gradients in the control solver exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .mesh import Mesh
from .tree import (AdaptedProcess, ScenarioTree, conditional_expectation,
                   dyadic_mean, sample_paths)

__all__ = [
    "NonlinearitySpec",
    "zero_nonlinearity",
    "sine_nonlinearity",
    "linear_nonlinearity",
    "ImplicitStep",
    "ForwardSystemSpec",
    "BackwardSystemSpec",
    "solve_forward",
    "solve_backward",
    "BackwardSolution",
    "duality_residual",
    "monte_carlo_check",
    "MonteCarloReport",
    "second_moment_reference",
    "expect_inner",
]


# ---------------------------------------------------------------------------
# nonlinearities


@dataclass(frozen=True)
class NonlinearitySpec:
    """Pointwise drift f(x, y) and diffusion g(x, y) with a shared Lipschitz
    constant L; the zero-at-zero flags mirror the standing assumptions."""

    f: callable
    g: callable
    L: float
    f_zero_at_zero: bool = True
    g_zero_at_zero: bool = True
    is_affine: bool = False

    def validate(self, mesh: Mesh, seed: int = 0, n_probe: int = 200) -> None:
        """Sampled Lipschitz-ratio and zero-at-zero checks; raises on failure."""
        rng = np.random.default_rng(seed)
        x = rng.uniform(0.0, 1.0, size=n_probe)
        s1 = rng.normal(0.0, 3.0, size=n_probe)
        s2 = s1 + rng.normal(0.0, 1.0, size=n_probe)
        tol = self.L * (1.0 + 1e-9)
        for name, fn, flag in (("f", self.f, self.f_zero_at_zero),
                               ("g", self.g, self.g_zero_at_zero)):
            num = np.abs(fn(x, s1) - fn(x, s2))
            den = np.abs(s1 - s2)
            ok = den > 0
            if np.any(num[ok] > tol * den[ok]):
                worst = float(np.max(num[ok] / den[ok]))
                raise ValueError(
                    f"{name} violates its Lipschitz bound: ratio {worst:.6g} > L={self.L}")
            if flag and np.max(np.abs(fn(x, np.zeros(n_probe)))) != 0.0:
                raise ValueError(f"{name}(x, 0) must vanish")


def zero_nonlinearity() -> NonlinearitySpec:
    z = lambda x, y: np.zeros_like(np.asarray(y, dtype=float))
    return NonlinearitySpec(f=z, g=z, L=0.0, is_affine=True)


def sine_nonlinearity(L: float, in_drift: bool = True,
                      in_diffusion: bool = False) -> NonlinearitySpec:
    s = lambda x, y: L * np.sin(y)
    z = lambda x, y: np.zeros_like(np.asarray(y, dtype=float))
    return NonlinearitySpec(f=s if in_drift else z,
                            g=s if in_diffusion else z, L=L)


def linear_nonlinearity(gamma_f: float = 0.0, gamma_g: float = 0.0) -> NonlinearitySpec:
    return NonlinearitySpec(f=lambda x, y: gamma_f * y,
                            g=lambda x, y: gamma_g * y,
                            L=max(abs(gamma_f), abs(gamma_g)),
                            is_affine=True)


# ---------------------------------------------------------------------------
# the shared implicit step


class ImplicitStep:
    """Cholesky-factorized (I - dt*Lap) with homogeneous Dirichlet data.

    The matrix is symmetric positive definite for every dt > 0, so the solve is
    unconditionally stable and self-adjoint in the h-weighted inner product.
    """

    def __init__(self, mesh: Mesh, dt: float):
        self.mesh = mesh
        self.dt = dt
        n = mesh.N
        r = dt / (mesh.h * mesh.h)
        ab = np.zeros((2, n))
        ab[0, 1:] = -r
        ab[1, :] = 1.0 + 2.0 * r
        try:
            self._cb = cholesky_banded(ab)
        except np.linalg.LinAlgError as exc:  # pragma: no cover
            raise AssertionError("implicit step matrix must be SPD") from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Apply (I - dt*Lap)^(-1) to rows of rhs (shape (..., N))."""
        flat = np.atleast_2d(rhs)
        out = cho_solve_banded((self._cb, False), flat.T).T
        return out.reshape(rhs.shape)


# ---------------------------------------------------------------------------
# forward system


@dataclass
class ForwardSystemSpec:
    """Data for the controlled forward equation on a mesh/tree pair.

    u lives on the G0 nodes only (width = number of G0 interior nodes) and is
    embedded with the indicator; v and F have full interior width.
    """

    mesh: Mesh
    tree: ScenarioTree
    y0: np.ndarray
    F: AdaptedProcess | None = None
    u: AdaptedProcess | None = None
    v: AdaptedProcess | None = None
    nonlinearity: NonlinearitySpec | None = None

    def __post_init__(self):
        self.y0 = np.asarray(self.y0, dtype=float)
        if self.y0.shape != (self.mesh.N,):
            raise ValueError(f"y0 must have shape ({self.mesh.N},)")
        g0 = self.mesh.g0_primal_indices
        for name, proc, width in (("F", self.F, self.mesh.N),
                                  ("u", self.u, len(g0)),
                                  ("v", self.v, self.mesh.N)):
            if proc is not None:
                if proc.tree.M != self.tree.M:
                    raise ValueError(f"{name} lives on a different tree")
                if proc.width != width:
                    raise ValueError(f"{name} must have width {width}, got {proc.width}")


def forward_levels(mesh: Mesh, tree: ScenarioTree, step: ImplicitStep,
                   y0: np.ndarray,
                   F: list[np.ndarray] | None,
                   u: list[np.ndarray] | None,
                   v: list[np.ndarray] | None,
                   nonlinearity: NonlinearitySpec | None) -> list[np.ndarray]:
    """Low-level forward sweep; level k array has shape (2**k, N)."""
    n = mesh.N
    g0 = mesh.g0_primal_indices
    x = mesh.primal_nodes
    dt, sq = tree.dt, tree.sqrt_dt
    y = [np.broadcast_to(y0, (1, n)).copy()]
    for k in range(tree.M):
        yk = y[k]
        drift = np.zeros_like(yk)
        if nonlinearity is not None:
            drift += nonlinearity.f(x, yk)
        if F is not None:
            drift += F[k]
        if u is not None:
            drift[:, g0] += u[k]
        noise = np.zeros_like(yk)
        if nonlinearity is not None:
            noise += nonlinearity.g(x, yk)
        if v is not None:
            noise += v[k]
        base = yk + dt * drift
        rhs = np.empty((2 * yk.shape[0], n))
        rhs[0::2] = base + sq * noise
        rhs[1::2] = base - sq * noise
        y.append(step.solve(rhs))
    return y


def solve_forward(spec: ForwardSystemSpec,
                  step: ImplicitStep | None = None) -> AdaptedProcess:
    """State trajectory of the forward equation as an adapted process."""
    step = step or ImplicitStep(spec.mesh, spec.tree.dt)
    lv = forward_levels(
        spec.mesh, spec.tree, step, spec.y0,
        spec.F.levels if spec.F is not None else None,
        spec.u.levels if spec.u is not None else None,
        spec.v.levels if spec.v is not None else None,
        spec.nonlinearity)
    return AdaptedProcess(spec.tree, lv)


# ---------------------------------------------------------------------------
# backward system


@dataclass
class BackwardSystemSpec:
    """Terminal datum q (one interior vector per leaf) and adapted source p
    (read at levels 1..M; level 0 is ignored)."""

    mesh: Mesh
    tree: ScenarioTree
    q: np.ndarray
    p: AdaptedProcess | None = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        want = (1 << self.tree.M, self.mesh.N)
        if self.q.shape != want:
            raise ValueError(f"q must have shape {want}, got {self.q.shape}")
        if self.p is not None and self.p.width != self.mesh.N:
            raise ValueError(f"p must have width {self.mesh.N}")


@dataclass
class BackwardSolution:
    """Adjoint pair: z on levels 0..M, Z on levels 0..M-1 (level M of Z is
    structural zero padding so both are adapted processes)."""

    z: AdaptedProcess
    Z: AdaptedProcess

    def martingale_residual(self) -> float:
        """Max per-node residual of the plain martingale representation
        z_{k+1} = E_k z_{k+1} + (E_k[z_{k+1} dW]/dt) dW; exact on a binary
        tree."""
        tree = self.z.tree
        worst = 0.0
        for k in range(tree.M):
            child = self.z[k + 1]
            em = conditional_expectation(child)
            zrep = 0.5 * (child[0::2] - child[1::2]) / tree.sqrt_dt
            r_plus = child[0::2] - em - zrep * tree.sqrt_dt
            r_minus = child[1::2] - em + zrep * tree.sqrt_dt
            worst = max(worst, float(np.max(np.abs(r_plus))),
                        float(np.max(np.abs(r_minus))))
        return worst


def backward_levels(tree: ScenarioTree, step: ImplicitStep, q: np.ndarray,
                    p: list[np.ndarray] | None):
    """Low-level backward sweep; returns (z levels 0..M, Z levels 0..M-1)."""
    dt, sq = tree.dt, tree.sqrt_dt
    z = [None] * (tree.M + 1)
    bz = [None] * tree.M
    z[tree.M] = np.asarray(q, dtype=float)
    for k in range(tree.M - 1, -1, -1):
        core = z[k + 1]
        if p is not None:
            core = core - dt * p[k + 1]
        em = 0.5 * (core[0::2] + core[1::2])
        ew = 0.5 * (core[0::2] - core[1::2]) * (sq / dt)
        stacked = step.solve(np.concatenate([em, ew], axis=0))
        z[k] = stacked[: em.shape[0]]
        bz[k] = stacked[em.shape[0]:]
    return z, bz


def solve_backward(spec: BackwardSystemSpec,
                   step: ImplicitStep | None = None) -> BackwardSolution:
    """Adjoint pair (z, Z) for the backward equation with terminal datum q."""
    step = step or ImplicitStep(spec.mesh, spec.tree.dt)
    z, bz = backward_levels(
        spec.tree, step, spec.q,
        spec.p.levels if spec.p is not None else None)
    pad = np.zeros((1 << spec.tree.M, spec.mesh.N))
    return BackwardSolution(
        z=AdaptedProcess(spec.tree, z),
        Z=AdaptedProcess(spec.tree, bz + [pad]),
    )


# ---------------------------------------------------------------------------
# duality


def expect_inner(h: float, a: np.ndarray, b: np.ndarray) -> float:
    """E of the h-weighted nodewise inner product over one tree level."""
    return float(dyadic_mean(h * np.sum(a * b, axis=-1)))


def duality_residual(mesh: Mesh, tree: ScenarioTree,
                     y: AdaptedProcess, sol: BackwardSolution,
                     q: np.ndarray,
                     F: AdaptedProcess | None = None,
                     u: AdaptedProcess | None = None,
                     v: AdaptedProcess | None = None,
                     p: AdaptedProcess | None = None) -> float:
    """Relative residual of the exact discrete duality identity between a
    forward trajectory and a backward adjoint pair."""
    h, dt = mesh.h, tree.dt
    g0 = mesh.g0_primal_indices
    z, bz = sol.z, sol.Z
    lhs = expect_inner(h, y[tree.M], q)
    rhs = expect_inner(h, y[0], z[0])
    scale = abs(lhs) + abs(rhs)
    for k in range(tree.M):
        terms = 0.0
        if p is not None:
            terms += expect_inner(h, y[k + 1], p[k + 1])
        drift = np.zeros_like(z[k])
        if F is not None:
            drift += F[k]
        if u is not None:
            drift[:, g0] += u[k]
        if F is not None or u is not None:
            terms += expect_inner(h, drift, z[k])
        if v is not None:
            terms += expect_inner(h, v[k], bz[k])
        rhs += dt * terms
        scale += dt * abs(terms)
    return abs(lhs - rhs) / max(scale, 1e-300)


# ---------------------------------------------------------------------------
# Monte Carlo cross-check and a closed-form second-moment oracle


@dataclass(frozen=True)
class MonteCarloReport:
    tree_value: float
    estimate: float
    stderr: float
    n_paths: int

    @property
    def within(self) -> float:
        """Distance from the tree value in standard errors."""
        if self.stderr == 0.0:
            return 0.0 if self.estimate == self.tree_value else np.inf
        return abs(self.estimate - self.tree_value) / self.stderr


def _deterministic_levels(proc: AdaptedProcess | None, M: int):
    if proc is None:
        return None
    for k in range(M):
        if proc[k].shape[0] > 1 and np.ptp(proc[k], axis=0).max() != 0.0:
            raise ValueError(
                "Monte Carlo comparison needs deterministic F, u, v")
    return [proc[k][0] for k in range(M)]


def monte_carlo_check(spec: ForwardSystemSpec, n_paths: int,
                      seed: int) -> MonteCarloReport:
    """Compare tree E|y(T)|^2 against a Gaussian-driver simulation.

    Valid for affine nonlinearities with deterministic inputs, where both
    drivers share all first and second moments and therefore the same terminal
    second moment.
    """
    if n_paths < 100:
        raise ValueError("need n_paths >= 100 for a meaningful cross-check")
    nl = spec.nonlinearity
    if nl is not None and not nl.is_affine:
        raise ValueError("Monte Carlo comparison requires an affine nonlinearity")
    mesh, tree = spec.mesh, spec.tree
    F = _deterministic_levels(spec.F, tree.M)
    u = _deterministic_levels(spec.u, tree.M)
    v = _deterministic_levels(spec.v, tree.M)
    step = ImplicitStep(mesh, tree.dt)

    y = solve_forward(spec, step)
    tree_value = expect_inner(mesh.h, y[tree.M], y[tree.M])

    dw = sample_paths(tree.M, tree.T, n_paths, seed)
    x = mesh.primal_nodes
    g0 = mesh.g0_primal_indices
    Y = np.broadcast_to(spec.y0, (n_paths, mesh.N)).copy()
    for k in range(tree.M):
        drift = np.zeros_like(Y)
        if nl is not None:
            drift += nl.f(x, Y)
        if F is not None:
            drift += F[k]
        if u is not None:
            drift[:, g0] += u[k]
        noise = np.zeros_like(Y)
        if nl is not None:
            noise += nl.g(x, Y)
        if v is not None:
            noise += v[k]
        Y = step.solve(Y + tree.dt * drift + noise * dw[:, k][:, None])
    sq = mesh.h * np.sum(Y * Y, axis=1)
    est = float(np.mean(sq))
    stderr = float(np.std(sq, ddof=1) / np.sqrt(n_paths))
    return MonteCarloReport(tree_value=tree_value, estimate=est,
                            stderr=stderr, n_paths=n_paths)


def second_moment_reference(mesh: Mesh, tree: ScenarioTree, y0: np.ndarray,
                            gamma_f: float = 0.0, gamma_g: float = 0.0,
                            F: np.ndarray | None = None,
                            u: np.ndarray | None = None,
                            v: np.ndarray | None = None) -> np.ndarray:
    """E|y_k|^2 for affine dynamics via the dense mean/second-moment recursion;
    an oracle independent of the tree solver."""
    n = mesh.N
    r = tree.dt / (mesh.h * mesh.h)
    a = np.diag(np.full(n, 1.0 + 2.0 * r)) + np.diag(np.full(n - 1, -r), 1) \
        + np.diag(np.full(n - 1, -r), -1)
    S = np.linalg.inv(a)
    alpha = 1.0 + tree.dt * gamma_f
    d = tree.dt * (np.zeros(n) if F is None else np.asarray(F, dtype=float))
    if u is not None:
        d = d.copy()
        d[mesh.g0_primal_indices] += tree.dt * np.asarray(u, dtype=float)
    w_const = np.zeros(n) if v is None else np.asarray(v, dtype=float)
    m = np.asarray(y0, dtype=float).copy()
    P = np.outer(m, m)
    out = [mesh.h * np.trace(P)]
    for _ in range(tree.M):
        eaa = alpha * alpha * P + alpha * (np.outer(d, m) + np.outer(m, d)) \
            + np.outer(d, d)
        ebb = gamma_g * gamma_g * P \
            + gamma_g * (np.outer(w_const, m) + np.outer(m, w_const)) \
            + np.outer(w_const, w_const)
        P = S @ (eaa + tree.dt * ebb) @ S.T
        m = S @ (alpha * m + d)
        out.append(mesh.h * np.trace(P))
    return np.asarray(out)
