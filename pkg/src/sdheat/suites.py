"""Experiment suites: orchestration, contract checks and artifact writing.

Every suite returns a SuiteOutcome whose checks decide the exit status; the
artifacts (results.csv, report.json, summary.txt, optional dumps) are written
with deterministic formatting so identical config + seed reproduces them byte
for byte.  Independent work items (sweep points, Carleman sample chunks) are
split into fixed-size tasks with seeds derived from the task index, so the
results do not depend on the worker count.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calculus import GridFunction, identity_residuals
from .config import (SCHEMA_VERSION, ExperimentConfig, SweepPointRejected,
                     delta_schedule)
from .hum import (ContractionError, HUMProblem, carleman_ratio,
                  epsilon_schedule, lift_diffusion_control, snorm_squared,
                  solve_hum_linear, solve_hum_semilinear,
                  terminal_bound_check)
from .solvers import (ForwardSystemSpec, ImplicitStep, linear_nonlinearity,
                      sine_nonlinearity, solve_forward, zero_nonlinearity)
from .tree import build_tree, dyadic_mean
from .weights import EXPANSION_IDS, build_weight_set, expansion_order

__all__ = ["SuiteOutcome", "run_suite", "SUITES", "fit_line"]

CARLEMAN_CHUNK = 25  # task granularity; independent of the worker count


# ---------------------------------------------------------------------------
# outcome plumbing


@dataclass
class SuiteOutcome:
    name: str
    checks: list[tuple[str, bool, str]] = field(default_factory=list)
    report: dict = field(default_factory=dict)

    def check(self, name: str, ok: bool, detail: str = "") -> bool:
        self.checks.append((name, bool(ok), detail))
        return bool(ok)

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def summary_lines(self) -> list[str]:
        lines = [f"suite: {self.name}"]
        for name, ok, detail in self.checks:
            status = "PASS" if ok else "FAIL"
            lines.append(f"[{status}] {name}" + (f": {detail}" if detail else ""))
        lines.append(f"result: {'PASS' if self.passed else 'FAIL'}")
        return lines


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(row[h]) for h in header))
    path.write_text("\n".join(lines) + "\n")


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2,
                               default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def fit_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line fit; returns (slope, intercept, r_squared)."""
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


def nonlinearity_from(cfg: ExperimentConfig):
    if cfg.kind == "zero":
        return zero_nonlinearity()
    if cfg.kind == "sine":
        return sine_nonlinearity(cfg.L)
    return linear_nonlinearity(cfg.gamma_f, cfg.gamma_g)


def _point_seed(cfg: ExperimentConfig, domain: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(cfg.seed, spawn_key=(domain, index))


# ---------------------------------------------------------------------------
# check-calculus


def run_calculus(cfg: ExperimentConfig, out: Path, n_pairs: int = 1000,
                 **_ignored) -> SuiteOutcome:
    outcome = SuiteOutcome("check-calculus")
    rows = []
    for i, n in enumerate(cfg.n_list):
        mesh = cfg.mesh_for(n)
        rng = np.random.default_rng(_point_seed(cfg, 10, i))
        worst: dict[str, float] = {}
        for _ in range(n_pairs):
            u = GridFunction(mesh, "closure", rng.standard_normal(mesh.N + 2))
            v = GridFunction(mesh, "closure", rng.standard_normal(mesh.N + 2))
            for key, val in identity_residuals(u, v).items():
                worst[key] = max(worst.get(key, 0.0), val)
        row = {"schema_version": SCHEMA_VERSION, "n": n, "h": mesh.h}
        row.update(worst)
        rows.append(row)
        bad = {k: v for k, v in worst.items() if v > 1e-12}
        outcome.check(f"identities_N{n}", not bad,
                      f"max residual {max(worst.values()):.3e}")
    write_csv(out / "results.csv", list(rows[0].keys()), rows)
    outcome.report["residuals"] = rows
    return outcome


# ---------------------------------------------------------------------------
# weights


def run_weights(cfg: ExperimentConfig, out: Path, dump: bool = False,
                **_ignored) -> SuiteOutcome:
    outcome = SuiteOutcome("weights")
    n = cfg.n_list[0]
    mesh = cfg.mesh_for(n)
    params = cfg.weight_params()
    ws = build_weight_set(mesh, params, cfg.m_steps)
    junctions = ws.tw.junction_residuals()
    outcome.check("theta_c2_junctions", max(junctions.values()) <= 1e-9,
                  f"worst {max(junctions.values()):.2e}")
    outcome.check("phi_negative", float(np.max(ws.phi_closure)) < 0.0,
                  f"max phi {np.max(ws.phi_closure):.6g}")
    outcome.check("theta_floor", float(np.min(ws.theta_grid)) >= 1.0 - 1e-12)
    if ws.representable:
        r = np.exp(ws.sphi)
        rho = np.exp(-ws.sphi)
        outcome.check("r_rho_unity", float(np.max(np.abs(r * rho - 1.0))) <= 1e-14)
    else:
        outcome.check("r_rho_unity",
                      float(np.max(np.abs(ws.sphi + (-ws.sphi)))) == 0.0,
                      "checked in log space (profile too steep for direct exp)")
    slopes = {}
    h_fit = [2.0 ** -k for k in range(4, 9)]
    for expr in EXPANSION_IDS:
        fit = expansion_order(expr, params, h_fit, eps0=cfg.eps0)
        slopes[expr] = fit.slope
        outcome.check(f"expansion_slope_{expr}", 1.8 <= fit.slope <= 2.2,
                      f"slope {fit.slope:.3f}")
    outcome.report.update({"junctions": junctions, "expansion_slopes": slopes,
                           "sigma": ws.tw.sigma,
                           "sigma_clamped": ws.tw.sigma_clamped,
                           "representable": ws.representable})
    if dump:
        rows = []
        x = mesh.closure_nodes
        with np.errstate(under="ignore"):
            r_tab = np.exp(ws.sphi)
        for k, t in enumerate(ws.t_grid):
            for i in range(x.size):
                rows.append({"t": t, "x": x[i], "theta": ws.theta_grid[k],
                             "phi": ws.phi_closure[i], "s": ws.s_grid[k],
                             "r": r_tab[k, i]})
        write_csv(out / "weights.csv", ["t", "x", "theta", "phi", "s", "r"], rows)
    return outcome


# ---------------------------------------------------------------------------
# simulate


def run_simulate(cfg: ExperimentConfig, out: Path, dump: bool = False,
                 **_ignored) -> SuiteOutcome:
    outcome = SuiteOutcome("simulate")
    n = cfg.n_list[0]
    mesh = cfg.mesh_for(n)
    tree = build_tree(cfg.m_steps, cfg.T)
    spec = ForwardSystemSpec(mesh=mesh, tree=tree,
                             y0=cfg.initial_profile(mesh),
                             nonlinearity=nonlinearity_from(cfg))
    t0 = time.perf_counter()
    y = solve_forward(spec)
    elapsed = time.perf_counter() - t0
    norms = [float(dyadic_mean(mesh.h * np.sum(y[k] ** 2, axis=1)))
             for k in range(tree.M + 1)]
    outcome.check("trajectory_finite", all(np.isfinite(norms)))
    outcome.report.update({"second_moments": norms, "seconds": elapsed})
    if dump:
        rows = []
        for k in range(tree.M + 1):
            for j in range(1 << k):
                rows.append({
                    "node": f"{k}:{j}",
                    "time": k * tree.dt,
                    "path_bits": format(j, f"0{max(k, 1)}b") if k else "-",
                    "state_norm2": float(mesh.h * np.sum(y[k][j] ** 2)),
                })
        write_csv(out / "trajectory.csv",
                  ["node", "time", "path_bits", "state_norm2"], rows)
    return outcome


# ---------------------------------------------------------------------------
# hum solves


def _scheduled_setup(cfg: ExperimentConfig, n: int):
    mesh = cfg.mesh_for(n)
    h = mesh.h
    delta = delta_schedule(h, cfg.lam, cfg.eps0, cfg.delta0, cfg.T)
    tree = build_tree(cfg.m_steps, cfg.T)
    ws = build_weight_set(mesh, cfg.weight_params(delta=delta), cfg.m_steps)
    sched = epsilon_schedule(ws, h, cfg.c_cal)
    eps = cfg.eps if cfg.eps is not None else sched.value
    return mesh, tree, ws, eps, sched, delta


def run_hum_linear(cfg: ExperimentConfig, out: Path, dump: bool = False,
                   **_ignored) -> SuiteOutcome:
    outcome = SuiteOutcome("hum-linear")
    mesh, tree, ws, eps, sched, delta = _scheduled_setup(cfg, cfg.n_list[0])
    problem = HUMProblem(mesh=mesh, tree=tree, ws=ws,
                         y0=cfg.initial_profile(mesh), eps=eps,
                         eps0=cfg.eps0, cg_tol=cfg.cg_tol,
                         cg_max_iter=cfg.cg_max_iter)
    t0 = time.perf_counter()
    result = solve_hum_linear(problem)
    elapsed = time.perf_counter() - t0
    bound = terminal_bound_check(result, problem, eps_value=sched.value)
    outcome.check("cg_converged", result.converged,
                  f"{result.cg_iterations} iterations")
    outcome.check("kkt_residual", result.kkt_residual <= cfg.kkt_tol,
                  f"{result.kkt_residual:.3e}")
    outcome.check("duality_identity", result.duality_gap <= 1e-8,
                  f"{result.duality_gap:.3e}")
    outcome.report.update({
        "delta": delta, "eps": eps, "eps_clamped": sched.clamped,
        "seconds": elapsed, "terminal_ratio": bound.ratio,
        "cost_ratio": bound.cost_ratio, **result.scalars()})
    if dump:
        rows = []
        y = result.y
        for k in range(tree.M + 1):
            for j in range(1 << k):
                rows.append({
                    "node": f"{k}:{j}",
                    "time": k * tree.dt,
                    "path_bits": format(j, f"0{max(k, 1)}b") if k else "-",
                    "state_norm2": float(mesh.h * np.sum(y[k][j] ** 2)),
                })
        write_csv(out / "trajectory.csv",
                  ["node", "time", "path_bits", "state_norm2"], rows)
    return outcome


def run_hum_semilinear(cfg: ExperimentConfig, out: Path,
                       **_ignored) -> SuiteOutcome:
    outcome = SuiteOutcome("hum-semilinear")
    mesh, tree, ws, eps, sched, delta = _scheduled_setup(cfg, cfg.n_list[0])
    nl = nonlinearity_from(cfg)
    y0 = cfg.initial_profile(mesh)
    t0 = time.perf_counter()
    try:
        semi = solve_hum_semilinear(mesh, tree, ws, y0, nl, eps,
                                    tol=cfg.picard_tol,
                                    max_iter=cfg.picard_max_iter,
                                    eps0=cfg.eps0, cg_tol=cfg.cg_tol,
                                    cg_max_iter=cfg.cg_max_iter)
    except ContractionError as exc:
        outcome.check("picard_contraction", False, str(exc))
        return outcome
    elapsed = time.perf_counter() - t0
    outcome.check("picard_converged", semi.converged,
                  f"{semi.iterations} iterations")
    if semi.factors:
        outcome.check("picard_contraction", max(semi.factors) < 1.0,
                      f"max factor {max(semi.factors):.3f}")
    fit_ok, r2 = True, 1.0
    pos = [d for d in semi.distances if d > 0.0]
    if len(pos) >= 3:
        _, _, r2 = fit_line(np.arange(len(pos)), np.log(pos))
        fit_ok = r2 >= 0.95
    outcome.check("geometric_decay_fit", fit_ok, f"R^2 {r2:.4f}")

    # the diffusion lift reproduces the trajectory with multiplicative noise
    g_spec = sine_nonlinearity(cfg.L, in_drift=False, in_diffusion=True)
    v_star = lift_diffusion_control(mesh, semi.result.y, semi.result.v, g_spec)
    relit = solve_forward(ForwardSystemSpec(
        mesh=mesh, tree=tree, y0=y0, F=semi.source, u=semi.result.u,
        v=v_star, nonlinearity=g_spec))
    worst = max(float(np.max(np.abs(relit[k] - semi.result.y[k])))
                for k in range(tree.M + 1))
    outcome.check("diffusion_lift_reproduces", worst <= 1e-12,
                  f"max deviation {worst:.3e}")
    outcome.report.update({
        "delta": delta, "eps": eps, "eps_clamped": sched.clamped,
        "seconds": elapsed, "distances": semi.distances,
        "factors": semi.factors, "iterations": semi.iterations,
        **semi.result.scalars()})
    return outcome


# ---------------------------------------------------------------------------
# carleman sampling


def _carleman_chunk_task(args):
    cfg, n, mesh_idx, chunk_idx, count = args
    mesh = cfg.mesh_for(n)
    delta = delta_schedule(mesh.h, cfg.lam, cfg.eps0, cfg.delta0, cfg.T)
    tree = build_tree(cfg.m_steps, cfg.T)
    ws = build_weight_set(mesh, cfg.weight_params(delta=delta), cfg.m_steps)
    seed = _point_seed(cfg, 20 + mesh_idx, chunk_idx)
    rep = carleman_ratio(mesh, tree, ws, count, seed, eps0=cfg.eps0)
    return rep.ratios.tolist(), rep.skipped


def run_carleman(cfg: ExperimentConfig, out: Path, jobs: int = 1,
                 **_ignored) -> SuiteOutcome:
    outcome = SuiteOutcome("carleman-check")
    maxima = {}
    rows = []
    for mesh_idx, n in enumerate(cfg.n_list):
        tasks = []
        remaining = cfg.carleman_samples
        chunk_idx = 0
        while remaining > 0:
            count = min(CARLEMAN_CHUNK, remaining)
            tasks.append((cfg, n, mesh_idx, chunk_idx, count))
            remaining -= count
            chunk_idx += 1
        t0 = time.perf_counter()
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_carleman_chunk_task, tasks))
        else:
            results = [_carleman_chunk_task(t) for t in tasks]
        elapsed = time.perf_counter() - t0
        ratios = np.concatenate([np.asarray(r) for r, _ in results]) \
            if results else np.array([])
        skipped = sum(s for _, s in results)
        finite = bool(np.all(np.isfinite(ratios)))
        outcome.check(f"ratios_finite_N{n}", finite,
                      f"{ratios.size} samples, {skipped} skipped")
        maxima[n] = float(np.max(ratios)) if ratios.size else 0.0
        rows.append({"schema_version": SCHEMA_VERSION, "n": n,
                     "h": 1.0 / (n + 1), "samples": int(ratios.size),
                     "skipped": skipped, "max_ratio": maxima[n],
                     "mean_ratio": float(np.mean(ratios)) if ratios.size else 0.0,
                     "seconds": elapsed})
    if len(maxima) >= 2:
        vals = [v for v in maxima.values() if v > 0.0]
        factor = max(vals) / min(vals) if vals else 1.0
        outcome.check("h_stable_constant", factor <= 10.0,
                      f"max/min of per-mesh maxima {factor:.3f}")
    outcome.report["empirical_constant"] = max(maxima.values()) if maxima else 0.0
    outcome.report["per_mesh_max"] = maxima
    write_csv(out / "results.csv", list(rows[0].keys()), rows)
    return outcome


# ---------------------------------------------------------------------------
# decay sweep


def _sweep_point_task(args):
    cfg, n, point_idx = args
    mesh = cfg.mesh_for(n)
    h = mesh.h
    delta = delta_schedule(h, cfg.lam, cfg.eps0, cfg.delta0, cfg.T)
    tree = build_tree(cfg.m_steps, cfg.T)
    ws = build_weight_set(mesh, cfg.weight_params(delta=delta), cfg.m_steps)
    sched = epsilon_schedule(ws, h, cfg.c_cal)
    y0 = cfg.initial_profile(mesh)
    y0_norm2 = float(mesh.h * np.sum(y0 ** 2))
    nl = nonlinearity_from(cfg)
    t0 = time.perf_counter()
    if cfg.kind == "zero":
        problem = HUMProblem(mesh=mesh, tree=tree, ws=ws, y0=y0,
                             eps=sched.value, eps0=cfg.eps0,
                             cg_tol=cfg.cg_tol, cg_max_iter=cfg.cg_max_iter)
        result = solve_hum_linear(problem)
        iterations = result.cg_iterations
    else:
        semi = solve_hum_semilinear(mesh, tree, ws, y0, nl, sched.value,
                                    tol=cfg.picard_tol,
                                    max_iter=cfg.picard_max_iter,
                                    eps0=cfg.eps0, cg_tol=cfg.cg_tol,
                                    cg_max_iter=cfg.cg_max_iter)
        result = semi.result
        iterations = semi.iterations
    solve_seconds = time.perf_counter() - t0

    t0 = time.perf_counter()
    if cfg.sweep_carleman_samples > 0:
        rep = carleman_ratio(mesh, tree, ws, cfg.sweep_carleman_samples,
                             _point_seed(cfg, 30, point_idx), eps0=cfg.eps0)
        carleman_max = rep.max_ratio
    else:
        carleman_max = 0.0
    carleman_seconds = time.perf_counter() - t0

    ratio = result.terminal_second_moment / y0_norm2 if y0_norm2 > 0 else 0.0
    return {
        "schema_version": SCHEMA_VERSION, "n": n, "h": h, "delta": delta,
        "eps": sched.value, "eps_clamped": sched.clamped, "admissible": True,
        "y0_norm2": y0_norm2,
        "terminal_norm2": result.terminal_second_moment,
        "terminal_ratio": ratio,
        "cost_state": result.cost_state, "cost_u": result.cost_u,
        "cost_v": result.cost_v,
        "cost_over_y0": (result.cost_total / y0_norm2) if y0_norm2 > 0 else 0.0,
        "kkt_residual": result.kkt_residual,
        "iterations": iterations,
        "carleman_max_ratio": carleman_max,
        "solve_seconds": solve_seconds,
        "carleman_seconds": carleman_seconds,
    }


SWEEP_COLUMNS = [
    "schema_version", "n", "h", "delta", "eps", "eps_clamped", "admissible",
    "y0_norm2", "terminal_norm2", "terminal_ratio", "cost_state", "cost_u",
    "cost_v", "cost_over_y0", "kkt_residual", "iterations",
    "carleman_max_ratio", "solve_seconds", "carleman_seconds",
]


def run_decay_sweep(cfg: ExperimentConfig, out: Path, jobs: int = 1,
                    **_ignored) -> SuiteOutcome:
    outcome = SuiteOutcome("decay-sweep")
    tasks = []
    rejects = []
    for idx, n in enumerate(cfg.n_list):
        h = 1.0 / (n + 1)
        try:
            delta_schedule(h, cfg.lam, cfg.eps0, cfg.delta0, cfg.T)
        except SweepPointRejected as exc:
            rejects.append({"n": n, "h": h, "reason": str(exc)})
            continue
        tasks.append((cfg, n, idx))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_point_task, tasks))
    else:
        rows = [_sweep_point_task(t) for t in tasks]

    if rows:
        write_csv(out / "results.csv", SWEEP_COLUMNS, rows)
    outcome.report["rejects"] = rejects
    outcome.report["rows"] = rows

    fit_rows = [r for r in rows if r["terminal_ratio"] > 0.0]
    degenerate = rows and all(r["y0_norm2"] == 0.0 for r in rows)
    if degenerate:
        outcome.check("decay_fit", True, "all rows degenerate (zero data)")
        return outcome
    if len(fit_rows) < 3:
        outcome.check("decay_fit", False,
                      f"fit aborted: only {len(fit_rows)} usable points")
        return outcome
    inv_h = np.array([1.0 / r["h"] for r in fit_rows])
    logs = np.array([np.log(r["terminal_ratio"]) for r in fit_rows])
    slope, intercept, r2 = fit_line(inv_h, logs)
    outcome.report["fit"] = {"slope": slope, "intercept": intercept,
                             "r_squared": r2,
                             "decay_constant": -slope}
    outcome.check("decay_slope_negative", slope < 0.0, f"slope {slope:.4f}")
    outcome.check("decay_fit_r2", r2 >= 0.9, f"R^2 {r2:.4f}")
    costs = [r["cost_over_y0"] for r in fit_rows if r["cost_over_y0"] > 0.0]
    if costs:
        factor = max(costs) / min(costs)
        outcome.check("cost_uniformity", factor <= 10.0,
                      f"max/min {factor:.3f}")
    ratios_decreasing = all(
        a["terminal_ratio"] > b["terminal_ratio"]
        for a, b in zip(fit_rows, fit_rows[1:]))
    outcome.check("terminal_ratio_decreasing", ratios_decreasing)
    return outcome


# ---------------------------------------------------------------------------
# dispatch

SUITES = {
    "check-calculus": run_calculus,
    "weights": run_weights,
    "simulate": run_simulate,
    "hum-linear": run_hum_linear,
    "hum-semilinear": run_hum_semilinear,
    "carleman-check": run_carleman,
    "decay-sweep": run_decay_sweep,
}


def run_suite(name: str, cfg: ExperimentConfig, out_dir: str | Path,
              jobs: int = 1, dump: bool = False) -> SuiteOutcome:
    """Run one named suite, write its artifacts and return the outcome."""
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outcome = SUITES[name](cfg, out, jobs=jobs, dump=dump)
    report = {
        "schema_version": SCHEMA_VERSION,
        "suite": name,
        "config": cfg.to_dict(),
        "checks": [{"name": n, "passed": ok, "detail": d}
                   for n, ok, d in outcome.checks],
        "passed": outcome.passed,
        **outcome.report,
    }
    write_json(out / "report.json", report)
    (out / "summary.txt").write_text("\n".join(outcome.summary_lines()) + "\n")
    return outcome
