"""ε-sweeps against the limit models: error norms, a priori ratios and structural checks."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .full_solver import BiotRunConfig, TransientSolution, solve_transient
from .limit_solver import (
    FlowForm,
    LimitBuildError,
    MechForm,
    build_limit_problem,
    reconstruct_fracture_displacement,
    reconstruct_fracture_pressure,
    solve_limit,
)
from .materials import MaterialFields
from .mesh import FRACTURE, MINUS, PLUS, FracturedMesh, build_mesh
from .scaling import (
    FlowRegime,
    RegimeDescriptor,
    average_normal,
    compute_effective,
    iota,
    theta,
    validate_exponents,
)
from .spaces import compute_norm, element_gradients, triangle_gradients

DEFAULT_EPS = (1 / 2, 1 / 4, 1 / 8, 1 / 16)
SLOW_EPS = DEFAULT_EPS + (1 / 32,)
DECREASE_FACTOR = 0.95  # each sweep step must shrink an error by at least 5 %
APRIORI_BOUND = 3.0


@dataclass(eq=False)
class ErrorReport:
    rows: list[tuple[float, str, float]] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    verdicts: dict[str, tuple[bool, str]] = field(default_factory=dict)
    solutions: dict = field(default_factory=dict, repr=False)

    def values(self, name: str) -> np.ndarray:
        return np.array([v for _, n, v in self.rows if n == name])

    @property
    def epsilons(self) -> list[float]:
        seen: list[float] = []
        for e, _, _ in self.rows:
            if e not in seen:
                seen.append(e)
        return seen

    @property
    def norm_names(self) -> list[str]:
        seen: list[str] = []
        for _, n, _ in self.rows:
            if n not in seen:
                seen.append(n)
        return seen

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.verdicts.values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epsilon", "norm_name", "value"])
        for e, n, v in self.rows:
            w.writerow([format(e, ".17g"), n, format(v, ".17g")])
        return buf.getvalue()

    def verdict_text(self) -> str:
        lines = [f"{k}: {v}" for k, v in sorted(self.metadata.items())]
        for name, (ok, detail) in self.verdicts.items():
            lines.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return "\n".join(lines) + "\n"


def config_hash(config: BiotRunConfig, eps_list: Sequence[float]) -> str:
    return hashlib.sha256((config.digest() + json.dumps([repr(e) for e in eps_list])).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# limit fields on the common mesh


@dataclass(eq=False)
class LimitFields:
    """Limit solution sampled per vertex: displacement ``(n_t, n_v, 2)`` and pressure ``(n_t, n_v)``."""

    solution: TransientSolution
    u: np.ndarray
    p: np.ndarray


def limit_fields(solution: TransientSolution) -> LimitFields:
    problem = solution.extras["problem"]
    mesh = solution.mesh
    u = solution.displacement_series()
    p = solution.pressure_series()
    frac = mesh.vertex_subdomain == FRACTURE
    if problem.mech_form == MechForm.REDUCED_DF:
        u[:, frac] = reconstruct_fracture_displacement(solution, problem.effective, mesh)[:, frac]
    if problem.flow_form == FlowForm.REDUCED_BARRIER and not problem.auxiliary_pressure:
        p[:, frac] = reconstruct_fracture_pressure(solution, problem.effective, mesh)[:, frac]
    return LimitFields(solution, u, p)


def full_fields(solution: TransientSolution) -> tuple[np.ndarray, np.ndarray]:
    return solution.displacement_series(), solution.pressure_series()


# ---------------------------------------------------------------------------
# theorem norm lists


def h1_in_time_enabled(regime: RegimeDescriptor) -> bool:
    e = regime.exponents
    return 2 * e.nu_q >= e.nu_omega - 1


def _only(mesh: FracturedMesh, values: np.ndarray, subs) -> np.ndarray:
    keep = np.isin(mesh.vertex_subdomain, subs)
    out = np.array(values, dtype=float, copy=True)
    out[:, ~keep] = np.nan
    return out


def _conduit_defect(mesh: FracturedMesh, materials: MaterialFields, times, p_full, p_lim, eps, with_time: bool) -> float:
    """``‖ε^{-1} ∂_N p_f^ε − ζ^#‖`` with ``ζ^# = −(K_f^N)^{-1} (K_f ∇_∥ p^#)·N``, per fracture triangle."""
    tris = mesh.subdomain_triangles(FRACTURE)
    areas, _ = element_gradients(mesh, tris)
    centroids = mesh.vertices[mesh.triangles[tris]].mean(axis=1)
    K = np.asarray(materials.fracture.conductivity(centroids), dtype=float)
    ratio = K[:, 0, 1] / K[:, 0, 0]

    def defect(pf, pl):
        gf = triangle_gradients(mesh, np.nan_to_num(pf))[tris]
        gl = triangle_gradients(mesh, np.nan_to_num(pl))[tris]
        return gf[:, 0] / eps + ratio * gl[:, 1]

    d = np.array([defect(a, b) for a, b in zip(p_full, p_lim)])
    sq = (d**2 * areas).sum(axis=1)
    total = float(np.sum(0.5 * (sq[1:] + sq[:-1]) * np.diff(times)))
    if with_time:
        dd = np.diff(d, axis=0) / np.diff(times)[:, None]
        total += float(((dd**2 * areas).sum(axis=1) * np.diff(times)).sum())
    return float(np.sqrt(total))


def theorem_norms(
    full: TransientSolution,
    limit: LimitFields,
    regime: RegimeDescriptor,
    materials: MaterialFields,
) -> dict[str, float]:
    """Every convergence quantity listed for the regime, keyed by a stable name."""
    mesh = full.mesh
    eps = float(full.epsilon)
    times = full.times
    u_full, p_full = full_fields(full)
    exp = regime.exponents
    th = theta(exp.nu_C)
    io_c = iota(exp.nu_C)

    bulk = (PLUS, MINUS)
    du_bulk = _only(mesh, u_full - limit.u, bulk)
    dp_bulk = _only(mesh, p_full - limit.p, bulk)
    du_frac = _only(mesh, eps**th * u_full - limit.u, (FRACTURE,))
    u_frac_scaled = _only(mesh, eps**io_c * u_full, (FRACTURE,))
    dp_frac = _only(mesh, p_full - limit.p, (FRACTURE,))
    p_frac = _only(mesh, p_full, (FRACTURE,))

    def tn(values, spatial, kind="L2_time_composite", seminorm=False):
        return compute_norm(mesh, values, kind, times=times, spatial=spatial, seminorm=seminorm)

    out: dict[str, float] = {}
    out["a:u_bulk:L2(I;H1)"] = tn(du_bulk, "H1_bulk")
    out["b:u_frac_scaled:L2(I;HN1)"] = tn(du_frac, "HN1_frac")
    out["c:strain_par_scaled:L2(I;L2)"] = tn(u_frac_scaled, "E_par_frac")
    out["d:p_bulk:L2(I;H1)"] = tn(dp_bulk, "H1_bulk")
    flow = regime.flow
    if flow in (FlowRegime.IDEAL_CONDUIT, FlowRegime.CONDUIT):
        out["d:p_frac:L2(I;H1)"] = tn(dp_frac, "H1_frac")
    if flow == FlowRegime.CONDUIT:
        out["e:normal_flux_defect:L2(I;L2)"] = _conduit_defect(mesh, materials, times, p_full, limit.p, eps, False)
    if flow in (FlowRegime.NEUTRAL, FlowRegime.BARRIER):
        out["e:p_frac:L2(I;HN1)"] = tn(dp_frac, "HN1_frac")
    if flow == FlowRegime.BARRIER:
        out["f:grad_par_p_frac_scaled:L2(I;L2)"] = tn(eps * p_frac, "grad_par_frac")
    if flow == FlowRegime.WALL and regime.storage_present:
        out["e:p_frac:L2(I;L2)"] = tn(dp_frac, "L2_frac")

    if h1_in_time_enabled(regime):
        h1 = "H1_time_composite"
        out["a:u_bulk:H1(I;H1)"] = tn(du_bulk, "H1_bulk", h1)
        out["b:u_frac_scaled:H1(I;HN1)"] = tn(du_frac, "HN1_frac", h1)
        out["c:strain_par_scaled:H1(I;L2)"] = tn(u_frac_scaled, "E_par_frac", h1)
        out["d:p_bulk:H1(I;L2)"] = tn(dp_bulk, "L2_bulk", h1)
        if regime.storage_present:
            out["e:p_frac:H1(I;L2)"] = tn(dp_frac, "L2_frac", h1)
    return out


LEADING_NORMS = ("a:u_bulk:L2(I;H1)", "d:p_bulk:L2(I;H1)")


# ---------------------------------------------------------------------------
# sweeps


def strictly_decreasing(values: Sequence[float], factor: float = DECREASE_FACTOR) -> bool:
    v = np.asarray(values, dtype=float)
    if np.all(v == 0):
        return True
    return bool(np.all(v[1:] <= factor * v[:-1]) and np.all(v[1:] < v[:-1]))


def _check_eps(eps_list: Sequence[float]) -> list[float]:
    eps = [float(e) for e in eps_list]
    if not eps or any(not 0 < e <= 1 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps_list must be strictly decreasing inside (0, 1]")
    return eps


def run_full_sweep(
    config: BiotRunConfig,
    eps_list: Sequence[float],
    mesh: FracturedMesh | None = None,
    materials_for_eps: Callable[[float], MaterialFields] | None = None,
    jobs: int = 1,
    validate: bool = True,
) -> dict[float, TransientSolution]:
    eps = _check_eps(eps_list)
    mesh = mesh if mesh is not None else build_mesh(config.geometry, config.h, config.n_layers)

    def one(e):
        mat = materials_for_eps(e) if materials_for_eps else config.materials
        return solve_transient(replace(config, epsilon=e, materials=mat), mesh, validate=validate)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            sols = list(pool.map(one, eps))
    else:
        sols = [one(e) for e in eps]
    return dict(zip(eps, sols))


def solve_limit_for(config: BiotRunConfig, mesh: FracturedMesh, regime: RegimeDescriptor | None = None, prefer_reduced: bool = False):
    regime = regime or validate_exponents(config.exponents, config.geometry)
    eff = compute_effective(config.materials, config.exponents, regime, mesh)
    problem = build_limit_problem(regime, eff, mesh, prefer_reduced=prefer_reduced)
    return solve_limit(problem, config.materials, config.T, config.dt)


def run_sweep(
    config: BiotRunConfig,
    eps_list: Sequence[float] = DEFAULT_EPS,
    regime: RegimeDescriptor | None = None,
    jobs: int = 1,
    prefer_reduced: bool = False,
    self_compare: bool = False,
) -> ErrorReport:
    """Solve the limit model once and the ε-problem per ε; tabulate the theorem norms.

    ``self_compare`` substitutes the limit fields for every full solution (all
    errors then vanish); it exists as a harness sanity check.
    """
    eps = _check_eps(eps_list)
    regime = regime or validate_exponents(config.exponents, config.geometry)
    mesh = build_mesh(config.geometry, config.h, config.n_layers)
    limit = limit_fields(solve_limit_for(config, mesh, regime, prefer_reduced))
    fulls = run_full_sweep(config, eps, mesh, jobs=jobs)

    report = ErrorReport(
        metadata={
            "regime": f"{regime.mech.value}/{regime.flow.value}",
            "h": format(config.h, ".17g"),
            "dt": format(config.dt, ".17g"),
            "T": format(config.T, ".17g"),
            "config_hash": config_hash(config, eps),
        }
    )
    per_eps = {}
    for e in eps:
        full = fulls[e]
        if self_compare:
            full = _as_full(limit, e)
        norms = theorem_norms(full, limit, regime, config.materials)
        per_eps[e] = norms
        for name, val in norms.items():
            report.rows.append((e, name, val))
    for name in report.norm_names:
        vals = report.values(name)
        ok = strictly_decreasing(vals)
        report.verdicts[f"decrease {name}"] = (ok, " ".join(format(v, ".3e") for v in vals))
    for name in LEADING_NORMS:
        vals = report.values(name)
        if len(vals) > 1 and vals[0] > 0:
            ok = vals[-1] <= 0.5 * vals[0]
            report.verdicts[f"halved {name}"] = (ok, f"last/first = {vals[-1] / vals[0]:.3f}")
    report.solutions = {"limit": limit, "full": fulls, "mesh": mesh, "regime": regime}
    return report


def _as_full(limit: LimitFields, eps: float) -> TransientSolution:
    """Wrap limit vertex fields as a full-space solution (for self-comparison)."""
    from .spaces import build_space

    mesh = limit.solution.mesh
    P = build_space(mesh, "Phi_gt1")
    V = build_space(mesh, "V_gt1")
    exp = limit.solution.extras["problem"].regime.exponents
    th = theta(exp.nu_C)
    frac = mesh.vertex_subdomain == FRACTURE
    u = np.nan_to_num(limit.u.copy())
    u[:, frac] /= eps**th  # undo the fracture scaling applied in the norms
    p = np.nan_to_num(limit.p)
    U = u.reshape(len(u), -1)
    sol = TransientSolution(limit.solution.times, p, U, (P, V), eps)
    return sol


# ---------------------------------------------------------------------------
# a priori, structural and equivalence checks


def _sup_and_h1(mesh, series, spatial, weights, epsilon, times):
    sup = max(compute_norm(mesh, v, spatial, weights=weights, epsilon=epsilon) for v in series)
    h1 = compute_norm(mesh, series, "H1_time_composite", weights=weights, epsilon=epsilon, times=times, spatial=spatial)
    return sup, h1


def apriori_quantities(solution: TransientSolution, exponents) -> dict[str, float]:
    """The five scaled a priori quantities for one full solution."""
    mesh = solution.mesh
    eps = float(solution.epsilon)
    times = solution.times
    u, p = full_fields(solution)
    e = exponents
    w = lambda power: {FRACTURE: eps**power}
    out = {}
    s, h = _sup_and_h1(mesh, u, "L2_all", w(theta(e.nu_C)), None, times)
    out["a:u"] = s + h
    s, h = _sup_and_h1(mesh, u, "grad_all", w(max(0.5, iota(e.nu_C))), eps, times)
    out["b:grad_u"] = s + h
    s, h = _sup_and_h1(mesh, u, "strain_all", w(iota(e.nu_C)), eps, times)
    out["c:strain_u"] = s + h
    sup = max(compute_norm(mesh, v, "L2_all", weights=w(min(iota(e.nu_omega), theta(e.nu_K)))) for v in p)
    h1 = compute_norm(mesh, p, "H1_time_composite", weights=w(iota(e.nu_omega)), times=times, spatial="L2_all")
    out["d:p"] = sup + h1
    out["e:grad_p"] = max(compute_norm(mesh, v, "grad_all", weights=w(iota(e.nu_K)), epsilon=eps) for v in p)
    return out


def check_apriori(solutions: dict[float, TransientSolution], exponents, bound: float = APRIORI_BOUND) -> ErrorReport:
    """Ratio of each scaled quantity's sweep maximum to its value at the largest ε."""
    report = ErrorReport(metadata={"bound": format(bound, ".17g")})
    eps = sorted(solutions, reverse=True)
    table = {e: apriori_quantities(solutions[e], exponents) for e in eps}
    for e in eps:
        for name, val in table[e].items():
            report.rows.append((e, f"apriori:{name}", val))
    for name in table[eps[0]]:
        vals = np.array([table[e][name] for e in eps])
        ref = vals[0]
        ratio = 1.0 if vals.max() == 0 else (np.inf if ref == 0 else vals.max() / ref)
        report.verdicts[f"apriori {name}"] = (bool(ratio <= bound), f"ratio {ratio:.3f}")
    return report


def trace_decay(solutions: dict[float, TransientSolution], exponents) -> ErrorReport:
    """``‖ε^θ u_f^ε‖`` on both fracture faces at the final time, per ε."""
    report = ErrorReport()
    eps = sorted(solutions, reverse=True)
    vals = []
    for e in eps:
        sol = solutions[e]
        mesh = sol.mesh
        u = sol.displacement(len(sol.times) - 1)
        th = theta(exponents.nu_C)
        plus = compute_norm(mesh, e**th * u[mesh.fracture_plus], "L2_gamma")
        minus = compute_norm(mesh, e**th * u[mesh.fracture_minus], "L2_gamma")
        v = float(np.hypot(plus, minus))
        vals.append(v)
        report.rows.append((e, "trace:u_frac_scaled:L2(gamma)", v))
    report.verdicts["trace decay"] = (strictly_decreasing(vals, 1.0), " ".join(f"{v:.3e}" for v in vals))
    return report


def check_trace_decay(solutions: dict[float, TransientSolution], exponents) -> ErrorReport:
    if not exponents.nu_C > 1:
        raise ValueError("trace decay is only asserted for nu_C > 1")
    return trace_decay(solutions, exponents)


def continuity_defect(solution: TransientSolution) -> float:
    """``‖p_+^ε − 𝔄_N p_f^ε‖_{L²(γ)}`` at the final time."""
    mesh = solution.mesh
    p = solution.pressure(len(solution.times) - 1)
    return compute_norm(mesh, p[mesh.gamma_plus] - average_normal(mesh, p), "L2_gamma")


def check_continuity_decay(solutions: dict[float, TransientSolution]) -> ErrorReport:
    report = ErrorReport()
    eps = sorted(solutions, reverse=True)
    vals = [continuity_defect(solutions[e]) for e in eps]
    for e, v in zip(eps, vals):
        report.rows.append((e, "continuity:p_plus_minus_avg:L2(gamma)", v))
    report.verdicts["continuity decay"] = (strictly_decreasing(vals, 1.0), " ".join(f"{v:.3e}" for v in vals))
    return report


def fracture_gradient_decay(solutions: dict[float, TransientSolution]) -> ErrorReport:
    """``‖∇p_f^ε‖_{L²(I;L²)}`` per ε (vanishes in the ideal-conduit limit)."""
    report = ErrorReport()
    eps = sorted(solutions, reverse=True)
    vals = []
    for e in eps:
        sol = solutions[e]
        p = _only(sol.mesh, sol.pressure_series(), (FRACTURE,))
        v = compute_norm(sol.mesh, p, "L2_time_composite", times=sol.times, spatial="H1_frac", seminorm=True)
        vals.append(v)
        report.rows.append((e, "grad_p_frac:L2(I;L2)", v))
    report.verdicts["fracture gradient decay"] = (strictly_decreasing(vals, 1.0), " ".join(f"{v:.3e}" for v in vals))
    return report


def check_equivalence(config: BiotRunConfig, which: str = "mechanics", regime: RegimeDescriptor | None = None) -> ErrorReport:
    """Two-scale vs reduced limit solves on the same mesh and time grid.

    ``which="mechanics"`` compares the bulk displacement (two-scale vs
    discrete-fracture mechanics); ``which="barrier"`` compares the bulk
    pressure (two-scale barrier vs reduced barrier).  Differences are
    ``L²(I;H¹)`` over the bulk; the column reconstructions are compared
    against the two-scale fracture fields in ``L²(I;L²)``.
    """
    regime = regime or validate_exponents(config.exponents, config.geometry)
    mesh = build_mesh(config.geometry, config.h, config.n_layers)
    eff = compute_effective(config.materials, config.exponents, regime, mesh)
    if which == "mechanics":
        reduced = build_limit_problem(regime, eff, mesh, mech_form=MechForm.REDUCED_DF)
        two = build_limit_problem(regime, eff, mesh, mech_form=MechForm.TWO_SCALE)
    elif which == "barrier":
        reduced = build_limit_problem(regime, eff, mesh, flow_form=FlowForm.REDUCED_BARRIER)
        two = build_limit_problem(regime, eff, mesh, flow_form=FlowForm.NORMAL_ODE)
    else:
        raise ValueError(f"unknown equivalence {which!r}")
    s_two = solve_limit(two, config.materials, config.T, config.dt)
    s_red = solve_limit(reduced, config.materials, config.T, config.dt)
    times = s_two.times
    bulk = (PLUS, MINUS)
    report = ErrorReport(metadata={"equivalence": which})
    if which == "mechanics":
        d = _only(mesh, s_two.displacement_series() - s_red.displacement_series(), bulk)
        diff = compute_norm(mesh, d, "L2_time_composite", times=times, spatial="H1_bulk")
        rec = reconstruct_fracture_displacement(s_red, eff, mesh)
        dr = _only(mesh, rec - s_two.displacement_series(), (FRACTURE,))
    else:
        d = _only(mesh, s_two.pressure_series() - s_red.pressure_series(), bulk)
        diff = compute_norm(mesh, d, "L2_time_composite", times=times, spatial="H1_bulk")
        rec = reconstruct_fracture_pressure(s_red, eff, mesh)
        # the initial level is data, not a reconstruction
        dr = _only(mesh, rec - s_two.pressure_series(), (FRACTURE,))[1:]
        times = times[1:]
    rdiff = compute_norm(mesh, dr, "L2_time_composite", times=times, spatial="L2_frac")
    report.rows.append((0.0, "bulk_difference:L2(I;H1)", diff))
    report.rows.append((0.0, "reconstruction_difference:L2(I;L2)", rdiff))
    report.verdicts["bulk fields agree"] = (diff <= 1e-8, f"{diff:.3e}")
    report.verdicts["reconstruction agrees"] = (rdiff <= 1e-8, f"{rdiff:.3e}")
    report.solutions = {"two_scale": s_two, "reduced": s_red}
    return report


def regime_configs(h: float = 1 / 16, dt: float = 1 / 20, T: float = 0.5, materials: MaterialFields | None = None):
    """The ten coupling-active (ν_C, ν_K) combinations with default data."""
    from .materials import default_materials
    from .scaling import ScalingExponents

    mat = materials or default_materials()
    out = []
    for nu_C in (1, 2):
        for nu_K in (-2, -1, 0, 1, 2):
            exp = ScalingExponents.coupling_active(nu_C, nu_K)
            out.append(BiotRunConfig(exp, 1.0, mat, h=h, T=T, dt=dt))
    return out
