"""Limit models for vanishing aperture: assembly, time stepping and column reconstructions."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .full_solver import TransientSolution
from .materials import MaterialFields
from .mesh import DIRICHLET_FLOW, FRACTURE, MINUS, PLUS, FracturedMesh
from .scaling import (
    EffectiveParams,
    FlowRegime,
    MechRegime,
    RegimeDescriptor,
    average_fracture,
    average_normal,
    compute_effective,
)
from .spaces import FormSpec, SpaceDescriptor, assemble, build_space, interpolate, vertex_values
from . import timestepping as ts


class MechForm(str, Enum):
    TWO_SCALE = "TwoScale"
    REDUCED_DF = "ReducedDF"
    DECOUPLED = "Decoupled"


class FlowForm(str, Enum):
    CONSTANT_PRESSURE = "ConstantPressure"
    INTERFACE_PDE = "InterfacePDE"
    NEUTRAL = "Neutral"
    NORMAL_ODE = "NormalODE"
    REDUCED_BARRIER = "ReducedBarrier"
    WALL = "Wall"


_FLOW_OF_REGIME = {
    FlowRegime.IDEAL_CONDUIT: FlowForm.CONSTANT_PRESSURE,
    FlowRegime.CONDUIT: FlowForm.INTERFACE_PDE,
    FlowRegime.NEUTRAL: FlowForm.NEUTRAL,
    FlowRegime.BARRIER: FlowForm.NORMAL_ODE,
    FlowRegime.WALL: FlowForm.WALL,
}

_PRESSURE_SPACE = {
    FlowForm.CONSTANT_PRESSURE: "Phi_lt_m1",
    FlowForm.INTERFACE_PDE: "Phi_m1",
    FlowForm.NEUTRAL: "Phi_open",
    FlowForm.NORMAL_ODE: "Phi_sharp",
    FlowForm.REDUCED_BARRIER: "Phi_1",
    FlowForm.WALL: "Phi_gt1",
}

_DISPLACEMENT_SPACE = {
    MechForm.TWO_SCALE: "V_sharp",
    MechForm.REDUCED_DF: "V_1",
    MechForm.DECOUPLED: "V_gt1",
}


class LimitBuildError(ValueError):
    """A requested reduced form is not available for the given data."""


@dataclass(frozen=True, eq=False)
class LimitProblem:
    regime: RegimeDescriptor
    mech_form: MechForm
    flow_form: FlowForm
    effective: EffectiveParams
    spaces: tuple[SpaceDescriptor, SpaceDescriptor]  # (pressure, displacement)

    @property
    def mesh(self) -> FracturedMesh:
        return self.spaces[0].mesh

    @property
    def has_fracture_ode(self) -> bool:
        return self.flow_form == FlowForm.WALL and self.regime.storage_present

    @property
    def auxiliary_pressure(self) -> bool:
        """Reduced barrier keeps interior fracture pressures when the fracture stress needs them."""
        return self.flow_form == FlowForm.REDUCED_BARRIER and self.regime.fracture_stress_has_pressure


def _mech_reduction_issue(regime: RegimeDescriptor, eff: EffectiveParams) -> str | None:
    if regime.mech != MechRegime.SOFT:
        return "reduced discrete-fracture mechanics needs nu_C = 1"
    if regime.fracture_stress_has_pressure:
        if not eff.is_alpha_constant_per_column():
            return "alpha_f^eff must be constant along each normal column"
        if regime.flow in (FlowRegime.BARRIER, FlowRegime.WALL):
            return "interface stress depends on a fracture pressure that varies in the normal direction (needs nu_K < 1)"
    return None


def _flow_reduction_issue(regime: RegimeDescriptor, eff: EffectiveParams) -> str | None:
    if regime.flow != FlowRegime.BARRIER:
        return "reduced barrier flow needs nu_K = 1"
    if regime.storage_present:
        return "reduced barrier flow needs omega_f^eff = 0 (no fracture storage)"
    if not eff.is_K_normal_constant_per_column():
        return "K_f^N must be constant along each normal column"
    if regime.biot_coupled and not eff.is_alpha_constant_per_column():
        return "alpha_f^eff must be constant along each normal column"
    return None


def build_limit_problem(
    regime: RegimeDescriptor,
    effective: EffectiveParams,
    mesh: FracturedMesh,
    prefer_reduced: bool = False,
    mech_form: MechForm | str | None = None,
    flow_form: FlowForm | str | None = None,
) -> LimitProblem:
    """Choose the limit formulation and its spaces.

    ``prefer_reduced`` asks for the discrete-fracture forms wherever the
    regime has one (mechanics for ν_C = 1, flow for the barrier); a violated
    precondition raises :class:`LimitBuildError`.  ``mech_form`` and
    ``flow_form`` pin a form explicitly and are checked the same way.
    """
    soft = regime.mech == MechRegime.SOFT
    default_mech = MechForm.TWO_SCALE if soft else MechForm.DECOUPLED
    default_flow = _FLOW_OF_REGIME[regime.flow]

    if mech_form is None:
        mech = MechForm.REDUCED_DF if (prefer_reduced and soft) else default_mech
    else:
        mech = MechForm(mech_form)
    if flow_form is None:
        flow = FlowForm.REDUCED_BARRIER if (prefer_reduced and regime.flow == FlowRegime.BARRIER) else default_flow
    else:
        flow = FlowForm(flow_form)

    if mech == MechForm.DECOUPLED and soft:
        raise LimitBuildError("decoupled fracture mechanics needs nu_C > 1")
    if mech in (MechForm.TWO_SCALE, MechForm.REDUCED_DF) and not soft:
        raise LimitBuildError(f"{mech.value} mechanics needs nu_C = 1")
    if mech == MechForm.REDUCED_DF:
        issue = _mech_reduction_issue(regime, effective)
        if issue:
            raise LimitBuildError(f"cannot reduce the mechanics: {issue}")
    if flow == FlowForm.REDUCED_BARRIER:
        issue = _flow_reduction_issue(regime, effective)
        if issue:
            raise LimitBuildError(f"cannot reduce the barrier flow: {issue}")
    elif flow != default_flow:
        raise LimitBuildError(f"flow form {flow.value} does not match the {regime.flow.value} regime")

    P = build_space(mesh, _PRESSURE_SPACE[flow], auxiliary_fracture=(flow == FlowForm.REDUCED_BARRIER and regime.fracture_stress_has_pressure))
    V = build_space(mesh, _DISPLACEMENT_SPACE[mech])
    return LimitProblem(regime=regime, mech_form=mech, flow_form=flow, effective=effective, spaces=(P, V))


# ---------------------------------------------------------------------------
# assembly


def _interior_fracture_rows(P: SpaceDescriptor) -> np.ndarray:
    """Pressure dofs carried only by interior fracture vertices (the auxiliary unknowns)."""
    mesh = P.mesh
    interior = mesh.normal_columns[:, 1:-1].ravel()
    dofs = P.dof_map[interior, 0]
    mask = np.zeros(P.n_dofs, dtype=bool)
    mask[dofs[dofs >= 0]] = True
    return mask


def _effective_for(problem: LimitProblem, materials: MaterialFields) -> EffectiveParams:
    """Effective parameters of ``materials`` (recomputed if the problem was built from other data)."""
    eff = problem.effective
    if eff._materials is materials:
        return eff
    return compute_effective(materials, problem.regime.exponents, problem.regime, problem.mesh)


def limit_operators(problem: LimitProblem, materials: MaterialFields) -> ts.BiotOperators:
    P, V = problem.spaces
    eff = _effective_for(problem, materials)
    reg = problem.regime
    mech, flow = problem.mech_form, problem.flow_form
    has_p = reg.fracture_stress_has_pressure
    F = lambda name, t=0.0: FormSpec(name, time=t)

    def form(name, trial, test, t=0.0):
        return assemble(F(name, t), trial, test, materials, eff)

    # mechanics
    A = form("A_b0", V, V).matrix
    B = form("B_b0", P, V).matrix
    if mech == MechForm.REDUCED_DF:
        A = A + form("interface_stress_jump", V, V).matrix
        if has_p:
            B = B + form("interface_alpha_jump", P, V).matrix
    else:
        A = A + form("fracture_normal_stiffness", V, V).matrix
        if has_p:
            B = B + form("coupling_alpha_eff", P, V).matrix

    # flow
    M = form("C_b0", P, P).matrix
    D = form("D_b0", P, P).matrix
    Bf = None
    if flow == FlowForm.INTERFACE_PDE:
        D = D + form("gamma_stiffness", P, P).matrix
    elif flow == FlowForm.NORMAL_ODE:
        D = D + form("fracture_normal_conductivity", P, P).matrix
    elif flow == FlowForm.REDUCED_BARRIER:
        D = D + form("interface_mass_jump", P, P).matrix
    if flow != FlowForm.REDUCED_BARRIER and (flow != FlowForm.WALL or reg.storage_present):
        M = M + form("fracture_storage", P, P).matrix

    if mech == MechForm.REDUCED_DF and has_p:
        # the flow row sees ∫ α ∂_N ∂_t u_f = α_f^eff · ⟦∂_t u⟧, while the
        # interface stress carries α_γ; they differ when C_f^N varies in a column
        flow_alpha = form("interface_alpha_eff_jump", P, V).matrix
        if abs(flow_alpha - form("interface_alpha_jump", P, V).matrix).max() > 1e-14:
            Bf = (form("B_b0", P, V).matrix + flow_alpha).T.tocsr()

    if flow == FlowForm.REDUCED_BARRIER:
        bulk_coupling = form("B_b0", P, V).matrix.T
        reduced = form("reduced_barrier_coupling", V, P).matrix
        if problem.auxiliary_pressure:
            aux = sp.diags(_interior_fracture_rows(P).astype(float))
            D = D + aux @ form("fracture_normal_conductivity", P, P).matrix
            column = form("coupling_alpha_eff", P, V).matrix.T
            Bf = (bulk_coupling + reduced + aux @ column).tocsr()
        elif reg.biot_coupled:
            Bf = (bulk_coupling + reduced).tocsr()

    def loads(t):
        if mech == MechForm.REDUCED_DF:
            Fv = form("L_b0", V, V, t).rhs + form("interface_mech_load", V, V, t).rhs
        else:
            Fv = form("L_b0", V, V, t).rhs + form("fracture_mech_load", V, V, t).rhs
        Q = form("Q_b0", P, P, t).rhs
        if flow == FlowForm.REDUCED_BARRIER:
            Q = Q + form("reduced_barrier_load", P, P, t).rhs
            if problem.auxiliary_pressure:
                Q = Q + np.where(_interior_fracture_rows(P), form("fracture_flow_load", P, P, t).rhs, 0.0)
        elif flow != FlowForm.WALL or reg.storage_present:
            Q = Q + form("fracture_flow_load", P, P, t).rhs
        return Fv, Q

    return ts.BiotOperators(A=A, B=B, M=M, D=D, loads=loads, u_fixed=V.dirichlet_mask, p_fixed=P.dirichlet_mask, Bf=Bf)


def limit_initial_pressure(problem: LimitProblem, materials: MaterialFields) -> np.ndarray:
    """Initial pressure coefficients appropriate to the flow form."""
    P = problem.spaces[0]
    mesh = problem.mesh
    p0 = {s: materials.of(s).initial_pressure for s in range(3)}
    out = interpolate(P, p0, prefer=(PLUS, MINUS, FRACTURE))
    col_dofs = P.dof_map[mesh.normal_columns[:, 0], 0]
    if problem.flow_form == FlowForm.CONSTANT_PRESSURE:
        out[col_dofs] = average_fracture(mesh, p0[FRACTURE])
    elif problem.flow_form in (FlowForm.INTERFACE_PDE, FlowForm.NEUTRAL):
        out[col_dofs] = average_normal(mesh, p0[FRACTURE])
    return out


def solve_limit(problem: LimitProblem, materials: MaterialFields, T: float, dt: float) -> TransientSolution:
    ops = limit_operators(problem, materials)
    p0 = limit_initial_pressure(problem, materials)
    times, U, P = ts.run_backward_euler(ops, p0, T, dt)
    return TransientSolution(times, P, U, problem.spaces, "limit", {"operators": ops, "problem": problem, "materials": materials})


def limit_energy(solution: TransientSolution) -> np.ndarray:
    return ts.discrete_energy(solution.extras["operators"], solution.u_coeffs, solution.p_coeffs)


# ---------------------------------------------------------------------------
# column reconstructions


def _solve_columns(K: sp.csr_matrix, rhs: np.ndarray, fixed: np.ndarray, fixed_values: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Solve ``K x = rhs`` on the free dofs in ``active`` with the others prescribed."""
    free = active & ~fixed
    x = np.where(fixed, fixed_values, 0.0)
    Kf = K[free][:, free].tocsc()
    r = rhs[free] - K[free][:, fixed] @ fixed_values[fixed]
    x[free] = spla.splu(Kf).solve(r)
    return x


def reconstruct_fracture_displacement(solution: TransientSolution, effective: EffectiveParams, mesh: FracturedMesh) -> np.ndarray:
    """Fracture displacement per vertex and time level, ``(n_times, n_vertices, 2)``.

    Each normal column is a 1D elasticity problem with the bulk traces as
    end values and the (normal-constant) fracture pressure as load.
    """
    problem: LimitProblem = solution.extras.get("problem")
    materials = solution.extras.get("materials")
    if problem is None or problem.mech_form != MechForm.REDUCED_DF:
        raise ValueError("displacement reconstruction expects a reduced discrete-fracture solution")
    if mesh is not problem.mesh:
        raise ValueError("mesh does not match the solution")
    Vf = build_space(mesh, "V_gt1")
    Pf = build_space(mesh, "Phi_gt1")
    K = assemble(FormSpec("fracture_normal_stiffness"), Vf, Vf, materials, effective).matrix.tocsr()
    coupling = assemble(FormSpec("coupling_alpha_eff"), Pf, Vf, materials, effective).matrix
    has_p = problem.regime.fracture_stress_has_pressure

    dm = Vf.dof_map
    frac_vertices = np.flatnonzero(mesh.vertex_subdomain == FRACTURE)
    active = np.zeros(Vf.n_dofs, dtype=bool)
    active[dm[frac_vertices].ravel()] = True
    ends = np.concatenate([mesh.fracture_plus, mesh.fracture_minus])
    bulk_of = np.concatenate([mesh.gamma_plus, mesh.gamma_minus])
    external = np.intersect1d(frac_vertices, mesh.external_vertices())
    fixed = np.zeros(Vf.n_dofs, dtype=bool)
    fixed[dm[ends].ravel()] = True
    fixed[dm[external].ravel()] = True

    out = np.full((len(solution.times), mesh.n_vertices, 2), np.nan)
    for k, t in enumerate(solution.times):
        u_bulk = solution.displacement(k)
        vals = np.zeros(Vf.n_dofs)
        vals[dm[ends].ravel()] = u_bulk[bulk_of].ravel()
        vals[dm[external].ravel()] = 0.0
        rhs = assemble(FormSpec("fracture_mech_load", time=t), Vf, Vf, materials, effective).rhs
        if has_p:
            p = np.nan_to_num(solution.pressure(k))
            rhs = rhs + coupling @ p
        x = _solve_columns(K, rhs, fixed, vals, active)
        out[k, frac_vertices] = x[dm[frac_vertices]]
    return out


def reconstruct_fracture_pressure(solution: TransientSolution, effective: EffectiveParams, mesh: FracturedMesh) -> np.ndarray:
    """Fracture pressure per vertex and time level, ``(n_times, n_vertices)``.

    Each column solves the normal diffusion problem with the bulk pressure
    traces at its ends; the Biot term uses a backward difference of the
    fracture displacement (the initial level returns the initial pressure).
    """
    problem: LimitProblem = solution.extras.get("problem")
    materials = solution.extras.get("materials")
    if problem is None or problem.flow_form != FlowForm.REDUCED_BARRIER:
        raise ValueError("pressure reconstruction expects a reduced barrier solution")
    if mesh is not problem.mesh:
        raise ValueError("mesh does not match the solution")
    if not effective.is_K_normal_constant_per_column():
        raise ValueError("K_f^N must be constant along each normal column")
    Pf = build_space(mesh, "Phi_gt1")
    Vf = build_space(mesh, "V_gt1")
    K = assemble(FormSpec("fracture_normal_conductivity"), Pf, Pf, materials, effective).matrix.tocsr()
    coupling = assemble(FormSpec("coupling_alpha_eff"), Pf, Vf, materials, effective).matrix.T.tocsr()

    if problem.mech_form == MechForm.REDUCED_DF:
        u_f = reconstruct_fracture_displacement(solution, effective, mesh)
    else:
        u_f = solution.displacement_series()
    u_f = np.nan_to_num(u_f)

    frac_vertices = np.flatnonzero(mesh.vertex_subdomain == FRACTURE)
    active = np.zeros(Pf.n_dofs, dtype=bool)
    active[frac_vertices] = True
    ends = np.concatenate([mesh.fracture_plus, mesh.fracture_minus])
    bulk_of = np.concatenate([mesh.gamma_plus, mesh.gamma_minus])
    dir_facets = [i for i, (tag, seg) in enumerate(zip(mesh.facet_tags, mesh.facet_segments)) if tag == DIRICHLET_FLOW and seg.startswith("fracture")]
    closed = np.unique(mesh.facets[dir_facets].ravel()) if dir_facets else np.zeros(0, dtype=int)
    fixed = np.zeros(Pf.n_dofs, dtype=bool)
    fixed[ends] = True
    fixed[closed] = True

    p0 = materials.fracture.initial_pressure(mesh.vertices[frac_vertices], 0.0)
    out = np.full((len(solution.times), mesh.n_vertices), np.nan)
    out[0, frac_vertices] = p0
    for k in range(1, len(solution.times)):
        t = solution.times[k]
        dt = t - solution.times[k - 1]
        p_bulk = solution.pressure(k)
        vals = np.zeros(Pf.n_dofs)
        vals[ends] = p_bulk[bulk_of]
        vals[closed] = 0.0
        rhs = assemble(FormSpec("fracture_flow_load", time=t), Pf, Pf, materials, effective).rhs
        du = (u_f[k] - u_f[k - 1]).ravel() / dt
        rhs = rhs - coupling @ du
        x = _solve_columns(K, rhs, fixed, vals, active)
        out[k, frac_vertices] = x[frac_vertices]
    return out
