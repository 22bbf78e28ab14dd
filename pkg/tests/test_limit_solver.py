import numpy as np
import pytest

from fracbiot.full_solver import BiotRunConfig
from fracbiot.limit_solver import (
    FlowForm,
    LimitBuildError,
    MechForm,
    build_limit_problem,
    limit_energy,
    limit_operators,
    reconstruct_fracture_displacement,
    reconstruct_fracture_pressure,
    solve_limit,
)
from fracbiot.materials import Constant, default_materials, sourceless, zero_data
from fracbiot.mesh import FRACTURE, MINUS, PLUS, build_mesh
from fracbiot.scaling import ScalingExponents, compute_effective, validate_exponents
from fracbiot.study import check_equivalence, regime_configs, solve_limit_for

from oracles import heat_backward_euler, merged_bulk


def _problem(exp, materials=None, h=1 / 8, **kw):
    cfg = BiotRunConfig(exp, 1.0, materials or default_materials(), h=h, T=0.25, dt=0.05)
    reg = validate_exponents(exp, cfg.geometry)
    mesh = build_mesh(cfg.geometry, h)
    eff = compute_effective(cfg.materials, exp, reg, mesh)
    return build_limit_problem(reg, eff, mesh, **kw), cfg


# --- form selection ------------------------------------------------------------


def test_soft_conduit_prefers_reduced_forms():
    prob, _ = _problem(ScalingExponents.coupling_active(1, -1), prefer_reduced=True)
    assert (prob.mech_form, prob.flow_form) == (MechForm.REDUCED_DF, FlowForm.INTERFACE_PDE)


def test_very_soft_wall_with_storage():
    prob, _ = _problem(ScalingExponents.coupling_active(2, 2))
    assert (prob.mech_form, prob.flow_form) == (MechForm.DECOUPLED, FlowForm.WALL)
    assert prob.has_fracture_ode


def test_soft_barrier_with_storage_refuses_reduction():
    with pytest.raises(LimitBuildError, match="storage"):
        _problem(ScalingExponents.coupling_active(1, 1), flow_form="ReducedBarrier")
    with pytest.raises(LimitBuildError, match="mechanics"):
        _problem(ScalingExponents.coupling_active(1, 1), prefer_reduced=True)
    prob, _ = _problem(ScalingExponents.coupling_active(1, 1))
    assert (prob.mech_form, prob.flow_form) == (MechForm.TWO_SCALE, FlowForm.NORMAL_ODE)


def test_mismatched_forms_rejected():
    with pytest.raises(LimitBuildError):
        _problem(ScalingExponents.coupling_active(2, 0), mech_form="TwoScale")
    with pytest.raises(LimitBuildError):
        _problem(ScalingExponents.coupling_active(1, 0), flow_form="Wall")


# --- solutions -----------------------------------------------------------------


@pytest.mark.parametrize("cfg", regime_configs(h=1 / 8, dt=0.05, T=0.2), ids=lambda c: f"C{c.exponents.nu_C}K{c.exponents.nu_K}")
def test_zero_data_and_energy(cfg):
    mesh = build_mesh(cfg.geometry, cfg.h)
    zero = solve_limit_for(BiotRunConfig(cfg.exponents, 1.0, zero_data(cfg.materials), h=cfg.h, T=cfg.T, dt=cfg.dt), mesh)
    assert np.max(np.abs(zero.u_coeffs)) <= 1e-12 and np.max(np.abs(zero.p_coeffs)) <= 1e-12
    sol = solve_limit_for(BiotRunConfig(cfg.exponents, 1.0, sourceless(cfg.materials), h=cfg.h, T=cfg.T, dt=cfg.dt), mesh)
    E = limit_energy(sol)
    assert np.all(np.diff(E) <= 1e-12 * E[0])


def test_neutral_without_biot_is_a_bulk_heat_problem():
    # no fracture storage, switched-off fracture Biot tensor, no source: the
    # fracture only enforces continuity, so the bulk pressure solves a plain
    # heat equation on the glued rectangle
    exp = ScalingExponents(1, 0, 0, 0, 1, -1, 0)
    base = sourceless(default_materials())
    mat = base.with_bulk(biot=Constant(np.zeros((2, 2))))
    prob, cfg = _problem(exp, mat, h=1 / 8)
    sol = solve_limit(prob, mat, cfg.T, cfg.dt)
    mesh = prob.mesh
    pts, tris, index = merged_bulk(mesh)
    dirichlet = np.isclose(np.abs(pts[:, 0]), 1.0)
    bulk = np.flatnonzero(index >= 0)
    p0 = np.zeros(len(pts))
    p0[index[bulk]] = sol.pressure(0)[bulk]
    ref = heat_backward_euler(pts, tris, dirichlet, p0, cfg.T, cfg.dt)
    got = sol.pressure_series()[:, bulk]
    assert np.max(np.abs(got - ref[:, index[bulk]])) <= 1e-10


def test_pressure_continuity_across_gamma():
    for nu_K in (-1, 0):
        prob, cfg = _problem(ScalingExponents.coupling_active(1, nu_K))
        sol = solve_limit(prob, cfg.materials, cfg.T, cfg.dt)
        mesh = prob.mesh
        P = sol.pressure_series()
        assert np.max(np.abs(P[:, mesh.gamma_plus] - P[:, mesh.gamma_minus])) < 1e-12


def test_ideal_conduit_single_scalar_and_conservative_flux():
    prob, cfg = _problem(ScalingExponents.coupling_active(1, -2))
    sol = solve_limit(prob, cfg.materials, cfg.T, cfg.dt)
    mesh = prob.mesh
    frac = np.concatenate([mesh.gamma_plus, mesh.gamma_minus, np.flatnonzero(mesh.vertex_subdomain == FRACTURE)])
    P = sol.pressure_series()[:, frac]
    assert np.max(np.ptp(P, axis=1)) < 1e-12
    ops = limit_operators(prob, cfg.materials)
    assert np.max(np.abs(ops.D @ np.ones(ops.n_p))) < 1e-12


def test_very_soft_fracture_faces_clamped():
    prob, cfg = _problem(ScalingExponents.coupling_active(2, 0))
    sol = solve_limit(prob, cfg.materials, cfg.T, cfg.dt)
    mesh = prob.mesh
    U = sol.displacement_series()
    assert np.all(U[:, mesh.fracture_plus] == 0) and np.all(U[:, mesh.fracture_minus] == 0)
    # the bulk faces are traction-free and move
    assert np.max(np.abs(U[:, mesh.gamma_plus])) > 1e-3


def test_wall_has_no_cross_interface_flow_coupling():
    prob, cfg = _problem(ScalingExponents.coupling_active(1, 2))
    ops = limit_operators(prob, cfg.materials)
    P = prob.spaces[0]
    mesh = prob.mesh
    side = np.full(P.n_dofs, -1)
    for sub in (PLUS, MINUS):
        d = P.dof_map[mesh.vertex_subdomain == sub, 0]
        side[d[d >= 0]] = sub
    for mat in (ops.M, ops.D):
        coo = mat.tocoo()
        cross = (side[coo.row] >= 0) & (side[coo.col] >= 0) & (side[coo.row] != side[coo.col])
        assert np.all(coo.data[cross] == 0)


def test_switched_off_fracture_biot_tensor_is_invisible():
    exp = ScalingExponents(1, 0, -1, 2, 2, -1, -1)
    a = default_materials()
    b = a.with_fracture(biot=Constant(np.diag([3.0, 2.0])))
    prob_a, cfg = _problem(exp, a)
    prob_b, _ = _problem(exp, b)
    sa = solve_limit(prob_a, a, cfg.T, cfg.dt)
    sb = solve_limit(prob_b, b, cfg.T, cfg.dt)
    assert np.max(np.abs(sa.p_coeffs - sb.p_coeffs)) <= 1e-12
    assert np.max(np.abs(sa.u_coeffs - sb.u_coeffs)) <= 1e-12


# --- reconstructions --------------------------------------------------------------


def test_reconstructions_of_zero_solution_vanish():
    mat = zero_data(default_materials())
    prob, cfg = _problem(ScalingExponents.coupling_active(1, 0), mat, mech_form="ReducedDF")
    sol = solve_limit(prob, mat, cfg.T, cfg.dt)
    rec = reconstruct_fracture_displacement(sol, prob.effective, prob.mesh)
    assert np.max(np.abs(np.nan_to_num(rec))) == 0
    exp = ScalingExponents(1, 1, 0, 0, 0, -1, -1)
    prob, cfg = _problem(exp, mat, flow_form="ReducedBarrier")
    sol = solve_limit(prob, mat, cfg.T, cfg.dt)
    assert np.max(np.abs(np.nan_to_num(reconstruct_fracture_pressure(sol, prob.effective, prob.mesh)))) == 0


def test_reconstruction_requires_matching_form():
    prob, cfg = _problem(ScalingExponents.coupling_active(1, 0))
    sol = solve_limit(prob, cfg.materials, cfg.T, cfg.dt)
    with pytest.raises(ValueError):
        reconstruct_fracture_displacement(sol, prob.effective, prob.mesh)


@pytest.mark.parametrize("nu_K", [-2, -1, 0])
def test_reduced_mechanics_matches_two_scale(nu_K):
    cfg = BiotRunConfig(ScalingExponents.coupling_active(1, nu_K), 1.0, default_materials(), h=1 / 8, T=0.2, dt=0.05)
    report = check_equivalence(cfg, "mechanics")
    assert report.passed, report.verdict_text()


def test_reduced_barrier_matches_two_scale():
    cfg = BiotRunConfig(ScalingExponents(1, 1, 0, 0, 0, -1, -1), 1.0, default_materials(), h=1 / 8, T=0.2, dt=0.05)
    report = check_equivalence(cfg, "barrier")
    assert report.passed, report.verdict_text()
