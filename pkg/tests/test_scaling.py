from fractions import Fraction

import numpy as np
import pytest

from fracbiot.materials import Constant, TwoLayer, default_materials, isotropic_stiffness
from fracbiot.mesh import Geometry, PiecewiseLinear, build_mesh
from fracbiot.scaling import (
    ExponentError,
    FlowRegime,
    ReferenceScales,
    ScalingExponents,
    average_fracture,
    average_normal,
    compute_effective,
    iota,
    nondimensionalize,
    normal_stiffness,
    redimensionalize,
    theta,
    validate_exponents,
)

from oracles import double_average_quad, harmonic_mean_quad, normal_average_quad
from regime_cases import CASES, run_case

GEO = Geometry()


@pytest.fixture(scope="module")
def mesh():
    return build_mesh(GEO, 1 / 8)


def _effective(mesh, materials, exp=None):
    exp = exp or ScalingExponents.coupling_active(1, 0)
    return compute_effective(materials, exp, validate_exponents(exp, GEO), mesh)


def mandel_to_tensor(S):
    """Fourth-order tensor with major and minor symmetries from a 3x3 Mandel matrix."""
    r = 1 / np.sqrt(2)
    basis = [np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[0.0, 0.0], [0.0, 1.0]]), np.array([[0.0, r], [r, 0.0]])]
    return sum(S[a, b] * np.einsum("ij,kl->ijkl", basis[a], basis[b]) for a in range(3) for b in range(3))


# --- exponent gate ----------------------------------------------------------


@pytest.mark.parametrize("case", CASES, ids=[c[0] for c in CASES])
def test_exponent_table(case):
    ok, detail = run_case(case)
    assert ok, detail


def test_conduit_example_flags():
    exp = ScalingExponents(1, -1, -1, 0, 0, -1, -1)
    reg = validate_exponents(exp, Geometry(boundary_spec={"plus_right": "dirichlet"}))
    assert (reg.flow, reg.mech.value) == (FlowRegime.CONDUIT, "Soft")
    assert reg.storage_present and reg.biot_coupled and reg.flow_source_present and reg.mech_source_present
    assert not reg.W_is_zero


def test_all_violations_reported():
    exp = ScalingExponents(1, 0, -2, -5, -5, -5, -5)
    with pytest.raises(ExponentError) as err:
        validate_exponents(exp, Geometry(boundary_spec={}))
    clauses = " ".join(err.value.violations)
    for clause in ("3.5(i)", "3.5(iv)", "3.5(v)", "3.5(vi)", "3.5(vii)"):
        assert clause in clauses


def test_exponents_are_exact_rationals():
    exp = ScalingExponents("1", "-1/3", -1, 0, 0, -1, -1)
    assert exp.nu_K == Fraction(-1, 3)
    assert ScalingExponents(**exp.as_strings()) == exp
    # float inputs are converted bit-exactly so a near-boundary value never flips a switch
    near = ScalingExponents(1, 0, -1, 0, 0, -1, -1 + 1e-9)
    assert not validate_exponents(near, GEO).flow_source_present
    assert validate_exponents(ScalingExponents.coupling_active(1, 0), GEO).flow_source_present


def test_iota_theta():
    assert iota(1) == 1.0 and iota(-1) == 0.0
    assert theta(3) == 1.0 and theta(1) == 0.0 and theta(-3) == 0.0


# --- averaging --------------------------------------------------------------


def test_normal_average_examples(mesh):
    const = average_normal(mesh, lambda x: np.full(len(x), 2.5))
    assert np.allclose(const, 2.5, atol=1e-14)
    assert np.allclose(average_normal(mesh, lambda x: x[:, 0]), 0.0, atol=1e-15)
    sq = average_normal(mesh, lambda x: x[:, 0] ** 2)
    assert np.max(np.abs(sq - 1 / 12)) < 1e-12
    assert abs(normal_average_quad(lambda s: s * s, -0.5, 0.5) - sq[0]) < 1e-8


def test_normal_average_variable_aperture():
    geo = Geometry(aperture_plus=PiecewiseLinear((0.0, 1.0), (0.5, 1.0)))
    m = build_mesh(geo, 1 / 8)
    got = average_normal(m, lambda x: x[:, 0] ** 2)
    for j, y in enumerate(m.gamma_y):
        ap = 0.5 + 0.5 * y
        assert abs(got[j] - normal_average_quad(lambda s: s * s, -0.5, ap)) < 1e-12


def test_fracture_average_examples(mesh):
    assert abs(average_fracture(mesh, lambda x: np.full(len(x), 3.0)) - 3.0) < 1e-14
    assert abs(average_fracture(mesh, lambda x: x[:, 0])) < 1e-15
    got = average_fracture(mesh, lambda x: x[:, 1])
    assert abs(got - 0.5) < 1e-12
    assert abs(double_average_quad(lambda y, s: y, 0.5, 0.5) - got) < 1e-8


# --- effective coefficients --------------------------------------------------


def test_isotropic_normal_stiffness():
    lam, mu = 1.7, 0.6
    C = isotropic_stiffness(lam, mu)
    brute = np.zeros((2, 2))
    for i in range(2):
        for k in range(2):
            brute[i, k] = sum(C[i, j, k, l] * (j == 0) * (l == 0) for j in range(2) for l in range(2))
    assert np.allclose(normal_stiffness(C), np.diag([lam + 2 * mu, mu]), atol=1e-15)
    assert np.allclose(brute, np.diag([lam + 2 * mu, mu]), atol=1e-15)


def test_constant_and_two_layer_harmonic_means(mesh):
    mat = default_materials()
    eff = _effective(mesh, mat.with_fracture(stiffness=Constant(isotropic_stiffness(0.0, 1.5))))
    assert np.allclose(eff.C_gamma_N, np.diag([3.0, 1.5]), atol=1e-12)
    c1, c2 = 1.0, 4.0
    layered = mat.with_fracture(stiffness=TwoLayer(Constant(isotropic_stiffness(0.0, c1)), Constant(isotropic_stiffness(0.0, c2))))
    eff = _effective(mesh, layered)
    h = lambda a, b: 2 * a * b / (a + b)
    assert np.max(np.abs(eff.C_gamma_N - np.diag([h(2 * c1, 2 * c2), h(c1, c2)]))) < 1e-12
    coeff = lambda s: c1 if s < 0 else c2
    assert abs(harmonic_mean_quad(coeff, -0.5, 0.5, [0.0]) - eff.C_gamma_N[0, 1, 1]) < 1e-8


def test_conductivity_effective_values(mesh):
    a, b, c = 2.0, 0.5, 1.0
    mat = default_materials().with_fracture(conductivity=Constant([[a, b], [b, c]]))
    eff = _effective(mesh, mat)
    assert np.allclose(eff.K_gamma_t, c - b * b / a, atol=1e-12)
    assert np.allclose(eff.K_gamma, eff.K_gamma.transpose(0, 2, 1))
    k1, k2 = 1.0, 3.0
    layered = default_materials().with_fracture(conductivity=TwoLayer(Constant(np.diag([k1, 1.0])), Constant(np.diag([k2, 1.0]))))
    eff = _effective(mesh, layered)
    assert np.max(np.abs(eff.K_gamma_N - 2 * k1 * k2 / (k1 + k2))) < 1e-12
    assert abs(harmonic_mean_quad(lambda s: k1 if s < 0 else k2, -0.5, 0.5, [0.0]) - eff.K_gamma_N[3]) < 1e-8


def test_switch_type_fields_vanish(mesh):
    mat = default_materials()
    exp = ScalingExponents(1, 0, 0, 0, 1, 0, 0)  # 2ν_α^⊥ > ν_C − 1, no storage, no sources
    eff = _effective(mesh, mat, exp)
    assert np.all(eff.alpha_f_eff == 0) and np.all(eff.alpha_gamma == 0)
    assert np.all(eff.omega_f_eff == 0)
    assert np.all(eff.q_f_eff(0.3) == 0) and np.all(eff.f_f_eff(0.3) == 0)
    on = _effective(mesh, mat)
    assert np.allclose(on.alpha_f_eff[..., 0], 0.8) and np.allclose(on.q_f_eff(0.0), 1.0)


def test_scalar_harmonic_bound(mesh):
    mat = default_materials().with_fracture(stiffness=TwoLayer(Constant(isotropic_stiffness(0.0, 0.3)), Constant(isotropic_stiffness(0.0, 2.0))))
    eff = _effective(mesh, mat)
    arith = np.einsum("js,jsik->jik", mesh.column_lengths, eff.C_f_N) / mesh.apertures[:, None, None]
    assert np.all(eff.C_gamma_N[:, 1, 1] <= arith[:, 1, 1] + 1e-14)


def test_random_spd_ellipticity_and_tangential_positivity(mesh):
    rng = np.random.default_rng(42)
    small = build_mesh(GEO, 1 / 4)
    for _ in range(100):
        X = rng.standard_normal((3, 3))
        S = X @ X.T + 0.05 * np.eye(3)
        C = mandel_to_tensor(S)
        assert np.linalg.eigvalsh(normal_stiffness(C)).min() >= 0.5 * np.linalg.eigvalsh(S).min() - 1e-12
        Y = rng.standard_normal((2, 2))
        K = Y @ Y.T + 0.05 * np.eye(2)
        eff = _effective(small, default_materials().with_fracture(conductivity=Constant(K)))
        assert np.all(eff.K_gamma_t > 0)


def test_coupled_barrier_refuses_varying_normal_conductivity(mesh):
    exp = ScalingExponents.coupling_active(1, 1)
    mat = default_materials().with_fracture(conductivity=TwoLayer(Constant(np.eye(2)), Constant(2 * np.eye(2))))
    with pytest.raises(ValueError, match="constant along each normal column"):
        compute_effective(mat, exp, validate_exponents(exp, GEO), mesh)


def test_non_block_diagonal_biot_rejected(mesh):
    mat = default_materials().with_fracture(biot=Constant([[1.0, 0.2], [0.2, 1.0]]))
    with pytest.raises(ValueError, match="block-diagonal"):
        _effective(mesh, mat)


# --- non-dimensionalization ----------------------------------------------------


def test_reference_scales():
    sc = ReferenceScales(aperture=1.0, length=100.0, conductivity=1e-5, density=1000.0, gravity=9.81)
    assert sc.epsilon == 0.01
    assert abs(sc.time - 1e7) < 1e-6
    raw = {"p": ("pressure_head", np.array([3.0, 7.5])), "Kf": ("fracture_conductivity", np.array([2e-3]))}
    eps, scaled, horizon = nondimensionalize(sc, raw, 5e7, ScalingExponents.coupling_active(1, -1))
    assert horizon == 5.0
    assert np.allclose(redimensionalize(sc, "pressure_head", scaled["p"]), raw["p"][1], rtol=1e-14, atol=0)
    back = redimensionalize(sc, "fracture_conductivity", scaled["Kf"], ScalingExponents.coupling_active(1, -1))
    assert np.allclose(back, 2e-3, rtol=1e-14)
