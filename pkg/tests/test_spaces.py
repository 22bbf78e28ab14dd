import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from fracbiot.materials import Constant, default_materials, isotropic_stiffness
from fracbiot.mesh import FRACTURE, MINUS, PLUS, Geometry, build_mesh
from fracbiot.scaling import ScalingExponents
from fracbiot.spaces import (
    FormSpec,
    SparseSystem,
    apply_constraints,
    assemble,
    build_space,
    compute_norm,
    eval_scaled_gradient,
    interpolate,
    scaled_strain,
    vertex_values,
)

from oracles import p1_stiffness_and_mass, triangle_geometry

EXP0 = ScalingExponents(0, 0, 0, 0, 0, 0, 0)


@pytest.fixture(scope="module")
def mesh():
    return build_mesh(Geometry(), 1 / 4)


def _only_in(materials, sub, **fields):
    """Materials with the named fields zeroed everywhere except subdomain ``sub``."""
    out = materials
    names = ("plus", "minus", "fracture")
    from dataclasses import replace

    for i, name in enumerate(names):
        changes = {}
        for key, value in fields.items():
            changes[key] = value if i == sub else Constant(np.zeros_like(value.value))
        out = replace(out, **{name: replace(getattr(out, name), **changes)})
    return out


# --- spaces ---------------------------------------------------------------


def test_ideal_conduit_space_single_scalar(mesh):
    P = build_space(mesh, "Phi_lt_m1")
    shared = P.node_of_vertex[np.r_[mesh.gamma_plus, mesh.gamma_minus, np.flatnonzero(mesh.vertex_subdomain == FRACTURE)]]
    assert len(np.unique(shared)) == 1
    assert not P.dirichlet_mask[shared[0]]  # W = R without fracture Dirichlet data
    closed = build_mesh(Geometry(boundary_spec={"plus_right": "dirichlet", "fracture_top": "dirichlet"}), 1 / 4)
    Pc = build_space(closed, "Phi_lt_m1")
    assert Pc.dirichlet_mask[Pc.node_of_vertex[closed.gamma_plus[0]]]


def test_vgt1_constrains_fracture_faces(mesh):
    V = build_space(mesh, "V_gt1")
    faces = np.r_[mesh.fracture_plus, mesh.fracture_minus]
    assert np.all(V.dirichlet_mask[V.dof_map[faces].ravel()])


def test_full_space_merges_interface_pairs(mesh):
    full = build_space(mesh, "Phi_full").n_dofs
    split = build_space(mesh, "Phi_gt1").n_dofs
    pairs = len(mesh.interface_pairing_plus) + len(mesh.interface_pairing_minus)
    assert split - full == pairs


def test_interface_identifications(mesh):
    P = build_space(mesh, "Phi_open")
    n = P.node_of_vertex
    assert np.array_equal(n[mesh.gamma_plus], n[mesh.gamma_minus])
    assert np.all(n[mesh.normal_columns] == n[mesh.gamma_plus][:, None])
    P1 = build_space(mesh, "Phi_1")
    assert np.all(P1.node_of_vertex[mesh.vertex_subdomain == FRACTURE] < 0)
    assert not set(P1.node_of_vertex[mesh.gamma_plus]) & set(P1.node_of_vertex[mesh.gamma_minus])
    full = build_space(mesh, "V_full")
    assert np.array_equal(full.node_of_vertex[mesh.fracture_plus], full.node_of_vertex[mesh.gamma_plus])


def test_interpolate_and_vertex_values(mesh):
    P = build_space(mesh, "Phi_full")
    c = interpolate(P, lambda x, t=0.0: x[:, 1])
    v = vertex_values(P, c)
    assert np.allclose(v, mesh.vertices[:, 1])


# --- scaled gradients -----------------------------------------------------


def test_scaled_gradient_examples(mesh):
    frac = mesh.subdomain_triangles(FRACTURE)[0]
    s = mesh.vertices[:, 0]
    assert np.allclose(eval_scaled_gradient(mesh, s, frac, 0.1), [10.0, 0.0])
    for eps in (1.0, 0.3):
        assert np.allclose(eval_scaled_gradient(mesh, mesh.vertices[:, 1], frac, eps), [0.0, 1.0])
    v = np.c_[s, np.zeros_like(s)]
    strain = scaled_strain(eval_scaled_gradient(mesh, v, frac, 0.25))
    assert np.allclose(strain, [[4.0, 0.0], [0.0, 0.0]])
    bulk = mesh.subdomain_triangles(PLUS)[0]
    assert np.allclose(eval_scaled_gradient(mesh, s, bulk, 0.1), [1.0, 0.0])


# --- assembly -------------------------------------------------------------


def test_A_hat_matches_textbook_element():
    m = build_mesh(Geometry(), 1.0, n_layers=1)
    mat = _only_in(default_materials(), PLUS, stiffness=Constant(isotropic_stiffness(0.0, 0.5)))
    V = build_space(m, "V_gt1")
    A = assemble(FormSpec("A_hat", 1.0, EXP0), V, V, mat).matrix.toarray()
    ref = np.zeros_like(A)
    for t in m.subdomain_triangles(PLUS):
        tri = m.triangles[t]
        area, g = triangle_geometry(m.vertices[tri])
        for a in range(3):
            for i in range(2):
                ea = np.zeros((2, 2))
                ea[i] = g[a]
                ea = 0.5 * (ea + ea.T)
                for b in range(3):
                    for k in range(2):
                        eb = np.zeros((2, 2))
                        eb[k] = g[b]
                        eb = 0.5 * (eb + eb.T)
                        ref[V.dof_map[tri[a], i], V.dof_map[tri[b], k]] += area * np.sum(ea * eb)
    assert np.max(np.abs(A - ref)) < 1e-14


def test_C_hat_fracture_block_is_plain_mass(mesh):
    exp = ScalingExponents(1, 0, -1, 0, 0, 0, 0)
    mat = _only_in(default_materials(), FRACTURE, storage=Constant(1.0))
    P = build_space(mesh, "Phi_gt1")
    for eps in (1.0, 0.125):
        M = assemble(FormSpec("C_hat", eps, exp), P, P, mat).matrix
        _, ref = p1_stiffness_and_mass(mesh.vertices, mesh.triangles[mesh.triangle_subdomain == FRACTURE])
        assert abs(M - ref).max() < 1e-15


def test_D_hat_two_triangle_patch():
    """Hand assembly on the two fracture triangles of a one-cell strip."""
    m = build_mesh(Geometry(), 1.0, n_layers=1)
    assert len(m.subdomain_triangles(FRACTURE)) == 2
    exp = ScalingExponents(1, 1, 0, 0, 0, 0, 0)
    mat = _only_in(default_materials(), FRACTURE, conductivity=Constant(np.eye(2)))
    P = build_space(m, "Phi_gt1")
    D = assemble(FormSpec("D_hat", 0.5, exp), P, P, mat).matrix.toarray()
    # prefactor ε^{ν_K+1} = 1/4; the normal derivative picks up ε^{-2} = 4
    Keff = np.diag([0.25 * 4.0, 0.25])
    ref = np.zeros_like(D)
    for t in m.subdomain_triangles(FRACTURE):
        tri = m.triangles[t]
        area, g = triangle_geometry(m.vertices[tri])
        ref[np.ix_(tri, tri)] += area * g @ Keff @ g.T
    assert np.max(np.abs(D - ref)) < 1e-15
    # the two triangles see the same effective tensor diag(1, 1/4)
    Kn = assemble(FormSpec("D_hat", 0.5, exp), P, P, _only_in(default_materials(), FRACTURE, conductivity=Constant(np.diag([1.0, 0.0])))).matrix
    Kt = assemble(FormSpec("D_hat", 0.5, exp), P, P, _only_in(default_materials(), FRACTURE, conductivity=Constant(np.diag([0.0, 1.0])))).matrix
    assert np.allclose(Kn.toarray() + Kt.toarray(), D)
    assert np.isclose(Kn.diagonal().sum() / Kt.diagonal().sum(), 4.0)


def test_forms_symmetric_and_definite():
    m = build_mesh(Geometry(), 1 / 4)
    exp = ScalingExponents.coupling_active(1, 0)
    mat = default_materials()
    V = build_space(m, "V_full")
    P = build_space(m, "Phi_full")
    for name, S in (("A_hat", V), ("C_hat", P), ("D_hat", P)):
        M = assemble(FormSpec(name, 0.25, exp), S, S, mat).matrix
        assert abs(M - M.T).max() <= 1e-14 * abs(M).max()
        ev = np.linalg.eigvalsh(M.toarray())
        assert ev.min() > -1e-12 * ev.max()
        if name != "C_hat":
            Mc = apply_constraints(SparseSystem(M, np.zeros(S.n_dofs)), S).matrix.toarray()
            assert np.linalg.eigvalsh(Mc).min() > 0


def test_assembly_is_linear_in_coefficients(mesh):
    exp = ScalingExponents.coupling_active(1, 0)
    mat = default_materials()
    K = mat.fracture.conductivity.value
    doubled = mat.with_fracture(conductivity=Constant(2 * np.asarray(K))).with_bulk(conductivity=Constant(2 * np.eye(2)))
    P = build_space(mesh, "Phi_full")
    D1 = assemble(FormSpec("D_hat", 0.5, exp), P, P, mat).matrix
    D2 = assemble(FormSpec("D_hat", 0.5, exp), P, P, doubled).matrix
    assert abs(D2 - 2 * D1).max() <= 1e-14


def test_form_spec_rules():
    with pytest.raises(ValueError):
        FormSpec("A_hat")
    with pytest.raises(ValueError):
        FormSpec("A_b0", epsilon=0.5)
    with pytest.raises(ValueError):
        FormSpec("D_hat", -1.0, EXP0)


# --- constraints ----------------------------------------------------------


def test_constraints_examples(mesh):
    exp = ScalingExponents.coupling_active(1, 0)
    mat = default_materials()
    V = build_space(mesh, "V_full")
    A = assemble(FormSpec("A_hat", 0.5, exp), V, V, mat).matrix
    sys0 = apply_constraints(SparseSystem(A, np.zeros(V.n_dofs)), V)
    assert np.all(spla.spsolve(sys0.matrix.tocsc(), sys0.rhs) == 0)
    dof = int(V.dirichlet_dofs[3])
    sys1 = apply_constraints(SparseSystem(A, np.zeros(V.n_dofs)), V, {dof: 1.0})
    x = spla.spsolve(sys1.matrix.tocsc(), sys1.rhs)
    assert x[dof] == 1.0
    M = sys1.matrix
    assert abs(M - M.T).max() <= 1e-14
    # constrained rows and columns carry nothing but the unit diagonal
    col = M[:, dof].toarray().ravel()
    assert col[dof] == 1.0 and np.count_nonzero(col) == 1
    with pytest.raises(ValueError):
        apply_constraints(SparseSystem(A, np.zeros(V.n_dofs)), V, {int(V.free_dofs[0]): 1.0})


# --- norms ----------------------------------------------------------------


def test_norm_examples():
    m = build_mesh(Geometry(), 1 / 8)
    one = (m.vertex_subdomain == PLUS).astype(float)
    assert abs(compute_norm(m, one, "L2_bulk") - 1.0) < 1e-12
    s = np.where(m.vertex_subdomain == FRACTURE, m.vertices[:, 0], 0.0)
    assert abs(compute_norm(m, s, "HN1_frac", seminorm=True) - 1.0) < 1e-12
    fine = build_mesh(Geometry(), 1 / 64)
    g = np.sin(np.pi * fine.gamma_y)
    assert abs(compute_norm(fine, g, "L2_gamma") - np.sqrt(0.5)) < 1e-3
    coarse = build_mesh(Geometry(), 1 / 32)
    e32 = abs(compute_norm(coarse, np.sin(np.pi * coarse.gamma_y), "L2_gamma") - np.sqrt(0.5))
    e64 = abs(compute_norm(fine, g, "L2_gamma") - np.sqrt(0.5))
    assert 3.0 < e32 / e64 < 5.0  # O(h^2)


def test_norm_weights_and_time():
    m = build_mesh(Geometry(), 1 / 4)
    v = np.where(m.vertex_subdomain == FRACTURE, 1.0, 0.0)
    assert np.isclose(compute_norm(m, v, "L2_frac", weights={FRACTURE: 0.5}), 0.5)
    times = np.linspace(0, 1, 5)
    series = np.array([t * v for t in times])
    # ∫ t² dt by the trapezoid rule on 5 points plus ∫ 1 dt for the derivative
    trap = np.trapezoid(times**2, times) if hasattr(np, "trapezoid") else np.trapz(times**2, times)
    assert np.isclose(compute_norm(m, series, "H1_time_composite", times=times, spatial="L2_frac") ** 2, trap + 1.0)


def _rayleigh_max(mesh, kind_num, kind_den, space, rng, n=200):
    worst = 0.0
    for _ in range(n):
        c = rng.standard_normal(space.n_dofs)
        c[space.dirichlet_mask] = 0.0
        vals = vertex_values(space, c)
        worst = max(worst, compute_norm(mesh, vals, kind_num, epsilon=1.0) / compute_norm(mesh, vals, kind_den, epsilon=1.0))
    return worst


def test_discrete_poincare_and_korn():
    rng = np.random.default_rng(7)
    meshes = [build_mesh(Geometry(), h) for h in (1 / 4, 1 / 8, 1 / 16)]
    Cp = _rayleigh_max(meshes[0], "L2_all", "grad_all", build_space(meshes[0], "Phi_full"), rng)
    Ck = _rayleigh_max(meshes[0], "grad_all", "strain_all", build_space(meshes[0], "V_full"), rng)
    for m in meshes[1:]:
        assert _rayleigh_max(m, "L2_all", "grad_all", build_space(m, "Phi_full"), rng) <= Cp
        assert _rayleigh_max(m, "grad_all", "strain_all", build_space(m, "V_full"), rng) <= Ck
    # the sharp discrete constants stay bounded as well
    consts = []
    for m in meshes:
        P = build_space(m, "Phi_full")
        Kv, Mv = p1_stiffness_and_mass(m.vertices, m.triangles)
        R = np.zeros((m.n_vertices, P.n_dofs))
        R[np.arange(m.n_vertices), P.node_of_vertex] = 1.0
        K = R.T @ Kv.toarray() @ R
        M = R.T @ Mv.toarray() @ R
        free = P.free_dofs
        lam = sla.eigh(K[np.ix_(free, free)], M[np.ix_(free, free)], eigvals_only=True, subset_by_index=[0, 0])[0]
        consts.append(1 / np.sqrt(lam))
    assert max(consts) <= 1.5 * consts[0]
