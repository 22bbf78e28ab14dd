"""P1 spaces with interface identifications, form assembly and discrete norms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .materials import MaterialFields
from .mesh import FRACTURE, MINUS, NORMAL, PLUS, FracturedMesh
from .scaling import EffectiveParams, ScalingExponents

SPACE_KINDS = (
    "V_full", "Phi_full", "V_sharp", "Phi_sharp", "V_gt1", "V_1",
    "Phi_lt_m1", "Phi_m1", "Phi_open", "Phi_1", "Phi_gt1", "Gamma_P1",
)
VECTOR_KINDS = ("V_full", "V_sharp", "V_gt1", "V_1")

# degree-2 rule: edge midpoints, equal weights
_QUAD_BARY = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
_QUAD_W = np.full(3, 1.0 / 3.0)


@dataclass(frozen=True, eq=False)
class SpaceDescriptor:
    kind: str
    mesh: FracturedMesh
    ncomp: int
    node_of_vertex: np.ndarray  # -1 where the vertex carries no unknown
    n_nodes: int
    dirichlet_mask: np.ndarray  # (n_dofs,) bool

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.ncomp

    @property
    def dof_map(self) -> np.ndarray:
        """``(n_vertices, ncomp)`` global dof per vertex component, -1 if absent."""
        n = self.node_of_vertex
        comps = np.arange(self.ncomp)
        dofs = n[:, None] * self.ncomp + comps[None, :]
        return np.where(n[:, None] >= 0, dofs, -1)

    @property
    def dirichlet_dofs(self) -> np.ndarray:
        return np.flatnonzero(self.dirichlet_mask)

    @property
    def free_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.dirichlet_mask)


def _compress(node: np.ndarray) -> tuple[np.ndarray, int]:
    valid = node >= 0
    out = np.full_like(node, -1)
    uniq, inv = np.unique(node[valid], return_inverse=True)
    out[valid] = inv
    return out, len(uniq)


def build_space(mesh: FracturedMesh, kind: str, auxiliary_fracture: bool = False) -> SpaceDescriptor:
    """Build the dof map of one of the limit or full function spaces.

    ``auxiliary_fracture`` (only for ``Phi_1``) adds independent unknowns on
    the interior fracture vertices, with the column ends tied to the bulk
    traces; the reduced barrier model uses them to carry the reconstructed
    fracture pressure when the fracture stress depends on it.
    """
    if kind not in SPACE_KINDS:
        raise ValueError(f"unknown space kind {kind!r}")
    nv = mesh.n_vertices
    sub = mesh.vertex_subdomain
    bulk = sub != FRACTURE
    frac = sub == FRACTURE
    node = np.arange(nv)
    ncomp = 2 if kind in VECTOR_KINDS else 1

    def tie_ends(node):
        node = node.copy()
        node[mesh.fracture_plus] = node[mesh.gamma_plus]
        node[mesh.fracture_minus] = node[mesh.gamma_minus]
        return node

    if kind in ("V_full", "Phi_full", "V_sharp", "Phi_sharp"):
        node = tie_ends(node)
    elif kind in ("V_gt1", "Phi_gt1"):
        pass
    elif kind == "V_1":
        node = np.where(bulk, node, -1)
    elif kind == "Phi_1":
        if auxiliary_fracture:
            node = tie_ends(node)
        else:
            node = np.where(bulk, node, -1)
    elif kind == "Phi_lt_m1":
        scalar = nv  # one shared id for gamma and fracture
        node = node.copy()
        node[mesh.gamma_plus] = scalar
        node[mesh.gamma_minus] = scalar
        node[frac] = scalar
    elif kind in ("Phi_m1", "Phi_open", "Gamma_P1"):
        col = nv + np.arange(mesh.n_gamma)
        node = node.copy() if kind != "Gamma_P1" else np.full(nv, -1)
        node[mesh.gamma_plus] = col
        node[mesh.gamma_minus] = col
        node[mesh.normal_columns] = col[:, None]
    node, n_nodes = _compress(node)

    if ncomp == 2:
        constrained_vertices = mesh.external_vertices()
        if kind == "V_gt1":
            constrained_vertices = np.union1d(constrained_vertices, np.concatenate([mesh.fracture_plus, mesh.fracture_minus]))
    else:
        tagged = [
            i for i, (t, s) in enumerate(zip(mesh.facet_tags, mesh.facet_segments))
            if t == "dirichlet_flow" and (kind not in ("Phi_open", "Phi_1", "Phi_gt1") or not s.startswith("fracture"))
        ]
        constrained_vertices = np.unique(mesh.facets[tagged].ravel()) if tagged else np.zeros(0, dtype=int)
        if kind == "Gamma_P1":
            ends = [mesh.normal_columns[0, 0], mesh.normal_columns[-1, 0]]
            constrained_vertices = [v for v, tag in zip(ends, mesh.gamma_boundary_tags) if tag == "dirichlet"]
    mask = np.zeros(n_nodes * ncomp, dtype=bool)
    cn = node[np.asarray(constrained_vertices, dtype=int)]
    cn = cn[cn >= 0]
    for c in range(ncomp):
        mask[cn * ncomp + c] = True
    return SpaceDescriptor(kind=kind, mesh=mesh, ncomp=ncomp, node_of_vertex=node, n_nodes=n_nodes, dirichlet_mask=mask)


def vertex_values(space: SpaceDescriptor, coeffs: np.ndarray) -> np.ndarray:
    """Nodal values per mesh vertex (NaN where the space has no unknown)."""
    dm = space.dof_map
    out = np.full(dm.shape, np.nan)
    ok = dm >= 0
    out[ok] = np.asarray(coeffs)[dm[ok]]
    return out[:, 0] if space.ncomp == 1 else out


def interpolate(space: SpaceDescriptor, fn, t: float = 0.0, prefer=(PLUS, MINUS, FRACTURE)) -> np.ndarray:
    """Nodal interpolant; shared nodes take the value of the first subdomain in ``prefer``."""
    mesh = space.mesh
    vals = np.asarray(fn(mesh.vertices, t), dtype=float) if not isinstance(fn, Mapping) else None
    out = np.zeros(space.n_dofs)
    dm = space.dof_map
    for sub in reversed(prefer):
        ids = np.flatnonzero((mesh.vertex_subdomain == sub) & (dm[:, 0] >= 0))
        if isinstance(fn, Mapping):
            v = np.asarray(fn[sub](mesh.vertices[ids], t), dtype=float)
        else:
            v = vals[ids]
        v = v.reshape(len(ids), space.ncomp)
        for c in range(space.ncomp):
            out[dm[ids, c]] = v[:, c]
    return out


# ---------------------------------------------------------------------------
# element geometry


def element_gradients(mesh: FracturedMesh, tris: np.ndarray | None = None):
    """Areas ``(nt,)`` and P1 basis gradients ``(nt, 3, 2)``."""
    if tris is None:
        tris = np.arange(len(mesh.triangles))
    p = mesh.vertices[mesh.triangles[tris]]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)  # columns are edges
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1] / det
    inv[:, 0, 1] = -J[:, 0, 1] / det
    inv[:, 1, 0] = -J[:, 1, 0] / det
    inv[:, 1, 1] = J[:, 0, 0] / det
    g1, g2 = inv[:, 0, :], inv[:, 1, :]
    grads = np.stack([-(g1 + g2), g1, g2], axis=1)
    return 0.5 * det, grads


def _quad_points(mesh: FracturedMesh, tris: np.ndarray) -> np.ndarray:
    p = mesh.vertices[mesh.triangles[tris]]
    return np.einsum("qa,tad->tqd", _QUAD_BARY, p)


def _sample(fn, pts: np.ndarray, t: float = 0.0) -> np.ndarray:
    nt, nq = pts.shape[:2]
    v = np.asarray(fn(pts.reshape(-1, 2), t), dtype=float)
    return v.reshape((nt, nq) + v.shape[1:])


def eval_scaled_gradient(mesh: FracturedMesh, coeffs: np.ndarray, element: int, epsilon: float) -> np.ndarray:
    """ε-scaled gradient (scalar field) or Jacobian ``(∇v)_{ij} = ∂_j v_i`` (vector field).

    On fracture elements the normal derivative is divided by ε; bulk elements
    return the plain gradient.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    _, grads = element_gradients(mesh, np.array([element]))
    g = grads[0].copy()
    if mesh.triangle_subdomain[element] == FRACTURE:
        g[:, 0] /= epsilon
    vals = np.asarray(coeffs, dtype=float)[mesh.triangles[element]]
    if vals.ndim == 1:
        return vals @ g
    return vals.T @ g


def scaled_strain(jacobian: np.ndarray) -> np.ndarray:
    return 0.5 * (jacobian + np.swapaxes(jacobian, -1, -2))


# ---------------------------------------------------------------------------
# sparse systems


@dataclass(frozen=True, eq=False)
class SparseSystem:
    matrix: sp.csr_matrix | None
    rhs: np.ndarray

    @property
    def size(self) -> int:
        return len(self.rhs)


@dataclass(frozen=True)
class FormSpec:
    name: str
    epsilon: float | None = None
    exponents: ScalingExponents | None = None
    time: float = 0.0

    def __post_init__(self):
        if self.name in _HAT_FORMS and (self.epsilon is None or self.exponents is None):
            raise ValueError(f"form {self.name} needs epsilon and exponents")
        if self.name not in _HAT_FORMS and self.epsilon is not None:
            raise ValueError(f"form {self.name} carries no fracture prefactor; epsilon must be absent")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


_HAT_FORMS = ("A_hat", "B_hat", "C_hat", "D_hat", "L_hat", "Q_hat")
_BULK_FORMS = ("A_b0", "B_b0", "C_b0", "D_b0", "L_b0", "Q_b0")
_EFFECTIVE_FORMS = (
    "fracture_normal_stiffness", "fracture_normal_conductivity", "fracture_storage",
    "coupling_alpha_eff", "fracture_mech_load", "fracture_flow_load",
    "interface_mass_jump", "interface_stress_jump", "interface_alpha_jump", "interface_alpha_eff_jump",
    "interface_mech_load",
    "gamma_stiffness", "gamma_mass", "reduced_barrier_coupling", "reduced_barrier_load",
)
FORM_NAMES = _HAT_FORMS + _BULK_FORMS + _EFFECTIVE_FORMS


def _coo(rows, cols, vals, shape) -> sp.csr_matrix:
    rows = np.asarray(rows).ravel()
    cols = np.asarray(cols).ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    keep = (rows >= 0) & (cols >= 0)
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=shape)


def _vec(rows, vals, n) -> np.ndarray:
    rows = np.asarray(rows).ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    keep = rows >= 0
    return np.bincount(rows[keep], weights=vals[keep], minlength=n)


def _triangle_dofs(space: SpaceDescriptor, tris: np.ndarray) -> np.ndarray:
    """``(nt, 3, ncomp)`` dofs of the triangle vertices."""
    return space.dof_map[space.mesh.triangles[tris]]


def _fracture_scales(exp: ScalingExponents, eps: float) -> dict[str, float | np.ndarray]:
    p = lambda nu: eps ** (float(nu) + 1.0)
    return {
        "C": p(exp.nu_C),
        "K": p(exp.nu_K),
        "omega": p(exp.nu_omega),
        "f": p(exp.nu_f),
        "q": p(exp.nu_q),
        "alpha": np.diag([p(exp.nu_alpha_perp), p(exp.nu_alpha_par)]),
    }


def _gravity_potential(mesh: FracturedMesh, sub: int, pts: np.ndarray, g: np.ndarray, eps: float | None) -> np.ndarray:
    """Transformed gravitational potential at points of subdomain ``sub``.

    ``eps=None`` gives the ε → 0 limit (bulk ``x·g``; fracture drops the
    normal coordinate).  The bulk shift uses the local aperture ``a_±(y)``.
    """
    x = pts[..., 0]
    y = pts[..., 1]
    geo = mesh.geometry
    if sub == FRACTURE:
        xs = np.zeros_like(x) if eps is None else eps * x
    elif eps is None:
        xs = x
    elif sub == PLUS:
        xs = x + eps * geo.aperture_plus(y)
    else:
        xs = x - eps * geo.aperture_minus(y)
    return xs * g[0] + y * g[1]


def _bulk_or_full(
    name: str,
    trial: SpaceDescriptor,
    test: SpaceDescriptor,
    materials: MaterialFields,
    eps: float | None,
    exp: ScalingExponents | None,
    t: float,
) -> SparseSystem:
    mesh = test.mesh
    subs = (PLUS, MINUS, FRACTURE) if eps is not None else (PLUS, MINUS)
    base = name[0]
    shape = (test.n_dofs, trial.n_dofs)
    mats, rhs = [], np.zeros(test.n_dofs)
    g = np.asarray(materials.gravity, dtype=float)
    for sub in subs:
        tris = mesh.subdomain_triangles(sub)
        if len(tris) == 0:
            continue
        mat = materials.of(sub)
        area, grads = element_gradients(mesh, tris)
        pts = _quad_points(mesh, tris)
        scale = _fracture_scales(exp, eps) if sub == FRACTURE else None
        if scale is not None:
            grads = grads.copy()
            grads[:, :, 0] /= eps
        wq = area[:, None] * _QUAD_W[None, :]  # (nt, nq)
        if base == "A":
            C = np.einsum("tq,tqijkl->tijkl", wq, _sample(mat.stiffness, pts))
            if scale is not None:
                C = C * scale["C"]
            loc = np.einsum("tijkl,taj,tbl->taibk", C, grads, grads)
            dv = _triangle_dofs(test, tris)
            du = _triangle_dofs(trial, tris)
            r = np.broadcast_to(dv[:, :, :, None, None], loc.shape)
            c = np.broadcast_to(du[:, None, None, :, :], loc.shape)
            mats.append(_coo(r, c, loc, shape))
        elif base == "B":
            alpha = _sample(mat.biot, pts)
            if scale is not None:
                alpha = np.einsum("ij,tqjk->tqik", scale["alpha"], alpha)
            # ∫ p_b (Mα) : ∇v_{a,i} = Σ_q w φ_b(x_q) (Mα G_a)_i
            loc = np.einsum("tq,qb,tqij,taj->taib", wq, _QUAD_BARY, alpha, grads)
            dv = _triangle_dofs(test, tris)
            dp = _triangle_dofs(trial, tris)[:, :, 0]
            r = np.broadcast_to(dv[:, :, :, None], loc.shape)
            c = np.broadcast_to(dp[:, None, None, :], loc.shape)
            mats.append(_coo(r, c, loc, shape))
        elif base == "C":
            w = _sample(mat.storage, pts)
            if scale is not None:
                w = w * scale["omega"]
            loc = np.einsum("tq,tq,qa,qb->tab", wq, w, _QUAD_BARY, _QUAD_BARY)
            d = _triangle_dofs(test, tris)[:, :, 0]
            dt_ = _triangle_dofs(trial, tris)[:, :, 0]
            mats.append(_coo(np.broadcast_to(d[:, :, None], loc.shape), np.broadcast_to(dt_[:, None, :], loc.shape), loc, shape))
        elif base == "D":
            K = np.einsum("tq,tqij->tij", wq, _sample(mat.conductivity, pts))
            if scale is not None:
                K = K * scale["K"]
            loc = np.einsum("tij,taj,tbi->tab", K, grads, grads)
            d = _triangle_dofs(test, tris)[:, :, 0]
            dt_ = _triangle_dofs(trial, tris)[:, :, 0]
            mats.append(_coo(np.broadcast_to(d[:, :, None], loc.shape), np.broadcast_to(dt_[:, None, :], loc.shape), loc, shape))
        elif base == "L":
            f = _sample(mat.body_force, pts, t)
            if scale is not None:
                f = f * scale["f"]
            loc = np.einsum("tq,tqi,qa->tai", wq, f, _QUAD_BARY)
            alpha = _sample(mat.biot, pts)
            if scale is not None:
                alpha = np.einsum("ij,tqjk->tqik", scale["alpha"], alpha)
            G = _gravity_potential(mesh, sub, pts, g, eps)
            loc = loc + np.einsum("tq,tq,tqij,taj->tai", wq, G, alpha, grads)
            rhs += _vec(_triangle_dofs(test, tris), loc, test.n_dofs)
        elif base == "Q":
            q = _sample(mat.source, pts, t)
            if scale is not None:
                q = q * scale["q"]
            loc = np.einsum("tq,tq,qa->ta", wq, q, _QUAD_BARY)
            rhs += _vec(_triangle_dofs(test, tris)[:, :, 0], loc, test.n_dofs)
    if base in ("L", "Q"):
        return SparseSystem(None, rhs)
    matrix = sum(mats[1:], mats[0]) if mats else sp.csr_matrix(shape)
    return SparseSystem(matrix.tocsr(), rhs)


# ---------------------------------------------------------------------------
# column-wise (normal-only) fracture forms and interface forms


def _column_dofs(space: SpaceDescriptor) -> np.ndarray:
    """``(ny + 1, ns + 1, ncomp)`` dofs along every normal column."""
    return space.dof_map[space.mesh.normal_columns]


def _effective_form(
    name: str,
    trial: SpaceDescriptor,
    test: SpaceDescriptor,
    eff: EffectiveParams,
    t: float,
) -> SparseSystem:
    mesh = test.mesh
    w = mesh.gamma_weights  # (ncol,)
    l = mesh.column_lengths  # (ncol, ns)
    shape = (test.n_dofs, trial.n_dofs)
    stencil = np.array([[1.0, -1.0], [-1.0, 1.0]])
    sign = np.array([-1.0, 1.0])

    if name == "fracture_normal_stiffness":
        cd = _column_dofs(test)
        ct = _column_dofs(trial)
        # local (col, seg, a, i, b, k)
        loc = np.einsum("j,js,ab,jsik->jsaibk", w, 1.0 / l, stencil, eff.C_f_N)
        r = np.stack([cd[:, :-1], cd[:, 1:]], axis=2)  # (col, seg, 2, ncomp)
        c = np.stack([ct[:, :-1], ct[:, 1:]], axis=2)
        R = np.broadcast_to(r[:, :, :, :, None, None], loc.shape)
        C = np.broadcast_to(c[:, :, None, None, :, :], loc.shape)
        return SparseSystem(_coo(R, C, loc, shape), np.zeros(test.n_dofs))

    if name in ("fracture_normal_conductivity", "fracture_storage"):
        cd = _column_dofs(test)[..., 0]
        ct = _column_dofs(trial)[..., 0]
        if name == "fracture_normal_conductivity":
            loc = np.einsum("j,js,ab->jsab", w, eff.K_f_N / l, stencil)
        else:
            mass = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
            loc = np.einsum("j,js,ab->jsab", w, eff.omega_f_eff * l, mass)
        r = np.stack([cd[:, :-1], cd[:, 1:]], axis=2)
        c = np.stack([ct[:, :-1], ct[:, 1:]], axis=2)
        R = np.broadcast_to(r[:, :, :, None], loc.shape)
        C = np.broadcast_to(c[:, :, None, :], loc.shape)
        return SparseSystem(_coo(R, C, loc, shape), np.zeros(test.n_dofs))

    if name == "coupling_alpha_eff":
        # ⟨φ α_eff, ∂_N v⟩ on columns: test is the displacement space
        cd = _column_dofs(test)
        ct = _column_dofs(trial)[..., 0]
        loc = np.einsum("j,a,b,jsi->jsaib", w, sign, np.full(2, 0.5), eff.alpha_f_eff)
        r = np.stack([cd[:, :-1], cd[:, 1:]], axis=2)
        c = np.stack([ct[:, :-1], ct[:, 1:]], axis=2)
        R = np.broadcast_to(r[:, :, :, :, None], loc.shape)
        C = np.broadcast_to(c[:, :, None, None, :], loc.shape)
        return SparseSystem(_coo(R, C, loc, shape), np.zeros(test.n_dofs))

    if name == "fracture_mech_load":
        cd = _column_dofs(test)
        f = eff.f_f_eff(t)
        loc = np.einsum("j,js,a,jsi->jsai", w, l, np.full(2, 0.5), f)
        if eff.regime.fracture_stress_has_pressure:
            loc = loc + np.einsum("j,j,a,jsi->jsai", w, eff.gravity_gamma, sign, eff.alpha_f_eff)
        r = np.stack([cd[:, :-1], cd[:, 1:]], axis=2)
        return SparseSystem(None, _vec(r, loc, test.n_dofs))

    if name == "fracture_flow_load":
        cd = _column_dofs(test)[..., 0]
        q = eff.q_f_eff(t)
        loc = np.einsum("j,js,a,js->jsa", w, l, np.full(2, 0.5), q)
        r = np.stack([cd[:, :-1], cd[:, 1:]], axis=2)
        return SparseSystem(None, _vec(r, loc, test.n_dofs))

    plus_t = trial.dof_map[mesh.gamma_plus]
    minus_t = trial.dof_map[mesh.gamma_minus]
    plus_v = test.dof_map[mesh.gamma_plus]
    minus_v = test.dof_map[mesh.gamma_minus]
    a = eff.apertures

    if name in ("interface_mass_jump", "interface_stress_jump"):
        if name == "interface_mass_jump":
            coef = (w * eff.K_gamma_N / a)[:, None, None]
        else:
            coef = w[:, None, None] * eff.C_gamma_N / a[:, None, None]
        rows, cols, vals = [], [], []
        for sv, dv in ((1.0, plus_v), (-1.0, minus_v)):
            for su, du in ((1.0, plus_t), (-1.0, minus_t)):
                # coef[j, i, k] couples test comp i with trial comp k
                rows.append(np.broadcast_to(dv[:, :, None], coef.shape))
                cols.append(np.broadcast_to(du[:, None, :], coef.shape))
                vals.append(sv * su * coef)
        return SparseSystem(_coo(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), shape), np.zeros(test.n_dofs))

    if name in ("interface_alpha_jump", "interface_alpha_eff_jump"):
        # ⟨α p_γ, ⟦v⟧⟩_γ with p_γ read from the column dof of the trial space;
        # α is α_γ, or the column value of α_f^eff for the flow-side coupling
        pg = trial.dof_map[mesh.normal_columns[:, 0], 0]
        alpha = eff.alpha_gamma if name == "interface_alpha_jump" else eff.alpha_f_eff[:, 0, :]
        coef = w[:, None] * alpha
        rows = np.concatenate([plus_v, minus_v])
        cols = np.concatenate([np.broadcast_to(pg[:, None], plus_v.shape)] * 2)
        vals = np.concatenate([coef, -coef])
        return SparseSystem(_coo(rows, cols, vals, shape), np.zeros(test.n_dofs))

    if name == "interface_mech_load":
        # ⟨a 𝔄_N f, v_-⟩ + ⟨F_γ, ⟦v⟧⟩ + ⟨G α_γ, ⟦v⟧⟩
        jump = eff.F_gamma_eff(t)
        if eff.regime.fracture_stress_has_pressure:
            jump = jump + eff.gravity_gamma[:, None] * eff.alpha_gamma
        rhs = _vec(minus_v, w[:, None] * eff.integrated_body_force(t), test.n_dofs)
        rhs += _vec(plus_v, w[:, None] * jump, test.n_dofs)
        rhs -= _vec(minus_v, w[:, None] * jump, test.n_dofs)
        return SparseSystem(None, rhs)

    if name == "reduced_barrier_load":
        # ⟨a 𝔄_N q, φ_-⟩ + ⟨Q_γ, ⟦φ⟧⟩
        Q = eff.Q_gamma_eff(t)
        rhs = _vec(minus_v[:, 0], w * eff.integrated_source(t), test.n_dofs)
        rhs += _vec(plus_v[:, 0], w * Q, test.n_dofs)
        rhs -= _vec(minus_v[:, 0], w * Q, test.n_dofs)
        return SparseSystem(None, rhs)

    if name == "reduced_barrier_coupling":
        # α_γ · [φ_+ u_f(a_+) - φ_- u_f(-a_-) - ⟦φ⟧ 𝔄_N u_f]; test pressure, trial displacement
        ct = _column_dofs(trial)  # (ncol, ns + 1, 2)
        alpha = eff.alpha_f_eff[:, 0, :]  # constant per column
        avg_w = np.zeros(ct.shape[:2])
        avg_w[:, :-1] += 0.5 * l
        avg_w[:, 1:] += 0.5 * l
        avg_w /= a[:, None]
        rows, cols, vals = [], [], []
        for phi, sgn in ((plus_v[:, 0], 1.0), (minus_v[:, 0], -1.0)):
            end = ct[:, -1] if sgn > 0 else ct[:, 0]
            rows.append(np.broadcast_to(phi[:, None], end.shape))
            cols.append(end)
            vals.append(sgn * w[:, None] * alpha)
            R = np.broadcast_to(phi[:, None, None], ct.shape)
            rows.append(R)
            cols.append(ct)
            vals.append(-sgn * (w[:, None, None] * avg_w[:, :, None] * alpha[:, None, :]))
        return SparseSystem(_coo(np.concatenate([r.ravel() for r in rows]), np.concatenate([c.ravel() for c in cols]),
                                 np.concatenate([v.ravel() for v in vals]), shape), np.zeros(test.n_dofs))

    if name in ("gamma_stiffness", "gamma_mass"):
        gd = test.dof_map[mesh.normal_columns[:, 0], 0]
        gt = trial.dof_map[mesh.normal_columns[:, 0], 0]
        if name == "gamma_stiffness":
            coef_v = a * eff.K_gamma_t
            dy = np.diff(mesh.gamma_y)
            cseg = 0.5 * (coef_v[1:] + coef_v[:-1]) / dy
            loc = cseg[:, None, None] * stencil[None]
            r = np.stack([gd[:-1], gd[1:]], axis=1)
            c = np.stack([gt[:-1], gt[1:]], axis=1)
            return SparseSystem(_coo(np.broadcast_to(r[:, :, None], loc.shape), np.broadcast_to(c[:, None, :], loc.shape), loc, shape),
                                np.zeros(test.n_dofs))
        coef = w * np.einsum("js,js->j", l, eff.omega_f_eff)
        return SparseSystem(_coo(gd, gt, coef, shape), np.zeros(test.n_dofs))

    raise ValueError(f"unknown form {name!r}")


def assemble(
    form: FormSpec,
    trial: SpaceDescriptor,
    test: SpaceDescriptor,
    materials: MaterialFields,
    effective: EffectiveParams | None = None,
) -> SparseSystem:
    """Assemble a named bilinear (matrix) or linear (rhs) form.

    Rows follow the test space and columns the trial space.  For the Biot
    coupling forms the trial space is the pressure space and the test space
    the displacement space, i.e. the matrix maps pressures to displacement
    residuals.
    """
    if trial.mesh is not test.mesh:
        raise ValueError("trial and test spaces live on different meshes")
    name = form.name
    if name in _HAT_FORMS:
        return _bulk_or_full(name, trial, test, materials, form.epsilon, form.exponents, form.time)
    if name in _BULK_FORMS:
        return _bulk_or_full(name, trial, test, materials, None, None, form.time)
    if name in _EFFECTIVE_FORMS:
        if effective is None:
            raise ValueError(f"form {name} needs effective parameters")
        return _effective_form(name, trial, test, effective, form.time)
    raise ValueError(f"unknown form {name!r}")


def apply_constraints(system: SparseSystem, space: SpaceDescriptor, values: Mapping[int, float] | np.ndarray | None = None) -> SparseSystem:
    """Symmetric elimination of the Dirichlet dofs of ``space``.

    ``values`` gives prescribed values (default zero) either as a full-length
    array or as ``{dof: value}``; giving a value for an unconstrained dof is an
    error.
    """
    mask = space.dirichlet_mask
    n = len(mask)
    g = np.zeros(n)
    if values is not None:
        if isinstance(values, Mapping):
            for dof, val in values.items():
                if not mask[dof]:
                    raise ValueError(f"dof {dof} is not constrained")
                g[dof] = val
        else:
            values = np.asarray(values, dtype=float)
            if np.any(values[~mask] != 0):
                raise ValueError("boundary values given for unconstrained dofs")
            g = np.where(mask, values, 0.0)
    keep = sp.diags((~mask).astype(float))
    A = system.matrix.tocsr()
    rhs = system.rhs - A @ g
    rhs = np.where(mask, g, rhs)
    A = keep @ A @ keep + sp.diags(mask.astype(float))
    return SparseSystem(A.tocsr(), rhs)


def constraint_projector(mask: np.ndarray):
    """Matrices that zero the constrained rows/cols and put 1 on their diagonal."""
    keep = sp.diags((~mask).astype(float))
    return keep, sp.diags(mask.astype(float))


# ---------------------------------------------------------------------------
# norms


NORM_KINDS = (
    "L2_bulk", "H1_bulk", "L2_frac", "HN1_frac", "H1_frac", "L2_gamma",
    "L2_time_composite", "H1_time_composite",
    # extra quantities used by the convergence checks
    "L2_all", "grad_all", "strain_all", "E_par_frac", "grad_par_frac", "grad_normal_frac",
)


def _subdomains_for(kind: str):
    if kind.endswith("_bulk"):
        return (PLUS, MINUS)
    if kind.endswith("_frac"):
        return (FRACTURE,)
    return (PLUS, MINUS, FRACTURE)


def triangle_gradients(mesh: FracturedMesh, values: np.ndarray, epsilon: float | None = None) -> np.ndarray:
    """Per-triangle gradient ``(nt, 2)`` or Jacobian ``(nt, ncomp, 2)``; ε-scaled in the fracture if given."""
    _, grads = element_gradients(mesh)
    if epsilon is not None:
        grads = grads.copy()
        grads[mesh.triangle_subdomain == FRACTURE, :, 0] /= epsilon
    v = np.asarray(values, dtype=float)[mesh.triangles]
    if v.ndim == 2:
        return np.einsum("ta,tad->td", v, grads)
    return np.einsum("tai,tad->tid", v, grads)


def _spatial_sq(mesh: FracturedMesh, values: np.ndarray, kind: str, weights, epsilon, seminorm) -> float:
    areas = mesh.triangle_areas()
    subs = _subdomains_for(kind)
    wsub = np.ones(3)
    if weights:
        for key, val in weights.items():
            wsub[key] = val
    tw = wsub[mesh.triangle_subdomain] ** 2
    sel = np.isin(mesh.triangle_subdomain, subs)
    v = np.asarray(values, dtype=float)
    total = 0.0
    if kind in ("L2_bulk", "L2_frac", "L2_all") or (kind in ("H1_bulk", "H1_frac", "HN1_frac") and not seminorm):
        tv = v[mesh.triangles[sel]]  # (nt, 3[, ncomp])
        if tv.ndim == 2:
            tv = tv[..., None]
        s = (tv**2).sum(axis=1) + tv.sum(axis=1) ** 2  # (nt, ncomp)
        total += float((areas[sel] * tw[sel] * s.sum(axis=1) / 12.0).sum())
    if kind in ("H1_bulk", "H1_frac", "HN1_frac", "grad_all", "strain_all", "E_par_frac", "grad_par_frac", "grad_normal_frac"):
        G = triangle_gradients(mesh, v, epsilon if kind in ("grad_all", "strain_all", "H1_frac") else None)[sel]
        if kind in ("HN1_frac", "grad_normal_frac"):
            G = G[..., 0]
        elif kind == "grad_par_frac":
            G = G[..., 1]
        elif kind == "strain_all":
            G = scaled_strain(G)
        elif kind == "E_par_frac":
            par = np.zeros_like(G)
            par[..., 1] = G[..., 1]
            G = scaled_strain(par)
        sq = (G**2).reshape(len(G), -1).sum(axis=1)
        total += float((areas[sel] * tw[sel] * sq).sum())
    return total


def compute_norm(
    mesh: FracturedMesh,
    values: np.ndarray,
    kind: str,
    weights: Mapping[int, float] | None = None,
    epsilon: float | None = None,
    times: np.ndarray | None = None,
    spatial: str | None = None,
    seminorm: bool = False,
) -> float:
    """Discrete norm of nodal P1 data (indexed by mesh vertex).

    * ``L2_gamma`` expects values at the gamma vertices.
    * Time composites expect ``values`` of shape ``(n_times, ...)`` and a
      ``spatial`` kind; time integrals use the trapezoidal rule and time
      derivatives backward differences on the given grid.
    * ``weights`` multiplies the integrand per subdomain (e.g. ε-powers).
    * ``epsilon`` switches fracture gradients to the ε-scaled gradient for
      ``H1_frac``, ``grad_all`` and ``strain_all``.
    """
    if kind not in NORM_KINDS:
        raise ValueError(f"unknown norm kind {kind!r}")
    if kind == "L2_gamma":
        v = np.asarray(values, dtype=float)
        if v.shape[0] != mesh.n_gamma:
            raise ValueError("L2_gamma expects one value per gamma vertex")
        if v.ndim == 1:
            v = v[:, None]
        dy = np.diff(mesh.gamma_y)
        a, b = v[:-1], v[1:]
        return float(np.sqrt((dy[:, None] * (a * a + a * b + b * b) / 3.0).sum()))
    if kind in ("L2_time_composite", "H1_time_composite"):
        if times is None or spatial is None:
            raise ValueError("time composites need times and a spatial kind")
        v = np.asarray(values, dtype=float)
        if v.shape[0] != len(times):
            raise ValueError("values and time grid do not match")
        sq = np.array([_spatial_sq(mesh, vk, spatial, weights, epsilon, seminorm) for vk in v])
        total = float(np.trapezoid(sq, times)) if hasattr(np, "trapezoid") else float(np.trapz(sq, times))
        if kind == "H1_time_composite":
            dts = np.diff(times)
            dv = np.diff(v, axis=0) / dts.reshape((-1,) + (1,) * (v.ndim - 1))
            dsq = np.array([_spatial_sq(mesh, d, spatial, weights, epsilon, seminorm) for d in dv])
            total += float((dsq * dts).sum())
        return float(np.sqrt(total))
    return float(np.sqrt(_spatial_sq(mesh, values, kind, weights, epsilon, seminorm)))
