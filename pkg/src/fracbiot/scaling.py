"""Scaling exponents, regime classification, effective coefficients and averaging."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from enum import Enum
from fractions import Fraction
from typing import Callable, Mapping

import numpy as np

from .materials import MaterialFields
from .mesh import FRACTURE, NORMAL, FracturedMesh, Geometry

# 3-point Gauss-Legendre rule on [0, 1], exact up to degree 5
_GAUSS_X = 0.5 + 0.5 * np.array([-np.sqrt(3 / 5), 0.0, np.sqrt(3 / 5)])
_GAUSS_W = np.array([5 / 18, 8 / 18, 5 / 18])


def as_fraction(value) -> Fraction:
    """Exact rational from an int, a ``"p/q"`` string, a Fraction or a float.

    Floats are converted bit-exactly, so ``-1 + 1e-9`` stays distinct from -1.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("exponent cannot be a bool")
    if isinstance(value, (int, float, str)):
        return Fraction(value)
    raise TypeError(f"cannot read exponent from {value!r}")


@dataclass(frozen=True)
class ScalingExponents:
    nu_C: Fraction
    nu_K: Fraction
    nu_omega: Fraction
    nu_alpha_par: Fraction
    nu_alpha_perp: Fraction
    nu_f: Fraction
    nu_q: Fraction

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, as_fraction(getattr(self, f.name)))

    @classmethod
    def coupling_active(cls, nu_C=1, nu_K=0) -> "ScalingExponents":
        """Exponents that switch on every fracture term for the given (ν_C, ν_K)."""
        nu_C = as_fraction(nu_C)
        half = (max(nu_C, Fraction(0)) - 1) / 2
        return cls(
            nu_C=nu_C,
            nu_K=nu_K,
            nu_omega=-1,
            nu_alpha_par=half,
            nu_alpha_perp=(nu_C - 1) / 2,
            nu_f=(nu_C - 3) / 2,
            nu_q=-1,
        )

    def as_strings(self) -> dict[str, str]:
        return {f.name: str(getattr(self, f.name)) for f in fields(self)}


def iota(nu) -> float:
    return 0.5 * (float(nu) + 1.0)


def theta(nu) -> float:
    """Displacement scaling exponent, clipped at zero as in the a priori bounds."""
    return max(0.0, 0.5 * (float(nu) - 1.0))


class FlowRegime(str, Enum):
    IDEAL_CONDUIT = "IdealConduit"
    CONDUIT = "Conduit"
    NEUTRAL = "Neutral"
    BARRIER = "Barrier"
    WALL = "Wall"


class MechRegime(str, Enum):
    SOFT = "Soft"
    VERY_SOFT = "VerySoft"


@dataclass(frozen=True)
class RegimeDescriptor:
    flow: FlowRegime
    mech: MechRegime
    storage_present: bool
    biot_coupled: bool
    flow_source_present: bool
    mech_source_present: bool
    W_is_zero: bool
    exponents: ScalingExponents

    @property
    def fracture_stress_has_pressure(self) -> bool:
        """Whether the limit fracture stress keeps the pore-pressure contribution."""
        return self.biot_coupled and (self.exponents.nu_K <= 1 or self.storage_present)


class ExponentError(ValueError):
    """Raised when exponents violate the admissibility clauses; lists every failure."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


def classify_flow(nu_K: Fraction) -> FlowRegime:
    if nu_K < -1:
        return FlowRegime.IDEAL_CONDUIT
    if nu_K == -1:
        return FlowRegime.CONDUIT
    if nu_K < 1:
        return FlowRegime.NEUTRAL
    if nu_K == 1:
        return FlowRegime.BARRIER
    return FlowRegime.WALL


def validate_exponents(exp: ScalingExponents, geometry: Geometry) -> RegimeDescriptor:
    """Check the admissibility clauses and classify the limit regime."""
    e = exp
    bad: list[str] = []
    if not e.nu_omega >= -1:
        bad.append("3.5(i): storage exponent must satisfy nu_omega >= -1")
    if not (2 * e.nu_q >= e.nu_omega - 1 or (2 * e.nu_q >= e.nu_K - 3 and e.nu_q >= -1)):
        bad.append("3.5(iv): need 2 nu_q >= nu_omega - 1, or 2 nu_q >= nu_K - 3 together with nu_q >= -1")
    if not (2 * e.nu_f >= e.nu_C - 3 and e.nu_f >= -1):
        bad.append("3.5(v): need 2 nu_f >= nu_C - 3 and nu_f >= -1")
    floor = max(e.nu_C, Fraction(0)) - 1
    if not (2 * e.nu_alpha_par >= floor and 2 * e.nu_alpha_perp >= floor):
        bad.append("3.5(vi): need 2 nu_alpha_par and 2 nu_alpha_perp >= max(nu_C, 0) - 1")
    sides = geometry.dirichlet_sides()
    if e.nu_K > 1 and sides != {"plus", "minus"}:
        bad.append("3.5(vii): both sides need flow-Dirichlet when nu_K > 1")
    if not sides:
        bad.append("3.5(vii): at least one bulk side needs a flow-Dirichlet segment")
    if not e.nu_C >= 1:
        bad.append("nu_C >= 1: limit models with nu_C < 1 are not implemented")
    if bad:
        raise ExponentError(bad)

    return RegimeDescriptor(
        flow=classify_flow(e.nu_K),
        mech=MechRegime.SOFT if e.nu_C == 1 else MechRegime.VERY_SOFT,
        storage_present=e.nu_omega == -1,
        biot_coupled=2 * e.nu_alpha_perp == e.nu_C - 1,
        flow_source_present=e.nu_q == -1,
        mech_source_present=2 * e.nu_f == e.nu_C - 3,
        W_is_zero=geometry.fracture_has_dirichlet(),
        exponents=e,
    )


# ---------------------------------------------------------------------------
# averaging operators


def column_midpoints(mesh: FracturedMesh) -> np.ndarray:
    """Segment midpoints ``(ny + 1, ns, 2)`` of every normal column."""
    p = mesh.vertices[mesh.normal_columns]
    return 0.5 * (p[:, 1:] + p[:, :-1])


def _column_gauss_points(mesh: FracturedMesh):
    p = mesh.vertices[mesh.normal_columns]
    a, b = p[:, :-1], p[:, 1:]
    pts = a[:, :, None, :] + _GAUSS_X[None, None, :, None] * (b - a)[:, :, None, :]
    return pts


def average_normal(mesh: FracturedMesh, values) -> np.ndarray:
    """Normal average ``a(y)^{-1} ∫ f(y + sN) ds`` at every gamma vertex.

    ``values`` is either an array of nodal values (indexed by mesh vertex,
    integrated exactly as P1 data) or a callable of fracture points
    (integrated by 3-point Gauss per column segment).
    """
    lengths = mesh.column_lengths
    if np.any(lengths.sum(axis=1) <= 0):
        raise ValueError("empty normal column")
    if callable(values):
        pts = _column_gauss_points(mesh)
        shape = pts.shape[:3]
        f = np.asarray(values(pts.reshape(-1, 2)), dtype=float)
        f = f.reshape(shape + f.shape[1:])
        seg = np.einsum("q,jkq...->jk...", _GAUSS_W, f)
    else:
        v = np.asarray(values, dtype=float)[mesh.normal_columns]
        seg = 0.5 * (v[:, 1:] + v[:, :-1])
    lw = lengths.reshape(lengths.shape + (1,) * (seg.ndim - 2))
    return (seg * lw).sum(axis=1) / mesh.apertures.reshape((-1,) + (1,) * (seg.ndim - 2))


def average_fracture(mesh: FracturedMesh, values) -> float:
    """Fracture average ``∫_{Ω_f} f dx / ∫_γ a``."""
    tris = mesh.subdomain_triangles(FRACTURE)
    areas = mesh.triangle_areas()[tris]
    p = mesh.vertices[mesh.triangles[tris]]
    if callable(values):
        # degree-2 edge-midpoint rule
        mids = 0.5 * (p + p[:, [1, 2, 0]])
        f = np.asarray(values(mids.reshape(-1, 2)), dtype=float).reshape(len(tris), 3)
        integral = (areas * f.mean(axis=1)).sum()
    else:
        v = np.asarray(values, dtype=float)[mesh.triangles[tris]]
        integral = (areas * v.mean(axis=1)).sum()
    return float(integral / areas.sum())


# ---------------------------------------------------------------------------
# effective coefficients


def normal_stiffness(C: np.ndarray, normal=NORMAL) -> np.ndarray:
    """``(C^N)_{ik} = Σ_{jl} C_{ijkl} N_j N_l`` for a stack of tensors."""
    return np.einsum("...ijkl,j,l->...ik", C, normal, normal)


def _nested(lengths, inv_coeff, source):
    """``Σ_seg l * (R_i + R_{i+1}) / 2 * source`` with ``R(s) = ∫_{-a_-}^s inv_coeff``.

    Exact for coefficients and sources that are constant on each segment.
    ``inv_coeff`` may be scalar (..., ns) or matrix (..., ns, 2, 2).
    """
    if inv_coeff.ndim == lengths.ndim:
        inc = lengths * inv_coeff
        R = np.concatenate([np.zeros_like(inc[:, :1]), np.cumsum(inc, axis=1)], axis=1)
        mid = 0.5 * (R[:, 1:] + R[:, :-1])
        return np.einsum("js,js,js...->j...", lengths, mid, source)
    inc = lengths[..., None, None] * inv_coeff
    R = np.concatenate([np.zeros_like(inc[:, :1]), np.cumsum(inc, axis=1)], axis=1)
    mid = 0.5 * (R[:, 1:] + R[:, :-1])
    return np.einsum("js,jsik,jsk->ji", lengths, mid, source)


@dataclass(frozen=True, eq=False)
class EffectiveParams:
    """Limit-model coefficients sampled per normal column.

    Fields with a segment axis ``(ny + 1, ns, ...)`` are piecewise constant on
    the column segments; fields on gamma are ``(ny + 1, ...)``.  Source-type
    quantities depend on time and are exposed as methods.
    """

    regime: RegimeDescriptor
    C_f_N: np.ndarray
    C_gamma_N: np.ndarray
    alpha_f_eff: np.ndarray
    alpha_gamma: np.ndarray
    K_f_N: np.ndarray
    K_gamma: np.ndarray  # full 2x2 tensor per gamma vertex
    K_gamma_t: np.ndarray  # tangential action e_2 . K_gamma e_2
    K_gamma_N: np.ndarray
    omega_f_eff: np.ndarray
    apertures: np.ndarray
    gravity_gamma: np.ndarray  # G_f^0 on each column (constant in s)
    _materials: MaterialFields = field(repr=False)
    _midpoints: np.ndarray = field(repr=False)
    _lengths: np.ndarray = field(repr=False)
    _C_inv: np.ndarray = field(repr=False)

    def f_f_eff(self, t: float) -> np.ndarray:
        if not self.regime.mech_source_present:
            return np.zeros(self._midpoints.shape[:2] + (2,))
        return self._sample(self._materials.fracture.body_force, t)

    def q_f_eff(self, t: float) -> np.ndarray:
        if not self.regime.flow_source_present:
            return np.zeros(self._midpoints.shape[:2])
        return self._sample(self._materials.fracture.source, t)

    def F_gamma_eff(self, t: float) -> np.ndarray:
        nested = _nested(self._lengths, self._C_inv, self.f_f_eff(t))
        return np.einsum("jik,jk->ji", self.C_gamma_N, nested) / self.apertures[:, None]

    def Q_gamma_eff(self, t: float) -> np.ndarray:
        nested = _nested(self._lengths, 1.0 / self.K_f_N, self.q_f_eff(t))
        return self.K_gamma_N * nested / self.apertures

    def integrated_body_force(self, t: float) -> np.ndarray:
        """``a 𝔄_N f_f^eff`` at every gamma vertex."""
        return np.einsum("js,jsi->ji", self._lengths, self.f_f_eff(t))

    def integrated_source(self, t: float) -> np.ndarray:
        """``a 𝔄_N q_f^eff`` at every gamma vertex."""
        return np.einsum("js,js->j", self._lengths, self.q_f_eff(t))

    def _sample(self, fn, t):
        pts = self._midpoints
        v = np.asarray(fn(pts.reshape(-1, 2), t), dtype=float)
        return v.reshape(pts.shape[:2] + v.shape[1:])

    def is_alpha_constant_per_column(self, tol=1e-12) -> bool:
        a = self.alpha_f_eff
        return bool(np.all(np.abs(a - a[:, :1]) <= tol * (1.0 + np.abs(a[:, :1]))))

    def is_K_normal_constant_per_column(self, tol=1e-12) -> bool:
        k = self.K_f_N
        return bool(np.all(np.abs(k - k[:, :1]) <= tol * np.abs(k[:, :1])))


def compute_effective(
    materials: MaterialFields,
    exp: ScalingExponents,
    regime: RegimeDescriptor,
    mesh: FracturedMesh,
) -> EffectiveParams:
    mids = column_midpoints(mesh)
    flat = mids.reshape(-1, 2)
    ncol, nseg = mids.shape[:2]
    lengths = mesh.column_lengths
    a = mesh.apertures
    frac = materials.fracture

    C = np.asarray(frac.stiffness(flat), dtype=float).reshape(ncol, nseg, 2, 2, 2, 2)
    C_N = normal_stiffness(C)
    det = np.linalg.det(C_N)
    if np.any(det <= 1e-14 * np.abs(C_N).max() ** 2):
        raise ValueError("normal stiffness C_f^N is not invertible; the fracture stiffness is not elliptic")
    C_inv = np.linalg.inv(C_N)
    C_gamma = np.linalg.inv(np.einsum("js,jsik->jik", lengths, C_inv) / a[:, None, None])

    alpha = np.asarray(frac.biot(flat), dtype=float).reshape(ncol, nseg, 2, 2)
    off = alpha @ NORMAL - (NORMAL @ alpha @ NORMAL)[..., None] * NORMAL
    if np.any(np.abs(off) > 1e-12):
        raise ValueError("fracture Biot tensor must be block-diagonal with respect to the normal")
    alpha_eff = alpha @ NORMAL if regime.biot_coupled else np.zeros((ncol, nseg, 2))
    alpha_gamma = np.einsum("jik,js,jskl,jsl->ji", C_gamma, lengths, C_inv, alpha_eff) / a[:, None]

    K = np.asarray(frac.conductivity(flat), dtype=float).reshape(ncol, nseg, 2, 2)
    KN_vec = K @ NORMAL
    K_N = KN_vec @ NORMAL
    if np.any(K_N <= 0):
        raise ValueError("normal conductivity K_f^N must be positive")
    schur = K - np.einsum("...i,...j->...ij", KN_vec, KN_vec) / K_N[..., None, None]
    K_gamma = np.einsum("js,jsik->jik", lengths, schur) / a[:, None, None]
    K_gamma_t = K_gamma[:, 1, 1]
    K_gamma_N = a / np.einsum("js,js->j", lengths, 1.0 / K_N)

    if regime.flow == FlowRegime.BARRIER and regime.biot_coupled:
        if not np.all(np.abs(K_N - K_N[:, :1]) <= 1e-12 * K_N[:, :1]):
            raise ValueError(
                "coupled barrier regime needs K_f^N constant along each normal column; "
                "refusing to average a varying normal conductivity"
            )

    omega = np.asarray(frac.storage(flat), dtype=float).reshape(ncol, nseg)
    omega_eff = omega if regime.storage_present else np.zeros_like(omega)

    g = np.asarray(materials.gravity, dtype=float)
    gravity_gamma = mesh.gamma_y * g[1]

    return EffectiveParams(
        regime=regime,
        C_f_N=C_N,
        C_gamma_N=C_gamma,
        alpha_f_eff=alpha_eff,
        alpha_gamma=alpha_gamma,
        K_f_N=K_N,
        K_gamma=K_gamma,
        K_gamma_t=K_gamma_t,
        K_gamma_N=K_gamma_N,
        omega_f_eff=omega_eff,
        apertures=a,
        gravity_gamma=gravity_gamma,
        _materials=materials,
        _midpoints=mids,
        _lengths=lengths,
        _C_inv=C_inv,
    )


def export_effective_csv(effective: EffectiveParams, mesh: FracturedMesh, path, t: float = 0.0) -> None:
    """One row per gamma vertex with the interface coefficients."""
    F = effective.F_gamma_eff(t)
    Q = effective.Q_gamma_eff(t)
    header = [
        "y", "aperture",
        "C_gamma_N_xx", "C_gamma_N_xy", "C_gamma_N_yy",
        "K_gamma_t", "K_gamma_N",
        "alpha_gamma_x", "alpha_gamma_y",
        "F_gamma_x", "F_gamma_y", "Q_gamma",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for j, y in enumerate(mesh.gamma_y):
            C = effective.C_gamma_N[j]
            row = [
                y, effective.apertures[j], C[0, 0], C[0, 1], C[1, 1],
                effective.K_gamma_t[j], effective.K_gamma_N[j],
                effective.alpha_gamma[j, 0], effective.alpha_gamma[j, 1],
                F[j, 0], F[j, 1], Q[j],
            ]
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


# ---------------------------------------------------------------------------
# non-dimensionalization


@dataclass(frozen=True)
class ReferenceScales:
    aperture: float  # a*
    length: float  # L*
    conductivity: float  # K_b*
    density: float  # ϱ*
    gravity: float  # g*

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"reference value {f.name} must be positive")

    @property
    def epsilon(self) -> float:
        return self.aperture / self.length

    @property
    def time(self) -> float:
        return self.length / self.conductivity

    def bulk_reference(self) -> dict[str, float]:
        stiffness = self.density * self.gravity * self.length
        return {
            "length": self.length,
            "pressure_head": self.length,
            "displacement": self.length,
            "stiffness": stiffness,
            "body_force": self.density * self.gravity,
            "storage": 1.0 / stiffness,
            "conductivity": self.conductivity,
            "source": self.conductivity / self.length,
            "biot": 1.0,
            "time": self.time,
        }


_FRACTURE_EXPONENT = {
    "stiffness": "nu_C",
    "body_force": "nu_f",
    "storage": "nu_omega",
    "conductivity": "nu_K",
    "source": "nu_q",
}


def _reference_value(scales: ReferenceScales, kind: str, exponents: ScalingExponents | None) -> float:
    base = scales.bulk_reference()
    if kind.startswith("fracture_"):
        name = kind[len("fracture_"):]
        if name not in _FRACTURE_EXPONENT:
            return base[name]
        if exponents is None:
            raise ValueError("fracture quantities need scaling exponents")
        nu = float(getattr(exponents, _FRACTURE_EXPONENT[name]))
        return scales.epsilon**nu * base[name]
    if kind not in base:
        raise ValueError(f"unknown quantity kind {kind!r}")
    return base[kind]


def nondimensionalize(
    scales: ReferenceScales,
    raw: Mapping[str, tuple[str, np.ndarray]],
    final_time: float,
    exponents: ScalingExponents | None = None,
):
    """Return ``(epsilon, dimensionless fields, dimensionless time horizon)``.

    ``raw`` maps a field name to ``(kind, values)``; ``kind`` is one of the
    bulk reference quantities or ``fracture_<quantity>`` for fracture
    coefficients, whose reference value carries the ε-power of its exponent.
    """
    if not final_time > 0:
        raise ValueError("final time must be positive")
    out = {name: np.asarray(v, dtype=float) / _reference_value(scales, kind, exponents) for name, (kind, v) in raw.items()}
    return scales.epsilon, out, final_time / scales.time


def redimensionalize(scales: ReferenceScales, kind: str, values, exponents: ScalingExponents | None = None):
    return np.asarray(values, dtype=float) * _reference_value(scales, kind, exponents)
