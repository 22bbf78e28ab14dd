"""Transient solver for the transformed ε-problem on the three-subdomain mesh."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .materials import MaterialFields
from .mesh import SUBDOMAIN_NAMES, FracturedMesh, Geometry, build_mesh
from .scaling import ScalingExponents, validate_exponents
from .spaces import (
    FormSpec,
    SpaceDescriptor,
    assemble,
    build_space,
    interpolate,
    vertex_values,
)
from . import timestepping as ts


@dataclass(frozen=True)
class BiotRunConfig:
    exponents: ScalingExponents
    epsilon: float
    materials: MaterialFields
    geometry: Geometry = field(default_factory=Geometry)
    h: float = 1 / 32
    T: float = 0.5
    dt: float = 1 / 40
    tol: float = 1e-10
    n_layers: int | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T >= self.dt:
            raise ValueError("T must be at least one time step")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def digest(self) -> str:
        """Short hash of the scalar settings, used to tag dumps."""
        payload = json.dumps(
            {
                "exponents": self.exponents.as_strings(),
                "epsilon": repr(self.epsilon),
                "h": repr(self.h),
                "T": repr(self.T),
                "dt": repr(self.dt),
                "n_layers": self.n_layers,
                "boundary": dict(sorted(self.geometry.boundary_spec.items())),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class TransientSolution:
    times: np.ndarray
    p_coeffs: np.ndarray  # (n_times, n_p)
    u_coeffs: np.ndarray  # (n_times, n_u)
    spaces: tuple[SpaceDescriptor, SpaceDescriptor]  # (pressure, displacement)
    epsilon: float | str
    extras: dict = field(default_factory=dict)

    @property
    def mesh(self) -> FracturedMesh:
        return self.spaces[0].mesh

    def pressure(self, k: int) -> np.ndarray:
        """Pressure per mesh vertex at time level ``k`` (NaN off the space's support)."""
        return vertex_values(self.spaces[0], self.p_coeffs[k])

    def displacement(self, k: int) -> np.ndarray:
        return vertex_values(self.spaces[1], self.u_coeffs[k])

    def pressure_series(self) -> np.ndarray:
        return np.array([self.pressure(k) for k in range(len(self.times))])

    def displacement_series(self) -> np.ndarray:
        return np.array([self.displacement(k) for k in range(len(self.times))])


def _mesh_for(config: BiotRunConfig, mesh: FracturedMesh | None) -> FracturedMesh:
    return mesh if mesh is not None else build_mesh(config.geometry, config.h, config.n_layers)


def full_operators(config: BiotRunConfig, mesh: FracturedMesh | None = None):
    """Assemble the ε-problem operators; returns ``(ops, P, V, p0)``."""
    mesh = _mesh_for(config, mesh)
    V = build_space(mesh, "V_full")
    P = build_space(mesh, "Phi_full")
    eps, exp, mat = config.epsilon, config.exponents, config.materials
    form = lambda name, t=0.0: FormSpec(name, eps, exp, t)
    A = assemble(form("A_hat"), V, V, mat).matrix
    B = assemble(form("B_hat"), P, V, mat).matrix
    M = assemble(form("C_hat"), P, P, mat).matrix
    D = assemble(form("D_hat"), P, P, mat).matrix

    def loads(t):
        return assemble(form("L_hat", t), V, V, mat).rhs, assemble(form("Q_hat", t), P, P, mat).rhs

    ops = ts.BiotOperators(A=A, B=B, M=M, D=D, loads=loads, u_fixed=V.dirichlet_mask, p_fixed=P.dirichlet_mask)
    p0 = interpolate(P, {s: mat.of(s).initial_pressure for s in range(3)})
    return ops, P, V, p0


def solve_initial_displacement(config: BiotRunConfig, mesh: FracturedMesh | None = None) -> np.ndarray:
    """Displacement balancing the t = 0 loads and the initial pressure."""
    ops, _, _, p0 = full_operators(config, mesh)
    c = ts.constrain(ops, config.dt)
    return ts.initial_displacement(ops, np.where(c.p_fixed, 0.0, p0), 0.0, config.dt)


def step_monolithic(
    config: BiotRunConfig,
    u_k: np.ndarray,
    p_k: np.ndarray,
    t_k: float,
    mesh: FracturedMesh | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One backward-Euler step from ``t_k`` to ``t_k + dt``.

    Convenience entry point; ``solve_transient`` factorizes once and reuses
    the factorization instead of calling this per step.
    """
    import scipy.sparse.linalg as spla

    ops, _, _, _ = full_operators(config, mesh)
    c = ts.constrain(ops, config.dt)
    lu = spla.splu(ts.step_matrix(c, config.dt))
    return ts.monolithic_step(c, lu, u_k, p_k, t_k + config.dt, config.dt)


def solve_transient(config: BiotRunConfig, mesh: FracturedMesh | None = None, validate: bool = True) -> TransientSolution:
    if validate:
        validate_exponents(config.exponents, config.geometry)
    ops, P, V, p0 = full_operators(config, mesh)
    times, U, Pc = ts.run_backward_euler(ops, p0, config.T, config.dt)
    return TransientSolution(times, Pc, U, (P, V), config.epsilon, {"operators": ops})


def solve_transient_schur(
    config: BiotRunConfig,
    mesh: FracturedMesh | None = None,
    dof_cap: int = 4000,
    validate: bool = True,
) -> TransientSolution:
    """Same problem advanced on the pressure-only reduced system (displacement eliminated)."""
    if validate:
        validate_exponents(config.exponents, config.geometry)
    ops, P, V, p0 = full_operators(config, mesh)
    times, U, Pc = ts.run_schur(ops, p0, config.T, config.dt, dof_cap)
    return TransientSolution(times, Pc, U, (P, V), config.epsilon, {"operators": ops})


def energy_history(solution: TransientSolution) -> np.ndarray:
    """``½ Â(u,u) + ½ Ĉ(p,p)`` at every time level."""
    return ts.discrete_energy(solution.extras["operators"], solution.u_coeffs, solution.p_coeffs)


def _fmt(x: float) -> str:
    return "nan" if not np.isfinite(x) else format(float(x), ".17g")


def dump_solution(solution: TransientSolution, out_dir, config_hash: str = "") -> Path:
    """One CSV per time level plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh = solution.mesh
    files = []
    for k, t in enumerate(solution.times):
        p = solution.pressure(k)
        u = solution.displacement(k)
        name = f"step_{k:05d}.csv"
        with open(out / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex", "subdomain", "x", "y", "p", "u_x", "u_y"])
            for i, (xy, sub) in enumerate(zip(mesh.vertices, mesh.vertex_subdomain)):
                w.writerow([i, SUBDOMAIN_NAMES[sub], _fmt(xy[0]), _fmt(xy[1]), _fmt(p[i]), _fmt(u[i, 0]), _fmt(u[i, 1])])
        files.append(name)
    manifest = {
        "times": [_fmt(t) for t in solution.times],
        "files": files,
        "epsilon": solution.epsilon if isinstance(solution.epsilon, str) else _fmt(solution.epsilon),
        "config_hash": config_hash,
        "pressure_space": solution.spaces[0].kind,
        "displacement_space": solution.spaces[1].kind,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return out
