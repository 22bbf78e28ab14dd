"""Backward-Euler machinery shared by the full and limit solvers.

A linear Biot-type system is described by

    A u - B p = F(t)
    Bf (u' ) + M p' + D p = Q(t)

with ``Bf = B^T`` in every symmetric case.  The monolithic step solves
``[[A, -B], [-Bf, -(M + dt D)]]`` with the flow row negated so the matrix is
symmetric whenever ``Bf = B^T``; the Schur path eliminates ``u`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


@dataclass(frozen=True, eq=False)
class BiotOperators:
    A: sp.csr_matrix
    B: sp.csr_matrix  # (n_u, n_p)
    M: sp.csr_matrix
    D: sp.csr_matrix
    loads: Callable[[float], tuple[np.ndarray, np.ndarray]]
    u_fixed: np.ndarray  # bool mask of constrained displacement dofs
    p_fixed: np.ndarray
    Bf: sp.csr_matrix | None = None  # flow-row coupling (n_p, n_u); defaults to B^T

    @property
    def n_u(self) -> int:
        return self.A.shape[0]

    @property
    def n_p(self) -> int:
        return self.M.shape[0]

    @property
    def flow_coupling(self) -> sp.csr_matrix:
        return self.B.T.tocsr() if self.Bf is None else self.Bf

    @property
    def symmetric(self) -> bool:
        return self.Bf is None


def _inactive(rows: sp.spmatrix) -> np.ndarray:
    return np.asarray(abs(rows).sum(axis=1)).ravel() == 0


def _keep(mask: np.ndarray) -> sp.dia_matrix:
    return sp.diags((~mask).astype(float))


@dataclass(eq=False)
class _Constrained:
    """Operators with Dirichlet and structurally empty dofs eliminated."""

    A: sp.csr_matrix
    B: sp.csr_matrix
    Bf: sp.csr_matrix
    M: sp.csr_matrix
    D: sp.csr_matrix
    u_fixed: np.ndarray
    p_fixed: np.ndarray
    loads: Callable = field(repr=False)

    def rhs(self, t):
        F, Q = self.loads(t)
        return np.where(self.u_fixed, 0.0, F), np.where(self.p_fixed, 0.0, Q)


def constrain(ops: BiotOperators, dt: float) -> _Constrained:
    Bf = ops.flow_coupling
    u_fixed = ops.u_fixed | _inactive(sp.hstack([ops.A, ops.B]).tocsr())
    flow = sp.hstack([Bf, ops.M + dt * ops.D]).tocsr()
    p_fixed = ops.p_fixed | _inactive(flow)
    ku, kp = _keep(u_fixed), _keep(p_fixed)
    A = (ku @ ops.A @ ku + sp.diags(u_fixed.astype(float))).tocsr()
    M = (kp @ ops.M @ kp).tocsr()
    D = (kp @ ops.D @ kp).tocsr()
    return _Constrained(
        A=A,
        B=(ku @ ops.B @ kp).tocsr(),
        Bf=(kp @ Bf @ ku).tocsr(),
        M=M,
        D=D,
        u_fixed=u_fixed,
        p_fixed=p_fixed,
        loads=ops.loads,
    )


def initial_displacement(ops: BiotOperators, p0: np.ndarray, t0: float = 0.0, dt: float = 1.0) -> np.ndarray:
    c = constrain(ops, dt)
    F, _ = c.rhs(t0)
    lu = spla.splu(c.A.tocsc())
    u = lu.solve(F + c.B @ p0)
    if not np.all(np.isfinite(u)):
        raise np.linalg.LinAlgError("initial elasticity system is singular")
    return u


def _clean_p0(c: _Constrained, p0: np.ndarray) -> np.ndarray:
    return np.where(c.p_fixed, 0.0, p0)


def step_matrix(c: _Constrained, dt: float) -> sp.csc_matrix:
    flow = -(c.M + dt * c.D) - sp.diags(c.p_fixed.astype(float))
    return sp.bmat([[c.A, -c.B], [-c.Bf, flow]]).tocsc()


def monolithic_step(c: _Constrained, lu, u_k, p_k, t_next, dt):
    F, Q = c.rhs(t_next)
    rhs_p = -(dt * Q + c.Bf @ u_k + c.M @ p_k)
    rhs_p = np.where(c.p_fixed, 0.0, rhs_p)
    x = lu.solve(np.concatenate([F, rhs_p]))
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("time-step system is singular")
    n_u = len(u_k)
    return x[:n_u], x[n_u:]


def time_grid(T: float, dt: float) -> np.ndarray:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"T = {T} is not an integer multiple of dt = {dt}")
    return np.linspace(0.0, n * dt, n + 1)


def run_backward_euler(ops: BiotOperators, p0: np.ndarray, T: float, dt: float):
    """Return ``(times, U, P)`` with the initial state in row 0."""
    times = time_grid(T, dt)
    c = constrain(ops, dt)
    p = _clean_p0(c, p0)
    F0, _ = c.rhs(0.0)
    u = spla.splu(c.A.tocsc()).solve(F0 + c.B @ p)
    lu = spla.splu(step_matrix(c, dt))
    U, P = [u], [p]
    for t in times[1:]:
        u, p = monolithic_step(c, lu, u, p, t, dt)
        U.append(u)
        P.append(p)
    return times, np.array(U), np.array(P)


def schur_complement(ops: BiotOperators, dt: float, dof_cap: int = 4000):
    """Dense reduced storage matrix ``M + Bf A^{-1} B`` and the elasticity factorization."""
    if ops.n_u + ops.n_p > dof_cap:
        raise ValueError(f"Schur path limited to {dof_cap} dofs, problem has {ops.n_u + ops.n_p}")
    c = constrain(ops, dt)
    luA = spla.splu(c.A.tocsc())
    EinvB = luA.solve(c.B.toarray())
    DN = c.M.toarray() + c.Bf @ EinvB
    return c, luA, DN


def run_schur(ops: BiotOperators, p0: np.ndarray, T: float, dt: float, dof_cap: int = 4000):
    times = time_grid(T, dt)
    c, luA, DN = schur_complement(ops, dt, dof_cap)
    fixed = c.p_fixed
    K = c.D.toarray()
    lhs = DN + dt * K
    lhs[fixed, :] = 0.0
    lhs[:, fixed] = 0.0
    lhs[fixed, fixed] = 1.0
    lu = spla.splu(sp.csc_matrix(lhs))
    p = _clean_p0(c, p0)
    F_prev, _ = c.rhs(0.0)
    u = luA.solve(F_prev + c.B @ p)
    U, P = [u], [p]
    for t in times[1:]:
        F, Q = c.rhs(t)
        rhs = DN @ p + dt * Q - c.Bf @ luA.solve(F - F_prev)
        rhs[fixed] = 0.0
        p = lu.solve(rhs)
        u = luA.solve(F + c.B @ p)
        U.append(u)
        P.append(p)
        F_prev = F
    return times, np.array(U), np.array(P)


def discrete_energy(ops: BiotOperators, U: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``½ uᵀ A u + ½ pᵀ M p`` per time level."""
    return np.array([0.5 * u @ (ops.A @ u) + 0.5 * p @ (ops.M @ p) for u, p in zip(U, P)])
