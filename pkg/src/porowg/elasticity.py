"""Regularized saddle-point formulation of WG linear elasticity.

With ``eps = mu / (lam + mu)`` and the numerical pressure
``z = -M^{-1} B u`` the elasticity system becomes

    [ A1   -B^T              ] [eps u]   [g]
    [ -B   -eps M - rho w w^T] [  z  ] = [0]

where ``w = M 1 / ||M 1||``.  Since ``1^T B = 0`` every solution satisfies
``w^T z = 0``, so the rank-one term changes nothing but the conditioning.
The Schur complement is approximated by ``S_hat = M + rho w w^T`` whose
inverse is applied with the Sherman-Morrison formula.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linalg import (BlockOperator, ConvergenceError, LowRankUpdate, SolveReport, SPDSolver, gmres,
                     minres, smw_rank1_apply)
from .mesh import Mesh
from .wgfem import PhysicalParams, WgBlocks, WgField, assemble_elasticity, assemble_loads

DEFAULT_TOL = {2: 1e-10, 3: 1e-8}
# MINRES tests ||b - A x|| / ||b|| against tol by default; see linalg.minres
MINRES_STOP = "true"


def regularization_vector(m_diag: np.ndarray) -> np.ndarray:
    """``w = M 1 / ||M 1||`` for diagonal ``M``."""
    return m_diag / np.linalg.norm(m_diag)


def a1_solver(blocks: WgBlocks, tol: float = 1e-12) -> SPDSolver:
    """Cached PCG solver for ``A1`` exploiting ``A1 = kron(A_s, I_d)``."""
    key = ("A1_solver", tol)
    if key not in blocks.extras:
        blocks.extras[key] = SPDSolver(blocks.A_scalar, tol=tol, components=blocks.mesh.dim)
    return blocks.extras[key]


@dataclass
class RegularizedElasticitySystem:
    blocks: WgBlocks
    epsilon: float
    rho: float
    w: np.ndarray
    m_diag: np.ndarray
    rhs: np.ndarray
    operator: BlockOperator

    @property
    def n_u(self) -> int:
        return self.blocks.A1.shape[0]

    @property
    def n_z(self) -> int:
        return self.m_diag.size

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x[: self.n_u], x[self.n_u:]

    def with_rhs(self, g: np.ndarray) -> "RegularizedElasticitySystem":
        rhs = np.concatenate([np.asarray(g, dtype=float), np.zeros(self.n_z)])
        return RegularizedElasticitySystem(self.blocks, self.epsilon, self.rho, self.w, self.m_diag,
                                           rhs, self.operator)


def elasticity_rhs(blocks: WgBlocks, params: PhysicalParams, b1: np.ndarray,
                   u_boundary: np.ndarray | None = None) -> np.ndarray:
    """``g = (eps/mu) b1`` minus the lifting of the Dirichlet values."""
    eps = params.epsilon
    g = (eps / params.mu) * np.asarray(b1, dtype=float)
    if u_boundary is not None and np.any(u_boundary):
        g = g - (eps * (blocks.A1_fb @ u_boundary) + blocks.A0_fb @ u_boundary)
    return g


def build_regularized_system(blocks: WgBlocks, params: PhysicalParams, rho: float = 1.0,
                             g: np.ndarray | None = None) -> RegularizedElasticitySystem:
    if not (np.isfinite(rho) and rho > 0):
        raise ValueError(f"rho must be positive and finite, got {rho}")
    eps = params.epsilon
    m = blocks.M_int.diagonal().copy()
    w = regularization_vector(m)
    B = blocks.B_int
    lower = LowRankUpdate(sp.diags(-eps * m), w, -rho)
    op = BlockOperator([[blocks.A1, -B.T.tocsr()], [-B, lower]])
    if g is None:
        g = np.zeros(blocks.A1.shape[0])
    rhs = np.concatenate([np.asarray(g, dtype=float), np.zeros(m.size)])
    return RegularizedElasticitySystem(blocks, eps, float(rho), w, m, rhs, op)


def schur_hat_apply(m_diag: np.ndarray, w: np.ndarray, rho: float, x: np.ndarray) -> np.ndarray:
    """``(M + rho w w^T)^{-1} x``."""
    return smw_rank1_apply(m_diag, w, rho, x)


def preconditioner(system: RegularizedElasticitySystem, kind: str, inner: SPDSolver):
    """Return ``r -> P^{-1} r`` for the block diagonal (``"diag"``) or lower
    triangular (``"tri"``) preconditioner."""
    n_u = system.n_u
    m, w, rho = system.m_diag, system.w, system.rho
    B = system.blocks.B_int

    if kind == "diag":
        def apply(r):
            return np.concatenate([inner(r[:n_u]), schur_hat_apply(m, w, rho, r[n_u:])])
    elif kind == "tri":
        def apply(r):
            y1 = inner(r[:n_u])
            return np.concatenate([y1, -schur_hat_apply(m, w, rho, r[n_u:] + B @ y1)])
    else:
        raise ValueError(f"unknown preconditioner kind {kind!r}")
    return apply


PAIRING = {"minres": "diag", "gmres": "tri"}


def solve_regularized(system: RegularizedElasticitySystem, method: str = "minres", tol: float = 1e-10,
                      maxit: int = 1000, restart: int = 30, inner: SPDSolver | None = None,
                      precond: str | None = None,
                      minres_stop: str = MINRES_STOP) -> tuple[np.ndarray, np.ndarray, SolveReport]:
    """Solve the regularized system; returns ``(u, z, report)`` with ``u`` unscaled."""
    if method not in PAIRING:
        raise ValueError(f"unknown method {method!r}")
    kind = precond or PAIRING[method]
    if method == "minres" and kind != "diag":
        raise ValueError("MINRES needs the symmetric positive definite block diagonal preconditioner")
    inner = inner or a1_solver(system.blocks)
    before = inner.iterations
    P = preconditioner(system, kind, inner)
    t0 = time.perf_counter()
    if method == "minres":
        x, rep = minres(system.operator, system.rhs, P, tol=tol, maxit=maxit, stop=minres_stop)
    else:
        x, rep = gmres(system.operator, system.rhs, P, tol=tol, maxit=maxit, restart=restart)
    rep.wall_time = time.perf_counter() - t0
    rep.inner_iterations_total = inner.iterations - before
    eps_u, z = system.split(x)
    return eps_u / system.epsilon, z, rep


def solve_elasticity(mesh: Mesh, params: PhysicalParams, f, method: str = "minres", rho: float = 1.0,
                     tol: float | None = None, maxit: int = 1000, boundary=None, restart: int = 30,
                     blocks: WgBlocks | None = None, raise_on_failure: bool = False,
                     precond: str | None = None):
    """Assemble and solve a Dirichlet elasticity problem.

    ``boundary`` is a vector field giving the displacement on the boundary
    (homogeneous when omitted); the boundary facet values are its facet
    averages.  Returns ``(u, report)``; the numerical pressure is attached to
    the returned field as ``u.z``.
    """
    if tol is None:
        tol = DEFAULT_TOL[mesh.dim]
    blocks = blocks or assemble_elasticity(mesh, params)
    d = mesh.dim
    b1, _ = assemble_loads(mesh, f, None, params)
    u_bd = None
    if boundary is not None:
        u_bd = WgField.interpolate(mesh, boundary, d).boundary_vector()
    system = build_regularized_system(blocks, params, rho, elasticity_rhs(blocks, params, b1, u_bd))
    u, z, rep = solve_regularized(system, method, tol, maxit, restart, precond=precond)
    if raise_on_failure and not rep.converged:
        raise ConvergenceError(f"{method} did not converge ({rep.flag}) after {rep.iterations} iterations", rep)
    field = WgField.from_free(mesh, u, d, u_bd)
    field.z = z
    return field, rep


def unregularized_solution(blocks: WgBlocks, g: np.ndarray, params: PhysicalParams) -> np.ndarray:
    """Direct sparse solve of ``(eps A1 + A0) u = g``, the unregularized reference."""
    from scipy.sparse.linalg import spsolve

    K = (params.epsilon * blocks.A1 + blocks.A0).tocsc()
    return spsolve(K, g)
