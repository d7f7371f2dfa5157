"""Two-field (displacement, pressure) Biot system with implicit Euler.

Each time step solves

    [ eps A1 + A0        -(alpha eps/mu) B^T ] [u]          [b1]
    [ -(alpha eps/mu) B  -(eps/mu) D         ] [p] = eps/mu [b2]

with block diagonal (MINRES) or block lower triangular (GMRES)
preconditioners built on ``S_hat = (eps/mu) D``.  The action of
``(eps A1 + A0)^{-1}`` is itself a regularized elasticity solve.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import elasticity
from .linalg import BlockOperator, ConvergenceError, SolveReport, SPDSolver, gmres, minres
from .mesh import Mesh
from .wgfem import PhysicalParams, WgBlocks, WgField, assemble, assemble_loads

INNER_TOL = 1e-12
DEFAULT_TOL = 1e-8


@dataclass
class PoroState:
    u: WgField
    p: WgField
    t: float = 0.0
    z: np.ndarray | None = None

    @classmethod
    def zeros(cls, mesh: Mesh, t: float = 0.0) -> "PoroState":
        return cls(WgField.zeros(mesh, mesh.dim), WgField.zeros(mesh, 1), t)


@dataclass
class TwoFieldSystem:
    blocks: WgBlocks
    params: PhysicalParams
    operator: BlockOperator
    rhs: np.ndarray
    t: float = 0.0
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_u(self) -> int:
        return self.blocks.A1.shape[0]

    @property
    def n_p(self) -> int:
        return self.blocks.D.shape[0]

    @property
    def sizes(self) -> tuple[int, int, int]:
        """Displacement dofs, interior pressure dofs, free facet pressure dofs."""
        return self.n_u, self.blocks.n_p_int, self.blocks.n_p_facet

    @property
    def leading(self) -> sp.csr_matrix:
        return self.operator.blocks[0][0]

    @property
    def coupling(self) -> float:
        p = self.params
        return p.alpha * p.epsilon / p.mu

    def state_from(self, x: np.ndarray) -> PoroState:
        mesh = self.blocks.mesh
        u = WgField.from_free(mesh, x[: self.n_u], mesh.dim)
        p = WgField.from_free(mesh, x[self.n_u:], 1)
        return PoroState(u, p, self.t)


def two_field_operator(blocks: WgBlocks, params: PhysicalParams) -> BlockOperator:
    eps, mu = params.epsilon, params.mu
    c = params.alpha * eps / mu
    K = (eps * blocks.A1 + blocks.A0).tocsr()
    B = blocks.B_full
    return BlockOperator([[K, (-c * B.T).tocsr()], [(-c * B).tocsr(), (-(eps / mu) * blocks.D).tocsr()]])


def assemble_two_field(mesh: Mesh, params: PhysicalParams, state_prev: PoroState | None, f, s,
                       blocks: WgBlocks | None = None, t: float | None = None,
                       operator: BlockOperator | None = None) -> TwoFieldSystem:
    """System for one implicit Euler step; ``f`` and ``s`` are fields at the new time."""
    blocks = blocks or assemble(mesh, params)
    b1, b2 = assemble_loads(mesh, f, s, params, state_prev, blocks)
    scale = params.epsilon / params.mu
    rhs = scale * np.concatenate([b1, b2])
    if t is None:
        t = (state_prev.t if state_prev is not None else 0.0) + params.dt
    op = operator if operator is not None else two_field_operator(blocks, params)
    return TwoFieldSystem(blocks, params, op, rhs, t)


class LeadingBlockSolver:
    """``(eps A1 + A0)^{-1} r`` through the regularized elasticity system."""

    def __init__(self, blocks: WgBlocks, params: PhysicalParams, method: str = "gmres", rho: float = 1.0,
                 tol: float = INNER_TOL, maxit: int = 1000, restart: int = 30):
        self.system = elasticity.build_regularized_system(blocks, params, rho)
        self.method, self.tol, self.maxit, self.restart = method, tol, maxit, restart
        self.pcg = elasticity.a1_solver(blocks)
        self.iterations = 0
        self.calls = 0

    def __call__(self, r: np.ndarray) -> np.ndarray:
        u, _, rep = elasticity.solve_regularized(self.system.with_rhs(r), self.method, self.tol,
                                                 self.maxit, self.restart, inner=self.pcg)
        self.calls += 1
        self.iterations += rep.iterations
        if not rep.converged:
            raise ConvergenceError(
                f"nested elasticity {self.method} failed ({rep.flag}, relres {rep.final_relres:.2e}) "
                f"after {rep.iterations} iterations", rep)
        return u


class TwoFieldPreconditioner:
    """Block preconditioner ``P_d`` (``kind="diag"``) or ``P_t`` (``kind="tri"``).

    ``P_d = blockdiag(eps A1 + A0, S_hat)`` is symmetric positive definite.
    ``P_t`` is lower triangular with ``-S_hat`` in the (2,2) block.
    """

    def __init__(self, system: TwoFieldSystem, kind: str = "diag", elasticity_method: str = "gmres",
                 rho: float = 1.0, inner_tol: float = INNER_TOL):
        if kind not in ("diag", "tri"):
            raise ValueError(f"unknown preconditioner kind {kind!r}")
        self.system, self.kind = system, kind
        blocks, params = system.blocks, system.params
        key = ("two_field_inner", elasticity_method, rho, inner_tol)
        if key not in system.cache:
            system.cache[key] = (LeadingBlockSolver(blocks, params, elasticity_method, rho, inner_tol),
                                 SPDSolver(blocks.D, tol=inner_tol))
        self.leading, self.d_solver = system.cache[key]
        self.schur_scale = params.mu / params.epsilon

    def counters(self) -> dict:
        return {
            "elasticity_iterations": self.leading.iterations,
            "a1_pcg_iterations": self.leading.pcg.iterations,
            "d_pcg_iterations": self.d_solver.iterations,
        }

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        n_u = self.system.n_u
        r1, r2 = r[:n_u], r[n_u:]
        y1 = self.leading(r1) if np.any(r1) else np.zeros_like(r1)
        if self.kind == "diag":
            y2 = self.schur_scale * self.d_solver(r2)
        else:
            rhs2 = r2 + self.system.coupling * (self.system.blocks.B_full @ y1)
            y2 = -self.schur_scale * self.d_solver(rhs2)
        return np.concatenate([y1, y2])


def precond_two_field_apply(kind: str, system: TwoFieldSystem, r: np.ndarray,
                            elasticity_inner: dict | None = None) -> np.ndarray:
    """One application of ``P^{-1}``; ``elasticity_inner`` may set ``method``, ``rho`` and ``tol``."""
    cfg = elasticity_inner or {}
    P = TwoFieldPreconditioner(system, kind, cfg.get("method", "gmres"), cfg.get("rho", 1.0),
                               cfg.get("tol", INNER_TOL))
    return P(r)


PAIRING = {"minres": "diag", "gmres": "tri"}


def solve_two_field_step(system: TwoFieldSystem, method: str = "minres", tol: float = DEFAULT_TOL,
                         maxit: int = 1000, restart: int = 30, precond: str | None = None,
                         elasticity_inner: dict | None = None,
                         minres_stop: str = elasticity.MINRES_STOP) -> tuple[PoroState, SolveReport]:
    if method not in PAIRING:
        raise ValueError(f"unknown method {method!r}")
    kind = precond or PAIRING[method]
    if method == "minres" and kind != "diag":
        raise ValueError("MINRES needs the symmetric positive definite block diagonal preconditioner")
    cfg = elasticity_inner or {}
    P = TwoFieldPreconditioner(system, kind, cfg.get("method", "gmres"), cfg.get("rho", 1.0),
                               cfg.get("tol", INNER_TOL))
    before = P.counters()
    t0 = time.perf_counter()
    if method == "minres":
        x, rep = minres(system.operator, system.rhs, P, tol=tol, maxit=maxit, stop=minres_stop)
    else:
        x, rep = gmres(system.operator, system.rhs, P, tol=tol, maxit=maxit, restart=restart)
    rep.wall_time = time.perf_counter() - t0
    after = P.counters()
    rep.inner_stats = {k: after[k] - before[k] for k in after}
    rep.inner_iterations_total = rep.inner_stats["elasticity_iterations"] + rep.inner_stats["d_pcg_iterations"]
    return system.state_from(x), rep


def march(mesh: Mesh, params: PhysicalParams, f, s, u0: WgField | None = None, p0: WgField | None = None,
          T: float | None = None, steps: int = 1, method: str = "minres", tol: float = DEFAULT_TOL,
          maxit: int = 1000, restart: int = 30, blocks: WgBlocks | None = None,
          t0: float = 0.0) -> tuple[list[PoroState], list[SolveReport]]:
    """Implicit Euler from ``t0`` to ``T`` in ``steps`` equal steps.

    ``f(t)`` and ``s(t)`` return the forcing fields at time ``t``.  When ``T``
    is omitted the step size ``params.dt`` is used.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if T is not None:
        params = PhysicalParams(params.mu, params.lam, params.alpha, params.c0, params.kappa,
                                (T - t0) / steps)
        blocks = None if blocks is None or blocks.params != params else blocks
    blocks = blocks or assemble(mesh, params)
    state = PoroState(u0 if u0 is not None else WgField.zeros(mesh, mesh.dim),
                      p0 if p0 is not None else WgField.zeros(mesh, 1), t0)
    op = two_field_operator(blocks, params)
    cache: dict = {}
    states, reports = [], []
    for k in range(1, steps + 1):
        t = t0 + k * params.dt
        system = assemble_two_field(mesh, params, state, f(t), s(t), blocks, t, op)
        system.cache = cache
        try:
            state, rep = solve_two_field_step(system, method, tol, maxit, restart)
        except ConvergenceError as exc:
            raise ConvergenceError(f"step {k} (t={t:g}): {exc}", exc.report) from exc
        if not rep.converged:
            raise ConvergenceError(f"step {k} (t={t:g}): {method} did not converge ({rep.flag})", rep)
        states.append(state)
        reports.append(rep)
    return states, reports


def write_trajectory_csv(states: list[PoroState], reports: list[SolveReport], path: str | Path,
                         regularized: int | None = None) -> None:
    header = ["t", "outer_iters", "inner_iters", "relres", "wall_time_s"]
    if regularized is not None:
        header.append("regularized")
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for st, rep in zip(states, reports):
            row = [f"{st.t:.10g}", rep.iterations, rep.inner_iterations_total, f"{rep.final_relres:.6e}",
                   f"{rep.wall_time:.4f}"]
            if regularized is not None:
                row.append(regularized)
            out.writerow(row)
