"""Three-field (displacement, pressure, numerical pressure) Biot system.

With ``z = -M^{-1} B_int u`` the two-field step is rewritten in the unknowns

    y1 = u,   y2 = -(alpha/mu) p,   y3 = z/eps - y2_int

(``y2_int`` is the interior part of ``y2``).  The resulting operator is
symmetric:

    [ A1     0          -B_int^T ]
    [ 0     -Mid        -E R     ]      R   = eps M + rho w w^T
    [ -B_int -R E^T     -R       ]      Mid = (mu/alpha^2) D + E R E^T

where ``E`` extends interior pressure vectors by zero on the facets, and
the right-hand side is ``(b1/mu, -b2/alpha, 0)``.  The rank-one term
``rho w w^T`` vanishes on exact solutions (``w^T z = 0``).  Only the
inner solves with ``A1`` and with the sparse part of ``Mid`` are
iterative, so nesting stays two levels deep.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from . import elasticity
from .linalg import BlockOperator, ConvergenceError, LowRankUpdate, SolveReport, SPDSolver, gmres, minres
from .mesh import Mesh
from .poro2 import DEFAULT_TOL, INNER_TOL, PoroState
from .wgfem import PhysicalParams, WgBlocks, WgField, assemble, assemble_loads


def choose_rho(M_int) -> float:
    """``0.1 * lambda_min(M_int)`` for the diagonal interior mass matrix."""
    m = M_int.diagonal() if sp.issparse(M_int) else np.diag(M_int) if np.ndim(M_int) == 2 else M_int
    m = np.asarray(m, dtype=float)
    return 0.1 * float(m.min())


class _ExtendedRankOne(LinearOperator):
    """``E (eps M + rho w w^T) F^T`` with ``E``/``F`` padding by zeros."""

    def __init__(self, m_diag, w, eps, rho, n_rows, n_cols, pad_rows: bool, pad_cols: bool):
        self.m, self.w, self.eps, self.rho = m_diag, w, eps, rho
        self.n_int = m_diag.size
        self.pad_rows, self.pad_cols = pad_rows, pad_cols
        super().__init__(float, (n_rows, n_cols))

    def _matvec(self, x):
        x = np.asarray(x).ravel()
        xi = x[: self.n_int] if self.pad_cols else x
        y = self.eps * self.m * xi + self.rho * (self.w @ xi) * self.w
        if self.pad_rows:
            out = np.zeros(self.shape[0])
            out[: self.n_int] = y
            return out
        return y

    def _rmatvec(self, x):
        return self._matvec(x)


@dataclass
class ThreeFieldSystem:
    blocks: WgBlocks
    params: PhysicalParams
    rho: float
    w: np.ndarray
    m_diag: np.ndarray
    middle_sparse: sp.csr_matrix
    operator: BlockOperator
    rhs: np.ndarray
    t: float = 0.0
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def regularized(self) -> bool:
        return self.rho > 0.0

    @property
    def n_u(self) -> int:
        return self.blocks.A1.shape[0]

    @property
    def n_p(self) -> int:
        return self.blocks.D.shape[0]

    @property
    def n_z(self) -> int:
        return self.m_diag.size

    @property
    def w_ext(self) -> np.ndarray:
        out = np.zeros(self.n_p)
        out[: self.n_z] = self.w
        return out

    def middle_apply(self, x: np.ndarray) -> np.ndarray:
        """``Mid x`` including the rank-one term."""
        return self.middle_sparse @ x + self.rho * (self.w_ext @ x) * self.w_ext

    def recover(self, x: np.ndarray) -> PoroState:
        """Map ``(y1, y2, y3)`` back to ``u``, ``p`` and ``z``."""
        mesh = self.blocks.mesh
        p = self.params
        y1, y2, y3 = x[: self.n_u], x[self.n_u:self.n_u + self.n_p], x[self.n_u + self.n_p:]
        u = WgField.from_free(mesh, y1, mesh.dim)
        pres = WgField.from_free(mesh, -(p.mu / p.alpha) * y2, 1)
        z = p.epsilon * (y3 + y2[: self.n_z])
        return PoroState(u, pres, self.t, z)


def build_three_field(blocks: WgBlocks, params: PhysicalParams, state_prev: PoroState | None = None,
                      regularize: bool | str = True, f=None, s=None, rho: float | None = None,
                      t: float | None = None) -> ThreeFieldSystem:
    """Assemble the three-field step system.  ``regularize`` off sets ``rho = 0``."""
    if isinstance(regularize, str):
        if regularize not in ("on", "off"):
            raise ValueError(f"regularize must be 'on' or 'off', got {regularize!r}")
        regularize = regularize == "on"
    if not params.alpha > 0:
        raise ValueError("the three-field scaling needs alpha > 0")
    mesh = blocks.mesh
    eps, mu, alpha = params.epsilon, params.mu, params.alpha
    m = blocks.M_int.diagonal().copy()
    w = elasticity.regularization_vector(m)
    if not regularize:
        rho = 0.0
    elif rho is None:
        rho = choose_rho(m)
    elif not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")

    n_p, n_int = blocks.D.shape[0], m.size
    mass_ext = np.zeros(n_p)
    mass_ext[:n_int] = m
    middle_sparse = ((mu / alpha**2) * blocks.D + eps * sp.diags(mass_ext)).tocsr()
    w_ext = np.zeros(n_p)
    w_ext[:n_int] = w

    Bi = blocks.B_int
    mid = LowRankUpdate(-middle_sparse, w_ext, -rho)
    c23 = _ExtendedRankOne(-m, w, eps, -rho, n_p, n_int, pad_rows=True, pad_cols=False)
    c32 = _ExtendedRankOne(-m, w, eps, -rho, n_int, n_p, pad_rows=False, pad_cols=True)
    c33 = LowRankUpdate(sp.diags(-eps * m), w, -rho)
    op = BlockOperator([[blocks.A1, None, (-Bi.T).tocsr()],
                        [None, mid, c23],
                        [(-Bi).tocsr(), c32, c33]])

    b1, b2 = assemble_loads(mesh, f, s, params, state_prev, blocks)
    rhs = np.concatenate([b1 / mu, -b2 / alpha, np.zeros(n_int)])
    if t is None:
        t = (state_prev.t if state_prev is not None else 0.0) + params.dt
    return ThreeFieldSystem(blocks, params, float(rho), w, m, middle_sparse, op, rhs, t)


class MiddleBlockSolver:
    """``Mid^{-1} x``: PCG with ichol on the sparse part, Sherman-Morrison for ``rho w w^T``."""

    def __init__(self, system: ThreeFieldSystem, tol: float = INNER_TOL):
        self.pcg = SPDSolver(system.middle_sparse, tol=tol)
        self.rho = system.rho
        self.w = system.w_ext
        self.v = self.pcg(self.w) if self.rho > 0 else None
        self.denominator = 1.0 + self.rho * (self.w @ self.v) if self.rho > 0 else 1.0

    @property
    def iterations(self) -> int:
        return self.pcg.iterations

    def __call__(self, x: np.ndarray) -> np.ndarray:
        y = self.pcg(x)
        if self.rho > 0:
            y = y - self.v * (self.rho * (self.w @ y) / self.denominator)
        return y


class ThreeFieldPreconditioner:
    def __init__(self, system: ThreeFieldSystem, kind: str = "diag", inner_tol: float = INNER_TOL):
        if kind not in ("diag", "tri"):
            raise ValueError(f"unknown preconditioner kind {kind!r}")
        self.system, self.kind = system, kind
        key = ("three_field_inner", inner_tol)
        if key not in system.cache:
            a1 = SPDSolver(system.blocks.A_scalar, tol=inner_tol, components=system.blocks.mesh.dim,
                           factor=_shared_a1_factor(system.blocks))
            system.cache[key] = (a1, MiddleBlockSolver(system, inner_tol))
        self.a1, self.middle = system.cache[key]

    def counters(self) -> dict:
        return {"a1_pcg_iterations": self.a1.iterations, "middle_pcg_iterations": self.middle.iterations}

    def __call__(self, r: np.ndarray) -> np.ndarray:
        s = self.system
        r = np.asarray(r, dtype=float)
        r1, r2, r3 = r[: s.n_u], r[s.n_u:s.n_u + s.n_p], r[s.n_u + s.n_p:]
        y1 = self.a1(r1)
        if self.kind == "diag":
            return np.concatenate([y1, self.middle(r2), r3 / s.m_diag])
        y3 = -(r3 + s.blocks.B_int @ y1) / s.m_diag
        return np.concatenate([y1, -self.middle(r2), y3])


def _shared_a1_factor(blocks: WgBlocks):
    return elasticity.a1_solver(blocks).factor


def precond_three_field_apply(kind: str, system: ThreeFieldSystem, r: np.ndarray) -> np.ndarray:
    return ThreeFieldPreconditioner(system, kind)(r)


PAIRING = {"minres": "diag", "gmres": "tri"}


def solve_three_field_step(system: ThreeFieldSystem, method: str = "minres", tol: float = DEFAULT_TOL,
                           maxit: int = 1000, restart: int = 30, precond: str | None = None,
                           minres_stop: str = elasticity.MINRES_STOP) -> tuple[PoroState, SolveReport]:
    if method not in PAIRING:
        raise ValueError(f"unknown method {method!r}")
    kind = precond or PAIRING[method]
    if method == "minres" and kind != "diag":
        raise ValueError("MINRES needs the symmetric positive definite block diagonal preconditioner")
    t0 = time.perf_counter()
    P = ThreeFieldPreconditioner(system, kind)
    before = P.counters()
    if method == "minres":
        x, rep = minres(system.operator, system.rhs, P, tol=tol, maxit=maxit, stop=minres_stop)
    else:
        x, rep = gmres(system.operator, system.rhs, P, tol=tol, maxit=maxit, restart=restart)
    rep.wall_time = time.perf_counter() - t0
    after = P.counters()
    rep.inner_stats = {k: after[k] - before[k] for k in after}
    rep.inner_iterations_total = sum(rep.inner_stats.values())
    return system.recover(x), rep


def march(mesh: Mesh, params: PhysicalParams, f, s, steps: int = 1, method: str = "minres",
          regularize: bool = True, tol: float = DEFAULT_TOL, blocks: WgBlocks | None = None,
          state0: PoroState | None = None) -> tuple[list[PoroState], list[SolveReport]]:
    """Implicit Euler with the three-field solver, step size ``params.dt``."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    blocks = blocks or assemble(mesh, params)
    state = state0 or PoroState.zeros(mesh)
    states, reports = [], []
    for k in range(1, steps + 1):
        t = state.t + params.dt
        system = build_three_field(blocks, params, state, regularize, f(t), s(t), t=t)
        state, rep = solve_three_field_step(system, method, tol)
        if not rep.converged:
            raise ConvergenceError(f"step {k} (t={t:g}): {method} did not converge ({rep.flag})", rep)
        states.append(state)
        reports.append(rep)
    return states, reports
