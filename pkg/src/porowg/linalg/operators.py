"""Block operators, rank-one updates and nested SPD solvers."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .ichol import IncompleteCholesky, ichol_droptol, pcg_ichol_kernel
from .krylov import ConvergenceError, SolveReport, as_apply

INNER_TOL = 1e-12
INNER_MAXIT = 1000


def smw_rank1_apply(m_diag: np.ndarray, w: np.ndarray, rho: float, x: np.ndarray) -> np.ndarray:
    """Apply ``(diag(m) + rho w w^T)^{-1}`` via the Sherman-Morrison formula.

    ``w`` must have unit Euclidean norm and ``rho`` must be non-negative.
    """
    m_diag = np.asarray(m_diag, dtype=float)
    if rho < 0.0:
        raise ValueError("rho must be non-negative")
    if np.any(m_diag <= 0.0):
        raise ValueError("diagonal must be positive")
    if abs(np.linalg.norm(w) - 1.0) > 1e-12:
        raise ValueError("w must have unit norm")
    mx = x / m_diag
    if rho == 0.0:
        return mx
    mw = w / m_diag
    return mx - mw * (rho * (w @ mx) / (1.0 + rho * (w @ mw)))


class BlockOperator(LinearOperator):
    """Matrix-free block operator; ``None`` entries are zero blocks."""

    def __init__(self, blocks, row_sizes=None, col_sizes=None):
        self.blocks = [list(r) for r in blocks]
        nr, nc = len(self.blocks), len(self.blocks[0])
        rows = list(row_sizes) if row_sizes is not None else [None] * nr
        cols = list(col_sizes) if col_sizes is not None else [None] * nc
        for i, row in enumerate(self.blocks):
            if len(row) != nc:
                raise ValueError("ragged block layout")
            for j, blk in enumerate(row):
                if blk is None:
                    continue
                r, c = blk.shape
                if rows[i] not in (None, r) or cols[j] not in (None, c):
                    raise ValueError(f"block ({i},{j}) has inconsistent shape {blk.shape}")
                rows[i], cols[j] = r, c
        if None in rows or None in cols:
            raise ValueError("block sizes could not be inferred; pass row_sizes/col_sizes")
        self.row_sizes, self.col_sizes = rows, cols
        self._applies = [[None if b is None else as_apply(b) for b in row] for row in self.blocks]
        super().__init__(float, (sum(rows), sum(cols)))

    def split(self, x: np.ndarray, rows: bool = False) -> list[np.ndarray]:
        sizes = self.row_sizes if rows else self.col_sizes
        return np.split(x, np.cumsum(sizes)[:-1])

    def _matvec(self, x):
        x = np.asarray(x).ravel()
        parts = self.split(x)
        out = []
        for i, row in enumerate(self._applies):
            acc = np.zeros(self.row_sizes[i])
            for j, ap in enumerate(row):
                if ap is not None:
                    acc += ap(parts[j])
            out.append(acc)
        return np.concatenate(out)

    def to_sparse(self) -> sp.csr_matrix:
        """Assemble into a sparse matrix (every block must be explicit)."""
        rows = []
        for i, row in enumerate(self.blocks):
            rows.append([None if b is None else sp.csr_matrix(b) for b in row])
        for i in range(len(rows)):
            for j in range(len(rows[0])):
                if rows[i][j] is None and (i == j or all(r[j] is None for r in rows)):
                    rows[i][j] = sp.csr_matrix((self.row_sizes[i], self.col_sizes[j]))
        return sp.bmat(rows, format="csr")


class LowRankUpdate(LinearOperator):
    """``base + rho * w w^T`` as an operator."""

    def __init__(self, base, w: np.ndarray, rho: float):
        self.base = base
        self._base = as_apply(base)
        self.w = np.asarray(w, dtype=float)
        self.rho = float(rho)
        super().__init__(float, base.shape)

    def _matvec(self, x):
        x = np.asarray(x).ravel()
        return self._base(x) + self.rho * (self.w @ x) * self.w


class SPDSolver:
    """Inner solve ``A^{-1} r`` by PCG with an incomplete Cholesky preconditioner.

    With ``components > 1``, ``A`` is the scalar block ``A_s`` of an operator
    ``kron(A_s, I_c)`` in interleaved ordering; only ``A_s`` is factorised and
    the ``c`` components are solved together.
    """

    def __init__(self, A, tol: float = INNER_TOL, maxit: int = INNER_MAXIT, droptol: float = 1e-3,
                 components: int = 1, factor: IncompleteCholesky | None = None):
        self.A = sp.csr_matrix(A)
        self.A.sort_indices()
        self._csr = (self.A.indptr.astype(np.int64), self.A.indices.astype(np.int64),
                     self.A.data.astype(np.float64))
        self.tol, self.maxit = tol, maxit
        self.components = components
        self.factor = factor if factor is not None else ichol_droptol(self.A, droptol)
        self.calls = 0
        self.iterations = 0

    @property
    def shape(self):
        n = self.A.shape[0] * self.components
        return (n, n)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        c = self.components
        r = np.asarray(r, dtype=float)
        if r.shape[0] != self.shape[0]:
            raise ValueError(f"expected vector of length {self.shape[0]}, got {r.shape[0]}")
        R = np.ascontiguousarray(r.reshape(-1, c))
        f = self.factor
        X, counts, rel, status = pcg_ichol_kernel(*self._csr, f.Lp, f.Li, f.Lx, R, self.tol, self.maxit)
        self.calls += 1
        self.iterations += int(counts.sum())
        if status != 0:
            why = "maximum iterations reached" if status == 1 else "matrix or preconditioner not positive definite"
            rep = SolveReport(int(counts.max()), False, [float(rel.max())], "maxit" if status == 1 else "breakdown")
            raise ConvergenceError(f"inner PCG failed: {why} (relres {rel.max():.2e})", rep)
        return X.reshape(r.shape)

    solve = __call__
    matvec = __call__

    def reset_counters(self) -> None:
        self.calls = 0
        self.iterations = 0
