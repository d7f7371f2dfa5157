"""Threshold incomplete Cholesky factorisation (left-looking, column oriented).

Column ``j`` of ``L`` keeps an off-diagonal entry only if its magnitude is at
least ``droptol * norm(A[j:, j], 1)``.  A non-positive pivot triggers a retry
on ``A + s * mean(diag(A)) * I`` with ``s`` doubling from ``1e-3``.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np
import scipy.sparse as sp

MAX_SHIFT_RETRIES = 20


class FactorizationError(RuntimeError):
    pass


@nb.njit(cache=True)
def _ict(n, Ap, Ai, Ax, droptol, shift):
    cap = max(2 * Ax.size, 4 * n)
    Lp = np.zeros(n + 1, np.int64)
    Li = np.empty(cap, np.int64)
    Lx = np.empty(cap, np.float64)
    w = np.zeros(n)
    mark = np.full(n, -1, np.int64)
    pattern = np.empty(n, np.int64)
    head = np.full(n, -1, np.int64)
    nxt = np.full(n, -1, np.int64)
    pos = np.zeros(n, np.int64)
    nnz = 0
    for j in range(n):
        npat = 0
        colnorm = 0.0
        mark[j] = j
        w[j] = shift
        pattern[0] = j
        npat = 1
        for p in range(Ap[j], Ap[j + 1]):
            i = Ai[p]
            colnorm += abs(Ax[p])
            if mark[i] != j:
                mark[i] = j
                w[i] = 0.0
                pattern[npat] = i
                npat += 1
            w[i] += Ax[p]
        k = head[j]
        while k != -1:
            knext = nxt[k]
            p = pos[k]
            ljk = Lx[p]
            for q in range(p, Lp[k + 1]):
                i = Li[q]
                if mark[i] != j:
                    mark[i] = j
                    w[i] = 0.0
                    pattern[npat] = i
                    npat += 1
                w[i] -= Lx[q] * ljk
            p += 1
            pos[k] = p
            if p < Lp[k + 1]:
                r = Li[p]
                nxt[k] = head[r]
                head[r] = k
            k = knext
        head[j] = -1
        diag = w[j]
        if not diag > 0.0:
            return Lp, Li, Lx, j
        ljj = math.sqrt(diag)
        if nnz + npat > cap:
            cap = max(2 * cap, nnz + npat)
            Li2 = np.empty(cap, np.int64)
            Lx2 = np.empty(cap, np.float64)
            Li2[:nnz] = Li[:nnz]
            Lx2[:nnz] = Lx[:nnz]
            Li = Li2
            Lx = Lx2
        Li[nnz] = j
        Lx[nnz] = ljj
        nnz += 1
        offd = np.sort(pattern[1:npat])
        thresh = droptol * colnorm
        for t in range(offd.size):
            i = offd[t]
            val = w[i] / ljj
            if val != 0.0 and abs(val) >= thresh:
                Li[nnz] = i
                Lx[nnz] = val
                nnz += 1
        Lp[j + 1] = nnz
        pos[j] = Lp[j] + 1
        if pos[j] < nnz:
            r = Li[pos[j]]
            nxt[j] = head[r]
            head[r] = j
    return Lp, Li[:nnz].copy(), Lx[:nnz].copy(), -1


@nb.njit(cache=True)
def _lower_solve(Lp, Li, Lx, b):
    y = b.copy()
    n = Lp.size - 1
    for j in range(n):
        yj = y[j] / Lx[Lp[j]]
        y[j] = yj
        if yj != 0.0:
            for p in range(Lp[j] + 1, Lp[j + 1]):
                y[Li[p]] -= Lx[p] * yj
    return y


@nb.njit(cache=True)
def _upper_solve(Lp, Li, Lx, y):
    n = Lp.size - 1
    x = np.empty_like(y)
    for j in range(n - 1, -1, -1):
        s = y[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            s -= Lx[p] * x[Li[p]]
        x[j] = s / Lx[Lp[j]]
    return x


@nb.njit(cache=True)
def _lower_solve_multi(Lp, Li, Lx, B):
    Y = B.copy()
    n, m = B.shape
    for j in range(n):
        d = Lx[Lp[j]]
        for c in range(m):
            Y[j, c] /= d
        for p in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[p]
            v = Lx[p]
            for c in range(m):
                Y[i, c] -= v * Y[j, c]
    return Y


@nb.njit(cache=True)
def _upper_solve_multi(Lp, Li, Lx, Y):
    n, m = Y.shape
    X = np.empty_like(Y)
    s = np.empty(m)
    for j in range(n - 1, -1, -1):
        for c in range(m):
            s[c] = Y[j, c]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[p]
            v = Lx[p]
            for c in range(m):
                s[c] -= v * X[i, c]
        d = Lx[Lp[j]]
        for c in range(m):
            X[j, c] = s[c] / d
    return X


class IncompleteCholesky:
    """Lower-triangular factor ``L`` with ``L L^T ~ A``; :meth:`solve` applies
    ``(L L^T)^{-1}`` to a vector or to the columns of a 2-D array."""

    def __init__(self, Lp, Li, Lx, shift: float = 0.0):
        self.Lp, self.Li, self.Lx = Lp, Li, Lx
        self.shift = shift

    @property
    def n(self) -> int:
        return self.Lp.size - 1

    @property
    def nnz(self) -> int:
        return self.Lx.size

    def to_sparse(self) -> sp.csc_matrix:
        return sp.csc_matrix((self.Lx, self.Li, self.Lp), shape=(self.n, self.n))

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.ascontiguousarray(b, dtype=float)
        if b.ndim == 1:
            return _upper_solve(self.Lp, self.Li, self.Lx, _lower_solve(self.Lp, self.Li, self.Lx, b))
        return _upper_solve_multi(self.Lp, self.Li, self.Lx,
                                  _lower_solve_multi(self.Lp, self.Li, self.Lx, b))

    __call__ = solve


def ichol_droptol(A, droptol: float = 1e-3) -> IncompleteCholesky:
    """Incomplete Cholesky factor of a symmetric matrix with positive diagonal."""
    A = sp.csc_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise ValueError("matrix must have a positive diagonal")
    low = sp.tril(A, format="csc")
    low.sort_indices()
    Ap = low.indptr.astype(np.int64)
    Ai = low.indices.astype(np.int64)
    Ax = low.data.astype(np.float64)
    n = A.shape[0]

    Lp, Li, Lx, failed = _ict(n, Ap, Ai, Ax, float(droptol), 0.0)
    if failed < 0:
        return IncompleteCholesky(Lp, Li, Lx)
    scale = 1e-3 * diag.mean()
    for _ in range(MAX_SHIFT_RETRIES):
        Lp, Li, Lx, failed = _ict(n, Ap, Ai, Ax, float(droptol), scale)
        if failed < 0:
            return IncompleteCholesky(Lp, Li, Lx, shift=scale)
        scale *= 2.0
    raise FactorizationError(
        f"incomplete Cholesky broke down at column {failed} after {MAX_SHIFT_RETRIES} shifts")


@nb.njit(cache=True)
def _csr_matmul(Ap, Ai, Ax, X):
    n, m = X.shape
    Y = np.zeros((n, m))
    for i in range(n):
        for p in range(Ap[i], Ap[i + 1]):
            j = Ai[p]
            v = Ax[p]
            for c in range(m):
                Y[i, c] += v * X[j, c]
    return Y


@nb.njit(cache=True)
def _coldot(X, Y):
    n, m = X.shape
    out = np.zeros(m)
    for i in range(n):
        for c in range(m):
            out[c] += X[i, c] * Y[i, c]
    return out


@nb.njit(cache=True)
def pcg_ichol_kernel(Ap, Ai, Ax, Lp, Li, Lx, B, tol, maxit):
    """Column-wise PCG on a CSR matrix with an ichol preconditioner.

    Returns ``(X, iterations per column, final relative residuals, status)``
    where status is 0 (converged), 1 (maxit) or 2 (loss of positivity).
    """
    n, m = B.shape
    X = np.zeros((n, m))
    R = B.copy()
    bnorm = np.sqrt(_coldot(B, B))
    active = bnorm > 0.0
    counts = np.zeros(m, np.int64)
    rel = np.zeros(m)
    if not active.any():
        return X, counts, rel, 0
    Z = _upper_solve_multi(Lp, Li, Lx, _lower_solve_multi(Lp, Li, Lx, R))
    P = Z.copy()
    rz = _coldot(R, Z)
    for _ in range(maxit):
        Q = _csr_matmul(Ap, Ai, Ax, P)
        pq = _coldot(P, Q)
        for c in range(m):
            if active[c] and not pq[c] > 0.0:
                return X, counts, rel, 2
        alpha = np.zeros(m)
        for c in range(m):
            if active[c]:
                alpha[c] = rz[c] / pq[c]
                counts[c] += 1
        for i in range(n):
            for c in range(m):
                X[i, c] += alpha[c] * P[i, c]
                R[i, c] -= alpha[c] * Q[i, c]
        rr = _coldot(R, R)
        done = True
        for c in range(m):
            if active[c]:
                rel[c] = np.sqrt(rr[c]) / bnorm[c]
                if rel[c] <= tol:
                    active[c] = False
                else:
                    done = False
        if done:
            return X, counts, rel, 0
        Z = _upper_solve_multi(Lp, Li, Lx, _lower_solve_multi(Lp, Li, Lx, R))
        rz_new = _coldot(R, Z)
        for c in range(m):
            if active[c]:
                beta = rz_new[c] / rz[c]
                for i in range(n):
                    P[i, c] = Z[i, c] + beta * P[i, c]
            rz[c] = rz_new[c]
    return X, counts, rel, 1
