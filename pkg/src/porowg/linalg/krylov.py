"""Krylov solvers with explicit residual histories.

All solvers start from a zero initial guess unless ``x0`` is given and stop
on a relative residual:

* :func:`pcg` on the true residual ``||b - A x|| / ||b||``;
* :func:`minres` on the preconditioned residual in the ``P^{-1}`` norm;
* :func:`gmres` on the left-preconditioned residual ``||P^{-1}(b - A x)||``.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

Apply = Callable[[np.ndarray], np.ndarray]


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    relative_residuals: list[float] = field(default_factory=list)
    flag: str = "converged"
    inner_iterations_total: int = 0
    wall_time: float = 0.0
    true_relres: float | None = None
    column_iterations: list[int] | None = None
    true_residuals: list[float] | None = None
    final_residual: float | None = None
    inner_stats: dict = field(default_factory=dict)

    @property
    def final_relres(self) -> float:
        """The residual measure that was compared with the tolerance."""
        if self.final_residual is not None:
            return self.final_residual
        return self.relative_residuals[-1] if self.relative_residuals else 0.0


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, report: SolveReport | None = None):
        super().__init__(message)
        self.report = report


def as_apply(op) -> Apply:
    """Turn a matrix, LinearOperator, factor object or callable into ``x -> op(x)``."""
    if op is None:
        return lambda x: x
    if sp.issparse(op) or isinstance(op, np.ndarray):
        return lambda x: op @ x
    if hasattr(op, "matvec"):
        return op.matvec
    if callable(op):
        return op
    raise TypeError(f"cannot apply object of type {type(op).__name__}")


def _true_relres(A: Apply, b, x) -> float:
    bn = np.linalg.norm(b)
    return float(np.linalg.norm(b - A(x)) / bn) if bn > 0 else 0.0


def pcg(A, b, M=None, tol: float = 1e-8, maxit: int = 1000, x0=None) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned conjugate gradients; ``M`` applies the preconditioner inverse."""
    t0 = time.perf_counter()
    Aop, Mop = as_apply(A), as_apply(M)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), SolveReport(0, True, [0.0], "zero_rhs", wall_time=time.perf_counter() - t0,
                                             true_relres=0.0)
    r = b - Aop(x) if x0 is not None else b.copy()
    hist = [np.linalg.norm(r) / bnorm]
    if hist[0] <= tol:
        return x, SolveReport(0, True, hist, wall_time=time.perf_counter() - t0, true_relres=hist[0])
    z = Mop(r)
    p = z.copy()
    rz = r @ z
    flag = "maxit"
    it = 0
    for it in range(1, maxit + 1):
        q = Aop(p)
        pq = p @ q
        if pq <= 0.0:
            flag = "indefinite"
            break
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        hist.append(np.linalg.norm(r) / bnorm)
        if hist[-1] <= tol:
            flag = "converged"
            break
        z = Mop(r)
        rz_new = r @ z
        if rz_new <= 0.0:
            flag = "breakdown"
            break
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, SolveReport(it, flag == "converged", hist, flag, wall_time=time.perf_counter() - t0,
                          true_relres=_true_relres(Aop, b, x))


def pcg_multi(A, B, M=None, tol: float = 1e-8, maxit: int = 1000) -> tuple[np.ndarray, SolveReport]:
    """Independent PCG runs on the columns of ``B`` sharing matrix products.

    ``A`` must act on 2-D arrays column by column (a sparse matrix does) and
    so must ``M``.  The iteration count reported is the largest over columns.
    """
    t0 = time.perf_counter()
    Aop, Mop = as_apply(A), as_apply(M)
    B = np.asarray(B, dtype=float)
    X = np.zeros_like(B)
    bnorm = np.linalg.norm(B, axis=0)
    active = bnorm > 0.0
    safe_b = np.where(active, bnorm, 1.0)
    R = B.copy()
    if not active.any():
        return X, SolveReport(0, True, [0.0], "zero_rhs", wall_time=time.perf_counter() - t0, true_relres=0.0)
    Z = Mop(R)
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    hist = [1.0]
    counts = np.zeros(B.shape[1], dtype=int)
    flag = "maxit"
    it = 0
    for it in range(1, maxit + 1):
        counts += active
        Q = Aop(P)
        pq = np.einsum("ij,ij->j", P, Q)
        if np.any(pq[active] <= 0.0):
            flag = "indefinite"
            break
        alpha = np.where(active, rz / np.where(active, pq, 1.0), 0.0)
        X += P * alpha
        R -= Q * alpha
        rel = np.linalg.norm(R, axis=0) / safe_b
        active &= rel > tol
        hist.append(float(rel.max()))
        if not active.any():
            flag = "converged"
            break
        Z = Mop(R)
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.where(active, rz_new / np.where(rz == 0.0, 1.0, rz), 0.0)
        P = Z + P * beta
        rz = rz_new
    true = np.linalg.norm(B - Aop(X), axis=0) / safe_b
    return X, SolveReport(it, flag == "converged", hist, flag, wall_time=time.perf_counter() - t0,
                          true_relres=float(true.max()), column_iterations=counts.tolist())


def minres(A, b, M=None, tol: float = 1e-8, maxit: int = 1000, x0=None, stop: str = "preconditioned",
           callback=None) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned MINRES for symmetric ``A`` and symmetric positive definite
    preconditioner ``P`` (``M`` applies ``P^{-1}``).

    ``relative_residuals`` records ``||r_k||_{P^{-1}} / ||r_0||_{P^{-1}}``,
    which is non-increasing by construction.  ``stop`` selects the quantity
    compared with ``tol``: that preconditioned ratio, or (``"true"``) the
    Euclidean ratio ``||b - A x_k|| / ||b||``.  The Euclidean residual is
    updated by a short recurrence and confirmed explicitly before stopping.
    """
    if stop not in ("preconditioned", "true"):
        raise ValueError(f"unknown stopping rule {stop!r}")
    t0 = time.perf_counter()
    Aop, Mop = as_apply(A), as_apply(M)
    b = np.asarray(b, dtype=float)
    n = b.size
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r1 = b - Aop(x) if x0 is not None else b.copy()
    y = Mop(r1)
    beta1_sq = r1 @ y
    if beta1_sq < 0.0:
        raise ValueError("preconditioner is not positive definite")
    beta1 = math.sqrt(beta1_sq)
    if beta1 == 0.0:
        return x, SolveReport(0, True, [0.0], "zero_rhs", wall_time=time.perf_counter() - t0,
                              true_relres=_true_relres(Aop, b, x))

    track_true = stop == "true"
    bnorm = np.linalg.norm(b)
    r_true = r1.copy() if track_true else None
    Aw = np.zeros(n) if track_true else None
    Aw2 = np.zeros(n) if track_true else None
    true_hist = [np.linalg.norm(r1) / bnorm] if track_true else None

    oldb, beta, dbar, epsln = 0.0, beta1, 0.0, 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1.copy()
    hist = [1.0]
    flag = "maxit"
    itn = 0
    eps = np.finfo(float).eps
    for itn in range(1, maxit + 1):
        v = y / beta
        Av = Aop(v)
        y = Av
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = v @ y
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = Mop(r2)
        oldb = beta
        beta_sq = r2 @ y
        if beta_sq < 0.0:
            raise ValueError("preconditioner is not positive definite")
        beta = math.sqrt(beta_sq)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(math.hypot(gbar, beta), eps)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        hist.append(phibar / beta1)
        if callback is not None:
            callback(x)
        breakdown = beta <= eps * beta1
        if track_true:
            Aw1, Aw2 = Aw2, Aw
            Aw = (Av - oldeps * Aw1 - delta * Aw2) / gamma
            r_true -= phi * Aw
            true_hist.append(np.linalg.norm(r_true) / bnorm)
            if true_hist[-1] <= tol or breakdown:
                r_true = b - Aop(x)
                true_hist[-1] = np.linalg.norm(r_true) / bnorm
                if true_hist[-1] <= tol:
                    flag = "converged"
                    break
        elif hist[-1] <= tol:
            flag = "converged"
            break
        if breakdown:
            # invariant subspace found: the current iterate is the exact solution
            flag = "converged"
            break
    rep = SolveReport(itn, flag == "converged", hist, flag, wall_time=time.perf_counter() - t0,
                      true_relres=_true_relres(Aop, b, x))
    if track_true:
        rep.true_residuals = true_hist
        rep.final_residual = true_hist[-1]
    return x, rep


def gmres(A, b, M=None, tol: float = 1e-8, maxit: int = 1000, restart: int = 30,
          x0=None) -> tuple[np.ndarray, SolveReport]:
    """Restarted GMRES with left preconditioning and modified Gram-Schmidt.

    ``maxit`` bounds the total number of inner iterations over all cycles.
    A restart cycle that fails to reduce the residual at all ends the run
    with flag ``"stagnation"``.
    """
    t0 = time.perf_counter()
    Aop, Mop = as_apply(A), as_apply(M)
    b = np.asarray(b, dtype=float)
    n = b.size
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(Mop(b))
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, True, [0.0], "zero_rhs", wall_time=time.perf_counter() - t0,
                                        true_relres=0.0)
    m = max(1, int(restart))
    V = np.empty((m + 1, n))
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    total = 0
    hist: list[float] = []
    flag = "maxit"
    r = Mop(b - Aop(x)) if x0 is not None else Mop(b)
    while True:
        beta = np.linalg.norm(r)
        rel0 = beta / bnorm
        if not hist:
            hist.append(rel0)
        if rel0 <= tol:
            flag = "converged"
            break
        if total >= maxit:
            break
        V[0] = r / beta
        g = np.zeros(m + 1)
        g[0] = beta
        k = 0
        done = False
        for j in range(m):
            wv = Mop(Aop(V[j]))
            for i in range(j + 1):
                H[i, j] = V[i] @ wv
                wv -= H[i, j] * V[i]
            hnext = np.linalg.norm(wv)
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = math.hypot(H[j, j], hnext)
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / denom, hnext / denom
            H[j, j] = denom
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            k = j + 1
            hist.append(abs(g[j + 1]) / bnorm)
            if hist[-1] <= tol:
                flag = "converged"
                done = True
                break
            if hnext <= np.finfo(float).eps * beta:
                # lucky breakdown: exact solution lies in the current space
                flag = "converged"
                done = True
                break
            if total >= maxit:
                done = True
                break
            V[j + 1] = wv / hnext
        if k > 0 and H[k - 1, k - 1] != 0.0:
            yk = _back_substitute(H[:k, :k], g[:k])
            x += V[:k].T @ yk
        if done:
            break
        r = Mop(b - Aop(x))
        if np.linalg.norm(r) >= beta * (1.0 - 1e-14):
            flag = "stagnation"
            break
    return x, SolveReport(total, flag == "converged", hist, flag, wall_time=time.perf_counter() - t0,
                          true_relres=_true_relres(Aop, b, x))


def _back_substitute(R: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i]
    return y


def write_history_csv(report: SolveReport, path: str | Path) -> None:
    """Write ``iteration,relres`` rows for a residual history."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["iteration", "relres"])
        for k, r in enumerate(report.relative_residuals):
            out.writerow([k, f"{r:.6e}"])
