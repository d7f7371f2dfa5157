"""Dense brute-force checks of the eigenvalue bounds, the inf-sup constant
and the convergence rates on small meshes.

Slack policy per bound:

* ``S_hat_e^{-1} S_e`` and ``P_de^{-1} A_e``: the lower endpoints carry an
  ``O(h^d)`` term, modelled as ``2 * max|K| / rho`` (factor-2 margin).
* ``S_hat^{-1} S`` and ``P_d^{-1} A`` (two-field): no modelled term, 1e-8.
* ``M^{-1}(eps M + rho w w^T + B A1^{-1} B^T)``: the ``O(N rho^2)`` term is
  modelled as ``2 N rho^2 / (|Omega| min|K|)``.
* three-field Schur pair: 1e-8, with the endpoints built from the measured
  extremes of the previous matrix.

Every constant (``beta``, ``gamma``, extreme eigenvalues of ``M``, ``A1``
and ``D_tilde``) is measured, never assumed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import elasticity, poro2, poro3, problems
from .mesh import Mesh, build_structured_mesh, mesh_stats
from .wgfem import (PhysicalParams, WgBlocks, WgField, assemble, assemble_elasticity, assemble_loads,
                    element_quadrature, rt0_evaluate, weak_gradient)

DENSE_CAP = 4000
MESH_CAPS = {2: 8, 3: 3}
SLACK = 1e-8


class DimensionCapError(ValueError):
    """Raised when a dense check is requested on a problem above desk scale."""


def subdivisions(mesh: Mesh) -> int:
    """Recover ``n`` of a structured mesh from its element count."""
    per_cell = 2 if mesh.dim == 2 else 6
    return round((mesh.n_elements / per_cell) ** (1.0 / mesh.dim))


def check_caps(mesh: Mesh) -> None:
    cap = MESH_CAPS[mesh.dim]
    n = subdivisions(mesh)
    if n > cap:
        raise DimensionCapError(f"dense checks are capped at n <= {cap} in {mesh.dim}D (got n = {n})")


@dataclass
class BoundConstants:
    beta: float
    gamma: float
    C3: float
    C4: float
    C5: float
    m_min: float
    m_max: float
    a1_min: float
    a1_max: float
    rho_opt: float
    dtilde_min: float | None = None

    def violations(self, dim: int) -> list[str]:
        out = []
        if not 0 < self.beta < 1:
            out.append(f"beta = {self.beta:.6g} outside (0, 1)")
        if not 0 < self.gamma <= 1 + 1e-12:
            out.append(f"gamma = {self.gamma:.6g} outside (0, 1]")
        if not (self.C3 > 0 and self.C4 > 0):
            out.append("C3 and C4 must be positive")
        if self.C5 < dim:
            out.append(f"C5 = {self.C5:.6g} < d")
        return out


@dataclass
class SpectrumReport:
    lemma: str
    eigenvalues: np.ndarray
    intervals: list[tuple[float, float]]
    slack: float
    violations: list[tuple[float, float]] = field(default_factory=list)
    hard: bool = True
    mesh_n: int | None = None
    lam: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.violations and not self.info.get("failures")

    @property
    def min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def lower(self) -> float:
        return min(lo for lo, _ in self.intervals)

    @property
    def upper(self) -> float:
        return max(hi for _, hi in self.intervals)


def jacobi_eigenvalues(A: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Iterates until the off-diagonal Frobenius norm drops below
    ``tol * ||A||_F``.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    scale = np.linalg.norm(A) or 1.0
    for _ in range(max_sweeps):
        off = math.sqrt(2.0) * np.linalg.norm(np.triu(A, 1))
        if off <= tol * scale:
            return np.sort(np.diag(A))
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p], A[:, q] = c * ap - s * aq, s * ap + c * aq
                ap, aq = A[p, :].copy(), A[q, :].copy()
                A[p, :], A[q, :] = c * ap - s * aq, s * ap + c * aq
    raise RuntimeError(f"Jacobi did not converge in {max_sweeps} sweeps")


def _as_dense(A) -> np.ndarray:
    if sp.issparse(A):
        return A.toarray()
    if hasattr(A, "to_sparse"):
        return A.to_sparse().toarray()
    return np.asarray(A, dtype=float)


def dense_spectrum(A, B=None, intervals=None, slack: float = SLACK, lemma: str = "",
                   method: str = "eigh") -> SpectrumReport:
    """Eigenvalues of the symmetric pencil ``(A, B)`` (``B = I`` when omitted).

    ``B`` must be SPD.  Nonsymmetric operators are not accepted; pass the
    similar symmetric form instead.
    """
    A = _as_dense(A)
    n = A.shape[0]
    if n > DENSE_CAP:
        raise DimensionCapError(f"dense spectrum capped at dimension {DENSE_CAP} (got {n})")
    scale = np.abs(A).max() or 1.0
    if np.abs(A - A.T).max() > 1e-10 * scale:
        raise ValueError("operator is not symmetric")
    A = 0.5 * (A + A.T)
    if B is None:
        if method == "jacobi":
            eig = jacobi_eigenvalues(A)
        elif method == "eigh":
            eig = la.eigh(A, eigvals_only=True)
        else:
            raise ValueError(f"unknown method {method!r}")
    else:
        Bd = _as_dense(B)
        Bd = 0.5 * (Bd + Bd.T)
        if method == "jacobi":
            L = la.cholesky(Bd, lower=True)
            X = la.solve_triangular(L, A, lower=True)
            eig = jacobi_eigenvalues(la.solve_triangular(L, X.T, lower=True))
        else:
            eig = la.eigh(A, Bd, eigvals_only=True)
    eig = np.sort(np.asarray(eig, dtype=float))
    if not np.all(np.isfinite(eig)):
        raise FloatingPointError("non-finite eigenvalues")
    intervals = list(intervals) if intervals is not None else [(-np.inf, np.inf)]
    return SpectrumReport(lemma, eig, intervals, slack, _violations(eig, intervals, slack))


def _violations(eig, intervals, slack):
    out = []
    for e in eig:
        dist = min(max(lo - slack - e, e - hi - slack, 0.0) for lo, hi in intervals)
        if dist > 0:
            out.append((float(e), float(dist)))
    return out


# ---------------------------------------------------------------------------
# dense building blocks


@dataclass
class _Dense:
    mesh: Mesh
    params: PhysicalParams
    blocks: WgBlocks
    A1: np.ndarray
    B: np.ndarray
    m: np.ndarray
    G: np.ndarray  # B A1^{-1} B^T

    @property
    def omega(self) -> float:
        return float(self.m.sum())

    @property
    def w(self) -> np.ndarray:
        return self.m / np.linalg.norm(self.m)

    def d_tilde(self) -> np.ndarray:
        p, N = self.params, self.blocks.n_p_int
        Ap = self.blocks.A_p.toarray()
        schur = Ap[:N, :N] - Ap[:N, N:] @ np.linalg.solve(Ap[N:, N:], Ap[N:, :N])
        return p.c0 * np.diag(self.m) + p.kappa * p.dt * schur


def _dense(mesh: Mesh, params: PhysicalParams, blocks: WgBlocks | None = None) -> _Dense:
    check_caps(mesh)
    blocks = blocks or assemble(mesh, params)
    A1 = blocks.A1.toarray()
    B = blocks.B_int.toarray()
    G = B @ la.cho_solve(la.cho_factor(A1), B.T)
    return _Dense(mesh, params, blocks, A1, B, blocks.M_int.diagonal().copy(), 0.5 * (G + G.T))


def measure_inf_sup(blocks: WgBlocks, mesh: Mesh | None = None) -> float:
    """``beta``: square root of the smallest eigenvalue of ``(B A1^{-1} B^T, M)``
    on the M-orthogonal complement of the constants."""
    mesh = mesh or blocks.mesh
    dn = _dense(mesh, blocks.params, blocks)
    Q = la.null_space(dn.m[None, :])
    G = Q.T @ dn.G @ Q
    Mq = Q.T @ (dn.m[:, None] * Q)
    beta2 = la.eigh(0.5 * (G + G.T), 0.5 * (Mq + Mq.T), eigvals_only=True)[0]
    return math.sqrt(max(beta2, 0.0))


def bound_constants(blocks: WgBlocks, mesh: Mesh | None = None) -> BoundConstants:
    mesh = mesh or blocks.mesh
    d = mesh.dim
    m = blocks.M_int.diagonal()
    beta = measure_inf_sup(blocks, mesh)
    gamma = float(m.sum() / (math.sqrt(m.size) * np.linalg.norm(m)))
    lo, hi = float(m.min()), float(m.max())
    b2, g2 = beta**2, gamma**2
    a1 = la.eigh(blocks.A1.toarray(), eigvals_only=True)
    dtilde_min = None
    if blocks.A_p is not None:
        dtilde_min = float(la.eigh(_dense(mesh, blocks.params, blocks).d_tilde(), eigvals_only=True)[0])
    return BoundConstants(
        beta=beta, gamma=gamma,
        C3=b2 * lo / hi * g2,
        C4=b2 * g2 * lo / (hi + g2 * lo),
        C5=d + b2 * hi / (hi + g2 * lo),
        m_min=lo, m_max=hi,
        a1_min=float(a1[0]), a1_max=float(a1[-1]),
        rho_opt=b2 * hi * lo / (hi + g2 * lo),
        dtilde_min=dtilde_min,
    )


# ---------------------------------------------------------------------------
# individual bounds


def _chol_inv_sandwich(L: np.ndarray, X: np.ndarray, R: np.ndarray | None = None) -> np.ndarray:
    """``L^{-1} X R^{-T}`` for lower-triangular ``L`` and ``R``."""
    R = L if R is None else R
    Y = la.solve_triangular(L, X, lower=True)
    return la.solve_triangular(R, Y.T, lower=True).T


def elasticity_schur(dn: _Dense, rho: float, bc: BoundConstants) -> SpectrumReport:
    eps, d, w = dn.params.epsilon, dn.mesh.dim, dn.w
    S = eps * np.diag(dn.m) + rho * np.outer(w, w) + dn.G
    S_hat = np.diag(dn.m) + rho * np.outer(w, w)
    h_term = 2.0 * bc.m_max / rho
    rep = dense_spectrum(S, S_hat, [(bc.C3, d + eps)], lemma="elasticity_schur")
    # the O(h^d) term only relaxes the lower endpoint
    rep.violations = _violations(rep.eigenvalues, [(bc.C3 - h_term, d + eps)], SLACK)
    rep.slack = h_term
    rep.info.update(C3=bc.C3, h_term=h_term)
    if rep.min <= 0:
        rep.info["failures"] = ["non-positive eigenvalue"]
    return rep


def elasticity_preconditioned(dn: _Dense, rho: float, bc: BoundConstants) -> SpectrumReport:
    """Spectrum of ``P_de^{-1} A_e`` through the similar form ``P^{-1/2} A P^{-1/2}``."""
    eps, d, w = dn.params.epsilon, dn.mesh.dim, dn.w
    La = la.cholesky(dn.A1, lower=True)
    Ls = la.cholesky(np.diag(dn.m) + rho * np.outer(w, w), lower=True)
    X = -_chol_inv_sandwich(Ls, dn.B, La)
    C = -_chol_inv_sandwich(Ls, eps * np.diag(dn.m) + rho * np.outer(w, w))
    n_u = dn.A1.shape[0]
    H = np.block([[np.eye(n_u), X.T], [X, C]])
    q = (1 - eps) + math.sqrt((1 - eps) ** 2 + 4 * (d + eps))
    r3 = math.sqrt(bc.C3)
    intervals = [(-(d + eps) / r3, -2 * bc.C3 / q), (r3, q / 2)]
    rep = dense_spectrum(H, intervals=intervals, lemma="elasticity_preconditioned")
    h_term = 2.0 * bc.m_max / rho
    relaxed = [(-(d + eps) / r3 - h_term, -2 * bc.C3 / q + h_term), (r3 - h_term, q / 2)]
    rep.violations = _violations(rep.eigenvalues, relaxed, SLACK)
    rep.slack = h_term
    neg = rep.eigenvalues[rep.eigenvalues < 0]
    pos = rep.eigenvalues[rep.eigenvalues > 0]
    rep.info.update(gap=(float(neg.max()) if neg.size else None, float(pos.min()) if pos.size else None))
    return rep


def _two_field_coupling(dn: _Dense) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cholesky factors of ``K = eps A1 + A0`` and ``S_hat = (eps/mu) D``, and
    ``Z = c L_S^{-1} B L_K^{-T}`` so that ``S_hat^{-1} S ~ I + Z Z^T``."""
    p = dn.params
    eps = p.epsilon
    c = p.alpha * eps / p.mu
    K = eps * dn.A1 + dn.blocks.A0.toarray()
    Lk = la.cholesky(0.5 * (K + K.T), lower=True)
    Ls = la.cholesky((eps / p.mu) * dn.blocks.D.toarray(), lower=True)
    Bf = dn.blocks.B_full.toarray()
    Z = c * _chol_inv_sandwich(Ls, Bf, Lk)
    return Lk, Ls, Z


def two_field_schur(dn: _Dense) -> SpectrumReport:
    p, d = dn.params, dn.mesh.dim
    upper = 1 + p.alpha**2 * d / (p.c0 * p.mu)
    _, _, Z = _two_field_coupling(dn)
    # S_hat^{-1/2} S S_hat^{-1/2} = I + Z Z^T; the perturbation is formed
    # separately so that the unit eigenvalues are not lost to cancellation
    E = Z @ Z.T
    nu = dense_spectrum(E, lemma="two_field_schur").eigenvalues
    eig = 1.0 + nu
    rep = SpectrumReport("two_field_schur", eig, [(1.0, upper)], SLACK, _violations(eig, [(1.0, upper)], SLACK))
    tol = 1e-10 * max(1.0, float(nu[-1]))
    mult = int(np.sum(np.abs(nu) <= tol))
    required = dn.blocks.n_p_facet + 1
    rep.info.update(multiplicity_one=mult, required=required, attained_lower=float(eig[0]))
    if mult < required:
        rep.info["failures"] = [f"eigenvalue 1 has multiplicity {mult} < {required}"]
    return rep


def two_field_preconditioned(dn: _Dense) -> SpectrumReport:
    p, d = dn.params, dn.mesh.dim
    top = math.sqrt(1 + p.alpha**2 * d / (p.c0 * p.mu))
    _, _, Z = _two_field_coupling(dn)
    n_u, n_p = Z.shape[1], Z.shape[0]
    H = np.block([[np.eye(n_u), -Z.T], [-Z, -np.eye(n_p)]])
    return dense_spectrum(H, intervals=[(-top, -1.0), (1.0, top)], lemma="two_field_preconditioned")


def three_field_b(dn: _Dense, rho: float, bc: BoundConstants) -> SpectrumReport:
    """``M^{-1}(eps M + rho w w^T + B A1^{-1} B^T)``."""
    eps, d, w = dn.params.epsilon, dn.mesh.dim, dn.w
    N = dn.m.size
    lo = eps + min(bc.gamma**2 * rho / bc.m_max, bc.beta**2 - rho / bc.m_min)
    hi = eps + d + rho / bc.m_min
    delta = 2.0 * N * rho**2 / (dn.omega * bc.m_min)
    S = eps * np.diag(dn.m) + rho * np.outer(w, w) + dn.G
    rep = dense_spectrum(S, np.diag(dn.m), [(lo, hi)], lemma="three_field_b")
    rep.violations = _violations(rep.eigenvalues, [(lo - delta, hi + delta)], SLACK)
    rep.slack = delta
    rep.info.update(C4=bc.C4, C5=bc.C5, rho=rho, rho_opt=bc.rho_opt, delta=delta)
    return rep


def three_field_schur(dn: _Dense, rho: float, bc: BoundConstants, b_rep: SpectrumReport) -> SpectrumReport:
    """Reduced three-field Schur pair ``(S3, S3_hat)`` with ``D_tilde``."""
    p = dn.params
    eps, w, N = p.epsilon, dn.w, dn.m.size
    Dt = dn.d_tilde()
    E = eps * np.diag(dn.m) + rho * np.outer(w, w)
    mid = (p.mu / p.alpha**2) * Dt + E
    S3 = np.block([[mid, E], [E, E + dn.G]])
    S3_hat = np.block([[mid, np.zeros((N, N))], [np.zeros((N, N)), np.diag(dn.m)]])
    b_min, b_max = b_rep.min, b_rep.max
    dmin = (p.mu / p.alpha**2) * bc.dtilde_min
    lo = b_min / (1 + b_min) * dmin / (rho + eps * bc.m_max + dmin)
    hi = 1 + b_max
    rep = dense_spectrum(S3, S3_hat, [(lo, hi)], lemma="three_field_schur")
    rep.info.update(b_min=b_min, b_max=b_max, dtilde_min=bc.dtilde_min,
                    upper_from_constants=1 + bc.C5 + eps)
    if rep.min <= 0:
        rep.info["failures"] = ["non-positive eigenvalue"]
    return rep


CASES = ("elasticity", "two_field", "three_field")


def verify_bounds(case: str, mesh: Mesh, params: PhysicalParams, rho: float | str | None = None,
                  blocks: WgBlocks | None = None) -> list[SpectrumReport]:
    """Check the eigenvalue bounds belonging to ``case``.

    ``rho`` defaults to 1 for elasticity and to ``0.1 * min|K|`` for the
    three-field system; ``rho="optimal"`` selects the formula that balances
    the two lower estimates.  Violations are returned as data.
    """
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}")
    dn = _dense(mesh, params, blocks)
    bc = bound_constants(dn.blocks, mesh)
    n = subdivisions(mesh)
    if case == "elasticity":
        r = 1.0 if rho is None else (bc.rho_opt if rho == "optimal" else float(rho))
        reports = [elasticity_schur(dn, r, bc), elasticity_preconditioned(dn, r, bc)]
    elif case == "two_field":
        reports = [two_field_schur(dn), two_field_preconditioned(dn)]
    else:
        if rho is None:
            r = poro3.choose_rho(dn.m)
        else:
            r = bc.rho_opt if rho == "optimal" else float(rho)
        b_rep = three_field_b(dn, r, bc)
        reports = [b_rep, three_field_schur(dn, r, bc, b_rep)]
    for rep in reports:
        rep.mesh_n, rep.lam = n, params.lam
        rep.info.setdefault("constants", bc)
    return reports


def write_oracle_csv(reports: list[SpectrumReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["lemma", "mesh_n", "lambda", "min_eig", "max_eig", "lower_bound", "upper_bound", "pass"])
        for r in reports:
            out.writerow([r.lemma, r.mesh_n, f"{r.lam:g}", f"{r.min:.12g}", f"{r.max:.12g}",
                          f"{r.lower:.12g}", f"{r.upper:.12g}", int(r.passed)])


# ---------------------------------------------------------------------------
# convergence rates


def gradient_error(mesh: Mesh, u: WgField, grad_exact) -> float:
    """``|| grad u - grad_w u_h ||_{L2}`` with the degree-2 element rule."""
    pts, wts = element_quadrature(mesh)
    exact = np.asarray(grad_exact(pts.reshape(-1, mesh.dim))).reshape(pts.shape[:2] + (u.components, mesh.dim))
    coeffs = weak_gradient(mesh, u)
    total = 0.0
    for c in range(u.components):
        diff = exact[:, :, c, :] - rt0_evaluate(mesh, coeffs[:, c, :], pts)
        total += float(np.einsum("kq,kqd,kqd->", wts, diff, diff))
    return math.sqrt(total)


def l2_error(mesh: Mesh, p: WgField, exact) -> float:
    """``|| p - p_h ||_{L2}`` for the interior part of a scalar field."""
    pts, wts = element_quadrature(mesh)
    vals = np.asarray(exact(pts.reshape(-1, mesh.dim))).reshape(pts.shape[:2])
    diff = vals - p.interior[:, 0][:, None]
    return math.sqrt(float(np.sum(wts * diff * diff)))


def slope(h, err) -> float:
    """Least-squares slope of ``log err`` against ``log h``."""
    return float(np.polyfit(np.log(np.asarray(h, float)), np.log(np.asarray(err, float)), 1)[0])


@dataclass
class RateTable:
    kind: str
    rows: list[dict]
    rate: float

    def column(self, key: str) -> list:
        return [r[key] for r in self.rows]


def direct_march(mesh: Mesh, params: PhysicalParams, problem: problems.PoroProblem, steps: int,
                 blocks: WgBlocks | None = None) -> poro2.PoroState:
    """Implicit Euler to ``t = steps * dt`` with a sparse LU of the two-field matrix."""
    blocks = blocks or assemble(mesh, params)
    op = poro2.two_field_operator(blocks, params)
    lu = splu(op.to_sparse().tocsc())
    state = poro2.PoroState.zeros(mesh)
    for k in range(1, steps + 1):
        t = k * params.dt
        system = poro2.assemble_two_field(mesh, params, state, problem.f(t), problem.s(t), blocks, t, op)
        state = system.state_from(lu.solve(system.rhs))
    return state


def poro_errors(mesh: Mesh, problem: problems.PoroProblem, state: poro2.PoroState) -> tuple[float, float]:
    t = state.t
    return gradient_error(mesh, state.u, problem.grad_u_exact(t)), l2_error(mesh, state.p, problem.p_exact(t))


def convergence_study(problem: str = "poro", ns=(8, 16, 32), lam: float = 1.0, T: float = 0.5,
                      steps_per_n: float = 0.25, dim: int = 2, mu: float | None = None) -> RateTable:
    """Spatial convergence on a structured family.

    For ``problem="poro"`` the step count is ``steps_per_n * n`` so that
    ``dt`` is proportional to ``h``; the error is
    ``||grad u - grad_w u_h|| + ||p - p_h||`` at ``t = T``.  For
    ``problem="elasticity"`` only the gradient error is used.
    """
    if dim != 2:
        raise ValueError("closed-form solutions are available in 2D only")
    rows = []
    for n in ns:
        mesh = build_structured_mesh(dim, n)
        h = mesh_stats(mesh)["h_max"]
        if problem == "poro":
            steps = max(1, round(steps_per_n * n))
            params = PhysicalParams(mu=1.0 if mu is None else mu, lam=lam, dt=T / steps)
            prob = problems.poro_2d(params)
            state = direct_march(mesh, params, prob, steps)
            eu, ep = poro_errors(mesh, prob, state)
            rows.append(dict(n=n, h=h, dt=params.dt, err_grad_u=eu, err_p=ep, error=eu + ep))
        elif problem == "elasticity":
            params = PhysicalParams(mu=0.5 if mu is None else mu, lam=lam)
            prob = problems.elasticity_2d(params)
            blocks = assemble_elasticity(mesh, params)
            b1, _ = assemble_loads(mesh, prob.f, None, params)
            u_bd = WgField.interpolate(mesh, prob.u_exact, 2).boundary_vector()
            g = elasticity.elasticity_rhs(blocks, params, b1, u_bd)
            u = WgField.from_free(mesh, elasticity.unregularized_solution(blocks, g, params), 2, u_bd)
            eu = gradient_error(mesh, u, prob.grad_u_exact)
            rows.append(dict(n=n, h=h, err_grad_u=eu, error=eu))
        else:
            raise ValueError(f"unknown problem {problem!r}")
    return RateTable(f"{problem}-space", rows, slope([r["h"] for r in rows], [r["error"] for r in rows]))


def temporal_study(n: int = 16, steps=(2, 4, 8, 16), lam: float = 1.0, T: float = 0.5,
                   reference_steps: int = 512) -> RateTable:
    """Temporal convergence at fixed ``h`` against a fine-step reference.

    Uses the 2D manufactured solution with the profile ``g(t) = sin(pi t)``
    (the default linear profile is integrated exactly by implicit Euler).
    Comparing with a fine-step discrete solution on the same mesh removes
    the spatial error.
    """
    mesh = build_structured_mesh(2, n)
    profile = (lambda t: math.sin(math.pi * t), lambda t: math.pi * math.cos(math.pi * t))

    def run(k):
        params = PhysicalParams(mu=1.0, lam=lam, dt=T / k)
        return direct_march(mesh, params, problems.poro_2d(params, profile), k)

    ref = run(reference_steps)
    rows = []
    for k in steps:
        st = run(k)
        du = WgField(st.u.interior - ref.u.interior, st.u.facet - ref.u.facet, st.u.dirichlet_mask)
        eu = gradient_error(mesh, du, lambda x: np.zeros((x.shape[0], 2, 2)))
        ep = l2_error(mesh, WgField(st.p.interior - ref.p.interior, st.p.facet, st.p.dirichlet_mask),
                      lambda x: np.zeros(x.shape[0]))
        rows.append(dict(steps=k, dt=T / k, err_grad_u=eu, err_p=ep, error=eu + ep))
    return RateTable("poro-time", rows, slope([r["dt"] for r in rows], [r["error"] for r in rows]))
