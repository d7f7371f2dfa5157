import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from porowg.linalg import (BlockOperator, LowRankUpdate, SPDSolver, gmres, ichol_droptol, minres, pcg,
                           smw_rank1_apply, write_history_csv)

from conftest import blocks


def spd(n, seed, cond=50.0):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * np.geomspace(1.0, cond, n)) @ Q.T


def test_ichol_diagonal_is_exact():
    A = sp.diags([4.0, 9.0, 16.0])
    L = ichol_droptol(A).to_sparse().toarray()
    assert np.allclose(L, np.diag([2.0, 3.0, 4.0]))


def test_ichol_without_dropping_is_cholesky():
    A = spd(12, 3)
    L = ichol_droptol(sp.csr_matrix(A), droptol=0.0).to_sparse().toarray()
    assert np.abs(L @ L.T - A).max() <= 1e-12


def test_ichol_tridiagonal_makes_pcg_direct():
    A = sp.diags([-np.ones(4), 2.5 * np.ones(5), -np.ones(4)], [-1, 0, 1], format="csr")
    x, rep = pcg(A, np.ones(5), ichol_droptol(A, 1e-3), tol=1e-12)
    assert rep.converged and rep.iterations <= 5


def test_ichol_rejects_bad_input():
    with pytest.raises(ValueError):
        ichol_droptol(sp.diags([1.0, -1.0]))


def test_pcg_examples():
    _, rep = pcg(np.eye(6), np.ones(6))
    assert rep.iterations == 1
    x, rep = pcg(np.diag(np.arange(1.0, 11.0)), np.ones(10), tol=1e-12)
    assert rep.iterations <= 10
    assert np.allclose(x, 1 / np.arange(1.0, 11.0))


def test_pcg_h_stable_on_a1():
    counts = []
    for n in (8, 16):
        A = blocks(2, n).A_scalar
        b = np.random.default_rng(n).standard_normal(A.shape[0])
        x, rep = pcg(A, b, ichol_droptol(A, 1e-3), tol=1e-12)
        assert rep.converged and np.linalg.norm(b - A @ x) <= 1e-12 * np.linalg.norm(b) * 1.01
        counts.append(rep.iterations)
    assert counts[1] <= 2 * counts[0] + 2


def test_minres_examples():
    x, rep = minres(np.diag([1.0, -1.0]), np.ones(2), tol=1e-12)
    assert rep.iterations <= 2 and np.allclose(x, [1.0, -1.0])
    _, rep = minres(np.eye(4), np.ones(4))
    assert rep.iterations == 1


def test_gmres_examples():
    _, rep = gmres(np.eye(4), np.ones(4))
    assert rep.iterations == 1
    P = np.eye(3)[[1, 2, 0]]
    x, rep = gmres(P, np.eye(3)[0], tol=1e-12)
    assert rep.iterations <= 3 and np.allclose(P @ x, np.eye(3)[0])


def test_zero_rhs():
    for solver in (pcg, minres, gmres):
        x, rep = solver(np.eye(3), np.zeros(3))
        assert rep.converged and not x.any()


@settings(max_examples=15, deadline=None)
@given(n=st.integers(5, 40), seed=st.integers(0, 10**6), shift=st.floats(-20.0, 20.0))
def test_minres_history_monotone(n, seed, shift):
    # symmetric indefinite matrix with an SPD preconditioner
    rng = np.random.default_rng(seed)
    A = spd(n, seed) - shift * np.eye(n)
    if np.min(np.abs(np.linalg.eigvalsh(A))) < 1e-3:
        A += 0.5 * np.eye(n)
    P = spd(n, seed + 1, cond=5.0)
    Pinv = np.linalg.inv(P)
    for stop in ("preconditioned", "true"):
        x, rep = minres(A, rng.standard_normal(n), Pinv, tol=1e-10, maxit=5 * n, stop=stop)
        h = np.asarray(rep.relative_residuals)
        assert np.all(np.diff(h) <= 1e-12 * h[0])


@settings(max_examples=15, deadline=None)
@given(n=st.integers(5, 40), seed=st.integers(0, 10**6))
def test_gmres_history_monotone_within_cycle(n, seed):
    rng = np.random.default_rng(seed)
    A = np.eye(n) + 0.3 * rng.standard_normal((n, n)) / np.sqrt(n)
    x, rep = gmres(A, rng.standard_normal(n), tol=1e-10, restart=n + 1)
    h = np.asarray(rep.relative_residuals)
    assert np.all(np.diff(h) <= 1e-12)
    assert rep.converged


@settings(max_examples=15, deadline=None)
@given(n=st.integers(3, 30), seed=st.integers(0, 10**6))
def test_pcg_and_minres_agree(n, seed):
    tol = 1e-9
    A = spd(n, seed)
    P = np.linalg.inv(spd(n, seed + 7, cond=3.0))
    b = np.random.default_rng(seed).standard_normal(n)
    x1, _ = pcg(A, b, P, tol=tol)
    x2, _ = minres(A, b, P, tol=tol, stop="true")
    x = np.linalg.solve(A, b)
    assert np.linalg.norm(x1 - x2) <= 10 * tol * np.linalg.cond(A) * np.linalg.norm(x)


def test_gmres_restart_and_maxit():
    rng = np.random.default_rng(0)
    n = 60
    A = np.diag(np.linspace(1, 100, n)) + 0.1 * rng.standard_normal((n, n))
    b = rng.standard_normal(n)
    x, rep = gmres(A, b, tol=1e-10, restart=10, maxit=2000)
    assert rep.converged and np.linalg.norm(b - A @ x) <= 1e-8 * np.linalg.norm(b)
    _, rep = gmres(A, b, tol=1e-14, restart=5, maxit=7)
    assert not rep.converged and rep.iterations <= 7


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 60), seed=st.integers(0, 10**6), rho=st.floats(0.0, 1e3))
def test_smw_inverts_dense_update(n, seed, rho):
    rng = np.random.default_rng(seed)
    m = rng.uniform(0.1, 10.0, n)
    w = rng.standard_normal(n)
    w /= np.linalg.norm(w)
    x = rng.standard_normal(n)
    y = smw_rank1_apply(m, w, rho, x)
    assert np.allclose(m * y + rho * (w @ y) * w, x, rtol=0, atol=1e-12 * max(1.0, np.abs(x).max()) * 10)


def test_smw_examples():
    assert np.allclose(smw_rank1_apply(np.array([2.0, 4.0]), np.array([1.0, 0.0]), 0.0, np.ones(2)), [0.5, 0.25])
    e1 = np.eye(3)[0]
    assert np.allclose(smw_rank1_apply(np.ones(3), e1, 1.0, e1), 0.5 * e1)
    rng = np.random.default_rng(5)
    m, w, x = rng.uniform(1, 2, 50), rng.standard_normal(50), rng.standard_normal(50)
    w /= np.linalg.norm(w)
    y = smw_rank1_apply(m, w, 1.0, x)
    assert np.allclose(np.linalg.solve(np.diag(m) + np.outer(w, w), x), y, atol=1e-12)
    with pytest.raises(ValueError):
        smw_rank1_apply(m, 2 * w, 1.0, x)
    with pytest.raises(ValueError):
        smw_rank1_apply(m, w, -1.0, x)


def test_block_operator_matches_sparse():
    rng = np.random.default_rng(2)
    A = sp.random(5, 5, 0.5, random_state=1) + sp.eye(5)
    B = sp.random(3, 5, 0.5, random_state=2)
    op = BlockOperator([[A, B.T], [B, None]])
    S = op.to_sparse()
    for _ in range(20):
        x = rng.standard_normal(8)
        assert np.allclose(op @ x, S @ x, rtol=1e-12, atol=1e-14)
    with pytest.raises(ValueError):
        BlockOperator([[A, B], [B, None]])


def test_low_rank_update():
    w = np.array([0.6, 0.8])
    op = LowRankUpdate(np.eye(2), w, 2.0)
    assert np.allclose(op @ np.ones(2), np.ones(2) + 2.0 * 1.4 * w)


def test_spd_solver_components():
    b = blocks(2, 4)
    solver = SPDSolver(b.A_scalar, tol=1e-12, components=2)
    r = np.random.default_rng(0).standard_normal(b.A1.shape[0])
    y = solver(r)
    assert np.linalg.norm(b.A1 @ y - r) <= 1e-10 * np.linalg.norm(r)
    assert solver.iterations > 0
    with pytest.raises(ValueError):
        solver(r[:-1])


def test_history_csv(tmp_path):
    _, rep = minres(np.diag([1.0, 2.0, 3.0]), np.ones(3))
    write_history_csv(rep, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert len(lines) == len(rep.relative_residuals) + 1
