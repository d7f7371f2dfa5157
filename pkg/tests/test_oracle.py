import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from porowg import oracle
from porowg.mesh import build_structured_mesh
from porowg.oracle import (DimensionCapError, bound_constants, dense_spectrum, jacobi_eigenvalues,
                           measure_inf_sup, verify_bounds, write_oracle_csv)
from porowg.poro2 import two_field_operator
from porowg.wgfem import PhysicalParams

from conftest import blocks, mesh


def by_lemma(reports):
    return {r.lemma: r for r in reports}


def test_identity_spectrum():
    rep = dense_spectrum(np.eye(5), intervals=[(1.0, 1.0)])
    assert np.all(rep.eigenvalues == 1.0) and rep.passed


@settings(max_examples=15, deadline=None)
@given(n=st.integers(1, 25), seed=st.integers(0, 10**6))
def test_jacobi_matches_lapack(n, seed):
    X = np.random.default_rng(seed).standard_normal((n, n))
    A = X + X.T
    assert np.allclose(jacobi_eigenvalues(A), np.linalg.eigvalsh(A), atol=1e-10 * max(1.0, np.abs(A).max()))


def test_jacobi_pencil_matches_eigh():
    b = blocks(2, 2)
    dn = oracle._dense(mesh(2, 2), b.params, b)
    S = dn.G + np.outer(dn.w, dn.w)
    e1 = dense_spectrum(S, np.diag(dn.m)).eigenvalues
    e2 = dense_spectrum(S, np.diag(dn.m), method="jacobi").eigenvalues
    assert np.allclose(e1, e2, atol=1e-10)


def test_nonsymmetric_rejected():
    with pytest.raises(ValueError):
        dense_spectrum(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_dimension_caps():
    with pytest.raises(DimensionCapError):
        verify_bounds("two_field", build_structured_mesh(3, 4), PhysicalParams())
    with pytest.raises(DimensionCapError):
        verify_bounds("elasticity", build_structured_mesh(2, 9), PhysicalParams())
    with pytest.raises(ValueError):
        verify_bounds("four_field", mesh(2, 2), PhysicalParams())


@pytest.mark.parametrize("dim,n", [(2, 2), (3, 1)])
def test_dense_and_sparse_operators_agree(dim, n):
    b = blocks(dim, n)
    op = two_field_operator(b, b.params)
    dense = op.to_sparse().toarray()
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.standard_normal(op.shape[0])
        y = op @ x
        assert np.linalg.norm(dense @ x - y) <= 1e-12 * np.linalg.norm(y)


def test_inf_sup_constant():
    betas = [measure_inf_sup(blocks(2, n)) for n in (2, 4)]
    assert all(0 < b < 1 for b in betas)
    assert abs(betas[1] - betas[0]) <= 0.2 * betas[0]
    # the constant pressure is in the kernel of B^T
    b = blocks(2, 4)
    ones = np.ones(b.B_int.shape[0])
    assert np.linalg.norm(b.B_int.T @ ones) <= 1e-12 * np.linalg.norm(b.B_int.data)


@pytest.mark.parametrize("dim,n", [(2, 2), (2, 4), (3, 1)])
def test_c3_definition_identity(dim, n):
    b = blocks(dim, n)
    bc = bound_constants(b)
    m = b.M_int.diagonal()
    assert bc.C3 == pytest.approx(bc.beta**2 * m.min() / m.max() * bc.gamma**2, rel=1e-12)
    assert bc.violations(dim) == []


def test_elasticity_bounds():
    reps = by_lemma(verify_bounds("elasticity", mesh(2, 2), PhysicalParams(mu=0.5, lam=1e4)))
    s = reps["elasticity_schur"]
    eps = PhysicalParams(mu=0.5, lam=1e4).epsilon
    assert s.max <= 2 + eps + 1e-8 and s.min > 0 and s.passed
    assert reps["elasticity_preconditioned"].passed


def test_elasticity_min_eig_uniform_in_lambda():
    for lam in (1.0, 1e2, 1e4):
        s = by_lemma(verify_bounds("elasticity", mesh(2, 4), PhysicalParams(lam=lam)))["elasticity_schur"]
        assert s.min >= 0.5 * s.info["C3"]


def test_two_field_bounds():
    reps = by_lemma(verify_bounds("two_field", mesh(2, 2), PhysicalParams()))
    s = reps["two_field_schur"]
    assert s.passed and s.lower == 1.0 and s.upper == 3.0
    assert s.min == pytest.approx(1.0, abs=1e-12)
    assert s.info["multiplicity_one"] >= s.info["required"]
    assert s.info["required"] == blocks(2, 2).n_p_facet + 1
    assert reps["two_field_preconditioned"].passed


@pytest.mark.parametrize("lam", [1.0, 1e4])
@pytest.mark.parametrize("n", [2, 4])
def test_three_field_bounds_with_default_rho(n, lam):
    reps = by_lemma(verify_bounds("three_field", mesh(2, n), PhysicalParams(lam=lam)))
    b = reps["three_field_b"]
    params = PhysicalParams(lam=lam)
    assert b.passed
    assert b.info["C4"] + params.epsilon - b.slack >= 0.5 * b.info["C4"]
    # the constants are an exact eigenvector: eps + rho * 1^T M 1 / ||M 1||^2
    m = blocks(2, n).M_int.diagonal()
    assert np.any(np.isclose(b.eigenvalues, params.epsilon + b.info["rho"] * m.sum() / (m @ m), rtol=1e-10))
    s = reps["three_field_schur"]
    assert s.passed and s.min > 0
    assert s.max <= s.info["upper_from_constants"] + 1e-8


def test_three_field_optimal_rho():
    params = PhysicalParams(lam=1e2)
    reps = by_lemma(verify_bounds("three_field", mesh(2, 4), params, rho="optimal"))
    b = reps["three_field_b"]
    bc = b.info["constants"]
    eps = params.epsilon
    # at the balancing rho the interval endpoints are C4 + eps and C5 + eps
    assert b.intervals[0][0] == pytest.approx(bc.C4 + eps, rel=1e-12)
    assert b.intervals[0][1] == pytest.approx(bc.C5 + eps, rel=1e-12)
    assert b.min >= bc.C4 + eps - b.slack - 1e-8
    assert b.passed


def test_oracle_csv(tmp_path):
    reps = verify_bounds("two_field", mesh(2, 2), PhysicalParams())
    write_oracle_csv(reps, tmp_path / "o.csv")
    rows = list(csv.DictReader(open(tmp_path / "o.csv")))
    assert list(rows[0]) == ["lemma", "mesh_n", "lambda", "min_eig", "max_eig", "lower_bound", "upper_bound",
                             "pass"]
    assert [r["pass"] for r in rows] == ["1", "1"]
    assert rows[0]["mesh_n"] == "2"


def test_small_convergence_study():
    table = oracle.convergence_study("poro", ns=(4, 8, 16))
    assert 0.7 <= table.rate <= 1.3
    assert table.column("n") == [4, 8, 16]
    with pytest.raises(ValueError):
        oracle.convergence_study("poro", dim=3)
