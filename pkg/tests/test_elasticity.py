import numpy as np
import pytest

from porowg import elasticity, problems
from porowg.elasticity import (build_regularized_system, elasticity_rhs, schur_hat_apply, solve_elasticity,
                               solve_regularized, unregularized_solution)
from porowg.wgfem import PhysicalParams, WgField, assemble_elasticity, assemble_loads

from conftest import mesh


def setup(dim, n, lam, mu=0.5, rho=1.0):
    m = mesh(dim, n)
    params = PhysicalParams(mu=mu, lam=lam)
    blocks = assemble_elasticity(m, params)
    prob = problems.elasticity_problem(params, dim)
    b1, _ = assemble_loads(m, prob.f, None, params)
    u_bd = None
    if prob.boundary is not None:
        u_bd = WgField.interpolate(m, prob.boundary, dim).boundary_vector()
    g = elasticity_rhs(blocks, params, b1, u_bd)
    return params, blocks, build_regularized_system(blocks, params, rho, g)


def test_zero_rhs_gives_zero():
    params, blocks, system = setup(2, 4, 1.0)
    u, z, rep = solve_regularized(system.with_rhs(np.zeros(system.n_u)))
    assert rep.converged and not u.any() and not z.any()


def regularized_dense_solve(params, blocks, system):
    """Direct solve of the regularized saddle system; returns the unscaled u."""
    A = np.block([[blocks.A1.toarray(), -blocks.B_int.T.toarray()],
                  [-blocks.B_int.toarray(),
                   -params.epsilon * np.diag(system.m_diag) - system.rho * np.outer(system.w, system.w)]])
    return np.linalg.solve(A, system.rhs)[: system.n_u] / params.epsilon


@pytest.mark.parametrize("dim,n", [(2, 2), (2, 4), (2, 8), (3, 1), (3, 2)])
@pytest.mark.parametrize("lam", [1.0, 1e4])
def test_regularization_keeps_solution(dim, n, lam):
    params, blocks, system = setup(dim, n, lam)
    ref = unregularized_solution(blocks, system.rhs[: system.n_u], params)
    u = regularized_dense_solve(params, blocks, system)
    assert np.linalg.norm(u - ref) <= 1e-8 * np.linalg.norm(ref)


@pytest.mark.parametrize("method", ["minres", "gmres"])
@pytest.mark.parametrize("dim,n,lam", [(2, 8, 1.0), (2, 8, 1e4), (3, 2, 1e4)])
def test_iterative_solution_solves_unregularized_system(method, dim, n, lam):
    params, blocks, system = setup(dim, n, lam)
    u, z, rep = solve_regularized(system, method, tol=1e-12)
    assert rep.converged
    g = system.rhs[: system.n_u]
    K = params.epsilon * blocks.A1 + blocks.A0
    # eliminating z divides the second-row saddle residual by eps
    assert np.linalg.norm(K @ u - g) <= 1e-8 * np.linalg.norm(g) / params.epsilon
    # numerical pressure and the inherent identity w^T z = 0
    z_expect = -(blocks.B_int @ u) / blocks.M_int.diagonal()
    assert np.allclose(z, z_expect, atol=1e-8 * np.abs(z_expect).max() / params.epsilon)
    assert abs(system.w @ z) <= 1e-8 * np.linalg.norm(z)


def test_schur_hat_against_dense():
    _, blocks, system = setup(2, 2, 1.0, rho=0.7)
    m, w = system.m_diag, system.w
    S = np.diag(m) + 0.7 * np.outer(w, w)
    x = np.random.default_rng(0).standard_normal(m.size)
    y = schur_hat_apply(m, w, 0.7, x)
    assert np.allclose(S @ y, x, atol=1e-12)
    assert np.allclose(schur_hat_apply(m, w, 0.7, S @ x), x, atol=1e-12)
    assert np.allclose(schur_hat_apply(m, w, 0.0, x), x / m)


def test_preconditioner_blocks():
    _, blocks, system = setup(2, 2, 1.0)
    inner = elasticity.a1_solver(blocks)
    A1 = blocks.A1.toarray()
    S = np.diag(system.m_diag) + np.outer(system.w, system.w)
    r = np.random.default_rng(1).standard_normal(system.n_u + system.n_z)
    r1, r2 = r[: system.n_u], r[system.n_u:]
    y1 = np.linalg.solve(A1, r1)
    diag = elasticity.preconditioner(system, "diag", inner)(r)
    assert np.allclose(diag, np.concatenate([y1, np.linalg.solve(S, r2)]), atol=1e-10)
    tri = elasticity.preconditioner(system, "tri", inner)(r)
    assert np.allclose(tri, np.concatenate([y1, -np.linalg.solve(S, r2 + blocks.B_int @ y1)]), atol=1e-10)
    with pytest.raises(ValueError):
        elasticity.preconditioner(system, "lower", inner)


def test_pairing_enforced():
    _, _, system = setup(2, 2, 1.0)
    with pytest.raises(ValueError):
        solve_regularized(system, "minres", precond="tri")
    with pytest.raises(ValueError):
        solve_regularized(system, "cg")
    with pytest.raises(ValueError):
        build_regularized_system(system.blocks, PhysicalParams(), rho=0.0)


def test_iteration_counts_stable_in_h():
    # parameter-free convergence at fixed lambda
    for lam in (1.0, 1e4):
        counts = []
        for n in (8, 16, 32):
            params = PhysicalParams(mu=0.5, lam=lam)
            prob = problems.elasticity_2d(params)
            _, rep = solve_elasticity(mesh(2, n), params, prob.f, "minres", boundary=prob.boundary)
            assert rep.converged
            counts.append(rep.iterations)
        assert max(abs(a - b) for a, b in zip(counts, counts[1:])) <= 2, counts


def test_manufactured_solution_accuracy():
    params = PhysicalParams(mu=0.5, lam=1e4)
    prob = problems.elasticity_2d(params)
    m = mesh(2, 16)
    u, rep = solve_elasticity(m, params, prob.f, "gmres", boundary=prob.boundary, raise_on_failure=True)
    exact = WgField.interpolate(m, prob.u_exact, 2)
    assert np.abs(u.interior - exact.interior).max() < 0.05
