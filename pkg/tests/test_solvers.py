import numpy as np
import pytest

from lkgp import NotPSD, NumericalBreakdown, SolverConfig, cg_solve, make_probes, pivoted_cholesky, precond_apply
from lkgp.solvers import WoodburyPreconditioner
from lkgp.verify import random_psd


def dense(A):
    return lambda x: A @ x


def test_identity_one_iteration():
    b = np.array([3.0, -1.0, 2.0])
    x, rep = cg_solve(dense(np.eye(3)), b)
    np.testing.assert_array_equal(x, b)
    assert rep.iterations == 1 and rep.converged


def test_two_by_two():
    A = np.array([[4.0, 1.0], [1.0, 3.0]])
    x, rep = cg_solve(dense(A), np.array([1.0, 2.0]), SolverConfig(rel_tol=1e-12))
    np.testing.assert_allclose(x, [1 / 11, 7 / 11], rtol=1e-12)
    assert rep.iterations <= 2


def test_finite_termination():
    n = 25
    A = np.diag(np.arange(1.0, n + 1))
    x, rep = cg_solve(dense(A), np.ones(n), SolverConfig(rel_tol=1e-10))
    assert rep.converged and rep.iterations <= n
    np.testing.assert_allclose(x, 1 / np.arange(1.0, n + 1), rtol=1e-8)


def test_zero_rhs():
    x, rep = cg_solve(dense(np.eye(4)), np.zeros(4))
    np.testing.assert_array_equal(x, 0.0)
    assert rep.iterations == 0 and rep.converged and rep.final_rel_residual == 0.0


def test_non_finite_raises():
    with pytest.raises(NumericalBreakdown):
        cg_solve(dense(np.eye(2)), np.array([1.0, np.nan]))
    with pytest.raises(NumericalBreakdown) as info:
        cg_solve(lambda x: x * np.inf, np.ones(3))
    assert info.value.iteration == 1


def test_not_converged_flag():
    A = np.diag(np.logspace(0, 6, 50))
    x, rep = cg_solve(dense(A), np.ones(50), SolverConfig(rel_tol=1e-10, max_iters=3))
    assert not rep.converged and rep.iterations == 3
    assert rep.final_rel_residual > 1e-10


def test_converged_iff_tolerance():
    rng = np.random.default_rng(0)
    A = random_psd(rng, 30) + 0.1 * np.eye(30)
    for tol in (0.5, 1e-2, 1e-6):
        _, rep = cg_solve(dense(A), rng.standard_normal(30), SolverConfig(rel_tol=tol))
        assert rep.converged == (rep.final_rel_residual <= tol)


def test_matches_direct_solve():
    rng = np.random.default_rng(1)
    for _ in range(10):
        n = int(rng.integers(5, 80))
        A = random_psd(rng, n) + rng.uniform(0.01, 1) * np.eye(n)
        b = rng.standard_normal(n)
        x, _ = cg_solve(dense(A), b, SolverConfig(rel_tol=1e-10, max_iters=10 * n))
        x_star = np.linalg.solve(A, b)
        assert np.linalg.norm(x - x_star) <= 1e-6 * np.linalg.norm(x_star)


def test_batched_columns_are_independent():
    rng = np.random.default_rng(2)
    A = random_psd(rng, 40) + 0.05 * np.eye(40)
    B = rng.standard_normal((40, 5))
    B[:, 2] = 0.0
    X, reps = cg_solve(dense(A), B, SolverConfig(rel_tol=1e-8))
    for j in range(5):
        xj, rj = cg_solve(dense(A), B[:, j], SolverConfig(rel_tol=1e-8))
        assert reps[j].iterations == rj.iterations
        np.testing.assert_allclose(X[:, j], xj, rtol=1e-6, atol=1e-9)
    assert reps[2].iterations == 0


def test_pivoted_cholesky_full_rank_exact():
    rng = np.random.default_rng(3)
    K = random_psd(rng, 30)
    f = pivoted_cholesky(np.diag(K), lambda i: K[:, i], 30)
    assert f.rank == 30
    np.testing.assert_allclose(f.L @ f.L.T, K, atol=1e-10)
    assert sorted(f.pivots.tolist()) == list(range(30))


def test_pivoted_cholesky_picks_largest_diagonal():
    K = np.diag([1.0, 5.0, 3.0, 4.0])
    f = pivoted_cholesky(np.diag(K), lambda i: K[:, i], 2)
    assert f.pivots.tolist() == [1, 3]


def test_pivoted_cholesky_rank_zero_and_early_stop():
    K = random_psd(np.random.default_rng(4), 20, rank=3)
    assert pivoted_cholesky(np.diag(K), lambda i: K[:, i], 0).rank == 0
    f = pivoted_cholesky(np.diag(K), lambda i: K[:, i], 10)
    assert f.rank == 3
    z = np.ones(20)
    np.testing.assert_allclose(precond_apply(pivoted_cholesky(np.diag(K), lambda i: K[:, i], 0), 0.5, z), z / 0.5)


def test_pivoted_cholesky_not_psd():
    K = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NotPSD):
        pivoted_cholesky(np.diag(K), lambda i: K[:, i], 2)


def test_precond_apply_inverse():
    rng = np.random.default_rng(5)
    for n in (10, 100, 256):
        K = random_psd(rng, n, rank=max(2, n // 10))
        f = pivoted_cholesky(np.diag(K), lambda i: K[:, i], n // 5)
        noise = 0.3
        M = f.L @ f.L.T + noise * np.eye(n)
        Z = rng.standard_normal((n, 3))
        np.testing.assert_allclose(precond_apply(f, noise, Z), np.linalg.solve(M, Z), atol=1e-8)
        np.testing.assert_allclose(WoodburyPreconditioner(f, noise)(M), np.eye(n), atol=1e-8)


def test_preconditioning_never_slower_on_low_rank_plus_noise():
    rng = np.random.default_rng(6)
    for n, r in [(100, 5), (300, 20), (512, 40)]:
        G = rng.standard_normal((n, r)) * np.logspace(0, 2, r)
        K = G @ G.T
        A = K + 0.01 * np.eye(n)
        b = rng.standard_normal(n)
        cfg = SolverConfig(rel_tol=1e-8, max_iters=5000)
        _, plain = cg_solve(dense(A), b, cfg)
        f = pivoted_cholesky(np.diag(K), lambda i: K[:, i], r + 5)
        _, pre = cg_solve(dense(A), b, cfg, WoodburyPreconditioner(f, 0.01))
        assert pre.converged and pre.iterations <= plain.iterations


def test_probes():
    assert make_probes(5, 0, seed=1).shape == (5, 0)
    a = make_probes(4, 3, seed=7)
    np.testing.assert_array_equal(a, make_probes(4, 3, seed=7))
    assert set(np.unique(a)) <= {-1.0, 1.0}
    Z = make_probes(6, 100_000, seed=0)
    assert np.max(np.abs(Z @ Z.T / Z.shape[1] - np.eye(6))) < 0.02


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(rel_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(rel_tol=1.0)
    assert SolverConfig() == SolverConfig(0.01, 1000, 100, 0)
