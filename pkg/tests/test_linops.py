import numpy as np
import pytest

from lkgp import (
    LatentKroneckerOperator,
    ObservationMask,
    OracleTooLarge,
    SEKernel,
    ShapeMismatch,
    Uniform,
    breakeven_points,
    dense_materialize,
    generate_mask,
    kron_mvm,
    projected_kron_apply,
)
from lkgp.linops import CostCounters, DenseOperator, observed_kernel_matrix
from lkgp.verify import random_psd

A = np.array([[2.0, 0.0], [0.0, 3.0]])
B = np.array([[1.0, 1.0], [1.0, 2.0]])


def test_kron_mvm_hand_example():
    dense = np.array([[2, 2, 0, 0], [2, 4, 0, 0], [0, 0, 3, 3], [0, 0, 3, 6]], dtype=float)
    np.testing.assert_array_equal(np.kron(A, B), dense)
    x = np.array([1.0, 0.0, 0.0, 1.0])
    np.testing.assert_array_equal(kron_mvm(A, B, x), [2.0, 2.0, 3.0, 6.0])
    np.testing.assert_array_equal(dense @ x, [2.0, 2.0, 3.0, 6.0])


def test_kron_mvm_identity_and_zero():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(12)
    np.testing.assert_array_equal(kron_mvm(np.eye(3), np.eye(4), x), x)
    np.testing.assert_array_equal(kron_mvm(random_psd(rng, 3), random_psd(rng, 4), np.zeros(12)), 0.0)


def test_kron_mvm_batched_matches_columns():
    rng = np.random.default_rng(1)
    Ka, Kb = random_psd(rng, 5), random_psd(rng, 3)
    X = rng.standard_normal((15, 4))
    out = kron_mvm(Ka, Kb, X)
    for j in range(4):
        np.testing.assert_allclose(out[:, j], np.kron(Ka, Kb) @ X[:, j], atol=1e-13)


def test_kron_mvm_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        kron_mvm(A, B, np.ones(5))
    with pytest.raises(ShapeMismatch):
        kron_mvm(np.ones((2, 3)), B, np.ones(4))


def test_projected_apply_hand_example():
    op = LatentKroneckerOperator(A, B, ObservationMask(2, 2, [0, 2, 3]), noise=0.0)
    np.testing.assert_array_equal(projected_kron_apply(op, np.array([1.0, 0.0, 1.0])), [2.0, 3.0, 6.0])


def test_projected_full_mask_equals_kron():
    rng = np.random.default_rng(2)
    Ka, Kb = random_psd(rng, 4), random_psd(rng, 3)
    x = rng.standard_normal(12)
    op = LatentKroneckerOperator(Ka, Kb, ObservationMask.full(4, 3))
    np.testing.assert_array_equal(op.matvec(x), kron_mvm(Ka, Kb, x))


def test_identity_factors_plus_noise():
    mask = generate_mask(4, 5, Uniform(0.4), seed=0)
    op = LatentKroneckerOperator(np.eye(4), np.eye(5), mask, noise=1.0)
    x = np.random.default_rng(3).standard_normal(mask.count)
    np.testing.assert_array_equal(op @ x, 2 * x)


def test_oracle_equivalence_randomized():
    rng = np.random.default_rng(4)
    for _ in range(200):
        p, q = (int(v) for v in rng.integers(1, 17, size=2))
        obs = np.flatnonzero(rng.uniform(size=p * q) < rng.uniform(0.1, 1.0))
        if obs.size == 0:
            obs = np.array([0])
        op = LatentKroneckerOperator(random_psd(rng, p), random_psd(rng, q), ObservationMask(p, q, obs),
                                     rng.uniform(0, 2))
        x = rng.standard_normal(obs.size)
        err = np.max(np.abs(op.matvec(x) - dense_materialize(op) @ x))
        assert err <= 1e-12 * (1 + np.max(np.abs(x)))


def test_operator_symmetric_and_pd():
    rng = np.random.default_rng(5)
    for _ in range(20):
        mask = generate_mask(6, 5, Uniform(0.3), seed=int(rng.integers(1000)))
        op = LatentKroneckerOperator(random_psd(rng, 6), random_psd(rng, 5), mask, 0.1)
        x, y = rng.standard_normal((2, mask.count))
        assert abs(x @ op.matvec(y) - y @ op.matvec(x)) <= 1e-10 * (1 + abs(x @ op.matvec(y)))
        assert np.linalg.eigvalsh(dense_materialize(op)).min() > 0


def test_cost_counters_exact():
    rng = np.random.default_rng(6)
    p, q = 9, 7
    mask = generate_mask(p, q, Uniform(0.5), seed=1)
    op = LatentKroneckerOperator(random_psd(rng, p), random_psd(rng, q), mask, 0.3)
    op.matvec(rng.standard_normal(mask.count))
    assert op.counters.mults == p * q * (p + q) + mask.count
    assert op.counters.peak_elements == p * p + q * q + p * q
    op.matvec(rng.standard_normal(mask.count))
    assert op.counters.mults == 2 * (p * q * (p + q) + mask.count)
    op.counters.reset()
    assert op.counters == CostCounters()


def test_from_kernels_counts_kernel_evaluations():
    rng = np.random.default_rng(7)
    S, T = rng.uniform(size=(6, 2)), rng.uniform(size=(4, 1))
    mask = ObservationMask.full(6, 4)
    op = LatentKroneckerOperator.from_kernels(SEKernel(dims=2), S, SEKernel(), T, mask)
    assert op.counters.kernel_evals == 36 + 16


def test_lazy_operator_matches_materialized():
    rng = np.random.default_rng(8)
    S, T = rng.uniform(size=(13, 2)), rng.uniform(size=(7, 1))
    mask = generate_mask(13, 7, Uniform(0.35), seed=2)
    ks, kt = SEKernel([0.4, 0.9], 1.2), SEKernel([0.3], 0.8)
    eager = LatentKroneckerOperator.from_kernels(ks, S, kt, T, mask, 0.2)
    lazy = LatentKroneckerOperator.from_kernels(ks, S, kt, T, mask, 0.2, lazy=True, block=4)
    x = rng.standard_normal((mask.count, 3))
    np.testing.assert_allclose(lazy @ x, eager @ x, atol=1e-13)
    np.testing.assert_allclose(lazy.diagonal(), eager.diagonal())
    for i in (0, 5, mask.count - 1):
        np.testing.assert_allclose(lazy.column(i), eager.column(i), atol=1e-15)
    # kernel storage is bounded by the block, not by p**2 + q**2
    assert lazy.counters.peak_elements == 4 * 13 + 4 * 7 + 2 * 13 * 7 * 3
    assert lazy.counters.kernel_evals == 13**2 + 7**2


def test_diagonal_and_column_match_dense():
    rng = np.random.default_rng(9)
    mask = generate_mask(5, 6, Uniform(0.4), seed=3)
    op = LatentKroneckerOperator(random_psd(rng, 5), random_psd(rng, 6), mask, 0.25)
    D = dense_materialize(op)
    np.testing.assert_allclose(op.diagonal(), np.diag(D), atol=1e-14)
    noiseless = D - 0.25 * np.eye(mask.count)
    for i in range(mask.count):
        np.testing.assert_allclose(op.column(i), noiseless[:, i], atol=1e-14)
    np.testing.assert_allclose(observed_kernel_matrix(op.K_SS, op.K_TT, mask), noiseless, atol=1e-14)


def test_dense_materialize_guard():
    op = LatentKroneckerOperator(np.eye(65), np.eye(64), ObservationMask(65, 64, [0]))
    with pytest.raises(OracleTooLarge):
        dense_materialize(op)


def test_dense_operator_counts():
    K = random_psd(np.random.default_rng(10), 8)
    op = DenseOperator(K)
    op.matvec(np.ones(8))
    assert op.counters.mults == 64
    assert op.counters.peak_elements == 64 + 8


def test_breakeven_values():
    t, m = breakeven_points(5000, 7)
    assert t == pytest.approx(0.62177, abs=5e-6)
    assert 1 - np.sqrt(1 / 5000 + 1 / 7) == pytest.approx(t, rel=1e-15)
    t, m = breakeven_points(100, 100)
    assert m == pytest.approx(1 - np.sqrt(2) / 100, rel=1e-14)
    assert m == pytest.approx(0.985858, abs=5e-7)


def test_breakeven_clamped():
    assert breakeven_points(1, 1) == (0.0, 0.0)
    assert breakeven_points(2, 2)[0] == 0.0


def test_breakeven_defining_equations():
    rng = np.random.default_rng(11)
    for p, q in rng.integers(2, 10_000, size=(100, 2)):
        p, q = int(p), int(q)
        t, m = breakeven_points(p, q)
        n_t = (1 - t) * p * q
        n_m = (1 - m) * p * q
        assert n_t**2 == pytest.approx(p * p * q + p * q * q, rel=1e-9)
        assert n_m**2 == pytest.approx(p * p + q * q, rel=1e-9)
