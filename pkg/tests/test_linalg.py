import numpy as np
import pytest

from epistemic.linalg import (
    LinalgError,
    WeightedMetric,
    largest_eigenvalue,
    matmul,
    symmetric_eigendecomposition,
    weighted_distance,
)

from conftest import random_psd


def test_matmul_identity():
    i2 = np.eye(2)
    assert np.array_equal(matmul(i2, i2), i2)
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(a, i2), a)


def test_matmul_hand_expansion():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0], [6.0]])
    # oracle: expand the 2x2 by 2x1 product entry by entry
    expected = np.array([[1 * 5 + 2 * 6], [3 * 5 + 4 * 6]], dtype=float)
    assert np.array_equal(matmul(a, b), expected)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(LinalgError, match="2x3.*4x2"):
        matmul(np.zeros((2, 3)), np.zeros((4, 2)))


def test_largest_eigenvalue_diagonal():
    assert largest_eigenvalue(np.diag([2.0, 1.0])) == pytest.approx(2.0, rel=1e-8)


def test_largest_eigenvalue_zero_matrix():
    assert largest_eigenvalue(np.zeros((2, 2))) == 0.0


def test_largest_eigenvalue_gram_closed_form():
    w = np.array([[3.0, 0.0], [0.0, 1.0]])
    gram = w @ w.T
    # oracle: characteristic polynomial of diag(9, 1) has roots 9 and 1
    coeffs = [1.0, -float(np.trace(gram)), float(np.linalg.det(gram))]
    roots = np.roots(coeffs)
    assert largest_eigenvalue(gram) == pytest.approx(max(roots.real), rel=1e-8)
    assert largest_eigenvalue(gram) == pytest.approx(9.0, rel=1e-8)


def test_largest_eigenvalue_rejects_non_square():
    with pytest.raises(LinalgError):
        largest_eigenvalue(np.zeros((2, 3)))


def test_largest_eigenvalue_rejects_asymmetric():
    with pytest.raises(LinalgError, match="symmetric"):
        largest_eigenvalue(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_eigendecomposition_diagonal():
    values, vectors = symmetric_eigendecomposition(np.diag([4.0, 1.0]), rank=2)
    assert values == pytest.approx([4.0, 1.0], rel=1e-8)
    # axis-aligned eigenvectors up to sign
    assert abs(vectors[0, 0]) == pytest.approx(1.0, abs=1e-8)
    assert abs(vectors[1, 1]) == pytest.approx(1.0, abs=1e-8)


def test_eigendecomposition_rank_one():
    u = np.array([2.0, 1.0, 2.0])
    u = u / np.linalg.norm(u)
    values, vectors = symmetric_eigendecomposition(np.outer(u, u), rank=2)
    assert len(values) == 1
    assert values[0] == pytest.approx(1.0, rel=1e-8)
    assert abs(float(vectors[:, 0] @ u)) == pytest.approx(1.0, abs=1e-7)


def test_eigendecomposition_matches_cubic_root_oracle():
    rng = np.random.default_rng(7)
    for _ in range(10):
        m = random_psd(rng, 3)
        # oracle: cubic characteristic polynomial det(m - t I) solved for its roots
        c2 = -float(np.trace(m))
        c1 = float(
            m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
            + m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0]
            + m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1]
        )
        c0 = -float(np.linalg.det(m))
        roots = sorted(np.roots([1.0, c2, c1, c0]).real, reverse=True)
        values, vectors = symmetric_eigendecomposition(m, rank=3)
        for got, want in zip(values, roots):
            assert got == pytest.approx(want, abs=1e-6 * max(1.0, roots[0]))
        for j, lam in enumerate(values):
            v = vectors[:, j]
            assert np.linalg.norm(m @ v - lam * v) <= 1e-7 * max(1.0, lam)


def test_eigendecomposition_values_sorted_and_nonnegative():
    rng = np.random.default_rng(21)
    for _ in range(5):
        m = random_psd(rng, 5)
        values, _ = symmetric_eigendecomposition(m, rank=5)
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert all(v >= -1e-9 for v in values)


def test_largest_eigenvalue_consistent_with_decomposition():
    rng = np.random.default_rng(33)
    for _ in range(5):
        m = random_psd(rng, 5)
        values, _ = symmetric_eigendecomposition(m, rank=5)
        assert largest_eigenvalue(m) == pytest.approx(max(values), rel=1e-6)


def test_eigendecomposition_rejects_asymmetric():
    with pytest.raises(LinalgError, match="symmetric"):
        symmetric_eigendecomposition(np.array([[1.0, 1.0], [0.0, 1.0]]), rank=1)


def test_weighted_distance_identity_of_indiscernibles():
    d = WeightedMetric(np.diag([3.0, 0.5]))
    a = np.array([1.2, -0.7])
    assert weighted_distance(a, a, d) == 0.0


def test_weighted_distance_euclidean_when_identity():
    metric = WeightedMetric(np.eye(4))
    rng = np.random.default_rng(5)
    for _ in range(1000):
        a, b = rng.standard_normal(4), rng.standard_normal(4)
        assert weighted_distance(a, b, metric) == pytest.approx(
            float(np.linalg.norm(a - b)), abs=1e-12
        )


def test_weighted_distance_hand_quadratic_form():
    metric = WeightedMetric(np.diag([4.0, 1.0]))
    assert weighted_distance([1.0, 0.0], [0.0, 0.0], metric) == pytest.approx(2.0, abs=1e-12)


def test_weighted_distance_dimension_mismatch():
    metric = WeightedMetric(np.eye(2))
    with pytest.raises(LinalgError):
        weighted_distance([1.0, 2.0, 3.0], [0.0, 0.0, 0.0], metric)


def test_weighted_metric_rejects_asymmetric():
    with pytest.raises(LinalgError, match="symmetric"):
        WeightedMetric(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_weighted_metric_rejects_negative_definite():
    with pytest.raises(LinalgError, match="semi-definite"):
        WeightedMetric(np.diag([-1.0, 1.0]))


def test_cauchy_step_bound():
    # for any delta with ||delta|| <= eps, ||delta^T W|| <= sqrt(lambda_max(W W^T)) * eps
    rng = np.random.default_rng(99)
    violations = 0
    for _ in range(1000):
        w = rng.standard_normal((4, 3))
        lam = largest_eigenvalue(w @ w.T)
        eps = float(rng.uniform(0.01, 2.0))
        delta = rng.standard_normal(4)
        delta = delta / np.linalg.norm(delta) * eps * float(rng.uniform(0.0, 1.0))
        if np.linalg.norm(delta @ w) > np.sqrt(lam) * eps * (1 + 1e-12):
            violations += 1
    assert violations == 0
