import numpy as np
import pytest

from epistemic.linalg import WeightedMetric
from epistemic.neighbors import (
    NeighborsError,
    brute_force_query,
    build_index,
    knn_query,
    knn_query_with_stats,
    node_count,
    range_query,
)

from conftest import random_psd


def test_singleton_tree():
    index = build_index(np.array([[1.0, 2.0]]), [7])
    assert index.root.is_leaf
    assert index.root.radius == 0.0
    assert knn_query(index, [0.0, 0.0], 1) == [(0, pytest.approx(np.sqrt(5)), 7)]


def test_duplicate_points_all_retained():
    pts = np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]])
    index = build_index(pts, [0, 1, 0], leaf_size=1)
    hits = range_query(index, [1.0, 1.0], 0.0)
    assert [h.index for h in hits] == [0, 1]
    near = knn_query(index, [1.0, 1.0], 2)
    assert [n.index for n in near] == [0, 1]  # tie broken by point index


def test_empty_input_rejected():
    with pytest.raises(NeighborsError):
        build_index(np.zeros((0, 2)), [])


def test_node_containment_audit():
    rng = np.random.default_rng(42)
    pts = rng.standard_normal((500, 3))
    index = build_index(pts, np.zeros(500, dtype=int), leaf_size=8)
    seen = []

    def audit(node):
        if node.is_leaf:
            ids = node.point_ids
            seen.extend(ids.tolist())
        else:
            ids = np.concatenate([collect(node.left), collect(node.right)])
        dists = np.linalg.norm(pts[ids] - node.centroid, axis=1)
        assert dists.max() <= node.radius * (1 + 1e-12) + 1e-12
        if not node.is_leaf:
            audit(node.left)
            audit(node.right)

    def collect(node):
        if node.is_leaf:
            return node.point_ids
        return np.concatenate([collect(node.left), collect(node.right)])

    audit(index.root)
    assert sorted(seen) == list(range(500))  # every point in exactly one leaf


def test_knn_self_query():
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((50, 4))
    index = build_index(pts, np.arange(50) % 3)
    hits = knn_query(index, pts[17], 1)
    assert hits[0].index == 17
    assert hits[0].distance == 0.0


def test_knn_k_at_least_n_returns_all():
    rng = np.random.default_rng(2)
    pts = rng.standard_normal((20, 2))
    index = build_index(pts, np.zeros(20, dtype=int))
    hits = knn_query(index, [0.0, 0.0], 50)
    assert len(hits) == 20
    assert sorted(h.index for h in hits) == list(range(20))


@pytest.mark.parametrize("k", [1, 5, 17])
def test_knn_matches_brute_force(k):
    rng = np.random.default_rng(3)
    pts = rng.standard_normal((500, 3))
    labels = rng.integers(0, 4, 500)
    index = build_index(pts, labels, leaf_size=10)
    for _ in range(100):
        q = rng.standard_normal(3) * 1.5
        assert knn_query(index, q, k) == brute_force_query(pts, labels, None, q, k=k)


def test_range_empty_and_exhaustive():
    rng = np.random.default_rng(4)
    pts = rng.standard_normal((60, 2))
    index = build_index(pts, np.zeros(60, dtype=int))
    assert range_query(index, [50.0, 50.0], 0.0) == []
    assert len(range_query(index, [0.0, 0.0], 1e18)) == 60


def test_range_matches_brute_force():
    rng = np.random.default_rng(5)
    pts = rng.standard_normal((300, 3))
    labels = rng.integers(0, 3, 300)
    index = build_index(pts, labels, leaf_size=7)
    for _ in range(100):
        q = rng.standard_normal(3)
        eps = float(rng.uniform(0.0, 2.5))
        assert range_query(index, q, eps) == brute_force_query(pts, labels, None, q, eps=eps)


def test_closed_ball_includes_exact_boundary():
    pts = np.array([[3.0, 4.0], [10.0, 0.0]])
    index = build_index(pts, [0, 1])
    hits = range_query(index, [0.0, 0.0], 5.0)  # distance is exactly 5.0
    assert [h.index for h in hits] == [0]
    assert hits[0].distance == 5.0
    assert brute_force_query(pts, [0, 1], None, [0.0, 0.0], eps=5.0)[0].distance == 5.0


def test_brute_force_requires_exactly_one_mode():
    pts = np.array([[0.0], [1.0]])
    with pytest.raises(NeighborsError):
        brute_force_query(pts, [0, 1], None, [0.0], k=1, eps=1.0)
    with pytest.raises(NeighborsError):
        brute_force_query(pts, [0, 1], None, [0.0])


def test_differential_agreement_randomized():
    # tree vs linear scan on random point sets, both metric kinds
    rng = np.random.default_rng(6)
    cases = 0
    for trial in range(50):
        n = int(rng.integers(2, 80))
        dim = int(rng.integers(1, 5))
        pts = rng.standard_normal((n, dim)) * rng.uniform(0.5, 3.0)
        labels = rng.integers(0, 3, n)
        metric = None if trial % 2 == 0 else WeightedMetric(random_psd(rng, dim))
        index = build_index(pts, labels, metric=metric,
                            leaf_size=int(rng.integers(1, 12)))
        for _ in range(20):
            q = rng.standard_normal(dim) * 2
            k = int(rng.integers(1, n + 2))
            assert knn_query(index, q, k) == brute_force_query(
                pts, labels, metric, q, k=k)
            eps = float(rng.uniform(0.0, 3.0))
            assert range_query(index, q, eps) == brute_force_query(
                pts, labels, metric, q, eps=eps)
            cases += 2
    assert cases == 2000


def test_dimension_mismatch_rejected():
    index = build_index(np.zeros((3, 2)), [0, 1, 0])
    with pytest.raises(NeighborsError):
        knn_query(index, [0.0, 0.0, 0.0], 1)
    with pytest.raises(NeighborsError):
        range_query(index, [0.0], 1.0)


def test_query_cost_scales_sublinearly():
    rng = np.random.default_rng(7)
    pts = rng.uniform(0.0, 1.0, size=(50_000, 3))
    index = build_index(pts, np.zeros(50_000, dtype=int))
    total = node_count(index)
    visited = []
    for _ in range(100):
        _, n = knn_query_with_stats(index, rng.uniform(0.0, 1.0, 3), 5)
        visited.append(n)
    assert np.mean(visited) < 0.2 * total
