"""Exact metric search trees over layer activations.

A ball tree stores nested bounding balls: every node keeps the centroid of its
points, the radius to the furthest one, and either two children or the leaf's
point indices. Construction is deterministic: split on the dimension of
greatest spread with a median pivot, coordinate ties ordered by point index.
Queries are exact under the index metric (Euclidean or a PSD quadratic form,
both of which satisfy the triangle inequality needed for pruning) and use
closed-ball semantics: a point at distance exactly eps is inside.

Indexes are immutable after construction; concurrent queries are safe. A
linear-scan oracle with the same ordering contract backs differential tests.
"""

from __future__ import annotations

import heapq

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .linalg import WeightedMetric, as_matrix, as_vector

DEFAULT_LEAF_SIZE = 16

# Pruning slack: bounds are compared with this much relative headroom so a
# round-off error in (centroid distance - radius) can never drop a point that
# leaf-level exact comparisons would keep. Costs a few extra node visits.
_PRUNE_SLACK = 1e-12


class NeighborsError(ValueError):
    """Raised on empty inputs, bad parameters, or dimension mismatches."""


class Neighbor(NamedTuple):
    index: int
    distance: float
    label: int


@dataclass
class BallNode:
    centroid: np.ndarray
    radius: float
    left: "BallNode | None" = None
    right: "BallNode | None" = None
    point_ids: np.ndarray | None = None  # leaf only

    @property
    def is_leaf(self) -> bool:
        return self.point_ids is not None


@dataclass
class LayerIndex:
    """Immutable ball tree over one layer's training activations."""

    points: np.ndarray
    labels: np.ndarray
    metric: WeightedMetric | None  # None means Euclidean
    root: BallNode = field(repr=False)
    leaf_size: int = DEFAULT_LEAF_SIZE

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def distances_to(points: np.ndarray, q: np.ndarray, metric: WeightedMetric | None) -> np.ndarray:
    diff = points - q
    if metric is None:
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))
    forms = np.einsum("ij,jk,ik->i", diff, metric.d, diff)
    return np.sqrt(np.maximum(forms, 0.0))


def _distance(a: np.ndarray, b: np.ndarray, metric: WeightedMetric | None) -> float:
    return float(distances_to(a[None, :], b, metric)[0])


def build_index(points, labels, metric: WeightedMetric | None = None,
                leaf_size: int = DEFAULT_LEAF_SIZE) -> LayerIndex:
    """Build a ball tree; duplicates are retained, construction is deterministic."""
    pts = as_matrix(points)
    lbl = np.asarray(labels, dtype=np.int64)
    if pts.shape[0] == 0:
        raise NeighborsError("cannot build an index over zero points")
    if lbl.shape != (pts.shape[0],):
        raise NeighborsError(f"{pts.shape[0]} points but {lbl.shape} labels")
    if leaf_size < 1:
        raise NeighborsError(f"leaf_size must be >= 1, got {leaf_size}")
    if metric is not None and metric.dim != pts.shape[1]:
        raise NeighborsError(
            f"metric dimension {metric.dim} does not match point dimension {pts.shape[1]}"
        )

    def build(ids: np.ndarray) -> BallNode:
        sub = pts[ids]
        centroid = sub.mean(axis=0)
        radius = float(distances_to(sub, centroid, metric).max())
        if len(ids) <= leaf_size:
            return BallNode(centroid, radius, point_ids=ids)
        spread = sub.max(axis=0) - sub.min(axis=0)
        dim = int(np.argmax(spread))  # ties resolve to the lowest dimension
        order = ids[np.lexsort((ids, pts[ids, dim]))]
        mid = len(order) // 2
        return BallNode(centroid, radius, left=build(order[:mid]), right=build(order[mid:]))

    return LayerIndex(pts, lbl, metric, build(np.arange(pts.shape[0])), leaf_size)


def node_count(index: LayerIndex) -> int:
    def count(node: BallNode) -> int:
        if node.is_leaf:
            return 1
        return 1 + count(node.left) + count(node.right)

    return count(index.root)


def _check_query(index: LayerIndex, q) -> np.ndarray:
    q = as_vector(q)
    if q.shape[0] != index.dim:
        raise NeighborsError(
            f"query dimension {q.shape[0]} does not match index dimension {index.dim}"
        )
    return q


def _min_bound(node: BallNode, q: np.ndarray, metric: WeightedMetric | None) -> float:
    return max(0.0, _distance(node.centroid, q, metric) - node.radius)


def _knn_traverse(index: LayerIndex, q: np.ndarray, k: int) -> tuple[list[Neighbor], int]:
    # heap entries are (-distance, -point index): heap[0] is the current
    # worst keeper under the (distance, index) ordering.
    heap: list[tuple[float, int]] = []
    visited = 0

    def worse_than_worst(d: float, i: int) -> bool:
        wd, wi = -heap[0][0], -heap[0][1]
        return (d, i) >= (wd, wi)

    def visit(node: BallNode):
        nonlocal visited
        visited += 1
        if len(heap) == k:
            worst_d = -heap[0][0]
            if _min_bound(node, q, index.metric) > worst_d + _PRUNE_SLACK * max(1.0, worst_d):
                return
        if node.is_leaf:
            dists = distances_to(index.points[node.point_ids], q, index.metric)
            for d, i in zip(dists, node.point_ids):
                d, i = float(d), int(i)
                if len(heap) < k:
                    heapq.heappush(heap, (-d, -i))
                elif not worse_than_worst(d, i):
                    heapq.heapreplace(heap, (-d, -i))
            return
        lb_left = _min_bound(node.left, q, index.metric)
        lb_right = _min_bound(node.right, q, index.metric)
        first, second = (node.left, node.right) if lb_left <= lb_right else (node.right, node.left)
        visit(first)
        visit(second)

    visit(index.root)
    found = sorted((-d, -i) for d, i in heap)
    return [Neighbor(i, d, int(index.labels[i])) for d, i in found], visited


def knn_query(index: LayerIndex, q, k: int) -> list[Neighbor]:
    """Exactly min(k, N) nearest points, sorted by (distance, point index)."""
    q = _check_query(index, q)
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise NeighborsError(f"k must be a positive integer, got {k!r}")
    results, _ = _knn_traverse(index, q, int(k))
    return results


def knn_query_with_stats(index: LayerIndex, q, k: int) -> tuple[list[Neighbor], int]:
    """knn_query plus the number of tree nodes visited (for cost checks)."""
    q = _check_query(index, q)
    return _knn_traverse(index, q, int(k))


def range_query(index: LayerIndex, q, eps: float) -> list[Neighbor]:
    """All points with distance <= eps (closed ball), sorted by (distance, index)."""
    q = _check_query(index, q)
    if not eps >= 0.0:
        raise NeighborsError(f"eps must be >= 0, got {eps!r}")
    hits: list[tuple[float, int]] = []

    def visit(node: BallNode):
        if _min_bound(node, q, index.metric) > eps + _PRUNE_SLACK * max(1.0, eps):
            return
        if node.is_leaf:
            dists = distances_to(index.points[node.point_ids], q, index.metric)
            for d, i in zip(dists, node.point_ids):
                if d <= eps:
                    hits.append((float(d), int(i)))
            return
        visit(node.left)
        visit(node.right)

    visit(index.root)
    hits.sort()
    return [Neighbor(i, d, int(index.labels[i])) for d, i in hits]


def brute_force_query(points, labels, metric: WeightedMetric | None, q,
                      k: int | None = None, eps: float | None = None) -> list[Neighbor]:
    """Linear-scan oracle with the same ordering contract as the tree queries."""
    pts = as_matrix(points)
    lbl = np.asarray(labels, dtype=np.int64)
    if pts.shape[0] == 0:
        raise NeighborsError("cannot query zero points")
    q = as_vector(q)
    if q.shape[0] != pts.shape[1]:
        raise NeighborsError(
            f"query dimension {q.shape[0]} does not match point dimension {pts.shape[1]}"
        )
    if (k is None) == (eps is None):
        raise NeighborsError("pass exactly one of k or eps")
    dists = distances_to(pts, q, metric)
    ranked = sorted((float(d), int(i)) for i, d in enumerate(dists))
    if k is not None:
        if not isinstance(k, (int, np.integer)) or k < 1:
            raise NeighborsError(f"k must be a positive integer, got {k!r}")
        picked = ranked[: int(k)]
    else:
        if not eps >= 0.0:
            raise NeighborsError(f"eps must be >= 0, got {eps!r}")
        picked = [(d, i) for d, i in ranked if d <= eps]
    return [Neighbor(i, d, int(lbl[i])) for d, i in picked]
