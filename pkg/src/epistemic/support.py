"""Neighborhood operators and per-layer support sets.

Four neighborhood modes over a layer index: a fixed-radius ball (EPS_BALL), a
fixed-count query (KNN), and two hybrids: H1 falls back to k-NN when the ball
is empty, H2 unions the ball with k-NN but stays empty when the ball is empty,
so extrapolating inputs still surface as unsupported. All operators are pure
reads over immutable indexes.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .neighbors import LayerIndex, Neighbor, knn_query, range_query


class SupportError(ValueError):
    """Raised when a neighborhood spec does not fit its mode."""


class NeighborhoodMode(str, Enum):
    EPS_BALL = "eps_ball"
    KNN = "knn"
    H1 = "h1"
    H2 = "h2"


@dataclass(frozen=True)
class NeighborhoodSpec:
    """Per-layer neighborhood operator: metric kind, radius and/or count, mode."""

    layer: int
    mode: NeighborhoodMode
    eps: float | None = None
    k: int | None = None
    metric_kind: str = "euclidean"

    def __post_init__(self):
        mode = NeighborhoodMode(self.mode)
        object.__setattr__(self, "mode", mode)
        needs_eps = mode in (NeighborhoodMode.EPS_BALL, NeighborhoodMode.H1, NeighborhoodMode.H2)
        needs_k = mode in (NeighborhoodMode.KNN, NeighborhoodMode.H1, NeighborhoodMode.H2)
        if needs_eps and (self.eps is None or not self.eps > 0.0):
            raise SupportError(f"mode {mode.value} requires eps > 0, got {self.eps!r}")
        if needs_k and (self.k is None or self.k < 1):
            raise SupportError(f"mode {mode.value} requires k >= 1, got {self.k!r}")
        if not needs_eps and self.eps is not None:
            raise SupportError(f"mode {mode.value} does not take eps")
        if not needs_k and self.k is not None:
            raise SupportError(f"mode {mode.value} does not take k")
        if self.metric_kind not in ("euclidean", "weighted"):
            raise SupportError(f"unknown metric kind {self.metric_kind!r}")


@dataclass(frozen=True)
class SupportSet:
    """Training labels found around one layer's activation of an input."""

    layer: int
    classes: frozenset[int]
    neighbor_ids: tuple[int, ...]
    neighbor_count: int

    @property
    def empty(self) -> bool:
        return self.neighbor_count == 0


def neighborhood(index: LayerIndex, q, spec: NeighborhoodSpec) -> list[Neighbor]:
    """Evaluate the spec's neighborhood operator at q.

    H1: the eps-ball, falling back to k-NN when the ball is empty. H2: empty
    when the ball is empty, otherwise the union (by point index) of ball and
    k-NN results, sorted by (distance, index).
    """
    mode = spec.mode
    if mode is NeighborhoodMode.EPS_BALL:
        return range_query(index, q, spec.eps)
    if mode is NeighborhoodMode.KNN:
        return knn_query(index, q, spec.k)
    ball = range_query(index, q, spec.eps)
    if mode is NeighborhoodMode.H1:
        return ball if ball else knn_query(index, q, spec.k)
    if mode is NeighborhoodMode.H2:
        if not ball:
            return []
        merged = {n.index: n for n in ball}
        for n in knn_query(index, q, spec.k):
            merged.setdefault(n.index, n)
        return sorted(merged.values(), key=lambda n: (n.distance, n.index))
    raise SupportError(f"unhandled mode {mode!r}")


def support(index: LayerIndex, activation, spec: NeighborhoodSpec) -> SupportSet:
    """Label set of the neighborhood at one layer; ids kept for diagnostics."""
    found = neighborhood(index, activation, spec)
    return SupportSet(
        layer=spec.layer,
        classes=frozenset(n.label for n in found),
        neighbor_ids=tuple(n.index for n in found),
        neighbor_count=len(found),
    )
