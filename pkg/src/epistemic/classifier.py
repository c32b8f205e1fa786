"""The epistemic classifier: belief plus justification from layer neighborhoods.

Wraps a trained network with one search index per chosen layer. At inference
the base prediction is the belief; per-layer supports are unioned into a
justification (empty if any layer finds nothing), and the verdict is asserted
as IK (justification equals the belief singleton), IMK (belief is a proper
member of a larger justification), or IDK (belief unsupported).

Layer identifiers: 0 is the raw input space; i >= 1 is layer i's captured
activation, where the final layer contributes its pre-softmax logits. The
softmax output itself is never an index target.

Classifiers are immutable after build; infer is safe under concurrency.
Parameter selection scans candidates in a fixed sorted order so its result is
independent of evaluation order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .linalg import WeightedMetric, largest_eigenvalue, symmetric_eigendecomposition
from .neighbors import LayerIndex, build_index, distances_to
from .network import Activation, Dataset, LayeredNet, forward_batch, forward_capture
from .support import NeighborhoodMode, NeighborhoodSpec, SupportSet, support


class ClassifierError(ValueError):
    """Raised on invalid layer sets, selection inputs, or untrained nets."""


class Assertion(str, Enum):
    IK = "IK"
    IMK = "IMK"
    IDK = "IDK"


@dataclass(frozen=True)
class EpistemicVerdict:
    belief: int
    supports: tuple[SupportSet, ...]
    justification: frozenset[int]
    assertion: Assertion


@dataclass(frozen=True)
class EpistemicClassifier:
    net: LayeredNet
    layer_set: tuple[int, ...]
    specs: tuple[NeighborhoodSpec, ...]
    indexes: tuple[LayerIndex, ...]

    def __post_init__(self):
        if not (len(self.layer_set) == len(self.specs) == len(self.indexes)):
            raise ClassifierError(
                f"layer_set/specs/indexes sizes differ: {len(self.layer_set)}/"
                f"{len(self.specs)}/{len(self.indexes)}"
            )
        _check_layer_set(self.net, self.layer_set)


def _check_layer_set(net: LayeredNet, layer_set) -> tuple[int, ...]:
    ids = tuple(int(i) for i in layer_set)
    if not ids:
        raise ClassifierError("layer_set must name at least one layer")
    if list(ids) != sorted(set(ids)):
        raise ClassifierError(f"layer_set must be strictly increasing, got {ids}")
    top = len(net.layers)
    if ids[0] < 0 or ids[-1] > top:
        raise ClassifierError(f"layer ids must lie in [0, {top}], got {ids}")
    return ids


def layer_dim(net: LayeredNet, layer_id: int) -> int:
    return net.input_dim if layer_id == 0 else net.layers[layer_id - 1].out_dim


def capture_layers(net: LayeredNet, x: np.ndarray, layer_set) -> dict[int, np.ndarray]:
    """Activation matrix per chosen layer for a batch (layer 0 is the input)."""
    activations, _ = forward_batch(net, x)
    return {i: (x if i == 0 else activations[i - 1]) for i in layer_set}


def justify(supports) -> frozenset[int]:
    """Union of the support label sets, or empty if any support is empty."""
    supports = list(supports)
    if not supports:
        raise ClassifierError("justification needs at least one support")
    if any(not s.classes for s in supports):
        return frozenset()
    return frozenset().union(*(s.classes for s in supports))


def assert_knowledge(belief: int, justification) -> Assertion:
    j = frozenset(justification)
    if j == {belief}:
        return Assertion.IK
    if belief in j:
        return Assertion.IMK
    return Assertion.IDK


def infer(ec: EpistemicClassifier, x) -> EpistemicVerdict:
    """Belief, per-layer supports, justification, and assertion for one input."""
    activations, probs = forward_capture(ec.net, x)
    belief = int(np.argmax(probs))
    vec = lambda i: (np.asarray(x, dtype=np.float64) if i == 0 else activations[i - 1])
    supports = tuple(
        support(index, vec(layer), spec)
        for layer, spec, index in zip(ec.layer_set, ec.specs, ec.indexes)
    )
    justification = justify(supports)
    return EpistemicVerdict(belief, supports, justification, assert_knowledge(belief, justification))


def infer_dataset(ec: EpistemicClassifier, x: np.ndarray) -> list[EpistemicVerdict]:
    """infer() over a whole matrix, sharing one batched forward pass."""
    captured = capture_layers(ec.net, x, ec.layer_set)
    _, probs = forward_batch(ec.net, x)
    beliefs = np.argmax(probs, axis=1)
    verdicts = []
    for row in range(x.shape[0]):
        supports = tuple(
            support(index, captured[layer][row], spec)
            for layer, spec, index in zip(ec.layer_set, ec.specs, ec.indexes)
        )
        justification = justify(supports)
        belief = int(beliefs[row])
        verdicts.append(
            EpistemicVerdict(belief, supports, justification,
                             assert_knowledge(belief, justification))
        )
    return verdicts


def coverage_on(ec: EpistemicClassifier, data: Dataset) -> float:
    """Fraction of a dataset asserted IK by the assembled classifier."""
    if data.size == 0:
        raise ClassifierError("cannot measure coverage on an empty dataset")
    verdicts = infer_dataset(ec, data.x)
    return sum(v.assertion is Assertion.IK for v in verdicts) / data.size


# ---------------------------------------------------------------------------
# parameter selection


@dataclass(frozen=True)
class SelectionConfig:
    """Grid-search settings for choosing eps and/or k per layer.

    When eps_grid is None, each layer gets grid_points log-spaced candidates
    spanning grid_span, scaled by the median pairwise distance of that layer's
    training activations. Propagation mode derives per-layer radii from each
    eps0 candidate via the layer-distortion chain and needs an explicit
    eps_grid of eps0 values (eps-ball mode only).
    """

    eps_grid: tuple[float, ...] | None = None
    k_grid: tuple[int, ...] = (1, 3, 5, 10)
    grid_points: int = 25
    grid_span: tuple[float, float] = (1e-3, 1e3)
    propagate: bool = False
    sample_cap: int = 1024
    seed: int = 0


@dataclass(frozen=True)
class SelectionResult:
    specs: tuple[NeighborhoodSpec, ...]
    coverage: float


def median_pairwise_distance(points: np.ndarray, metric: WeightedMetric | None,
                             cap: int = 1024, seed: int = 0) -> float:
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] > cap:
        keep = np.random.default_rng(seed).choice(pts.shape[0], size=cap, replace=False)
        pts = pts[np.sort(keep)]
    dists = [distances_to(pts[i + 1:], pts[i], metric) for i in range(pts.shape[0] - 1)]
    if not dists:
        return 1.0
    med = float(np.median(np.concatenate(dists)))
    return med if med > 0.0 else 1.0


def default_eps_grid(index: LayerIndex, config: SelectionConfig) -> list[float]:
    if config.eps_grid is not None:
        return sorted(float(e) for e in config.eps_grid)
    scale = median_pairwise_distance(index.points, index.metric,
                                     config.sample_cap, config.seed)
    lo, hi = config.grid_span
    return [float(e) * scale for e in np.geomspace(lo, hi, config.grid_points)]


def _layer_candidates(mode: NeighborhoodMode, eps_grid: list[float],
                      k_grid) -> list[tuple[float | None, int | None]]:
    ks = sorted(int(k) for k in k_grid)
    if mode is NeighborhoodMode.EPS_BALL:
        return [(e, None) for e in eps_grid]
    if mode is NeighborhoodMode.KNN:
        return [(None, k) for k in ks]
    return [(e, k) for e in eps_grid for k in ks]


def _support_classes(index: LayerIndex, acts: np.ndarray, layer: int, mode: NeighborhoodMode,
                     eps: float | None, k: int | None, metric_kind: str) -> list[frozenset[int]]:
    spec = NeighborhoodSpec(layer=layer, mode=mode, eps=eps, k=k, metric_kind=metric_kind)
    return [support(index, acts[row], spec).classes for row in range(acts.shape[0])]


def _coverage(per_layer_classes: list[list[frozenset[int]]], beliefs: np.ndarray) -> float:
    n = len(beliefs)
    ik = 0
    for row in range(n):
        sets = [layer_sets[row] for layer_sets in per_layer_classes]
        if any(not s for s in sets):
            continue
        justification = frozenset().union(*sets)
        if justification == {int(beliefs[row])}:
            ik += 1
    return ik / n


def select_parameters(net: LayeredNet, layer_set, indexes, validation: Dataset,
                      mode: NeighborhoodMode = NeighborhoodMode.EPS_BALL,
                      config: SelectionConfig | None = None) -> SelectionResult:
    """Pick eps/k per layer by maximizing IK coverage on the validation set.

    Scans the full per-layer candidate grid (Cartesian product across layers),
    keeping the first maximizer in ascending (eps, k) order, so ties resolve
    to the smallest eps and then the smallest k.
    """
    config = config or SelectionConfig()
    mode = NeighborhoodMode(mode)
    ids = _check_layer_set(net, layer_set)
    indexes = tuple(indexes)
    if validation.size == 0:
        raise ClassifierError("validation set is empty")

    captured = capture_layers(net, validation.x, ids)
    _, probs = forward_batch(net, validation.x)
    beliefs = np.argmax(probs, axis=1)
    metric_kinds = ["euclidean" if ix.metric is None else "weighted" for ix in indexes]

    if config.propagate:
        if mode is not NeighborhoodMode.EPS_BALL:
            raise ClassifierError("propagation selection supports eps-ball mode only")
        if not config.eps_grid:
            raise ClassifierError("propagation selection needs an explicit eps0 grid")
        best = None
        for eps0 in sorted(float(e) for e in config.eps_grid):
            chained = propagate_epsilon(net, eps0, ids)
            per_layer = [
                _support_classes(ix, captured[layer], layer, mode, eps, None, kind)
                for layer, ix, kind, eps in zip(ids, indexes, metric_kinds, chained)
            ]
            cov = _coverage(per_layer, beliefs)
            if best is None or cov > best[0]:
                specs = tuple(
                    NeighborhoodSpec(layer=layer, mode=mode, eps=eps, metric_kind=kind)
                    for layer, kind, eps in zip(ids, metric_kinds, chained)
                )
                best = (cov, specs)
        return SelectionResult(best[1], best[0])

    layer_candidates = []
    layer_class_cache = []
    for layer, index, kind in zip(ids, indexes, metric_kinds):
        candidates = _layer_candidates(mode, default_eps_grid(index, config), config.k_grid)
        if not candidates:
            raise ClassifierError("candidate grid is empty")
        layer_candidates.append(candidates)
        layer_class_cache.append([
            _support_classes(index, captured[layer], layer, mode, eps, k, kind)
            for eps, k in candidates
        ])

    best = None
    for combo in itertools.product(*(range(len(c)) for c in layer_candidates)):
        per_layer = [layer_class_cache[li][ci] for li, ci in enumerate(combo)]
        cov = _coverage(per_layer, beliefs)
        if best is None or cov > best[0]:
            specs = tuple(
                NeighborhoodSpec(layer=layer, mode=mode,
                                 eps=layer_candidates[li][ci][0],
                                 k=layer_candidates[li][ci][1],
                                 metric_kind=metric_kinds[li])
                for li, (layer, ci) in enumerate(zip(ids, combo))
            )
            best = (cov, specs)
    return SelectionResult(best[1], best[0])


# ---------------------------------------------------------------------------
# build


def _is_untrained(net: LayeredNet) -> bool:
    return all(not np.any(layer.weights) for layer in net.layers)


def build(net: LayeredNet, train_data: Dataset, validation: Dataset, layer_set,
          metric: str = "euclidean", mode: NeighborhoodMode = NeighborhoodMode.EPS_BALL,
          selection: SelectionConfig | None = None,
          leaf_size: int = 16) -> EpistemicClassifier:
    """Index the training activations of each chosen layer, then select radii.

    metric "euclidean" uses the plain L2 distance in every layer; "weighted"
    equips each layer with its compensating quadratic form so one input-space
    radius means the same thing everywhere.
    """
    ids = _check_layer_set(net, layer_set)
    if _is_untrained(net):
        raise ClassifierError("network weights are all zero; train the base model first")
    if train_data.size == 0:
        raise ClassifierError("training dataset is empty")
    if metric not in ("euclidean", "weighted"):
        raise ClassifierError(f"unknown metric choice {metric!r}")

    captured = capture_layers(net, train_data.x, ids)
    indexes = []
    for layer in ids:
        m = weighted_metric_for_layer(net, layer) if metric == "weighted" and layer > 0 else None
        indexes.append(build_index(captured[layer], train_data.y, metric=m, leaf_size=leaf_size))
    result = select_parameters(net, ids, indexes, validation, mode=mode, config=selection)
    return EpistemicClassifier(net, ids, result.specs, tuple(indexes))


# ---------------------------------------------------------------------------
# layer-distortion bounds and the compensating metric


def _segment_product(net: LayeredNet, start: int, stop: int) -> np.ndarray:
    """Composed weight product for captured layers start+1..stop (1-based)."""
    product = net.layers[start].weights
    for j in range(start + 1, stop):
        product = product @ net.layers[j].weights
    return product


def _segment_lipschitz(net: LayeredNet, start: int, stop: int) -> float:
    factor = 1.0
    for j in range(start, stop):
        act = net.layers[j].activation
        captured_pre = j == len(net.layers) - 1 and act is Activation.SOFTMAX
        if captured_pre:
            continue  # the final layer contributes its logits, before softmax
        if not act.usable_for_bounds:
            raise ClassifierError(f"layer {j + 1} uses softmax; cannot propagate a bound through it")
        factor *= act.lipschitz
    return factor


def propagate_epsilon(net: LayeredNet, eps0: float, layer_set) -> list[float]:
    """Chain the input radius through the net, reporting it at each listed layer.

    Each segment between listed layers contributes its activation Lipschitz
    factors times the root of the dominant eigenvalue of the composed weight
    product times its transpose.
    """
    if not eps0 > 0.0:
        raise ClassifierError(f"eps0 must be positive, got {eps0!r}")
    ids = _check_layer_set(net, layer_set)
    bounds = []
    eps = eps0
    prev = 0
    for layer in ids:
        if layer == 0:
            bounds.append(eps0)
            continue
        product = _segment_product(net, prev, layer)
        lam = largest_eigenvalue(product @ product.T)
        eps = eps * _segment_lipschitz(net, prev, layer) * float(np.sqrt(lam))
        bounds.append(eps)
        prev = layer
    return bounds


def weighted_metric_for_layer(net: LayeredNet, layer: int) -> WeightedMetric:
    """Quadratic form under which a layer's activations inherit input distances.

    Builds the composed weight product from the input to the layer, keeps its
    non-zero spectrum, and inverts it along the retained directions, so a ball
    of input-space radius eps0 maps inside the eps0 ball of this metric (exact
    for linear chains, conservative under activations).
    """
    ids = _check_layer_set(net, (layer,))
    layer = ids[0]
    if layer == 0:
        return WeightedMetric(np.eye(net.input_dim))
    _segment_lipschitz(net, 0, layer)  # rejects softmax inside the chain
    tilde = _segment_product(net, 0, layer)
    m, n = tilde.shape
    if n > m:
        raise ClassifierError(
            f"layer width {n} exceeds input dimension {m}; the compensating "
            "metric assumes non-expanding chains (n <= m)"
        )
    values, u = symmetric_eigendecomposition(tilde @ tilde.T, rank=n)
    if not values:
        raise ClassifierError("weight chain is rank deficient: no non-zero eigenvalues retained")
    inv_sq = np.diag([1.0 / (v * v) for v in values])
    d = tilde.T @ u @ inv_sq @ u.T @ tilde
    return WeightedMetric(0.5 * (d + d.T))


# ---------------------------------------------------------------------------
# softmax-threshold baseline


def softmax_baseline(net: LayeredNet, x, threshold: float) -> tuple[int, bool]:
    """Base prediction plus an abstain flag: abstain when max softmax < threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ClassifierError(f"threshold must be in [0, 1], got {threshold!r}")
    _, probs = forward_capture(net, x)
    return int(np.argmax(probs)), bool(np.max(probs) < threshold)


def calibrate_softmax_threshold(net: LayeredNet, data: Dataset, target_coverage: float) -> float:
    """Threshold whose non-abstain fraction on `data` is closest to the target.

    Sweeps 0 plus every observed max-softmax value; ties resolve to the
    smallest threshold.
    """
    if data.size == 0:
        raise ClassifierError("calibration set is empty")
    if not 0.0 <= target_coverage <= 1.0:
        raise ClassifierError(f"target coverage must be in [0, 1], got {target_coverage!r}")
    _, probs = forward_batch(net, data.x)
    maxes = np.max(probs, axis=1)
    best_t, best_gap = 0.0, abs(1.0 - target_coverage)
    for t in np.unique(maxes):
        gap = abs(float(np.mean(maxes >= t)) - target_coverage)
        if gap < best_gap:
            best_t, best_gap = float(t), gap
    return best_t
