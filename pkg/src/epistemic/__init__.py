"""Classifier wrapper that grades each prediction's justification.

A trained dense network supplies the belief; neighborhoods of the input's
activations in chosen layers, searched over the training set, supply the
justification. Each inference is asserted IK ("I know": the neighborhood
agrees with the belief everywhere), IMK ("I may know": mixed evidence that
includes the belief), or IDK ("I don't know": no or contradicting evidence).
"""

from .classifier import (
    Assertion,
    EpistemicClassifier,
    EpistemicVerdict,
    SelectionConfig,
    assert_knowledge,
    build,
    calibrate_softmax_threshold,
    infer,
    infer_dataset,
    justify,
    propagate_epsilon,
    select_parameters,
    softmax_baseline,
    weighted_metric_for_layer,
)
from .evaluation import (
    AugConfusionMatrix,
    EpistemicMetrics,
    PerturbationSpec,
    accumulate,
    epsilon_sweep,
    evaluate,
    load_csv,
    make_blobs,
    metrics_from,
    perturb,
    rescale,
    split,
)
from .linalg import WeightedMetric, weighted_distance
from .neighbors import LayerIndex, brute_force_query, build_index, knn_query, range_query
from .network import (
    Activation,
    Dataset,
    LayeredNet,
    bim_attack,
    forward_capture,
    load_weights,
    make_net,
    predict,
    save_weights,
    train,
)
from .support import NeighborhoodMode, NeighborhoodSpec, SupportSet, neighborhood, support

__all__ = [
    "Activation",
    "Assertion",
    "AugConfusionMatrix",
    "Dataset",
    "EpistemicClassifier",
    "EpistemicMetrics",
    "EpistemicVerdict",
    "LayerIndex",
    "LayeredNet",
    "NeighborhoodMode",
    "NeighborhoodSpec",
    "PerturbationSpec",
    "SelectionConfig",
    "SupportSet",
    "WeightedMetric",
    "accumulate",
    "assert_knowledge",
    "bim_attack",
    "brute_force_query",
    "build",
    "build_index",
    "calibrate_softmax_threshold",
    "epsilon_sweep",
    "evaluate",
    "forward_capture",
    "infer",
    "infer_dataset",
    "justify",
    "knn_query",
    "load_csv",
    "load_weights",
    "make_blobs",
    "make_net",
    "metrics_from",
    "neighborhood",
    "perturb",
    "predict",
    "rescale",
    "propagate_epsilon",
    "range_query",
    "save_weights",
    "select_parameters",
    "softmax_baseline",
    "split",
    "support",
    "train",
    "weighted_distance",
    "weighted_metric_for_layer",
]
