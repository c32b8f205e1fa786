"""Augmented confusion matrix, perturbations, datasets, and sweep runners.

The augmented confusion matrix stacks three C x C count blocks, one per
assertion (IK / IMK / IDK), oriented rows = predicted label, cols = true
label. Derived metrics: the assertion fractions F_IK / F_IMK / F_IDK (always
summing to one by counting) and the region accuracies A_IK and A_notIK, which
are None when their region is empty rather than a silently biased zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .classifier import Assertion, EpistemicClassifier, EpistemicVerdict, infer_dataset
from .network import Dataset, LayeredNet, bim_attack
from .support import NeighborhoodSpec


class EvaluationError(ValueError):
    """Raised on label range errors, empty matrices, or bad perturbation specs."""


@dataclass
class AugConfusionMatrix:
    """Three stacked confusion blocks; rows = predicted, cols = true."""

    class_count: int
    blocks: dict[Assertion, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.class_count < 1:
            raise EvaluationError(f"class_count must be >= 1, got {self.class_count}")
        if not self.blocks:
            self.blocks = {
                a: np.zeros((self.class_count, self.class_count), dtype=np.int64)
                for a in Assertion
            }

    @property
    def total(self) -> int:
        return int(sum(b.sum() for b in self.blocks.values()))


def accumulate(acm: AugConfusionMatrix, verdict: EpistemicVerdict,
               true_label: int) -> AugConfusionMatrix:
    """Count one verdict into its assertion block at [predicted][true]."""
    c = acm.class_count
    if not 0 <= true_label < c:
        raise EvaluationError(f"true label {true_label} out of range for {c} classes")
    if not 0 <= verdict.belief < c:
        raise EvaluationError(f"predicted label {verdict.belief} out of range for {c} classes")
    acm.blocks[verdict.assertion][verdict.belief, true_label] += 1
    return acm


@dataclass(frozen=True)
class EpistemicMetrics:
    f_ik: float
    f_imk: float
    f_idk: float
    a_ik: float | None
    a_not_ik: float | None


def metrics_from(acm: AugConfusionMatrix) -> EpistemicMetrics:
    total = acm.total
    if total == 0:
        raise EvaluationError("cannot compute metrics of an empty confusion matrix")
    counts = {a: int(acm.blocks[a].sum()) for a in Assertion}
    ik_diag = int(np.trace(acm.blocks[Assertion.IK]))
    rest_diag = int(np.trace(acm.blocks[Assertion.IMK]) + np.trace(acm.blocks[Assertion.IDK]))
    rest_total = counts[Assertion.IMK] + counts[Assertion.IDK]
    return EpistemicMetrics(
        f_ik=counts[Assertion.IK] / total,
        f_imk=counts[Assertion.IMK] / total,
        f_idk=counts[Assertion.IDK] / total,
        a_ik=(ik_diag / counts[Assertion.IK]) if counts[Assertion.IK] else None,
        a_not_ik=(rest_diag / rest_total) if rest_total else None,
    )


def evaluate(ec: EpistemicClassifier, data: Dataset) -> AugConfusionMatrix:
    """Run inference over a dataset and tally the augmented confusion matrix."""
    acm = AugConfusionMatrix(ec.net.class_count)
    for verdict, true_label in zip(infer_dataset(ec, data.x), data.y):
        accumulate(acm, verdict, int(true_label))
    return acm


# ---------------------------------------------------------------------------
# perturbations


PERTURBATION_KINDS = ("gaussian", "uniform", "large_uniform", "bim")


@dataclass(frozen=True)
class PerturbationSpec:
    """Noise or attack description.

    magnitude means: multiples of the per-feature reference std for gaussian
    and uniform, a fraction of the per-feature (max - min) for large_uniform,
    and the L-infinity budget for bim.
    """

    kind: str
    magnitude: float
    seed: int = 0
    bim_step: float | None = None
    bim_iterations: int = 10
    clip_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise EvaluationError(
                f"unknown perturbation kind {self.kind!r}; expected one of {PERTURBATION_KINDS}"
            )
        if self.magnitude < 0.0:
            raise EvaluationError(f"magnitude must be >= 0, got {self.magnitude}")


def perturb(data: Dataset, spec: PerturbationSpec, net: LayeredNet | None = None,
            reference: Dataset | None = None) -> Dataset:
    """Perturbed copy of a dataset; labels and role are untouched.

    Noise scales derive from `reference` (normally the training split) so the
    magnitudes mean the same thing across evaluation sets; defaults to the
    perturbed data itself.
    """
    ref = (reference or data).x
    x = data.x
    if spec.magnitude == 0.0:
        return Dataset(x.copy(), data.y.copy(), data.role)
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "gaussian":
        scale = np.std(ref, axis=0) * spec.magnitude
        noisy = x + rng.normal(0.0, 1.0, size=x.shape) * scale
    elif spec.kind == "uniform":
        scale = np.std(ref, axis=0) * spec.magnitude
        noisy = x + rng.uniform(-1.0, 1.0, size=x.shape) * scale
    elif spec.kind == "large_uniform":
        scale = (ref.max(axis=0) - ref.min(axis=0)) * spec.magnitude
        noisy = x + rng.uniform(-1.0, 1.0, size=x.shape) * scale
    else:  # bim
        if net is None:
            raise EvaluationError("bim perturbation needs the base network")
        step = spec.bim_step if spec.bim_step is not None else spec.magnitude / 5.0
        noisy = np.stack([
            bim_attack(net, x[i], int(data.y[i]), step=step, bound=spec.magnitude,
                       iterations=spec.bim_iterations, clip_range=spec.clip_range)
            for i in range(x.shape[0])
        ])
    return Dataset(noisy, data.y.copy(), data.role)


# ---------------------------------------------------------------------------
# datasets


def make_blobs(centers, sigma: float, per_class: int, seed: int,
               role: str = "train") -> Dataset:
    """Isotropic Gaussian clusters, one class per center, deterministic."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] < 2:
        raise EvaluationError("need at least two centers")
    if sigma < 0.0:
        raise EvaluationError(f"sigma must be >= 0, got {sigma}")
    if per_class < 1:
        raise EvaluationError(f"per_class must be >= 1, got {per_class}")
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for label, center in enumerate(centers):
        xs.append(center + sigma * rng.standard_normal((per_class, centers.shape[1])))
        ys.append(np.full(per_class, label, dtype=np.int64))
    return Dataset(np.vstack(xs), np.concatenate(ys), role)


def load_csv(path, role: str = "train") -> Dataset:
    """Numeric CSV with the integer class label in the final column."""
    rows = []
    labels = []
    width = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise EvaluationError(f"{path}:{lineno}: rows need features plus a label")
            if len(row) != width:
                raise EvaluationError(
                    f"{path}:{lineno}: {len(row)} columns, expected {width}"
                )
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise EvaluationError(f"{path}:{lineno}: non-numeric cell") from None
            label = values[-1]
            if label != int(label) or label < 0:
                raise EvaluationError(
                    f"{path}:{lineno}: label {label!r} is not a non-negative integer"
                )
            rows.append(values[:-1])
            labels.append(int(label))
    if not rows:
        raise EvaluationError(f"{path}: no data rows")
    y = np.asarray(labels, dtype=np.int64)
    seen = set(labels)
    missing = sorted(set(range(int(y.max()) + 1)) - seen)
    if missing:
        raise EvaluationError(f"{path}: label values skip {missing}; classes must be contiguous")
    return Dataset(np.asarray(rows, dtype=np.float64), y, role)


def rescale(kind: str, fit_to: Dataset, *datasets: Dataset) -> list[Dataset]:
    """Per-feature rescaling with statistics taken from `fit_to` (the train split).

    kind "standardize" maps to zero mean and unit variance, "minmax" to [0, 1],
    "none" copies through. Constant features keep their offset but divide by 1.
    """
    if kind == "none":
        return [Dataset(d.x.copy(), d.y.copy(), d.role) for d in datasets]
    if kind == "standardize":
        shift = fit_to.x.mean(axis=0)
        scale = fit_to.x.std(axis=0)
    elif kind == "minmax":
        shift = fit_to.x.min(axis=0)
        scale = fit_to.x.max(axis=0) - shift
    else:
        raise EvaluationError(f"unknown scaling kind {kind!r}")
    scale = np.where(scale == 0, 1.0, scale)
    return [Dataset((d.x - shift) / scale, d.y.copy(), d.role) for d in datasets]


def split(data: Dataset, fractions, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Stratified shuffle into train/validation/test with fixed proportions."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise EvaluationError(f"fractions must be three non-negative values, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise EvaluationError(f"fractions must sum to 1, got {sum(fractions)}")
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[], [], []]
    for label in np.unique(data.y):
        ids = np.flatnonzero(data.y == label)
        ids = ids[rng.permutation(len(ids))]
        n = len(ids)
        # largest-remainder allocation so per-class sizes are exact
        raw = [f * n for f in fractions]
        counts = [int(np.floor(r)) for r in raw]
        remainders = sorted(range(3), key=lambda i: (raw[i] - counts[i], -i), reverse=True)
        for i in remainders[: n - sum(counts)]:
            counts[i] += 1
        start = 0
        for part, count in zip(parts, counts):
            part.extend(ids[start:start + count].tolist())
            start += count
    roles = ("train", "validation", "test")
    out = []
    for part, role in zip(parts, roles):
        order = np.asarray(sorted(part), dtype=np.int64)
        out.append(Dataset(data.x[order], data.y[order], role))
    return tuple(out)


# ---------------------------------------------------------------------------
# sweeps and reports


@dataclass(frozen=True)
class SweepRow:
    eps: float
    f_ik: float
    f_imk: float
    f_idk: float
    a_ik: float | None
    a_not_ik: float | None


def epsilon_sweep(ec: EpistemicClassifier, data: Dataset, grid) -> list[SweepRow]:
    """Full evaluation at each radius, applied to every layer, ordered by eps."""
    grid = sorted(float(e) for e in grid)
    if not grid:
        raise EvaluationError("sweep grid is empty")
    if any(s.eps is None for s in ec.specs):
        raise EvaluationError("epsilon sweep needs an eps-based neighborhood mode")
    rows = []
    for eps in grid:
        specs = tuple(
            NeighborhoodSpec(layer=s.layer, mode=s.mode, eps=eps, k=s.k,
                             metric_kind=s.metric_kind)
            for s in ec.specs
        )
        swept = EpistemicClassifier(ec.net, ec.layer_set, specs, ec.indexes)
        m = metrics_from(evaluate(swept, data))
        rows.append(SweepRow(eps, m.f_ik, m.f_imk, m.f_idk, m.a_ik, m.a_not_ik))
    return rows


def _fmt(value: float | None) -> str:
    return "null" if value is None else format(value, ".17g")


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epsilon,f_ik,f_imk,f_idk,a_ik,a_not_ik\n")
        for r in rows:
            fh.write(",".join([
                format(r.eps, ".17g"), _fmt(r.f_ik), _fmt(r.f_imk), _fmt(r.f_idk),
                _fmt(r.a_ik), _fmt(r.a_not_ik),
            ]) + "\n")


def acm_report(acm: AugConfusionMatrix) -> dict:
    """JSON-ready report: blocks, metrics, and the orientation convention."""
    m = metrics_from(acm)
    return {
        "orientation": "rows=predicted,cols=true",
        "blocks": {a.value: acm.blocks[a].tolist() for a in Assertion},
        "metrics": {
            "f_ik": m.f_ik,
            "f_imk": m.f_imk,
            "f_idk": m.f_idk,
            "a_ik": m.a_ik,
            "a_not_ik": m.a_not_ik,
        },
    }


def render_acm_text(acm: AugConfusionMatrix) -> str:
    """Plain-text rendering: three stacked aligned blocks, one per assertion."""
    width = max(5, len(str(int(max(b.max() for b in acm.blocks.values())))) + 1)
    lines = ["augmented confusion matrix (rows=predicted, cols=true)"]
    header = " " * 6 + "".join(f"{f'c{j}':>{width}}" for j in range(acm.class_count))
    for a in Assertion:
        lines.append(f"{a.value}:")
        lines.append(header)
        for i in range(acm.class_count):
            row = "".join(f"{int(v):>{width}}" for v in acm.blocks[a][i])
            lines.append(f"  p{i:<3d}{row}")
    return "\n".join(lines) + "\n"
