"""Command-line driver: train, build, eval, sweep, and infer.

One JSON config fully determines a run; flags may override individual keys
and every override lands in the output manifest so artifacts stay
reproducible. All randomness derives from the single top-level seed plus
fixed per-role offsets. Re-running any command with the same config and seed
overwrites its outputs byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import classifier as ec_mod
from . import evaluation as ev
from .network import (Dataset, LayeredNet, forward_batch, load_weights, make_net,
                      predict_batch, save_weights)
from .support import NeighborhoodMode, NeighborhoodSpec

SEED_OFFSETS = {"blobs": 1, "split": 2, "train": 3, "perturb": 4}


class ConfigError(ValueError):
    """Configuration problem; the message carries the offending field path."""


def _expect(cond: bool, path: str, message: str):
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _get(doc: dict, path: str, key: str, kind, default=None, required=False):
    if key not in doc:
        _expect(not required, f"{path}.{key}", "is required")
        return default
    value = doc[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    _expect(isinstance(value, kind) and not isinstance(value, bool),
            f"{path}.{key}", f"expected {kind.__name__}")
    return value


class RunConfig:
    """Validated view over the config document."""

    def __init__(self, doc: dict, source: str = "config"):
        _expect(isinstance(doc, dict), source, "top level must be an object")
        self.seed = _get(doc, source, "seed", int, default=0)
        self.out = _get(doc, source, "out", str, default="out")

        data = _get(doc, source, "data", dict, required=True)
        has_blobs = "blobs" in data
        has_csv = "csv" in data
        _expect(has_blobs != has_csv, f"{source}.data",
                "exactly one data source ('blobs' or 'csv') must be given")
        self.scale = _get(data, f"{source}.data", "scale", str, default="none")
        _expect(self.scale in ("none", "standardize", "minmax"),
                f"{source}.data.scale", f"unknown scaling {self.scale!r}")
        if has_blobs:
            blobs = _get(data, f"{source}.data", "blobs", dict, required=True)
            centers = _get(blobs, f"{source}.data.blobs", "centers", list, required=True)
            _expect(len(centers) >= 2, f"{source}.data.blobs.centers", "need at least two")
            self.blobs = {
                "centers": centers,
                "sigma": _get(blobs, f"{source}.data.blobs", "sigma", float, required=True),
                "per_class": _get(blobs, f"{source}.data.blobs", "per_class", int, required=True),
            }
            self.csv = None
        else:
            self.blobs = None
            self.csv = _get(data, f"{source}.data", "csv", str, required=True)

        fractions = _get(doc, source, "split", list, default=[0.6, 0.2, 0.2])
        _expect(len(fractions) == 3, f"{source}.split", "expected three fractions")
        self.split_fractions = tuple(float(f) for f in fractions)

        net = _get(doc, source, "network", dict, required=True)
        hidden = _get(net, f"{source}.network", "hidden", list, required=True)
        _expect(all(isinstance(w, int) and w >= 1 for w in hidden),
                f"{source}.network.hidden", "widths must be positive integers")
        self.hidden = list(hidden)
        self.activation = _get(net, f"{source}.network", "activation", str, default="relu")
        _expect(self.activation in ("relu", "tanh", "linear"),
                f"{source}.network.activation", f"unknown activation {self.activation!r}")

        training = _get(doc, source, "training", dict, default={})
        self.epochs = _get(training, f"{source}.training", "epochs", int, default=300)
        self.learning_rate = _get(training, f"{source}.training", "learning_rate", float, default=0.05)
        self.batch_size = _get(training, f"{source}.training", "batch_size", int, default=16)
        _expect(self.epochs >= 0, f"{source}.training.epochs", "must be >= 0")
        _expect(self.learning_rate > 0, f"{source}.training.learning_rate", "must be > 0")
        _expect(self.batch_size >= 1, f"{source}.training.batch_size", "must be >= 1")

        self.raw_layer_set = _get(doc, source, "layer_set", list, default=["hidden_last", "logit"])
        _expect(bool(self.raw_layer_set), f"{source}.layer_set", "must not be empty")

        hood = _get(doc, source, "neighborhood", dict, default={})
        mode = _get(hood, f"{source}.neighborhood", "mode", str, default="eps_ball")
        try:
            self.mode = NeighborhoodMode(mode)
        except ValueError:
            raise ConfigError(f"{source}.neighborhood.mode: unknown mode {mode!r}") from None
        self.metric = _get(hood, f"{source}.neighborhood", "metric", str, default="euclidean")
        _expect(self.metric in ("euclidean", "weighted"),
                f"{source}.neighborhood.metric", f"unknown metric {self.metric!r}")

        sel = _get(doc, source, "selection", dict, default={})
        eps_grid = sel.get("eps_grid")
        _expect(eps_grid is None or isinstance(eps_grid, list),
                f"{source}.selection.eps_grid", "expected a list or null")
        k_grid = _get(sel, f"{source}.selection", "k_grid", list, default=[1, 3, 5, 10])
        self.selection = ec_mod.SelectionConfig(
            eps_grid=None if eps_grid is None else tuple(float(e) for e in eps_grid),
            k_grid=tuple(int(k) for k in k_grid),
            grid_points=_get(sel, f"{source}.selection", "grid_points", int, default=25),
            grid_span=tuple(float(v) for v in _get(sel, f"{source}.selection", "grid_span",
                                                   list, default=[1e-3, 1e3])),
            propagate=bool(sel.get("propagate", False)),
        )

        sweep = _get(doc, source, "sweep", dict, default={})
        grid = sweep.get("grid")
        _expect(grid is None or isinstance(grid, list),
                f"{source}.sweep.grid", "expected a list or null")
        self.sweep_grid = None if grid is None else [float(e) for e in grid]

        bim = _get(doc, source, "bim", dict, default={})
        self.bim_step = bim.get("step")
        self.bim_iterations = _get(bim, f"{source}.bim", "iterations", int, default=10)
        clip = bim.get("clip")
        _expect(clip is None or (isinstance(clip, list) and len(clip) == 2),
                f"{source}.bim.clip", "expected [lo, hi] or null")
        self.clip_range = None if clip is None else (float(clip[0]), float(clip[1]))

    def resolve_layer_set(self, net: LayeredNet) -> tuple[int, ...]:
        top = len(net.layers)
        ids = []
        for item in self.raw_layer_set:
            if isinstance(item, int) and not isinstance(item, bool):
                ids.append(item)
            elif item == "input":
                ids.append(0)
            elif item == "logit":
                ids.append(top)
            elif item == "hidden_last":
                ids.append(top - 1)
            elif isinstance(item, str) and item.startswith("hidden") and item[6:].isdigit():
                ids.append(int(item[6:]))
            else:
                raise ConfigError(f"config.layer_set: cannot resolve {item!r}")
        _expect(ids == sorted(set(ids)), "config.layer_set", "must be strictly increasing")
        _expect(0 <= ids[0] and ids[-1] <= top, "config.layer_set",
                f"layer ids must lie in [0, {top}]")
        return tuple(ids)


def load_config(path: str, seed_override: int | None, out_override: str | None) -> tuple[RunConfig, dict]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from None
    overrides = {}
    if seed_override is not None:
        doc["seed"] = seed_override
        overrides["seed"] = seed_override
    if out_override is not None:
        doc["out"] = out_override
        overrides["out"] = out_override
    return RunConfig(doc), overrides


def load_datasets(config: RunConfig) -> tuple[Dataset, Dataset, Dataset]:
    if config.blobs is not None:
        data = ev.make_blobs(config.blobs["centers"], config.blobs["sigma"],
                             config.blobs["per_class"],
                             seed=config.seed + SEED_OFFSETS["blobs"])
    else:
        data = ev.load_csv(config.csv)
    parts = ev.split(data, config.split_fractions, seed=config.seed + SEED_OFFSETS["split"])
    return tuple(ev.rescale(config.scale, parts[0], *parts))


def _write_json(doc: dict, path: Path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _accuracy(net: LayeredNet, data: Dataset) -> float:
    return float(np.mean(predict_batch(net, data.x) == data.y))


def parse_perturb(text: str, config: RunConfig) -> ev.PerturbationSpec:
    try:
        kind, magnitude = text.split(":", 1)
        magnitude = float(magnitude)
    except ValueError:
        raise ConfigError(f"--perturb expects kind:magnitude, got {text!r}") from None
    return ev.PerturbationSpec(
        kind=kind, magnitude=magnitude, seed=config.seed + SEED_OFFSETS["perturb"],
        bim_step=config.bim_step, bim_iterations=config.bim_iterations,
        clip_range=config.clip_range,
    )


def _weights_path(config: RunConfig, explicit: str | None) -> Path:
    return Path(explicit) if explicit else Path(config.out) / "weights.json"


def _manifest_path(config: RunConfig, explicit: str | None) -> Path:
    return Path(explicit) if explicit else Path(config.out) / "manifest.json"


def _load_net_checked(config: RunConfig, path: Path, train_data: Dataset) -> LayeredNet:
    net = load_weights(path)
    _expect(net.input_dim == train_data.x.shape[1], "weights.input_dim",
            f"file has {net.input_dim} but the data has {train_data.x.shape[1]} features")
    classes = int(train_data.y.max()) + 1
    _expect(net.class_count == classes, "weights.class_count",
            f"file has {net.class_count} but the data has {classes} classes")
    hidden = [layer.out_dim for layer in net.layers[:-1]]
    _expect(hidden == config.hidden, "weights.layers",
            f"file hidden widths {hidden} do not match config {config.hidden}")
    return net


def cmd_train(config: RunConfig, overrides: dict, weights: str | None) -> Path:
    from .network import train as train_net

    train_data, validation, test = load_datasets(config)
    classes = int(train_data.y.max()) + 1
    net = make_net(train_data.x.shape[1], config.hidden, classes, config.activation)
    net = train_net(net, train_data, config.epochs, config.learning_rate,
                    config.batch_size, seed=config.seed + SEED_OFFSETS["train"])
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    path = _weights_path(config, weights)
    save_weights(net, path)
    _write_json({
        "seed": config.seed,
        "overrides": overrides,
        "architecture": {"input_dim": net.input_dim, "hidden": config.hidden,
                         "class_count": net.class_count, "activation": config.activation},
        "training": {"epochs": config.epochs, "learning_rate": config.learning_rate,
                     "batch_size": config.batch_size},
        "accuracy": {"train": _accuracy(net, train_data),
                     "validation": _accuracy(net, validation),
                     "test": _accuracy(net, test)},
    }, out / "train_report.json")
    return path


def cmd_build(config: RunConfig, overrides: dict, weights: str | None) -> Path:
    train_data, validation, _ = load_datasets(config)
    net = _load_net_checked(config, _weights_path(config, weights), train_data)
    ec = ec_mod.build(net, train_data, validation, config.resolve_layer_set(net),
                      metric=config.metric, mode=config.mode, selection=config.selection)
    coverage = ec_mod.coverage_on(ec, validation)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    path = _manifest_path(config, None)
    _write_json({
        "seed": config.seed,
        "overrides": overrides,
        "layer_set": list(ec.layer_set),
        "mode": config.mode.value,
        "metric": config.metric,
        "validation_coverage": coverage,
        "per_layer": [
            {"layer": s.layer, "eps": s.eps, "k": s.k} for s in ec.specs
        ],
    }, path)
    return path


def _rebuild_from_manifest(config: RunConfig, weights: str | None,
                           manifest_path: str | None,
                           train_data: Dataset) -> tuple[ec_mod.EpistemicClassifier, dict]:
    net = _load_net_checked(config, _weights_path(config, weights), train_data)
    path = _manifest_path(config, manifest_path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"manifest not found: {path} (run the build command first)") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from None
    layer_set = tuple(manifest["layer_set"])
    _expect(layer_set and layer_set[-1] <= len(net.layers), "manifest.layer_set",
            "layer ids do not fit the loaded network")
    mode = NeighborhoodMode(manifest["mode"])
    metric = manifest.get("metric", "euclidean")
    captured = ec_mod.capture_layers(net, train_data.x, layer_set)
    from .neighbors import build_index

    indexes, specs = [], []
    for entry in manifest["per_layer"]:
        layer = entry["layer"]
        m = ec_mod.weighted_metric_for_layer(net, layer) if metric == "weighted" and layer > 0 else None
        indexes.append(build_index(captured[layer], train_data.y, metric=m))
        specs.append(NeighborhoodSpec(
            layer=layer, mode=mode, eps=entry.get("eps"), k=entry.get("k"),
            metric_kind="weighted" if m is not None else "euclidean",
        ))
    return ec_mod.EpistemicClassifier(net, layer_set, tuple(specs), tuple(indexes)), manifest


def _baseline_row(net: LayeredNet, threshold: float, data: Dataset) -> dict:
    _, probs = forward_batch(net, data.x)
    beliefs = np.argmax(probs, axis=1)
    accepted = np.max(probs, axis=1) >= threshold
    correct = beliefs == data.y
    n = data.size
    n_acc = int(accepted.sum())
    return {
        "method": "softmax_baseline",
        "threshold": threshold,
        "f_ik": n_acc / n,
        "a_ik": float(correct[accepted].mean()) if n_acc else None,
        "a_not_ik": float(correct[~accepted].mean()) if n_acc < n else None,
    }


def cmd_eval(config: RunConfig, overrides: dict, weights: str | None,
             manifest_path: str | None, perturb_arg: str | None) -> Path:
    train_data, validation, test = load_datasets(config)
    ec, manifest = _rebuild_from_manifest(config, weights, manifest_path, train_data)
    tag = "nominal"
    eval_set = test
    if perturb_arg:
        spec = parse_perturb(perturb_arg, config)
        eval_set = ev.perturb(test, spec, net=ec.net, reference=train_data)
        tag = spec.kind
    acm = ev.evaluate(ec, eval_set)
    metrics = ev.metrics_from(acm)
    threshold = ec_mod.calibrate_softmax_threshold(
        ec.net, validation, manifest["validation_coverage"])
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    report = ev.acm_report(acm)
    report["perturbation"] = tag
    report["overrides"] = overrides
    _write_json(report, out / f"acm_{tag}.json")
    (out / f"acm_{tag}.txt").write_text(ev.render_acm_text(acm), encoding="utf-8")
    rows = [
        {"method": "epistemic", "threshold": None, "f_ik": metrics.f_ik,
         "a_ik": metrics.a_ik, "a_not_ik": metrics.a_not_ik},
        _baseline_row(ec.net, threshold, eval_set),
    ]
    path = out / f"metrics_{tag}.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("method,f_ik,a_ik,a_not_ik\n")
        for row in rows:
            fh.write(",".join([
                row["method"],
                format(row["f_ik"], ".17g"),
                "null" if row["a_ik"] is None else format(row["a_ik"], ".17g"),
                "null" if row["a_not_ik"] is None else format(row["a_not_ik"], ".17g"),
            ]) + "\n")
    return path


def cmd_sweep(config: RunConfig, overrides: dict, weights: str | None) -> Path:
    train_data, validation, test = load_datasets(config)
    net = _load_net_checked(config, _weights_path(config, weights), train_data)
    layer_set = config.resolve_layer_set(net)
    captured = ec_mod.capture_layers(net, train_data.x, layer_set)
    from .neighbors import build_index

    indexes = []
    for layer in layer_set:
        m = ec_mod.weighted_metric_for_layer(net, layer) if config.metric == "weighted" and layer > 0 else None
        indexes.append(build_index(captured[layer], train_data.y, metric=m))
    grid = config.sweep_grid
    if grid is None:
        grid = ec_mod.default_eps_grid(indexes[0], config.selection)
    if config.mode is NeighborhoodMode.KNN:
        raise ConfigError("config.neighborhood.mode: sweep needs an eps-based mode")
    hybrid = config.mode in (NeighborhoodMode.H1, NeighborhoodMode.H2)
    placeholder = tuple(
        NeighborhoodSpec(layer=layer, mode=config.mode, eps=grid[0],
                         k=min(config.selection.k_grid) if hybrid else None,
                         metric_kind="euclidean" if ix.metric is None else "weighted")
        for layer, ix in zip(layer_set, indexes)
    )
    ec = ec_mod.EpistemicClassifier(net, layer_set, placeholder, tuple(indexes))
    rows = ev.epsilon_sweep(ec, test, grid)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    ev.write_sweep_csv(rows, path)
    return path


def cmd_infer(config: RunConfig, weights: str | None, manifest_path: str | None,
              stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    train_data, _, _ = load_datasets(config)
    ec, _ = _rebuild_from_manifest(config, weights, manifest_path, train_data)
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        x = np.asarray([float(v) for v in line.split(",")], dtype=np.float64)
        verdict = ec_mod.infer(ec, x)
        doc = {
            "belief": verdict.belief,
            "assertion": verdict.assertion.value,
            "justification": sorted(verdict.justification),
            "supports": [
                {"layer": s.layer, "classes": sorted(s.classes), "count": s.neighbor_count}
                for s in verdict.supports
            ],
        }
        stdout.write(json.dumps(doc, sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epistemic",
        description="Train a dense classifier and wrap it with neighborhood-"
                    "justified IK/IMK/IDK assertions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs in (
        ("train", ()),
        ("build", ("weights",)),
        ("eval", ("weights", "manifest", "perturb")),
        ("sweep", ("weights",)),
        ("infer", ("weights", "manifest")),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the run config JSON")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        if "weights" in needs:
            p.add_argument("--weights", default=None, help="weight file (default <out>/weights.json)")
        if "manifest" in needs:
            p.add_argument("--manifest", default=None, help="manifest file (default <out>/manifest.json)")
        if "perturb" in needs:
            p.add_argument("--perturb", default=None, metavar="KIND:MAGNITUDE",
                           help="evaluate under a perturbation, e.g. gaussian:0.03")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config, overrides = load_config(args.config, args.seed, args.out)
        if args.command == "train":
            path = cmd_train(config, overrides, None)
        elif args.command == "build":
            path = cmd_build(config, overrides, args.weights)
        elif args.command == "eval":
            path = cmd_eval(config, overrides, args.weights, args.manifest, args.perturb)
        elif args.command == "sweep":
            path = cmd_sweep(config, overrides, args.weights)
        else:
            return cmd_infer(config, args.weights, args.manifest)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
