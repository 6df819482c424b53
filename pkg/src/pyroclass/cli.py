"""Command-line entry point: split, train, crossval, evaluate, infer, explain, embed.

Every run is seeded via --seed, writes its outputs atomically, and drops
a JSON provenance record (command, arguments, resolved config, library
versions) next to them, so identical invocations produce byte-identical
files.  Exit codes: 0 success, 2 bad arguments or configuration, 3 data
or checkpoint problems, 4 divergence.
"""

import argparse
import json
import os
import platform
import sys

import numpy as np

from . import __version__
from .arch import ModelConfig, build_model, classify, forward
from .cam import cam_for_top_class, export_cam, grad_cam
from .data import (
    Dataset,
    decode_and_resize,
    load_images,
    load_manifest,
    save_manifest,
    split_test,
    stratified_folds,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    EmbeddingDivergedError,
    InvalidInputError,
    NumericError,
    PyroclassError,
    ShapeError,
    TrainingDivergedError,
)
from .metrics import confusion_matrix, confusion_to_csv, metrics_to_dict, roc_sweep, roc_to_csv
from .tasks import TASK_CLASSES
from .train import TrainConfig, cross_validate, load_checkpoint, save_checkpoint, train
from .tsne import EmbedConfig, collect_outputs, export_embedding, tsne
from .util import atomic_write_text, json_dumps

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _add_train_flags(p):
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--decay", type=float, default=0.009)
    p.add_argument("--decay-mode", choices=("per-update", "per-epoch"), default="per-update")


def _add_model_flags(p):
    p.add_argument("--task", choices=sorted(TASK_CLASSES), required=True)
    p.add_argument("--depth", type=int, choices=range(1, 6), metavar="{1..5}", required=True)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pyroclass",
        description="Thermal-image CNN classifier: data splitting, training, "
        "evaluation, saliency and embedding tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="stratified, video-grouped train/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("train", help="train one model, write checkpoint + report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest", help="held-out validation manifest; "
                   "if omitted one stratified fold is carved from --manifest")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("crossval", help="k-fold cross validation with per-fold metrics")
    p.add_argument("--manifest", required=True)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--folds", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("evaluate", help="confusion matrix, P/R/F1 and ROC on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("infer", help="class + score vector per image, JSON lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", action="append", default=[], help="repeatable")
    p.add_argument("--manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", help="optional; also writes predictions.jsonl + provenance")

    p = sub.add_parser("explain", help="grad-CAM heatmap for an image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--class-index", type=int, help="default: the predicted class")
    p.add_argument("--cam-layer", choices=("head1x1", "last3x3"), default="head1x1")
    p.add_argument("--overlay", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("embed", help="t-SNE of model score vectors over a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)

    return parser


def _require_paths(*paths):
    for p in paths:
        if p and not os.path.exists(p):
            raise DataError(f"path does not exist: {p}")


def _provenance(args, config):
    return {
        "command": args.command,
        "argv": args._argv,
        "seed": getattr(args, "seed", None),
        "config": config,
        "versions": {
            "pyroclass": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }


def _finish(args, out_dir, config):
    atomic_write_text(os.path.join(out_dir, "provenance.json"), json_dumps(_provenance(args, config)))


def _cmd_split(args):
    _require_paths(args.manifest)
    os.makedirs(args.out_dir, exist_ok=True)
    ds = load_manifest(args.manifest)
    result = split_test(ds, fraction=args.test_fraction, rng=args.seed)
    save_manifest(result.train_val, os.path.join(args.out_dir, "train.csv"))
    save_manifest(result.test, os.path.join(args.out_dir, "test.csv"))
    sidecar = {"seed": args.seed, **result.info}
    atomic_write_text(os.path.join(args.out_dir, "split.json"), json_dumps(sidecar))
    _finish(args, args.out_dir, {"test_fraction": args.test_fraction})
    return EXIT_OK


def _train_config(args, task):
    return TrainConfig(
        base_lr=args.lr,
        decay=args.decay,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        patience=args.patience,
        loss="binary" if task == "fire" else "categorical",
        decay_mode=args.decay_mode,
        seed=args.seed,
    )


def _carve_validation(ds, seed):
    counts = ds.class_counts
    k = min(9, min(counts.values()))
    if k < 2:
        raise DataError("need at least 2 records per class to carve a validation fold")
    return stratified_folds(ds, k=k, rng=seed)[0]


def _cmd_train(args):
    _require_paths(args.manifest, args.val_manifest)
    os.makedirs(args.out_dir, exist_ok=True)
    ds = load_manifest(args.manifest)
    if ds.task_set != args.task:
        raise DataError(f"manifest task_set {ds.task_set!r} does not match --task {args.task!r}")
    if args.val_manifest:
        train_ds, val_ds = ds, load_manifest(args.val_manifest)
    else:
        train_ds, val_ds = _carve_validation(ds, args.seed)
    model_config = ModelConfig(task=args.task, depth=args.depth)
    config = _train_config(args, args.task)
    model = build_model(model_config, seed=args.seed)
    model, report = train(model, train_ds, val_ds, config)
    save_checkpoint(model, os.path.join(args.out_dir, "checkpoint.bin"))
    atomic_write_text(os.path.join(args.out_dir, "report.json"), json_dumps(report.to_dict()))
    _finish(args, args.out_dir, {"model": model_config.to_dict(), "train": vars(config).copy()})
    return EXIT_OK


def _cmd_crossval(args):
    _require_paths(args.manifest)
    os.makedirs(args.out_dir, exist_ok=True)
    ds = load_manifest(args.manifest)
    if ds.task_set != args.task:
        raise DataError(f"manifest task_set {ds.task_set!r} does not match --task {args.task!r}")
    model_config = ModelConfig(task=args.task, depth=args.depth)
    config = _train_config(args, args.task)
    per_fold, summary = cross_validate(model_config, ds, config, k=args.folds)
    payload = {
        "summary": summary,
        "folds": [
            {
                "fold": f["fold"],
                "accuracy": f["accuracy"],
                "macro_f1": f["macro_f1"],
                "report": f["report"].to_dict(),
            }
            for f in per_fold
        ],
    }
    atomic_write_text(os.path.join(args.out_dir, "crossval.json"), json_dumps(payload))
    _finish(args, args.out_dir, {"model": model_config.to_dict(), "train": vars(config).copy(),
                                 "folds": args.folds})
    return EXIT_OK


def _cmd_evaluate(args):
    _require_paths(args.checkpoint, args.manifest)
    os.makedirs(args.out_dir, exist_ok=True)
    model = load_checkpoint(args.checkpoint)
    ds = load_manifest(args.manifest)
    if ds.task_set != model.config.task:
        raise DataError(f"manifest task_set {ds.task_set!r} does not match "
                        f"checkpoint task {model.config.task!r}")
    X, y = load_images(ds, model.config.input_size)
    scores = np.concatenate(
        [forward(model, X[i:i + 32], training=False)[0] for i in range(0, len(X), 32)]
    )
    preds = scores.argmax(axis=1)
    cm = confusion_matrix(preds, y, model.config.num_classes, model.config.class_names)
    curve = roc_sweep(scores, y)
    atomic_write_text(os.path.join(args.out_dir, "confusion.csv"), confusion_to_csv(cm))
    atomic_write_text(os.path.join(args.out_dir, "roc.csv"), roc_to_csv(curve, model.config.class_names))
    atomic_write_text(os.path.join(args.out_dir, "metrics.json"), json_dumps(metrics_to_dict(cm, curve)))
    _finish(args, args.out_dir, {"model": model.config.to_dict()})
    return EXIT_OK


def _cmd_infer(args):
    if not args.image and not args.manifest:
        raise ConfigError("infer needs --image and/or --manifest")
    _require_paths(args.checkpoint, args.manifest, *args.image)
    model = load_checkpoint(args.checkpoint)
    paths = list(args.image)
    if args.manifest:
        paths.extend(r.path for r in load_manifest(args.manifest).records)
    lines = []
    for path in paths:
        img = decode_and_resize(path, model.config.input_size)
        cls, scores = classify(model, img)
        lines.append(json.dumps({
            "path": path,
            "class_index": cls,
            "class_name": model.config.class_names[cls],
            "scores": [float(s) for s in scores],
        }, sort_keys=True))
    sys.stdout.write("\n".join(lines) + "\n")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        atomic_write_text(os.path.join(args.out_dir, "predictions.jsonl"), "\n".join(lines) + "\n")
        _finish(args, args.out_dir, {"model": model.config.to_dict()})
    return EXIT_OK


def _safe_class_name(name):
    return "".join(ch if ch.isalnum() else "-" for ch in name)


def _cmd_explain(args):
    _require_paths(args.checkpoint, args.image)
    os.makedirs(args.out_dir, exist_ok=True)
    model = load_checkpoint(args.checkpoint)
    img = decode_and_resize(args.image, model.config.input_size)
    if args.class_index is None:
        cls, _, cam_map = cam_for_top_class(model, img, layer=args.cam_layer)
    else:
        cls = args.class_index
        cam_map = grad_cam(model, img, cls, layer=args.cam_layer)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    name = _safe_class_name(model.config.class_names[cls])
    pgm_path = os.path.join(args.out_dir, f"{stem}.cam.{name}.pgm")
    overlay = os.path.join(args.out_dir, f"{stem}.cam.{name}.overlay.png") if args.overlay else None
    export_cam(cam_map, pgm_path, source=img, overlay_path=overlay)
    _finish(args, args.out_dir, {"model": model.config.to_dict(), "cam_layer": args.cam_layer,
                                 "class_index": cls})
    return EXIT_OK


def _cmd_embed(args):
    _require_paths(args.checkpoint, args.manifest)
    os.makedirs(args.out_dir, exist_ok=True)
    model = load_checkpoint(args.checkpoint)
    ds = load_manifest(args.manifest)
    scores, y = collect_outputs(model, ds)
    config = EmbedConfig(perplexity=args.perplexity, iterations=args.iterations, seed=args.seed)
    embedding = tsne(scores, config)
    labels = [ds.class_names[i] for i in y]
    export_embedding(
        embedding,
        labels,
        os.path.join(args.out_dir, "embedding.csv"),
        os.path.join(args.out_dir, "embedding.json"),
    )
    _finish(args, args.out_dir, {"model": model.config.to_dict(), "embed": config.to_dict()})
    return EXIT_OK


_HANDLERS = {
    "split": _cmd_split,
    "train": _cmd_train,
    "crossval": _cmd_crossval,
    "evaluate": _cmd_evaluate,
    "infer": _cmd_infer,
    "explain": _cmd_explain,
    "embed": _cmd_embed,
}


def run(argv):
    """Dispatch one CLI invocation; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    args._argv = list(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ConfigError, ShapeError, InvalidInputError) as exc:
        print(f"pyroclass {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"pyroclass {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergedError, EmbeddingDivergedError, NumericError) as exc:
        print(f"pyroclass {args.command}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except PyroclassError as exc:
        print(f"pyroclass {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
