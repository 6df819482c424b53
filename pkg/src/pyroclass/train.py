"""Losses, plain SGD with inverse-time decay, early stopping, k-fold driver,
and the binary checkpoint format.

The learning rate follows lr(t) = base_lr / (1 + decay * t) where t
counts optimizer updates; ``decay_mode="per-epoch"`` reinterprets t as
the completed-epoch index instead (both readings are plausible for an
unqualified "decay", so the choice is explicit configuration).
"""

import json
import os
import struct
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import metrics as M
from .arch import Model, ModelConfig, backward, build_model, forward
from .data import Dataset, load_images
from .errors import (
    CheckpointError,
    ConfigError,
    LabelError,
    NumericError,
    ShapeError,
    TrainingDivergedError,
)
from .util import worker_count

CHECKPOINT_MAGIC = b"PYROCNN\x00"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    base_lr: float = 1e-4
    decay: float = 0.009
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    min_delta: float = 1e-4
    loss: str = "categorical"
    decay_mode: str = "per-update"
    seed: int = 0

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if self.decay < 0:
            raise ConfigError(f"decay must be >= 0, got {self.decay}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must all be >= 1")
        if self.loss not in ("categorical", "binary"):
            raise ConfigError(f"loss must be 'categorical' or 'binary', got {self.loss!r}")
        if self.decay_mode not in ("per-update", "per-epoch"):
            raise ConfigError(f"decay_mode must be 'per-update' or 'per-epoch', got {self.decay_mode!r}")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    seed: int = 0

    def to_dict(self):
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_acc": self.val_acc,
            "best_epoch": self.best_epoch,
            "stopped_epoch": self.stopped_epoch,
            "seed": self.seed,
        }


def _check_onehot(onehot):
    if onehot.ndim != 2:
        raise LabelError(f"onehot must be rank-2, got shape {onehot.shape}")
    ones = (onehot == 1).sum(axis=1)
    if not (np.all(ones == 1) and np.all((onehot == 0) | (onehot == 1))):
        raise LabelError("targets are not one-hot rows")


def categorical_cross_entropy(probs, onehot):
    """Mean negative log-likelihood plus the fused gradient w.r.t. logits.

    The returned gradient is (probs - onehot) / N, the exact derivative
    of the loss with respect to the pre-softmax logits.
    """
    _check_onehot(onehot)
    if probs.shape != onehot.shape:
        raise ShapeError(f"probs shape {probs.shape} != onehot shape {onehot.shape}")
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-5):
        raise NumericError("probability rows do not sum to 1")
    n = probs.shape[0]
    p_true = (probs * onehot).sum(axis=1)
    loss = float(-np.log(np.maximum(p_true, 1e-12)).mean())
    grad_logits = (probs - onehot) / n
    return loss, grad_logits


def binary_cross_entropy(p, y):
    """Mean binary cross entropy and its exact gradient w.r.t. (clamped) p."""
    p = np.asarray(p)
    y = np.asarray(y)
    if p.shape != y.shape:
        raise ShapeError(f"p shape {p.shape} != y shape {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise LabelError("binary targets must be 0 or 1")
    n = p.shape[0]
    pc = np.clip(p, 1e-12, 1.0 - 1e-12)
    loss = float(-(y * np.log(pc) + (1 - y) * np.log(1 - pc)).mean())
    grad = -(y / pc - (1 - y) / (1 - pc)) / n
    return loss, grad


def sgd_step(params, grads, t, base_lr=1e-4, decay=0.009):
    """In-place update params <- params - lr(t) * grads with lr = base_lr/(1+decay*t)."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    lr = base_lr / (1.0 + decay * t)
    for arr, g in zip(params, grads):
        if arr.shape != g.shape:
            raise ShapeError(f"param shape {arr.shape} != grad shape {g.shape}")
        arr -= (lr * g).astype(arr.dtype, copy=False)
    return params


def _as_arrays(data, input_size):
    if isinstance(data, Dataset):
        return load_images(data, input_size)
    X, y = data
    return np.asarray(X, dtype=np.float32), np.asarray(y, dtype=np.int64)


def _batch_scores(model, X, batch_size):
    chunks = [
        forward(model, X[i:i + batch_size], training=False)[0]
        for i in range(0, X.shape[0], batch_size)
    ]
    return np.concatenate(chunks, axis=0)


def evaluate_loss(model, X, y, config):
    """Validation loss and accuracy in inference mode."""
    probs = _batch_scores(model, X, config.batch_size)
    onehot = np.eye(model.config.num_classes, dtype=np.float32)[y]
    if config.loss == "binary":
        loss, _ = binary_cross_entropy(probs[:, 0], onehot[:, 0])
    else:
        loss, _ = categorical_cross_entropy(probs, onehot)
    acc = float((probs.argmax(axis=1) == y).mean())
    return loss, acc


def train(model, train_data, val_data, config):
    """SGD epoch loop with seeded shuffling and early stopping.

    ``train_data``/``val_data`` are Datasets or ``(X, y)`` array pairs.
    Stops once validation loss fails to improve by ``min_delta`` for
    ``patience`` consecutive epochs, and restores the parameters of the
    best-validation epoch.  Raises TrainingDivergedError on a non-finite
    loss.  Deterministic given (seed, data, config).
    """
    k = model.config.num_classes
    if (config.loss == "binary") != (k == 2):
        raise ConfigError(f"loss {config.loss!r} is invalid for {k} classes")
    X, y = _as_arrays(train_data, model.config.input_size)
    Xv, yv = _as_arrays(val_data, model.config.input_size)
    if X.shape[0] == 0 or Xv.shape[0] == 0:
        raise ConfigError("training and validation sets must be non-empty")
    eye = np.eye(k, dtype=np.float32)
    onehot = eye[y]

    rng = np.random.default_rng(config.seed)
    report = TrainReport(seed=config.seed)
    best_loss = np.inf
    best_params = model.snapshot()
    best_step = model.step_count
    bad_epochs = 0
    params = [arr for _, arr in model.parameters()]

    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(X.shape[0])
        epoch_loss = 0.0
        for start in range(0, X.shape[0], config.batch_size):
            idx = perm[start:start + config.batch_size]
            xb, tb = X[idx], onehot[idx]
            probs, caches = forward(model, xb, training=True, rng=rng)
            if config.loss == "binary":
                loss, _ = binary_cross_entropy(probs[:, 0], tb[:, 0])
            else:
                loss, _ = categorical_cross_entropy(probs, tb)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            # Both heads share one logit gradient: binary cross entropy on the
            # class-0 probability of a 2-way softmax is categorical cross
            # entropy with target (y, 1-y).
            grad_logits = (probs - tb) / len(idx)
            grads, _ = backward(model, caches, grad_logits)
            t = epoch - 1 if config.decay_mode == "per-epoch" else model.step_count
            sgd_step(params, grads, t, config.base_lr, config.decay)
            model.step_count += 1
            epoch_loss += loss * len(idx)
        report.train_loss.append(epoch_loss / X.shape[0])

        val_loss, val_acc = evaluate_loss(model, Xv, yv, config)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(epoch)
        report.val_loss.append(val_loss)
        report.val_acc.append(val_acc)
        if best_loss - val_loss >= config.min_delta:
            best_loss = val_loss
            best_params = model.snapshot()
            best_step = model.step_count
            report.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
        report.stopped_epoch = epoch
        if bad_epochs >= config.patience:
            break

    model.set_parameters(best_params)
    model.step_count = best_step
    return model, report


def cross_validate(model_config, train_val, config, k=9):
    """Train one fresh model per stratified fold; collect per-fold metrics.

    Fold i trains with seed config.seed + i.  Returns (per_fold, summary)
    where per_fold is a list of dicts with the fold's TrainReport,
    validation accuracy and macro F1, and summary holds their mean/std
    (the spread behind error-bar style depth comparisons).
    """
    from .data import stratified_folds

    folds = stratified_folds(train_val, k=k, rng=config.seed)

    def run_fold(args):
        i, (fold_train, fold_val) = args
        fold_config = TrainConfig(
            base_lr=config.base_lr,
            decay=config.decay,
            batch_size=config.batch_size,
            max_epochs=config.max_epochs,
            patience=config.patience,
            min_delta=config.min_delta,
            loss=config.loss,
            decay_mode=config.decay_mode,
            seed=config.seed + i,
        )
        model = build_model(model_config, seed=config.seed + i)
        model, report = train(model, fold_train, fold_val, fold_config)
        Xv, yv = _as_arrays(fold_val, model_config.input_size)
        scores = _batch_scores(model, Xv, config.batch_size)
        preds = scores.argmax(axis=1)
        cm = M.confusion_matrix(preds, yv, model_config.num_classes)
        stats = M.precision_recall_f1(cm)
        return {
            "fold": i,
            "report": report,
            "accuracy": stats["accuracy"],
            "macro_f1": float(np.mean(stats["f1"])),
        }

    with ThreadPoolExecutor(max_workers=min(worker_count(), k)) as pool:
        per_fold = list(pool.map(run_fold, enumerate(folds)))

    accs = np.array([f["accuracy"] for f in per_fold])
    f1s = np.array([f["macro_f1"] for f in per_fold])
    summary = {
        "folds": k,
        "accuracy_mean": float(accs.mean()),
        "accuracy_std": float(accs.std()),
        "macro_f1_mean": float(f1s.mean()),
        "macro_f1_std": float(f1s.std()),
    }
    return per_fold, summary


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(model, path, step=None):
    """Binary checkpoint: magic, version, JSON header, raw little-endian f32.

    Tensors follow in declaration order; the round trip is bit-exact.
    """
    step = model.step_count if step is None else step
    named = model.parameters()
    header = {
        "config": model.config.to_dict(),
        "seed": model.seed,
        "step": step,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in named],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            fh.write(struct.pack("<Q", len(header_bytes)))
            fh.write(header_bytes)
            for _, arr in named:
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Rebuild a Model from a checkpoint file; never returns a partial model."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < 20 or blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a pyroclass checkpoint")
    (version,) = struct.unpack("<I", blob[8:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<Q", blob[12:20])
    if len(blob) < 20 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[20:20 + hlen].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        entries = header["tensors"]
        seed = header["seed"]
        step = header["step"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint header: {exc}") from exc

    model = build_model(config, seed=seed)
    named = model.parameters()
    if len(entries) != len(named) or any(
        e["name"] != n or tuple(e["shape"]) != a.shape for e, (n, a) in zip(entries, named)
    ):
        raise CheckpointError(f"{path}: header tensors inconsistent with architecture")

    offset = 20 + hlen
    arrays = []
    for entry in entries:
        count = int(np.prod(entry["shape"]))
        nbytes = count * 4
        if offset + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated tensor data at {entry['name']}")
        arr = np.frombuffer(blob[offset:offset + nbytes], dtype="<f4").reshape(entry["shape"])
        arrays.append(arr.astype(np.float32, copy=True))
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    model.set_parameters(arrays)
    model.step_count = step
    return model
