"""Manifest-driven ingestion, augmentation, balancing and splitting.

A dataset is a CSV manifest (``path,label,task_set,video_id``) pointing
at 8-bit grayscale images (binary PGM or single-channel PNG).  Images
are decoded, scaled to the network input size with bilinear
interpolation, and mapped to [0, 1].  Train/test separation is grouped
by source video so no recording contributes frames to both sides.
"""

import math
import os
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DataError, DecodeError, LabelError, StratificationError
from .tasks import TASK_CLASSES

MANIFEST_HEADER = "path,label,task_set,video_id"


class SplitFallbackWarning(UserWarning):
    """Video-grouped splitting missed a quota; fell back to record-level."""


@dataclass
class SampleRecord:
    """One labeled image reference.  Synthetic records are augmented copies
    added by class balancing; they carry the seed of their augmentation."""

    path: str
    label: str
    task_set: str
    video_id: str
    synthetic: bool = False
    aug_seed: Optional[int] = None

    def __post_init__(self):
        if self.task_set not in TASK_CLASSES:
            raise LabelError(f"unknown task_set {self.task_set!r}")
        if self.label not in TASK_CLASSES[self.task_set]:
            raise LabelError(
                f"label {self.label!r} is not a {self.task_set!r} class "
                f"{TASK_CLASSES[self.task_set]}"
            )


@dataclass
class Dataset:
    records: list
    task_set: str
    augment_spec: Optional["AugmentSpec"] = None

    def __len__(self):
        return len(self.records)

    @property
    def class_counts(self):
        return dict(Counter(r.label for r in self.records))

    @property
    def class_names(self):
        return TASK_CLASSES[self.task_set]

    def originals(self):
        return [r for r in self.records if not r.synthetic]


@dataclass
class AugmentSpec:
    """Symmetric-about-identity augmentation magnitudes.

    ``rotation_deg``/``shear_deg``/``translation``/``zoom`` give half-ranges:
    rotation is drawn from [-r, r] degrees, zoom from [1-z, 1+z], translation
    from [-t, t] as a fraction of width/height.  ``crop_fraction`` is the
    retained side fraction of the random crop (1.0 disables cropping).
    """

    rotation_deg: float = 15.0
    shear_deg: float = 10.0
    zoom: float = 0.1
    translation: float = 0.1
    crop_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        for name in ("rotation_deg", "shear_deg", "zoom", "translation"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.5 < self.crop_fraction <= 1.0:
            raise ConfigError(f"crop_fraction must be in (0.5, 1], got {self.crop_fraction}")

    @classmethod
    def identity(cls, seed=0):
        return cls(0.0, 0.0, 0.0, 0.0, 1.0, seed)


# --------------------------------------------------------------------------
# manifests
# --------------------------------------------------------------------------

def load_manifest(path, check_files=True):
    """Parse a manifest CSV into a Dataset.

    All rows must belong to one task_set.  Unknown labels and malformed
    rows raise with their 1-based row number; duplicate paths warn but
    are kept.  ``check_files=False`` skips the image-existence check
    (useful for count-only fixtures).
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise DataError(f"manifest {path} must start with header {MANIFEST_HEADER!r}")
    records = []
    seen_paths = set()
    task_set = None
    base = os.path.dirname(os.path.abspath(path))
    for row_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise DataError(f"{path}:{row_no}: expected 4 comma-separated fields, got {len(parts)}")
        rec_path, label, task, video_id = (p.strip() for p in parts)
        if task not in TASK_CLASSES:
            raise LabelError(f"{path}:{row_no}: unknown task_set {task!r}")
        if label not in TASK_CLASSES[task]:
            raise LabelError(f"{path}:{row_no}: unknown label {label!r} for task {task!r}")
        if task_set is None:
            task_set = task
        elif task != task_set:
            raise DataError(f"{path}:{row_no}: mixed task_sets {task_set!r} and {task!r}")
        full = rec_path if os.path.isabs(rec_path) else os.path.join(base, rec_path)
        if check_files and not os.path.exists(full):
            raise DataError(f"{path}:{row_no}: image file not found: {full}")
        if full in seen_paths:
            warnings.warn(f"{path}:{row_no}: duplicate path {rec_path}, kept")
        seen_paths.add(full)
        records.append(SampleRecord(full, label, task, video_id))
    if not records:
        raise DataError(f"manifest {path} contains no records")
    return Dataset(records, task_set)


def save_manifest(dataset, path):
    """Write a Dataset back out as a manifest CSV."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MANIFEST_HEADER + "\n")
        for r in dataset.records:
            fh.write(f"{r.path},{r.label},{r.task_set},{r.video_id}\n")


# --------------------------------------------------------------------------
# image decoding
# --------------------------------------------------------------------------

def read_pgm(path):
    """Binary (P5) 8-bit PGM -> uint8 [H, W]."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DecodeError(f"cannot read {path}: {exc}") from exc
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        if data[i:i + 1].isspace():
            i += 1
        elif data[i:i + 1] == b"#":
            i = data.find(b"\n", i)
            if i < 0:
                raise DecodeError(f"{path}: truncated PGM comment")
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise DecodeError(f"{path}: not a binary P5 PGM")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise DecodeError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise DecodeError(f"{path}: only 8-bit PGM supported (maxval 255, got {maxval})")
    pixels = data[i + 1:i + 1 + width * height]
    if len(pixels) != width * height:
        raise DecodeError(f"{path}: PGM pixel data truncated")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)


def write_pgm(arr, path):
    """uint8 [H, W] -> binary (P5) PGM file."""
    arr = np.asarray(arr)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise DecodeError(f"write_pgm needs uint8 [H,W], got {arr.dtype} {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def _read_grayscale(path):
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        return read_pgm(path)
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise DecodeError(f"{path}: expected 8-bit single-channel image, got mode {im.mode}")
            return np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"{path}: cannot decode image: {exc}") from exc


def bilinear_resize(img, out_h, out_w):
    """Bilinear resample [H, W] -> [out_h, out_w], half-pixel-center convention."""
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    top = (1 - wx) * img[np.ix_(y0c, x0c)] + wx * img[np.ix_(y0c, x1c)]
    bot = (1 - wx) * img[np.ix_(y1c, x0c)] + wx * img[np.ix_(y1c, x1c)]
    return ((1 - wy) * top + wy * bot).astype(img.dtype, copy=False)


def decode_and_resize(path, size=224):
    """Decode an 8-bit grayscale image and scale it to ``[1, size, size]`` in [0, 1]."""
    raw = _read_grayscale(path).astype(np.float32) / 255.0
    return bilinear_resize(raw, size, size)[None]


# --------------------------------------------------------------------------
# augmentation
# --------------------------------------------------------------------------

def apply_affine(image, rotation_deg=0.0, shear_deg=0.0, zoom=1.0, tx=0.0, ty=0.0):
    """Affine warp about the image center with zero fill outside the frame.

    ``image`` is ``[1, H, W]``; translation is in fractions of width/height.
    The forward map is rotate(shear(scale(p))) + t; sampling inverts it.
    """
    _, h, w = image.shape
    if (rotation_deg, shear_deg, zoom, tx, ty) == (0.0, 0.0, 1.0, 0.0, 0.0):
        return image.copy()
    theta = math.radians(rotation_deg)
    sh = math.tan(math.radians(shear_deg))
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    shear = np.array([[1.0, sh], [0.0, 1.0]])
    scale = np.array([[zoom, 0.0], [0.0, zoom]])
    fwd = rot @ shear @ scale
    inv = np.linalg.inv(fwd)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dx = xx - cx - tx * w
    dy = yy - cy - ty * h
    sx = inv[0, 0] * dx + inv[0, 1] * dy + cx
    sy = inv[1, 0] * dx + inv[1, 1] * dy + cy
    return _sample_bilinear_zero(image[0], sy, sx)[None]


def _sample_bilinear_zero(img, sy, sx):
    """Bilinear sample at float coords, zero outside the image support."""
    h, w = img.shape
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    wy = sy - y0
    wx = sx - x0
    out = np.zeros(sy.shape, dtype=img.dtype)
    for dy_i, dx_i, wgt in (
        (0, 0, (1 - wy) * (1 - wx)),
        (0, 1, (1 - wy) * wx),
        (1, 0, wy * (1 - wx)),
        (1, 1, wy * wx),
    ):
        yi = y0 + dy_i
        xi = x0 + dx_i
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = np.where(valid, img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)], 0.0)
        out = out + wgt * vals
    return out.astype(img.dtype, copy=False)


def crop_resize(image, crop_fraction, off_y, off_x):
    """Crop a ``crop_fraction``-sized window at the given offset, resize back."""
    _, h, w = image.shape
    if crop_fraction == 1.0:
        return image.copy()
    ch = max(1, round(h * crop_fraction))
    cw = max(1, round(w * crop_fraction))
    window = image[0, off_y:off_y + ch, off_x:off_x + cw]
    return bilinear_resize(window, h, w)[None]


def augment(image, spec, rng):
    """Random affine (rotation, shear, zoom, translation) then random crop-and-resize."""
    rng = np.random.default_rng(rng)
    _, h, w = image.shape
    rot = float(rng.uniform(-spec.rotation_deg, spec.rotation_deg))
    sh = float(rng.uniform(-spec.shear_deg, spec.shear_deg))
    zoom = float(rng.uniform(1.0 - spec.zoom, 1.0 + spec.zoom))
    tx = float(rng.uniform(-spec.translation, spec.translation))
    ty = float(rng.uniform(-spec.translation, spec.translation))
    out = apply_affine(image, rot, sh, zoom, tx, ty)
    ch = max(1, round(h * spec.crop_fraction))
    cw = max(1, round(w * spec.crop_fraction))
    off_y = int(rng.integers(0, h - ch + 1))
    off_x = int(rng.integers(0, w - cw + 1))
    out = crop_resize(out, spec.crop_fraction, off_y, off_x)
    return np.clip(out, 0.0, 1.0, out=out)


# --------------------------------------------------------------------------
# balancing and splitting
# --------------------------------------------------------------------------

def balance_classes(dataset, spec):
    """Pad every minority class with synthetic (augmented) copies up to the
    majority count.  Originals are retained; synthetic records carry a
    deterministic per-record augmentation seed derived from ``spec.seed``."""
    counts = Counter(r.label for r in dataset.records if not r.synthetic)
    empty = [c for c in dataset.class_names if counts.get(c, 0) == 0]
    if empty:
        raise DataError(f"cannot balance: classes with no records: {empty}")
    majority = max(counts.values())
    new_records = list(dataset.records)
    serial = 0
    for cls in dataset.class_names:
        need = majority - counts[cls]
        if need <= 0:
            continue
        originals = [r for r in dataset.records if r.label == cls and not r.synthetic]
        for i in range(need):
            src = originals[i % len(originals)]
            new_records.append(
                replace(src, synthetic=True, aug_seed=spec.seed * 1_000_003 + serial)
            )
            serial += 1
    return Dataset(new_records, dataset.task_set, augment_spec=spec)


class SplitResult(NamedTuple):
    train_val: Dataset
    test: Dataset
    info: dict


def split_test(dataset, fraction=0.1, rng=0):
    """Stratified train/test split grouped by source video.

    Per class the test quota is max(1, floor(count * fraction)).  Whole
    videos are assigned to the test side until each class meets its
    quota; if the video grouping leaves any class outside +-20% of quota
    the split falls back to record-level stratification with a warning.
    Synthetic records never enter the test side.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"test fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(rng)
    originals = dataset.originals()
    counts = Counter(r.label for r in originals)
    quotas = {c: max(1, math.floor(n * fraction)) for c, n in counts.items()}

    by_video = {}
    for r in originals:
        by_video.setdefault(r.video_id, []).append(r)
    video_ids = sorted(by_video)
    order = [video_ids[i] for i in rng.permutation(len(video_ids))]

    test_videos = set()
    test_counts = Counter()
    for cls in dataset.class_names:
        if cls not in quotas:
            continue
        for vid in order:
            if test_counts[cls] >= quotas[cls]:
                break
            if vid in test_videos:
                continue
            members = by_video[vid]
            if not any(r.label == cls for r in members):
                continue
            test_videos.add(vid)
            test_counts.update(r.label for r in members)

    fallback = any(
        not (0.8 * q <= test_counts[c] <= 1.2 * q) for c, q in quotas.items()
    )
    if fallback:
        warnings.warn(
            "video-grouped split missed a per-class quota by more than 20%; "
            "falling back to record-level stratification",
            SplitFallbackWarning,
        )
        test_set = set()
        for cls, q in quotas.items():
            members = [i for i, r in enumerate(originals) if r.label == cls]
            picked = rng.permutation(len(members))[:q]
            test_set.update(members[i] for i in picked)
        test_records = [r for i, r in enumerate(originals) if i in test_set]
        train_records = [r for i, r in enumerate(originals) if i not in test_set]
    else:
        test_records = [r for r in originals if r.video_id in test_videos]
        train_records = [r for r in originals if r.video_id not in test_videos]
    train_records += [r for r in dataset.records if r.synthetic]

    info = {
        "fraction": fraction,
        "fallback": bool(fallback),
        "test_counts": dict(Counter(r.label for r in test_records)),
        "train_counts": dict(Counter(r.label for r in train_records)),
    }
    return SplitResult(
        Dataset(train_records, dataset.task_set, dataset.augment_spec),
        Dataset(test_records, dataset.task_set),
        info,
    )


def stratified_folds(train_val, k=9, rng=0):
    """k stratified (train, validation) splits of the non-synthetic records.

    Every original record lands in exactly one validation fold and
    per-class fold sizes differ by at most one.  Synthetic records join
    the training side of every fold.
    """
    if k < 2:
        raise ConfigError(f"fold count must be >= 2, got {k}")
    rng = np.random.default_rng(rng)
    originals = train_val.originals()
    synthetic = [r for r in train_val.records if r.synthetic]
    by_class = {}
    for r in originals:
        by_class.setdefault(r.label, []).append(r)
    for cls in train_val.class_names:
        n = len(by_class.get(cls, []))
        if 0 < n < k:
            raise StratificationError(f"class {cls!r} has {n} records, fewer than k={k}")
    chunks = {}
    for cls, members in sorted(by_class.items()):
        perm = rng.permutation(len(members))
        chunks[cls] = np.array_split(perm, k)
    folds = []
    for i in range(k):
        val_records = []
        train_records = []
        for cls, members in sorted(by_class.items()):
            val_idx = set(chunks[cls][i].tolist())
            for j, r in enumerate(members):
                (val_records if j in val_idx else train_records).append(r)
        train_records += synthetic
        folds.append(
            (
                Dataset(train_records, train_val.task_set, train_val.augment_spec),
                Dataset(val_records, train_val.task_set),
            )
        )
    return folds


# --------------------------------------------------------------------------
# loading into arrays
# --------------------------------------------------------------------------

def load_images(dataset, size=224):
    """Decode every record into ``(X [N,1,size,size] float32, y [N] int64)``.

    Synthetic records are augmented deterministically with their stored
    seed and the dataset's augment spec.
    """
    class_index = {c: i for i, c in enumerate(dataset.class_names)}
    n = len(dataset.records)
    X = np.empty((n, 1, size, size), dtype=np.float32)
    y = np.empty(n, dtype=np.int64)
    for i, rec in enumerate(dataset.records):
        img = decode_and_resize(rec.path, size)
        if rec.synthetic:
            if dataset.augment_spec is None:
                raise DataError("dataset holds synthetic records but no augment spec")
            img = augment(img, dataset.augment_spec, np.random.default_rng(rec.aug_seed))
        X[i] = img
        y[i] = class_index[rec.label]
    return X, y
