"""Grad-CAM saliency over the model's final convolutional activations.

The map is ReLU(sum_c alpha_c * A_c) where A are the activations of the
target conv layer and alpha_c is the spatial mean of the gradient of the
chosen class's pre-softmax logit with respect to channel c.  The raw map
is bilinearly upsampled to the input size and normalized by its maximum
(an identically-zero map stays zero).
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .arch import Conv, _run_stack, backward, classify
from .data import bilinear_resize, write_pgm
from .errors import ConfigError, LabelError

TARGET_LAYERS = ("head1x1", "last3x3")


@dataclass
class CamMap:
    values: np.ndarray
    class_index: int
    layer: str


def _target_index(model, layer):
    if layer not in TARGET_LAYERS:
        raise ConfigError(f"cam layer must be one of {TARGET_LAYERS}, got {layer!r}")
    convs = [i for i, lay in enumerate(model.layer_stack) if isinstance(lay, Conv)]
    if layer == "head1x1":
        return convs[-1]
    three = [i for i in convs if model.layer_stack[i].kernel_size == 3]
    return three[-1]


def grad_cam(model, image, class_index, layer="head1x1"):
    """Saliency map of ``class_index`` for one ``[1, H, W]`` image."""
    k = model.config.num_classes
    if not 0 <= class_index < k:
        raise LabelError(f"class index {class_index} out of range [0, {k})")
    if model.step_count == 0:
        warnings.warn("model has no training steps recorded; grad-CAM on an untrained model")
    target = _target_index(model, layer)
    if image.ndim == 3:
        image = image[None]
    logits, _, caches, outputs = _run_stack(model, image, training=False, rng=None, collect=True)
    activations = outputs[target][0]  # [C, h, w]

    seed = np.zeros_like(logits)
    seed[0, class_index] = 1.0
    _, grad_act = backward(model, caches, seed, upto=target + 1)
    grad_act = grad_act[0]

    alpha = grad_act.mean(axis=(1, 2))
    raw = np.maximum((alpha[:, None, None] * activations).sum(axis=0), 0.0)
    size = model.config.input_size
    cam = bilinear_resize(raw, size, size)
    cam = np.maximum(cam, 0.0)  # interpolation of non-negatives stays >= 0; belt and braces
    peak = cam.max()
    if peak > 0:
        cam = cam / peak
    return CamMap(values=cam.astype(np.float32), class_index=class_index, layer=layer)


def cam_for_top_class(model, image, layer="head1x1"):
    """Classify, then grad-CAM the winning class; returns (class, score, map)."""
    cls, scores = classify(model, image)
    return cls, float(scores[cls]), grad_cam(model, image, cls, layer=layer)


def export_cam(cam_map, path, source=None, overlay_path=None):
    """Write the map as an 8-bit PGM; optionally a 50% alpha overlay PNG.

    The overlay blends a red heat layer onto the grayscale source image
    with per-pixel alpha 0.5 * map.
    """
    gray = np.round(cam_map.values * 255.0).astype(np.uint8)
    write_pgm(gray, path)
    if overlay_path is not None:
        from PIL import Image

        if source is None:
            raise ConfigError("overlay export needs the source image")
        src = source[0] if source.ndim == 3 else source
        base = np.round(np.clip(src, 0.0, 1.0) * 255.0).astype(np.float64)
        alpha = 0.5 * cam_map.values
        rgb = np.stack(
            [base * (1 - alpha) + 255.0 * alpha, base * (1 - alpha), base * (1 - alpha)],
            axis=-1,
        )
        Image.fromarray(np.round(rgb).astype(np.uint8), mode="RGB").save(overlay_path)
