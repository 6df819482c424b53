"""Forward and backward passes for every layer kind the network family uses.

Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` consumes that cache, so backpropagation is explicit and
composable without an autodiff graph.  All ops accept either a single
sample (``[C,H,W]`` / ``[features]``) or a batch with a leading ``N``
axis, and preserve the input dtype so gradient checks can rerun them in
float64.

Convolutions are evaluated as blockwise im2col + matmul: one BLAS GEMM
per kernel offset, accumulated.  This computes the exact same product as
materializing the full column matrix but keeps peak memory flat at
224x224 resolution; a nested-loop reference lives in the test suite as
the independent oracle.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError


@dataclass
class ConvParams:
    """Kernels ``[out_ch, in_ch, k, k]`` (k is 1 or 3) plus bias ``[out_ch]``."""

    kernels: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kernels.ndim != 4:
            raise ShapeError(f"kernels must be rank-4, got shape {self.kernels.shape}")
        o, _, kh, kw = self.kernels.shape
        if (kh, kw) not in ((1, 1), (3, 3)):
            raise ShapeError(f"kernel spatial size must be 1x1 or 3x3, got {kh}x{kw}")
        if o < 1:
            raise ShapeError("out_channels must be >= 1")
        if self.bias.shape != (o,):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {o} output channels")


@dataclass
class DenseParams:
    """Weights ``[out_features, in_features]`` plus bias ``[out_features]``."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be rank-2, got shape {self.weights.shape}")
        out_f, in_f = self.weights.shape
        if out_f < 1 or in_f < 1:
            raise ShapeError(f"degenerate dense shape {self.weights.shape}")
        if self.bias.shape != (out_f,):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {out_f} outputs")


def _batched(x, rank):
    """Promote a single sample to a batch of one; report whether it was promoted."""
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(f"expected rank {rank} or {rank + 1} input, got shape {x.shape}")


def conv2d_forward(x, params):
    """Same-padded stride-1 convolution, ``[N,C,H,W] -> [N,C',H,W]``."""
    x, squeezed = _batched(x, 3)
    n, c, h, w = x.shape
    out_ch, in_ch, k, _ = params.kernels.shape
    if c != in_ch:
        raise ShapeError(f"input has {c} channels, kernels expect {in_ch}")
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    dtype = np.result_type(x.dtype, params.kernels.dtype)
    # out accumulated channel-first: [C', N, H, W]
    out = np.zeros((out_ch, n, h, w), dtype=dtype)
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, :, ki:ki + h, kj:kj + w]
            out += np.tensordot(params.kernels[:, :, ki, kj], patch, axes=(1, 1))
    out = out.transpose(1, 0, 2, 3) + params.bias[None, :, None, None]
    cache = (x, params, squeezed)
    return (out[0] if squeezed else out), cache


def conv2d_backward(cache, grad_out):
    """Gradients of conv2d w.r.t. input, kernels and bias."""
    x, params, squeezed = cache
    grad_out, _ = _batched(grad_out, 3)
    n, c, h, w = x.shape
    out_ch, _, k, _ = params.kernels.shape
    if grad_out.shape != (n, out_ch, h, w):
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {(n, out_ch, h, w)}")
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_k = np.empty_like(params.kernels)
    grad_xp = np.zeros_like(xp)
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, :, ki:ki + h, kj:kj + w]
            grad_k[:, :, ki, kj] = np.tensordot(grad_out, patch, axes=((0, 2, 3), (0, 2, 3)))
            dpatch = np.tensordot(grad_out, params.kernels[:, :, ki, kj], axes=(1, 0))
            grad_xp[:, :, ki:ki + h, kj:kj + w] += dpatch.transpose(0, 3, 1, 2)
    grad_x = grad_xp[:, :, pad:pad + h, pad:pad + w] if pad else grad_xp
    if squeezed:
        grad_x = grad_x[0]
    return grad_x, grad_k, grad_b


def relu_forward(x):
    y = np.maximum(x, 0)
    return y, (x > 0)


def relu_backward(cache, grad_y):
    return grad_y * cache


def maxpool2x2_forward(x):
    """Non-overlapping 2x2 max pool; ties resolve to the first element in row-major scan."""
    x, squeezed = _batched(x, 3)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"spatial dims must be even for 2x2 pooling, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    cache = (idx, (n, c, h, w), squeezed)
    return (y[0] if squeezed else y), cache


def maxpool2x2_backward(cache, grad_y):
    idx, (n, c, h, w), squeezed = cache
    grad_y, _ = _batched(grad_y, 3)
    if grad_y.shape != (n, c, h // 2, w // 2):
        raise ShapeError(f"grad_y shape {grad_y.shape} != pooled shape {(n, c, h // 2, w // 2)}")
    gwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad_y.dtype)
    np.put_along_axis(gwin, idx[..., None], grad_y[..., None], axis=-1)
    grad_x = gwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return grad_x[0] if squeezed else grad_x


def dense_forward(x, params):
    """Affine map ``y = W x + b`` for ``[features]`` or ``[N, features]`` input."""
    x, squeezed = _batched(x, 1)
    out_f, in_f = params.weights.shape
    if x.shape[1] != in_f:
        raise ShapeError(f"input has {x.shape[1]} features, weights expect {in_f}")
    y = x @ params.weights.T + params.bias
    cache = (x, params, squeezed)
    return (y[0] if squeezed else y), cache


def dense_backward(cache, grad_y):
    x, params, squeezed = cache
    grad_y, _ = _batched(grad_y, 1)
    if grad_y.shape != (x.shape[0], params.weights.shape[0]):
        raise ShapeError(f"grad_y shape {grad_y.shape} does not match dense output")
    grad_x = grad_y @ params.weights
    grad_w = grad_y.T @ x
    grad_b = grad_y.sum(axis=0)
    if squeezed:
        grad_x = grad_x[0]
    return grad_x, grad_w, grad_b


def dropout_forward(x, rate, rng=None, training=True):
    """Inverted dropout: zero with probability ``rate``, scale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ConfigError("training-mode dropout needs an explicit seeded generator")
    scale = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * scale, scale


def dropout_backward(cache, grad_y):
    if cache is None:
        return grad_y
    return grad_y * cache


def softmax(logits):
    """Numerically stable softmax over the last axis."""
    if not np.all(np.isfinite(logits)):
        raise NumericError("softmax received non-finite logits")
    if logits.shape[-1] < 2:
        raise ShapeError(f"softmax needs >= 2 classes, got {logits.shape[-1]}")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z):
    """Logistic function, overflow-safe for large |z|."""
    z = np.asarray(z)
    out = np.empty(z.shape, dtype=z.dtype if z.dtype.kind == "f" else np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else out[()]
