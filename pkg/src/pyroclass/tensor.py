"""Dense tensor substrate.

A tensor here is a plain row-major ``numpy.ndarray`` of 32-bit floats;
numpy supplies the storage and BLAS-backed matrix product, this module
pins down the conventions (float32, channel-first, explicit shape
validation) that the rest of the package relies on.
"""

import numpy as np

from .errors import ShapeError

DTYPE = np.float32

Tensor = np.ndarray


def validate_shape(shape):
    """Raise ShapeError unless every extent is a positive integer."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ShapeError("shape must be non-empty")
    for s in shape:
        if s < 1:
            raise ShapeError(f"invalid extent {s} in shape {shape}")
    return shape


def tensor_filled(shape, value):
    """Tensor of the given shape with every element equal to ``value``."""
    shape = validate_shape(shape)
    return np.full(shape, value, dtype=DTYPE)


def zeros(shape):
    return tensor_filled(shape, 0.0)


def identity(n):
    """n-by-n identity matrix."""
    if n < 1:
        raise ShapeError(f"identity size must be >= 1, got {n}")
    return np.eye(n, dtype=DTYPE)


def matmul(a, b):
    """Matrix product of two rank-2 tensors, [m,k] @ [k,n] -> [m,n]."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} vs {b.shape}")
    return np.matmul(a, b)
