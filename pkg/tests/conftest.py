"""Shared test helpers: finite differences, reference convolution, fixtures."""

import numpy as np
import pytest


def fd_gradient(f, x, h=1e-3):
    """Central finite-difference gradient of scalar f at x, in float64."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2.0 * h)
        it.iternext()
    return grad


def rel_err(a, b):
    """Max absolute difference scaled by the larger magnitude of b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8))


def conv_reference(x, kernels, bias):
    """Six-nested-loop same-padded stride-1 convolution oracle, [C,H,W] input."""
    out_ch, in_ch, k, _ = kernels.shape
    _, h, w = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((out_ch, h, w), dtype=np.float64)
    for oc in range(out_ch):
        for ic in range(in_ch):
            for i in range(h):
                for j in range(w):
                    for ki in range(k):
                        for kj in range(k):
                            out[oc, i, j] += xp[ic, i + ki, j + kj] * kernels[oc, ic, ki, kj]
        out[oc] += bias[oc]
    return out


def model_to_float64(model):
    """Convert every parameter array to float64 in place (for FD probes)."""
    model.set_parameters([arr.astype(np.float64) for _, arr in model.parameters()])
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
