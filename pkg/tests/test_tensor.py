import numpy as np
import pytest

from pyroclass.errors import ShapeError
from pyroclass.tensor import identity, matmul, tensor_filled


def test_filled_zero():
    t = tensor_filled([2, 2], 0.0)
    assert t.shape == (2, 2)
    assert t.dtype == np.float32
    assert np.all(t == 0.0)


def test_filled_scalar_value():
    t = tensor_filled([1], 3.5)
    assert t.tolist() == [3.5]


@pytest.mark.parametrize("shape", [[2, 0], [0], [3, -1], []])
def test_filled_rejects_degenerate_extents(shape):
    with pytest.raises(ShapeError):
        tensor_filled(shape, 1.0)


def test_filled_sum_is_exact_for_ones():
    # float32 keeps integer sums exact up to 2**24
    t = tensor_filled([256, 256, 256], 1.0)
    assert float(t.sum(dtype=np.float64)) == 256 ** 3


def test_matmul_identity_both_sides():
    a = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    assert np.array_equal(matmul(identity(2), a), a)
    assert np.array_equal(matmul(a, identity(2)), a)


def test_matmul_1x2_2x1():
    a = np.array([[1.0, 2.0]], dtype=np.float32)
    b = np.array([[3.0], [4.0]], dtype=np.float32)
    assert matmul(a, b).tolist() == [[11.0]]


def test_matmul_inner_mismatch():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3), np.float32), np.ones((2, 3), np.float32))


def test_matmul_rejects_non_rank2():
    with pytest.raises(ShapeError):
        matmul(np.ones(3, np.float32), np.ones((3, 2), np.float32))


def _triple_loop(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            for l in range(k):
                out[i, j] += float(a[i, l]) * float(b[l, j])
    return out


def test_matmul_matches_triple_loop(rng):
    a = rng.normal(size=(5, 7)).astype(np.float32)
    b = rng.normal(size=(7, 3)).astype(np.float32)
    assert np.max(np.abs(matmul(a, b) - _triple_loop(a, b))) < 1e-5


def test_matmul_random_64x64_against_reference(rng):
    # relative to the matrix magnitude; near-zero entries cancel in float32
    a = rng.normal(size=(64, 64)).astype(np.float32)
    b = rng.normal(size=(64, 64)).astype(np.float32)
    got = matmul(a, b)
    want = _triple_loop(a, b)
    assert np.max(np.abs(got - want)) / np.max(np.abs(want)) < 1e-5
