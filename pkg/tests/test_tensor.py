import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from timeconv.tensor import (
    DimensionError,
    NumericError,
    allclose_rel,
    check_finite,
    deterministic_enabled,
    flatten,
    grad_check,
    make_rng,
    matmul,
    matmul_reference,
    max_relative_error,
    reduce,
    reshape,
    tensor,
)
from timeconv.layers import Dense


def test_make_rng_is_pcg64_and_reproducible():
    a = make_rng(7).random(5)
    b = np.random.Generator(np.random.PCG64(7)).random(5)
    assert np.array_equal(a, b)
    # frozen first draw of the reference stream
    assert make_rng(0).integers(0, 2**31) == np.random.Generator(np.random.PCG64(0)).integers(0, 2**31)


@pytest.mark.parametrize("seed", [-1, 2**64])
def test_make_rng_rejects_out_of_range(seed):
    with pytest.raises(ValueError):
        make_rng(seed)


def test_tensor_defaults_to_float32():
    t = tensor([[1, 2], [3, 4]])
    assert t.dtype == np.float32 and t.flags.c_contiguous


def test_reshape_and_flatten():
    x = np.arange(12.0)
    assert reshape(x, (3, 4)).shape == (3, 4)
    assert flatten(x.reshape(3, 4)).shape == (12,)
    with pytest.raises(DimensionError):
        reshape(x, (5, 3))


@pytest.mark.parametrize("seed", range(20))
def test_matmul_matches_loop_reference(seed):
    rng = make_rng(seed)
    m, k, n = rng.integers(1, 9, size=3)
    a = rng.normal(size=(m, k))
    b = rng.normal(size=(k, n))
    assert allclose_rel(matmul(a, b), matmul_reference(a, b), 1e-12)


def test_matmul_shape_errors():
    with pytest.raises(DimensionError, match="inner"):
        matmul(np.zeros((2, 3)), np.zeros((4, 2)))
    with pytest.raises(DimensionError):
        matmul(np.zeros(3), np.zeros((3, 1)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.data())
def test_reduce_matches_loop(shape, data):
    x = make_rng(len(shape)).normal(size=shape)
    axes = data.draw(st.lists(st.integers(0, len(shape) - 1), unique=True, min_size=1))
    got = reduce(x, axes, "sum")
    # loop oracle: sum over reduced axes by iterating every element
    keep = [d for d in range(len(shape)) if d not in axes]
    ref = np.zeros([shape[d] for d in keep])
    for idx in np.ndindex(*shape):
        ref[tuple(idx[d] for d in keep)] += x[idx]
    assert np.allclose(got, ref, rtol=1e-12, atol=1e-12)
    count = int(np.prod([shape[a] for a in axes]))
    assert np.allclose(reduce(x, axes, "mean"), ref / count)


def test_reduce_errors():
    x = np.ones((2, 3))
    with pytest.raises(DimensionError):
        reduce(x, (2,))
    with pytest.raises(DimensionError):
        reduce(x, (0, -2))
    with pytest.raises(ValueError):
        reduce(x, None, "max")
    assert reduce(x, (0,), keepdims=True).shape == (1, 3)


def test_check_finite():
    check_finite("ok", np.ones(3))
    with pytest.raises(NumericError, match="w"):
        check_finite("w", np.array([1.0, np.nan]))


def test_relative_error_helpers():
    a = np.array([1.0, 2.0])
    assert max_relative_error(a, a) == 0.0
    assert max_relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)
    assert allclose_rel(np.array([1000.0, 1e-9]), np.array([1000.0, 0.0]), 1e-10)
    assert not allclose_rel(np.array([1.0]), np.array([1.01]), 1e-3)
    with pytest.raises(DimensionError):
        max_relative_error(np.zeros(2), np.zeros(3))


def test_deterministic_env(monkeypatch):
    monkeypatch.delenv("TIMECONV_DETERMINISTIC", raising=False)
    assert deterministic_enabled()
    monkeypatch.setenv("TIMECONV_DETERMINISTIC", "0")
    assert not deterministic_enabled()


def test_grad_check_rejects_bad_eps():
    layer = Dense(2, 2, rng=make_rng(0))
    with pytest.raises(ValueError):
        grad_check(layer, np.ones((1, 2)), eps=1e-2)


def test_grad_check_detects_wrong_backward():
    class Broken(Dense):
        def backward(self, grad):
            return 2 * super().backward(grad)

    layer = Broken(3, 2, rng=make_rng(0))
    assert grad_check(layer, make_rng(1).normal(size=(2, 3))) > 0.1


def test_small_hand_examples():
    assert np.array_equal(matmul(np.eye(2), np.array([[1.0, 2], [3, 4]])), [[1, 2], [3, 4]])
    assert matmul(np.array([[1.0, 2]]), np.array([[3.0], [4]]))[0, 0] == 11
    assert reduce(np.ones((2, 3))) == 6
    assert reduce(np.array([2.0, 4, 6]), mode="mean") == 4


def test_dense_grad_check_example():
    layer = Dense(4, 3, rng=make_rng(0))
    assert grad_check(layer, make_rng(1).normal(size=(3, 4)), eps=1e-5) < 1e-4
