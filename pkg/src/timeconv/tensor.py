"""Dense tensor primitives and the finite-difference gradient checker.

Tensors are plain ``numpy.ndarray`` objects in C (row-major) order. Training and
inference run in float32; gradient checks promote everything to float64.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np

DTYPE = np.float32
CHECK_DTYPE = np.float64

DETERMINISTIC_ENV = "TIMECONV_DETERMINISTIC"


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


class NumericError(ArithmeticError):
    """Raised when a computation produces NaN or infinite values."""


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator: PCG64 seeded with a 64-bit unsigned integer.

    numpy guarantees the PCG64 bit stream is identical across platforms for
    the same seed, which makes it the artifact's reference generator.
    """
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def tensor(data, dtype=DTYPE) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(data, dtype=dtype))


def reshape(x: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} into {shape}")
    return np.ascontiguousarray(x).reshape(shape)


def flatten(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x).reshape(-1)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """2-D matrix product.

    Delegates to BLAS; the accumulation order inside a BLAS kernel is not
    left-to-right, so callers that need an exact reference use
    :func:`matmul_reference`.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def matmul_reference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop product with left-to-right accumulation in float64."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += float(a[i, p]) * float(b[p, j])
            out[i, j] = acc
    return out.astype(np.result_type(a, b))


def _normalize_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} is out of range for a {ndim}-d tensor")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise DimensionError(f"repeated axis in {tuple(axes)}")
    return tuple(sorted(out))


def reduce(x: np.ndarray, axes=None, mode: str = "sum", keepdims: bool = False) -> np.ndarray:
    axes = _normalize_axes(axes, x.ndim)
    if mode == "sum":
        return np.sum(x, axis=axes, keepdims=keepdims)
    if mode == "mean":
        return np.mean(x, axis=axes, keepdims=keepdims)
    raise ValueError(f"unknown reduction mode {mode!r}")


def check_finite(name: str, value: np.ndarray) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite values in {name}")


@contextmanager
def single_threaded():
    """Limit BLAS to one thread for reproducible, comparable timings."""
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        yield
        return
    with threadpool_limits(limits=1):
        yield


def deterministic_enabled() -> bool:
    return os.environ.get(DETERMINISTIC_ENV, "1").lower() not in ("0", "false", "no")


@contextmanager
def deterministic_mode():
    """Single-threaded BLAS unless ``TIMECONV_DETERMINISTIC=0``."""
    if deterministic_enabled():
        with single_threaded():
            yield
    else:
        yield


# ---------------------------------------------------------------------------
# gradient checking


def _projection(shape, seed: int) -> np.ndarray:
    return make_rng(seed).uniform(0.5, 1.5, size=shape) * make_rng(seed + 1).choice([-1.0, 1.0], size=shape)


def gradient_errors(layer, x: np.ndarray, eps: float = 1e-5, seed: int = 0) -> dict[str, float]:
    """Per-tensor max relative error between analytic and numeric gradients.

    The scalar loss is ``sum(R * layer(x))`` with a fixed random projection
    ``R``. A plain sum degenerates for batch normalisation (its output sum is
    independent of the input and of the scale), so every element is weighted.
    Keys are ``"input"`` plus every parameter name of the layer.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    layer.astype(CHECK_DTYPE)
    x = np.array(x, dtype=CHECK_DTYPE)

    out = layer.forward(x, train=True)
    proj = _projection(np.shape(out), seed)
    grad_in = layer.backward(proj.copy() if np.ndim(out) else proj)
    analytic = {"input": np.array(grad_in, dtype=CHECK_DTYPE)}
    for name, param, grad in layer.named_parameters():
        analytic[name] = np.array(grad, dtype=CHECK_DTYPE)
    for name, value in analytic.items():
        if not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite analytic gradient for {name!r}")

    def numeric(target: np.ndarray, name: str) -> np.ndarray:
        result = np.zeros_like(target)
        flat = target.reshape(-1)
        res = result.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = layer.forward(x, train=True)
            flat[i] = orig - eps
            minus = layer.forward(x, train=True)
            flat[i] = orig
            # difference first: unaffected outputs cancel exactly
            res[i] = np.sum((np.asarray(plus) - np.asarray(minus)) * proj) / (2 * eps)
        if not np.all(np.isfinite(result)):
            raise NumericError(f"non-finite numeric gradient for {name!r}")
        return result

    errors = {}
    numeric_grads = {"input": numeric(x, "input")}
    for name, param, _ in layer.named_parameters():
        numeric_grads[name] = numeric(param, name)
    for name, a in analytic.items():
        n = numeric_grads[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        errors[name] = float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
    return errors


def grad_check(layer, x: np.ndarray, eps: float = 1e-5, seed: int = 0) -> float:
    """Max relative gradient error over the input and all layer parameters."""
    return max(gradient_errors(layer, x, eps, seed).values())


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def allclose_rel(a: np.ndarray, b: np.ndarray, rtol: float) -> bool:
    """Relative closeness scaled by the larger tensor's magnitude."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.max(np.abs(b), initial=0.0)), float(np.max(np.abs(a), initial=0.0)), 1e-12)
    return a.shape == b.shape and float(np.max(np.abs(a - b), initial=0.0)) <= rtol * scale


def iter_chunks(seq: Sequence, size: int) -> Iterable[Sequence]:
    for i in range(0, len(seq), size):
        yield seq[i : i + size]
