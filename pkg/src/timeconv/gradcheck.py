"""Randomised small-shape gradient checks for every layer type."""

from __future__ import annotations

import numpy as np

from .layers import (
    BatchNorm,
    Conv2D,
    Conv2Plus1D,
    Conv3D,
    Dense,
    DepthwiseConv2D,
    GlobalAvgPool,
    MaxPool2D,
    ReLU,
    ReLU6,
    Residual,
    SeparableConv2D,
    Sequential,
    SoftmaxCrossEntropy,
)
from .tensor import gradient_errors, make_rng

KINK_MARGIN = 1e-3


def _away_from(x: np.ndarray, points, margin: float) -> np.ndarray:
    for p in points:
        near = np.abs(x - p) < margin
        x = np.where(near, p + np.where(x >= p, margin, -margin) * 2, x)
    return x


def _distinct(rng, shape) -> np.ndarray:
    # values spaced 0.01 apart: no two elements of a pooling window tie
    n = int(np.prod(shape))
    return (rng.permutation(n).reshape(shape) - n / 2) * 0.01


def _conv2d(rng):
    cin, cout, k, s = rng.integers(1, 4), rng.integers(1, 5), int(rng.choice([1, 3])), int(rng.integers(1, 3))
    h, w = rng.integers(k, 8, size=2)
    pad = rng.choice(["valid", "same"])
    layer = Conv2D(int(cin), int(cout), k, s, str(pad), bias=bool(rng.integers(2)), rng=rng)
    return layer, rng.normal(size=(int(rng.integers(1, 3)), int(cin), int(h), int(w)))


def _depthwise(rng):
    c, s = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    h, w = rng.integers(3, 8, size=2)
    layer = DepthwiseConv2D(c, 3, s, "same", bias=bool(rng.integers(2)), rng=rng)
    return layer, rng.normal(size=(int(rng.integers(1, 3)), c, int(h), int(w)))


def _separable(rng):
    cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 5))
    h, w = rng.integers(3, 7, size=2)
    layer = SeparableConv2D(cin, cout, 3, bias=bool(rng.integers(2)), rng=rng)
    return layer, rng.normal(size=(int(rng.integers(1, 3)), cin, int(h), int(w)))


def _conv3d(rng):
    cin, cout, s = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
    t, h, w = rng.integers(1, 5), rng.integers(3, 6), rng.integers(3, 6)
    layer = Conv3D(cin, cout, (int(rng.choice([1, 3])), 3, 3), (1, s, s), "same", bias=bool(rng.integers(2)), rng=rng)
    return layer, rng.normal(size=(1, cin, int(t), int(h), int(w)))


def _conv2plus1d(rng):
    cin, cout, mid = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    t, h, w = rng.integers(2, 5), rng.integers(3, 6), rng.integers(3, 6)
    layer = Conv2Plus1D(cin, cout, 3, 3, mid, stride=int(rng.integers(1, 3)), rng=rng)
    for _ in range(100):
        x = rng.normal(size=(1, cin, int(t), int(h), int(w)))
        # keep the interleaved ReLU away from its kink
        if np.min(np.abs(layer.spatial.forward(x))) > KINK_MARGIN:
            break
    return layer, x


def _batchnorm(rng):
    c = int(rng.integers(1, 4))
    shape = (int(rng.integers(2, 5)), c) + tuple(int(v) for v in rng.integers(1, 4, size=int(rng.integers(0, 3))))
    layer = BatchNorm(c)
    layer.params["gamma"][...] = rng.uniform(0.5, 2.0, size=c)
    layer.params["beta"][...] = rng.normal(size=c)
    return layer, rng.normal(size=shape) * rng.uniform(0.5, 3.0) + rng.normal()


def _dense(rng):
    fin, fout = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    return Dense(fin, fout, rng=rng), rng.normal(size=(int(rng.integers(1, 5)), fin))


def _maxpool(rng):
    k, s = int(rng.choice([2, 3])), int(rng.integers(1, 3))
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 3))) + tuple(int(v) for v in rng.integers(3, 7, size=2))
    return MaxPool2D(k, s, str(rng.choice(["valid", "same"]))), _distinct(rng, shape)


def _global_pool(rng):
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4))) + tuple(int(v) for v in rng.integers(1, 5, size=int(rng.integers(1, 4))))
    return GlobalAvgPool(), rng.normal(size=shape)


def _relu(rng):
    x = _away_from(rng.normal(size=(2, 3, 4, 4)), [0.0], KINK_MARGIN)
    return ReLU(), x


def _relu6(rng):
    x = _away_from(rng.normal(scale=4.0, size=(2, 3, 4, 4)), [0.0, 6.0], KINK_MARGIN)
    return ReLU6(), x


def _softmax_ce(rng):
    b, k = int(rng.integers(1, 6)), int(rng.integers(2, 8))
    return SoftmaxCrossEntropy(rng.integers(0, k, size=b)), rng.normal(size=(b, k)) * 2


def _residual(rng):
    c = int(rng.integers(1, 4))
    main = Sequential(Conv2D(c, c, 3, 1, "same", bias=False, rng=rng), BatchNorm(c))
    layer = Residual(main, Conv2D(c, c, 1, rng=rng))
    return layer, rng.normal(size=(2, c, 4, 4))


CASES = {
    "conv2d": _conv2d,
    "depthwise": _depthwise,
    "separable": _separable,
    "conv3d": _conv3d,
    "conv2plus1d": _conv2plus1d,
    "batchnorm": _batchnorm,
    "dense": _dense,
    "maxpool": _maxpool,
    "global_avg_pool": _global_pool,
    "relu": _relu,
    "relu6": _relu6,
    "softmax_ce": _softmax_ce,
    "residual": _residual,
}


def check_case(name: str, seed: int, eps: float = 1e-5) -> dict[str, float]:
    rng = make_rng(seed)
    layer, x = CASES[name](rng)
    return gradient_errors(layer, x, eps, seed=seed)


def run_grad_checks(names=None, seeds=range(20), eps: float = 1e-5) -> dict[str, float]:
    """Worst relative error per layer type across ``seeds``."""
    names = list(CASES) if names is None else list(names)
    return {name: max(max(check_case(name, s, eps).values()) for s in seeds) for name in names}
