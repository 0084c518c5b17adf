"""Layer zoo: forward and hand-derived backward passes.

Every layer works on channels-first arrays (``B, C, *spatial``). Convolutions
are cross-correlations (no kernel flip). A layer only caches activations when
``forward`` is called with ``train=True``; eval-mode forwards keep no state
besides reading parameters, so they can run concurrently.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import _kernels
from .tensor import DTYPE, DimensionError, matmul

BN_EPSILON = 1e-3
BN_MOMENTUM = 0.99


def _tuple(value, n: int) -> tuple[int, ...]:
    if isinstance(value, int):
        return (value,) * n
    value = tuple(int(v) for v in value)
    if len(value) != n:
        raise ValueError(f"expected {n} values, got {value}")
    return value


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """Per-side padding that yields ``ceil(size / stride)`` outputs.

    Extra padding goes to the trailing side, as in TensorFlow's "same" mode.
    """
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def resolve_padding(padding, sizes: Sequence[int], kernel: Sequence[int], stride: Sequence[int]):
    n = len(sizes)
    if padding == "valid":
        return ((0, 0),) * n
    if padding == "same":
        return tuple(same_padding(s, k, st) for s, k, st in zip(sizes, kernel, stride))
    if isinstance(padding, int):
        return ((padding, padding),) * n
    pads = []
    for p in padding:
        if isinstance(p, int):
            pads.append((p, p))
        else:
            lo, hi = p
            pads.append((int(lo), int(hi)))
    if len(pads) != n or any(lo < 0 or hi < 0 for lo, hi in pads):
        raise ValueError(f"invalid padding {padding!r} for {n} spatial dims")
    return tuple(pads)


def output_size(size: int, kernel: int, stride: int, pad: tuple[int, int]) -> int:
    return (size + pad[0] + pad[1] - kernel) // stride + 1


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


class Layer:
    """Base class. Parameters, gradients and buffers live in dicts."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.children: list[tuple[str, Layer]] = []

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x, train: bool = False):
        return self.forward(x, train)

    def add_param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = np.ascontiguousarray(value, dtype=DTYPE)
        self.grads[name] = np.zeros_like(self.params[name])

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        for key, value in self.params.items():
            yield prefix + key, value, self.grads[key]
        for name, child in self.children:
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, value in self.buffers.items():
            yield prefix + key, value
        for name, child in self.children:
            yield from child.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Layer"]:
        yield self
        for _, child in self.children:
            yield from child.modules()

    def astype(self, dtype) -> "Layer":
        for layer in self.modules():
            for key in layer.params:
                layer.params[key] = np.ascontiguousarray(layer.params[key], dtype=dtype)
                layer.grads[key] = np.zeros_like(layer.params[key])
            for key in layer.buffers:
                layer.buffers[key] = np.ascontiguousarray(layer.buffers[key], dtype=dtype)
        return self

    def zero_grad(self) -> None:
        for layer in self.modules():
            for g in layer.grads.values():
                g.fill(0)

    def param_count(self) -> int:
        return sum(p.size for _, p, _ in self.named_parameters())

    def __repr__(self):
        return type(self).__name__


# ---------------------------------------------------------------------------
# convolutions


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, ...]
    stride: tuple[int, ...]
    padding: object = "valid"
    has_bias: bool = True

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if any(k < 1 for k in self.kernel) or any(s < 1 for s in self.stride):
            raise ValueError("kernel extents and strides must be positive")


class ConvND(Layer):
    """Dense N-d convolution lowered to one GEMM per call (im2col)."""

    def __init__(self, in_channels, out_channels, kernel, stride=1, padding="valid",
                 bias=True, rng=None, ndim=2):
        super().__init__()
        self.spec = ConvSpec(in_channels, out_channels, _tuple(kernel, ndim), _tuple(stride, ndim),
                             padding, bias)
        self.ndim = ndim
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * int(np.prod(self.spec.kernel))
        self.add_param("weight", fan_in_uniform(rng, (out_channels, in_channels, *self.spec.kernel), fan_in))
        if bias:
            self.add_param("bias", np.zeros(out_channels))
        self._cache = None

    def _geometry(self, x):
        spec = self.spec
        if x.ndim != self.ndim + 2:
            raise DimensionError(f"{type(self).__name__} expects a {self.ndim + 2}-d input, got shape {x.shape}")
        if x.shape[1] != spec.in_channels:
            raise DimensionError(
                f"{type(self).__name__} expects {spec.in_channels} input channels, got shape {x.shape}")
        sizes = x.shape[2:]
        pads = resolve_padding(spec.padding, sizes, spec.kernel, spec.stride)
        outs = tuple(output_size(s, k, st, p) for s, k, st, p in zip(sizes, spec.kernel, spec.stride, pads))
        if any(o < 1 for o in outs):
            raise DimensionError(f"input {x.shape} too small for kernel {spec.kernel} with padding {pads}")
        return pads, outs

    def _offsets(self):
        return list(itertools.product(*(range(k) for k in self.spec.kernel)))

    def _window(self, offset, outs):
        return tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, self.spec.stride, outs))

    def _weight_matrix(self, weight):
        # columns ordered (kernel offset, input channel)
        return np.moveaxis(weight, 1, -1).reshape(weight.shape[0], -1)

    def forward(self, x, train=False):
        pads, outs = self._geometry(x)
        xp = np.pad(x, ((0, 0), (0, 0), *pads)) if any(p != (0, 0) for p in pads) else x
        batch, chans = x.shape[:2]
        offsets = self._offsets()
        cols = np.empty((len(offsets), chans, batch, *outs), dtype=x.dtype)
        for i, off in enumerate(offsets):
            np.copyto(cols[i], xp[(slice(None), slice(None), *self._window(off, outs))].swapaxes(0, 1))
        cols = cols.reshape(len(offsets) * chans, -1)
        weight = self.params["weight"]
        wmat = self._weight_matrix(weight)
        out = matmul(cols.T, wmat.T)  # (B*P, Cout)
        if "bias" in self.params:
            out += self.params["bias"]
        out = np.ascontiguousarray(out.T.reshape(weight.shape[0], batch, *outs).swapaxes(0, 1))
        if train:
            self._cache = (cols, x.shape, pads, outs)
        return out

    def backward(self, grad):
        cols, xshape, pads, outs = self._cache
        weight = self.params["weight"]
        cout = weight.shape[0]
        batch, chans = xshape[:2]
        g2 = np.ascontiguousarray(grad.swapaxes(0, 1)).reshape(cout, -1)
        dw = g2 @ cols.T
        self.grads["weight"][...] = np.moveaxis(dw.reshape(cout, *self.spec.kernel, chans), -1, 1)
        if "bias" in self.params:
            self.grads["bias"][...] = g2.sum(axis=1)
        dcols = (self._weight_matrix(weight).T @ g2).reshape(-1, chans, batch, *outs)
        padded = tuple(s + lo + hi for s, (lo, hi) in zip(xshape[2:], pads))
        dxp = np.zeros((batch, chans, *padded), dtype=grad.dtype)
        for i, off in enumerate(self._offsets()):
            dxp[(slice(None), slice(None), *self._window(off, outs))] += dcols[i].swapaxes(0, 1)
        crop = tuple(slice(lo, lo + s) for s, (lo, _) in zip(xshape[2:], pads))
        return dxp[(slice(None), slice(None), *crop)]


class Conv2D(ConvND):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding="valid", bias=True, rng=None):
        super().__init__(in_channels, out_channels, kernel_size, stride, padding, bias, rng, ndim=2)


class Conv3D(ConvND):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding="valid", bias=True, rng=None):
        super().__init__(in_channels, out_channels, kernel_size, stride, padding, bias, rng, ndim=3)


class DepthwiseConv2D(Layer):
    """One k×k filter per input channel."""

    def __init__(self, channels, kernel_size=3, stride=1, padding="same", bias=False, rng=None):
        super().__init__()
        self.channels = channels
        self.kernel = _tuple(kernel_size, 2)
        self.stride = _tuple(stride, 2)
        self.padding = padding
        rng = rng if rng is not None else np.random.default_rng(0)
        self.add_param("weight", fan_in_uniform(rng, (channels, *self.kernel), int(np.prod(self.kernel))))
        if bias:
            self.add_param("bias", np.zeros(channels))
        self._cache = None

    def _setup(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(f"DepthwiseConv2D expects (B, {self.channels}, H, W), got {x.shape}")
        pads = resolve_padding(self.padding, x.shape[2:], self.kernel, self.stride)
        outs = tuple(output_size(s, k, st, p) for s, k, st, p in zip(x.shape[2:], self.kernel, self.stride, pads))
        if any(o < 1 for o in outs):
            raise DimensionError(f"input {x.shape} too small for kernel {self.kernel}")
        return pads, outs

    def forward(self, x, train=False):
        pads, outs = self._setup(x)
        xp = np.pad(x, ((0, 0), (0, 0), *pads)) if any(p != (0, 0) for p in pads) else np.ascontiguousarray(x)
        w = self.params["weight"].astype(x.dtype, copy=False)
        out = _kernels.depthwise_forward(xp, w, *self.stride, *outs)
        if "bias" in self.params:
            out += self.params["bias"][:, None, None]
        if train:
            self._cache = (xp, x.shape, pads)
        return out

    def backward(self, grad):
        xp, xshape, pads = self._cache
        w = self.params["weight"].astype(grad.dtype, copy=False)
        dxp, dw = _kernels.depthwise_backward(xp, w, np.ascontiguousarray(grad), *self.stride)
        self.grads["weight"][...] = dw
        if "bias" in self.params:
            self.grads["bias"][...] = grad.sum(axis=(0, 2, 3))
        (pt, _), (pl, _) = pads
        return dxp[:, :, pt:pt + xshape[2], pl:pl + xshape[3]]


class Sequential(Layer):
    def __init__(self, *layers: Layer):
        super().__init__()
        self.children = [(str(i), layer) for i, layer in enumerate(layers)]

    @property
    def layers(self) -> list[Layer]:
        return [layer for _, layer in self.children]

    def append(self, layer: Layer) -> None:
        self.children.append((str(len(self.children)), layer))

    def forward(self, x, train=False):
        for _, layer in self.children:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for _, layer in reversed(self.children):
            grad = layer.backward(grad)
        return grad


class SeparableConv2D(Sequential):
    """Depthwise k×k convolution followed by a pointwise 1×1 convolution."""

    def __init__(self, in_channels, out_channels, kernel_size=3, padding="same", bias=False, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        super().__init__(
            DepthwiseConv2D(in_channels, kernel_size, 1, padding, bias=False, rng=rng),
            Conv2D(in_channels, out_channels, 1, bias=bias, rng=rng),
        )
        self.in_channels = in_channels
        self.out_channels = out_channels

    @property
    def depthwise(self) -> DepthwiseConv2D:
        return self.children[0][1]

    @property
    def pointwise(self) -> Conv2D:
        return self.children[1][1]


class Conv2Plus1D(Sequential):
    """(2+1)D block: 1×k×k spatial conv to ``mid`` channels, ReLU, k_t×1×1 temporal conv."""

    def __init__(self, in_channels, out_channels, kernel_size=3, temporal_kernel=3, mid_channels=None,
                 stride=1, bias=False, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        mid = out_channels if mid_channels is None else mid_channels
        if mid < 1:
            raise ValueError("intermediate channel count must be >= 1")
        s = _tuple(stride, 2)
        super().__init__(
            Conv3D(in_channels, mid, (1, kernel_size, kernel_size), (1, *s), "same", bias=bias, rng=rng),
            ReLU(),
            Conv3D(mid, out_channels, (temporal_kernel, 1, 1), 1, "same", bias=bias, rng=rng),
        )
        self.mid_channels = mid

    @property
    def spatial(self) -> Conv3D:
        return self.children[0][1]

    @property
    def temporal(self) -> Conv3D:
        return self.children[2][1]


# ---------------------------------------------------------------------------
# normalisation, activations, pooling, dense


class BatchNorm(Layer):
    """Per-channel batch normalisation over every axis except axis 1."""

    def __init__(self, channels, eps=BN_EPSILON, momentum=BN_MOMENTUM):
        super().__init__()
        if eps <= 0:
            raise ValueError("epsilon must be positive")
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.add_param("gamma", np.ones(channels))
        self.add_param("beta", np.zeros(channels))
        self.buffers["running_mean"] = np.zeros(channels, dtype=DTYPE)
        self.buffers["running_var"] = np.ones(channels, dtype=DTYPE)
        self._cache = None

    def _shape(self, x):
        if x.ndim < 2 or x.shape[1] != self.channels:
            raise DimensionError(f"BatchNorm expects {self.channels} channels on axis 1, got {x.shape}")
        axes = (0,) + tuple(range(2, x.ndim))
        bshape = (1, self.channels) + (1,) * (x.ndim - 2)
        return axes, bshape

    def forward(self, x, train=False):
        axes, bshape = self._shape(x)
        gamma = self.params["gamma"].reshape(bshape)
        beta = self.params["beta"].reshape(bshape)
        if not train:
            mean = self.buffers["running_mean"].reshape(bshape)
            var = self.buffers["running_var"].reshape(bshape)
            return (x - mean) * (gamma / np.sqrt(var + self.eps)) + beta
        if x.shape[0] == 0:
            raise DimensionError("BatchNorm in train mode needs a non-empty batch")
        mean = x.mean(axis=axes, keepdims=True)
        centered = x - mean
        var = np.mean(centered * centered, axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = centered * inv_std
        m = self.momentum
        rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
        rm[...] = m * rm + (1 - m) * mean.reshape(-1)
        rv[...] = m * rv + (1 - m) * var.reshape(-1)
        self._cache = (xhat, inv_std, axes, bshape)
        return xhat * gamma + beta

    def backward(self, grad):
        xhat, inv_std, axes, bshape = self._cache
        n = grad.size // self.channels
        self.grads["beta"][...] = grad.sum(axis=axes)
        self.grads["gamma"][...] = (grad * xhat).sum(axis=axes)
        dxhat = grad * self.params["gamma"].reshape(bshape)
        sum_d = dxhat.sum(axis=axes, keepdims=True)
        sum_dx = (dxhat * xhat).sum(axis=axes, keepdims=True)
        return inv_std / n * (n * dxhat - sum_d - xhat * sum_dx)


class ReLU(Layer):
    def forward(self, x, train=False):
        out = np.maximum(x, 0)
        if train:
            self._mask = x > 0
        return out

    def backward(self, grad):
        return grad * self._mask


class ReLU6(Layer):
    def forward(self, x, train=False):
        out = np.clip(x, 0, 6)
        if train:
            self._mask = (x > 0) & (x < 6)
        return out

    def backward(self, grad):
        return grad * self._mask


class MaxPool2D(Layer):
    def __init__(self, pool_size=3, stride=2, padding="same"):
        super().__init__()
        self.kernel = _tuple(pool_size, 2)
        self.stride = _tuple(stride, 2)
        self.padding = padding

    def forward(self, x, train=False):
        if x.ndim != 4:
            raise DimensionError(f"MaxPool2D expects a 4-d input, got {x.shape}")
        pads = resolve_padding(self.padding, x.shape[2:], self.kernel, self.stride)
        outs = tuple(output_size(s, k, st, p) for s, k, st, p in zip(x.shape[2:], self.kernel, self.stride, pads))
        out, arg = _kernels.maxpool_forward(np.ascontiguousarray(x), *self.kernel, *self.stride,
                                            pads[0][0], pads[1][0], *outs)
        if train:
            self._cache = (arg, x.shape)
        return out

    def backward(self, grad):
        arg, xshape = self._cache
        return _kernels.maxpool_backward(np.ascontiguousarray(grad), arg, xshape[2], xshape[3])


class GlobalAvgPool(Layer):
    """Mean over every axis after the channel axis: (B, C, ...) -> (B, C)."""

    def forward(self, x, train=False):
        if x.ndim < 3:
            raise DimensionError(f"GlobalAvgPool expects (B, C, ...), got {x.shape}")
        if train:
            self._shape = x.shape
        return x.mean(axis=tuple(range(2, x.ndim)))

    def backward(self, grad):
        shape = self._shape
        count = int(np.prod(shape[2:]))
        return np.broadcast_to((grad / count).reshape(grad.shape + (1,) * (len(shape) - 2)), shape).copy()


class Flatten(Layer):
    def forward(self, x, train=False):
        if train:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Dense(Layer):
    def __init__(self, in_features, out_features, bias=True, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.add_param("weight", fan_in_uniform(rng, (in_features, out_features), in_features))
        if bias:
            self.add_param("bias", np.zeros(out_features))

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.params["weight"].shape[0]:
            raise DimensionError(f"Dense expects (B, {self.params['weight'].shape[0]}), got {x.shape}")
        out = matmul(x, self.params["weight"])
        if "bias" in self.params:
            out = out + self.params["bias"]
        if train:
            self._x = x
        return out

    def backward(self, grad):
        self.grads["weight"][...] = self._x.T @ grad
        if "bias" in self.params:
            self.grads["bias"][...] = grad.sum(axis=0)
        return grad @ self.params["weight"].T


class Residual(Layer):
    """``act(main(x) + shortcut(x))``; identity shortcut when none is given."""

    def __init__(self, main: Layer, shortcut: Layer | None = None, activation: Layer | None = None):
        super().__init__()
        self.children = [("main", main)]
        if shortcut is not None:
            self.children.append(("shortcut", shortcut))
        if activation is not None:
            self.children.append(("act", activation))
        self.main = main
        self.shortcut = shortcut
        self.activation = activation

    def forward(self, x, train=False):
        y = self.main.forward(x, train)
        s = self.shortcut.forward(x, train) if self.shortcut is not None else x
        if y.shape != s.shape:
            raise DimensionError(f"residual branches disagree: {y.shape} vs {s.shape}")
        y = y + s
        if self.activation is not None:
            y = self.activation.forward(y, train)
        return y

    def backward(self, grad):
        if self.activation is not None:
            grad = self.activation.backward(grad)
        dx = self.main.backward(grad)
        return dx + (self.shortcut.backward(grad) if self.shortcut is not None else grad)


# ---------------------------------------------------------------------------
# loss


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} and labels {labels.shape} disagree")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    batch = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(batch)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / batch


class SoftmaxCrossEntropy(Layer):
    """Loss wrapped as a layer with fixed labels, so it can be grad-checked."""

    def __init__(self, labels):
        super().__init__()
        self.labels = np.asarray(labels)

    def forward(self, x, train=False):
        loss, grad = softmax_cross_entropy(x, self.labels)
        self._grad = grad
        return np.asarray(loss, dtype=x.dtype)

    def backward(self, grad):
        return self._grad * grad
