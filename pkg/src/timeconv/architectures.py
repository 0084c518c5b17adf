"""Builders for the six compared networks, parameter accounting and inference.

Two-dimensional backbones (mini-Xception, ResNet20, MobileNetV2) become
TimeConvNets by widening only their first convolution to accept a 5-frame
channel stack. The 3D and (2+1)D baselines run ResNet20 over a (1, 5, 48, 48)
volume with no temporal striding.
"""

from __future__ import annotations

import enum
from typing import Callable

import numpy as np

from .layers import (
    BatchNorm,
    Conv2D,
    Conv2Plus1D,
    Conv3D,
    Dense,
    DepthwiseConv2D,
    GlobalAvgPool,
    Layer,
    MaxPool2D,
    ReLU,
    ReLU6,
    Residual,
    SeparableConv2D,
    Sequential,
)
from .tensor import DTYPE, DimensionError, make_rng

NUM_CLASSES = 7
WINDOW = 5
IMAGE_SIZE = 48


class ArchId(str, enum.Enum):
    XCEPTION2D = "xception2d"
    RESNET20_2PLUS1D = "resnet20_2plus1d"
    RESNET20_3D = "resnet20_3d"
    TIMECONV_XCEPTION = "timeconv_xception"
    TIMECONV_RESNET20 = "timeconv_resnet20"
    TIMECONV_MOBILENETV2 = "timeconv_mobilenetv2"

    def __str__(self):
        return self.value

    @property
    def is_timeconv(self) -> bool:
        return self.value.startswith("timeconv_")

    @property
    def is_volumetric(self) -> bool:
        return self in (ArchId.RESNET20_3D, ArchId.RESNET20_2PLUS1D)


# Table ordering of the comparison (by parameter count, ascending).
PARAM_ORDER = (
    ArchId.XCEPTION2D,
    ArchId.TIMECONV_XCEPTION,
    ArchId.TIMECONV_RESNET20,
    ArchId.RESNET20_2PLUS1D,
    ArchId.RESNET20_3D,
    ArchId.TIMECONV_MOBILENETV2,
)

# Published totals; reconciliation targets only.
REFERENCE_PARAMS = {
    ArchId.XCEPTION2D: 58_423,
    ArchId.RESNET20_2PLUS1D: 523_357,
    ArchId.RESNET20_3D: 808_775,
    ArchId.TIMECONV_XCEPTION: 58_711,
    ArchId.TIMECONV_RESNET20: 274_535,
    ArchId.TIMECONV_MOBILENETV2: 2_267_527,
}


def input_shape(arch: ArchId | str) -> tuple[int, ...]:
    """Per-sample input contract (without the batch axis)."""
    arch = ArchId(arch)
    if arch.is_timeconv:
        return (WINDOW, IMAGE_SIZE, IMAGE_SIZE)
    if arch.is_volumetric:
        return (1, WINDOW, IMAGE_SIZE, IMAGE_SIZE)
    return (1, IMAGE_SIZE, IMAGE_SIZE)


def adapt_stacks(arch: ArchId | str, stacks: np.ndarray) -> np.ndarray:
    """Map (N, t, H, W) sub-sequence stacks onto an architecture's input contract.

    Single-frame networks see only the most recent frame of each window.
    """
    arch = ArchId(arch)
    if stacks.ndim != 4:
        raise DimensionError(f"expected stacks of shape (N, t, H, W), got {stacks.shape}")
    if arch.is_timeconv:
        return stacks
    if arch.is_volumetric:
        return stacks[:, None]
    return stacks[:, -1:]


class Network:
    """A built architecture: layer graph, parameters and input contract."""

    def __init__(self, arch_id: ArchId | str, body: Layer, num_classes: int = NUM_CLASSES):
        self.arch_id = ArchId(arch_id)
        self.body = body
        self.num_classes = num_classes
        self.input_shape = input_shape(self.arch_id)

    def _validate(self, batch: np.ndarray) -> None:
        if batch.ndim != len(self.input_shape) + 1 or batch.shape[1:] != self.input_shape:
            raise DimensionError(
                f"{self.arch_id} expects input (B, {', '.join(map(str, self.input_shape))}), got {batch.shape}")

    def forward(self, batch: np.ndarray, train: bool = False) -> np.ndarray:
        batch = np.asarray(batch)
        self._validate(batch)
        return self.body.forward(batch, train)

    __call__ = forward

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return self.body.backward(grad)

    def predict(self, batch: np.ndarray) -> np.ndarray:
        return np.argmax(self.forward(batch), axis=1)

    def named_parameters(self):
        return self.body.named_parameters()

    def named_buffers(self):
        return self.body.named_buffers()

    def astype(self, dtype) -> "Network":
        self.body.astype(dtype)
        return self

    def state(self) -> dict[str, np.ndarray]:
        out = {name: p for name, p, _ in self.named_parameters()}
        out.update(self.named_buffers())
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.state().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        current = self.state()
        if set(current) != set(state):
            missing = sorted(set(current) ^ set(state))[:5]
            raise KeyError(f"state entries differ from {self.arch_id} layout: {missing}")
        for name, target in current.items():
            value = np.asarray(state[name])
            if value.shape != target.shape:
                raise DimensionError(f"{name}: expected shape {target.shape}, got {value.shape}")
            target[...] = value

    def __repr__(self):
        return f"Network({self.arch_id}, params={count_params(self)})"


def count_params(net: Network | Layer, include_running_stats: bool = False) -> int:
    """Learnable scalars: weights, biases, BN scale and shift.

    ``include_running_stats`` adds the BN moving mean/variance, which is how
    common toolchains report a model's total parameter count.
    """
    total = sum(p.size for _, p, _ in net.named_parameters())
    if include_running_stats:
        total += sum(b.size for _, b in net.named_buffers())
    return total


def param_breakdown(net: Network) -> list[tuple[str, tuple[int, ...], int]]:
    return [(name, p.shape, p.size) for name, p, _ in net.named_parameters()]


# ---------------------------------------------------------------------------
# mini-Xception


def mini_xception(in_channels: int, rng: np.random.Generator, num_classes: int = NUM_CLASSES,
                  first_filters: int = 8) -> Sequential:
    net = Sequential(
        Conv2D(in_channels, first_filters, 3, bias=False, rng=rng),
        BatchNorm(first_filters),
        ReLU(),
        Conv2D(first_filters, 8, 3, bias=False, rng=rng),
        BatchNorm(8),
        ReLU(),
    )
    channels = 8
    for filters in (16, 32, 64, 128):
        main = Sequential(
            SeparableConv2D(channels, filters, 3, rng=rng),
            BatchNorm(filters),
            ReLU(),
            SeparableConv2D(filters, filters, 3, rng=rng),
            BatchNorm(filters),
            MaxPool2D(3, 2, "same"),
        )
        shortcut = Sequential(Conv2D(channels, filters, 1, stride=2, padding="same", bias=False, rng=rng),
                              BatchNorm(filters))
        net.append(Residual(main, shortcut))
        channels = filters
    net.append(Conv2D(channels, num_classes, 3, padding="same", bias=True, rng=rng))
    net.append(GlobalAvgPool())
    return net


# ---------------------------------------------------------------------------
# ResNet20 (2D, 3D, (2+1)D)


def _conv_factory(kind: str, rng) -> tuple[Callable, Callable]:
    if kind == "2d":
        def conv(cin, cout, stride):
            return Conv2D(cin, cout, 3, stride, "same", bias=False, rng=rng)

        def project(cin, cout, stride):
            return Conv2D(cin, cout, 1, stride, "same", bias=True, rng=rng)
    elif kind == "3d":
        def conv(cin, cout, stride):
            return Conv3D(cin, cout, 3, (1, stride, stride), "same", bias=False, rng=rng)

        def project(cin, cout, stride):
            return Conv3D(cin, cout, 1, (1, stride, stride), "same", bias=True, rng=rng)
    elif kind == "2plus1d":
        def conv(cin, cout, stride):
            return Conv2Plus1D(cin, cout, 3, 3, mid_channels=cout, stride=stride, rng=rng)

        def project(cin, cout, stride):
            return Conv3D(cin, cout, 1, (1, stride, stride), "same", bias=True, rng=rng)
    else:
        raise ValueError(f"unknown ResNet20 variant {kind!r}")
    return conv, project


def resnet20(in_channels: int, rng: np.random.Generator, kind: str = "2d",
             num_classes: int = NUM_CLASSES) -> Sequential:
    """Three stages of three basic blocks (16/32/64 filters); ReLU after each add."""
    conv, project = _conv_factory(kind, rng)
    net = Sequential(conv(in_channels, 16, 1), BatchNorm(16), ReLU())
    channels = 16
    for stage, filters in enumerate((16, 32, 64)):
        for block in range(3):
            stride = 2 if stage > 0 and block == 0 else 1
            main = Sequential(conv(channels, filters, stride), BatchNorm(filters), ReLU(),
                              conv(filters, filters, 1), BatchNorm(filters))
            shortcut = project(channels, filters, stride) if stride != 1 or channels != filters else None
            net.append(Residual(main, shortcut, ReLU()))
            channels = filters
    net.append(GlobalAvgPool())
    net.append(Dense(channels, num_classes, rng=rng))
    return net


# ---------------------------------------------------------------------------
# MobileNetV2

MOBILENETV2_BLOCKS = (
    # expansion, filters, repeats, first stride
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)


def _inverted_residual(cin, cout, stride, expansion, rng) -> Layer:
    hidden = cin * expansion
    main = Sequential()
    if expansion != 1:
        for layer in (Conv2D(cin, hidden, 1, bias=False, rng=rng), BatchNorm(hidden), ReLU6()):
            main.append(layer)
    for layer in (DepthwiseConv2D(hidden, 3, stride, "same", rng=rng), BatchNorm(hidden), ReLU6(),
                  Conv2D(hidden, cout, 1, bias=False, rng=rng), BatchNorm(cout)):
        main.append(layer)
    if stride == 1 and cin == cout:
        return Residual(main)
    return main


def mobilenetv2(in_channels: int, rng: np.random.Generator, num_classes: int = NUM_CLASSES,
                first_stride: int = 1) -> Sequential:
    """Width multiplier 1.0; the stem stride is 1 so 48x48 inputs end at 3x3."""
    net = Sequential(Conv2D(in_channels, 32, 3, first_stride, "same", bias=False, rng=rng), BatchNorm(32), ReLU6())
    channels = 32
    for expansion, filters, repeats, stride in MOBILENETV2_BLOCKS:
        for i in range(repeats):
            net.append(_inverted_residual(channels, filters, stride if i == 0 else 1, expansion, rng))
            channels = filters
    for layer in (Conv2D(channels, 1280, 1, bias=False, rng=rng), BatchNorm(1280), ReLU6(), GlobalAvgPool(),
                  Dense(1280, num_classes, rng=rng)):
        net.append(layer)
    return net


# ---------------------------------------------------------------------------


def build_network(arch_id: ArchId | str, rng: np.random.Generator | int = 0) -> Network:
    arch = ArchId(arch_id)
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng)
    in_channels = WINDOW if arch.is_timeconv else 1
    if arch in (ArchId.XCEPTION2D, ArchId.TIMECONV_XCEPTION):
        body = mini_xception(in_channels, rng)
    elif arch is ArchId.TIMECONV_RESNET20:
        body = resnet20(in_channels, rng, "2d")
    elif arch is ArchId.RESNET20_3D:
        body = resnet20(1, rng, "3d")
    elif arch is ArchId.RESNET20_2PLUS1D:
        body = resnet20(1, rng, "2plus1d")
    else:
        body = mobilenetv2(in_channels, rng)
    return Network(arch, body.astype(DTYPE))


def forward(net: Network, batch: np.ndarray) -> np.ndarray:
    """Eval-mode logits, shape (B, 7)."""
    return net.forward(batch, train=False)
