"""Training protocol: splits, augmentation, Adam, stepped learning rate, evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy import ndimage

from .architectures import ArchId, Network, adapt_stacks, build_network
from .data.archive import DatasetArchive
from .layers import softmax_cross_entropy
from .tensor import NumericError, deterministic_mode

log = logging.getLogger(__name__)

DEFAULT_SCHEDULE = ((81, 1e-1), (121, 1e-2), (161, 1e-3), (181, 0.5e-3))


class TrainingDivergedError(NumericError):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    rotation_deg: float = 10.0
    shift_frac: float = 0.10
    zoom_frac: float = 0.10
    flip_prob: float = 0.5

    @classmethod
    def off(cls) -> "AugmentConfig":
        return cls(0.0, 0.0, 0.0, 0.0)

    @property
    def is_identity(self) -> bool:
        return not (self.rotation_deg or self.shift_frac or self.zoom_frac or self.flip_prob)


@dataclass(frozen=True)
class AdamHyper:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    schedule: tuple[tuple[int, float], ...] = DEFAULT_SCHEDULE
    adam: AdamHyper = AdamHyper()
    augment: AugmentConfig = AugmentConfig()
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if abs(sum(self.ratios) - 1.0) > 1e-9 or min(self.ratios) < 0:
            raise ValueError(f"split ratios must be non-negative and sum to 1, got {self.ratios}")


@dataclass
class MetricsRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


METRIC_FIELDS = ("epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc")


def write_metrics(path, records: Iterable[MetricsRecord]) -> None:
    lines = ["\t".join(METRIC_FIELDS)]
    for r in records:
        row = asdict(r)
        lines.append("\t".join(str(row["epoch"]) if k == "epoch" else repr(float(row[k])) for k in METRIC_FIELDS))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_metrics(path) -> list[MetricsRecord]:
    with open(path) as fh:
        header = fh.readline().strip().split("\t")
        return [MetricsRecord(**{k: (int(v) if k == "epoch" else float(v)) for k, v in zip(header, line.split("\t"))})
                for line in fh if line.strip()]


# ---------------------------------------------------------------------------


def split_dataset(archive: DatasetArchive | int, ratios=(0.7, 0.1, 0.2), seed: int = 0):
    """Seeded shuffle into train/val/test index arrays (floor, floor, remainder)."""
    n = archive if isinstance(archive, int) else len(archive)
    if n <= 0:
        raise ValueError("cannot split an empty dataset")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    order = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    return order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Piecewise-constant rate; each factor multiplies the initial rate."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    factor = 1.0
    for start, f in config.schedule:
        if epoch >= start:
            factor = f
    return config.lr * factor


# ---------------------------------------------------------------------------
# augmentation


def hflip(stack: np.ndarray) -> np.ndarray:
    return stack[..., ::-1].copy()


def sample_transform(rng: np.random.Generator, cfg: AugmentConfig) -> dict:
    return {
        "angle": float(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)),
        "tx": float(rng.uniform(-cfg.shift_frac, cfg.shift_frac)),
        "ty": float(rng.uniform(-cfg.shift_frac, cfg.shift_frac)),
        "zx": float(rng.uniform(1 - cfg.zoom_frac, 1 + cfg.zoom_frac)),
        "zy": float(rng.uniform(1 - cfg.zoom_frac, 1 + cfg.zoom_frac)),
        "flip": bool(rng.random() < cfg.flip_prob),
    }


def apply_transform(stack: np.ndarray, t: dict) -> np.ndarray:
    """Apply one geometric transform to every channel of a (t, H, W) stack."""
    h, w = stack.shape[-2:]
    out = stack
    if t["angle"] or t["tx"] or t["ty"] or t["zx"] != 1 or t["zy"] != 1:
        a = math.radians(t["angle"])
        rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
        matrix = rot @ np.diag([t["zy"], t["zx"]])
        center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
        offset = center - matrix @ center - np.array([t["ty"] * h, t["tx"] * w])
        out = np.stack([ndimage.affine_transform(ch, matrix, offset=offset, order=1, mode="nearest")
                        for ch in stack])
    if t["flip"]:
        out = out[..., ::-1]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def augment(stack: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    if cfg.is_identity:
        return stack
    return apply_transform(stack, sample_transform(rng, cfg))


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params, state: AdamState, lr: float, hyper: AdamHyper = AdamHyper()) -> AdamState:
    """Bias-corrected Adam, updating each parameter array in place.

    ``params`` yields ``(name, param, grad)`` triples.
    """
    params = list(params)
    for name, p, g in params:
        if p.shape != g.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
    state.step += 1
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for name, p, g in params:
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)).astype(p.dtype)
    return state


# ---------------------------------------------------------------------------
# training and evaluation


@dataclass
class TrainResult:
    network: Network
    metrics: list[MetricsRecord]
    best_epoch: int
    split: tuple[np.ndarray, np.ndarray, np.ndarray]


def _batches(n: int, size: int):
    for i in range(0, n, size):
        yield slice(i, min(n, i + size))


def predict_logits(net: Network, inputs: np.ndarray, batch_size: int = 64) -> np.ndarray:
    if len(inputs) == 0:
        return np.zeros((0, net.num_classes), dtype=np.float32)
    return np.concatenate([net.forward(inputs[s]) for s in _batches(len(inputs), batch_size)])


def _loss_acc(net, inputs, labels):
    if len(labels) == 0:
        return float("nan"), float("nan")
    logits = predict_logits(net, inputs)
    loss, _ = softmax_cross_entropy(logits.astype(np.float64), labels)
    return loss, float(np.mean(np.argmax(logits, axis=1) == labels))


def train(arch_id: ArchId | str, archive: DatasetArchive, config: TrainConfig = TrainConfig(),
          on_epoch: Callable[[MetricsRecord], None] | None = None) -> TrainResult:
    """Train one architecture; returns the best-validation weights and metrics."""
    arch = ArchId(arch_id)
    if archive.num_classes != 7:
        raise ValueError(f"expected a 7-class archive, got {archive.num_classes} classes")
    init_seq, order_seq, aug_seq = np.random.SeedSequence(config.seed).spawn(3)
    with deterministic_mode():
        net = build_network(arch, np.random.Generator(np.random.PCG64(init_seq)))
        order_rng = np.random.Generator(np.random.PCG64(order_seq))
        aug_rng = np.random.Generator(np.random.PCG64(aug_seq))
        train_idx, val_idx, test_idx = split_dataset(archive, config.ratios, config.seed)
        stacks, labels = archive.stacks, archive.labels
        val_x = adapt_stacks(arch, stacks[val_idx])
        val_y = labels[val_idx]
        state = AdamState()
        metrics: list[MetricsRecord] = []
        best = (-1.0, math.inf)
        best_state, best_epoch = net.snapshot(), -1
        for epoch in range(config.epochs):
            lr = lr_at_epoch(config, epoch)
            perm = train_idx[order_rng.permutation(len(train_idx))]
            total_loss, correct = 0.0, 0
            for b, sl in enumerate(_batches(len(perm), config.batch_size)):
                idx = perm[sl]
                batch = stacks[idx]
                if not config.augment.is_identity:
                    batch = np.stack([augment(s, aug_rng, config.augment) for s in batch])
                y = labels[idx]
                logits = net.forward(adapt_stacks(arch, batch), train=True)
                loss, grad = softmax_cross_entropy(logits, y)
                if not math.isfinite(loss):
                    raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {b}")
                net.backward(grad.astype(logits.dtype))
                adam_step(net.named_parameters(), state, lr, config.adam)
                total_loss += loss * len(idx)
                correct += int(np.sum(np.argmax(logits, axis=1) == y))
            n_train = max(1, len(perm))
            val_loss, val_acc = _loss_acc(net, val_x, val_y)
            record = MetricsRecord(epoch, lr, total_loss / n_train, correct / n_train, val_loss, val_acc)
            metrics.append(record)
            if on_epoch is not None:
                on_epoch(record)
            log.debug("epoch %d: %s", epoch, record)
            if len(val_y) == 0:
                best_state, best_epoch = net.snapshot(), epoch
            elif (val_acc, -val_loss) > (best[0], -best[1]):
                best = (val_acc, val_loss)
                best_state, best_epoch = net.snapshot(), epoch
        net.load_state(best_state)
    return TrainResult(net, metrics, best_epoch, (train_idx, val_idx, test_idx))


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # rows: true class, columns: predicted class
    label_names: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "labels": list(self.label_names),
            "support": self.confusion.sum(axis=1).tolist(),
        }


def confusion_matrix(labels, predictions, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels, dtype=np.int64), np.asarray(predictions, dtype=np.int64)), 1)
    return cm


def score_predictions(labels, predictions, label_names) -> EvalResult:
    labels = np.asarray(labels)
    cm = confusion_matrix(labels, predictions, len(label_names))
    acc = float(np.trace(cm) / cm.sum()) if cm.sum() else float("nan")
    return EvalResult(acc, cm, tuple(label_names))


def evaluate(net: Network, archive: DatasetArchive, indices=None) -> EvalResult:
    """Top-1 accuracy and confusion matrix over ``indices`` (all samples if None)."""
    if archive.num_classes != net.num_classes:
        raise ValueError(f"archive has {archive.num_classes} classes, network predicts {net.num_classes}")
    idx = np.arange(len(archive)) if indices is None else np.asarray(indices, dtype=np.int64)
    with deterministic_mode():
        logits = predict_logits(net, adapt_stacks(net.arch_id, archive.stacks[idx]))
    return score_predictions(archive.labels[idx], np.argmax(logits, axis=1), archive.label_names)


def split_indices(archive: DatasetArchive, split: str, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> np.ndarray:
    parts = dict(zip(("train", "val", "test"), split_dataset(archive, ratios, seed)))
    if split == "all":
        return np.arange(len(archive))
    if split not in parts:
        raise ValueError(f"unknown split {split!r}")
    return parts[split]


def overfit_batch(arch_id: ArchId | str, stacks: np.ndarray, labels, steps: int = 200, lr: float = 1e-3,
                  seed: int = 0, hyper: AdamHyper = AdamHyper()) -> list[float]:
    """Repeatedly fit one fixed batch; returns the train-mode loss before each step.

    A sanity check for the whole forward/backward/optimiser chain.
    """
    arch = ArchId(arch_id)
    labels = np.asarray(labels)
    losses = []
    with deterministic_mode():
        net = build_network(arch, seed)
        x = adapt_stacks(arch, np.asarray(stacks, dtype=np.float32))
        state = AdamState()
        for step in range(steps):
            logits = net.forward(x, train=True)
            loss, grad = softmax_cross_entropy(logits, labels)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at step {step}")
            losses.append(loss)
            net.backward(grad.astype(logits.dtype))
            adam_step(net.named_parameters(), state, lr, hyper)
    return losses
