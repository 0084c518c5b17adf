"""Synthetic 5-frame clips whose classes differ only in temporal trajectory.

Three pairs of classes share a spatial template and an identical final-frame
distribution; within a pair only the intensity trajectory over the window
tells the classes apart (a rising onset versus a dip and return, for
example). The seventh class is a static pattern. A classifier that sees only
the last frame is therefore at chance inside every pair.
"""

from __future__ import annotations

import numpy as np

from .archive import EMOTIONS, DatasetArchive

# (class a, class b, template) -- each trajectory ends at full intensity
PAIRS = (
    ("angry", "disgust", "eyes"),
    ("fear", "happy", "mouth"),
    ("sad", "surprise", "ring"),
)
STATIC = ("neutral", "cross")

TRAJECTORIES = {
    "angry": (0.2, 0.4, 0.6, 0.8, 1.0),     # onset ramp
    "disgust": (1.0, 0.6, 0.2, 0.6, 1.0),   # dip and return
    "fear": (0.0, 0.0, 0.3, 0.7, 1.0),      # late onset
    "happy": (1.0, 1.0, 1.0, 1.0, 1.0),     # held peak
    "sad": (0.3, 0.3, 0.3, 1.0, 1.0),       # step
    "surprise": (1.0, 0.3, 0.3, 0.3, 1.0),  # offset then return
    "neutral": (1.0, 1.0, 1.0, 1.0, 1.0),
}


def _template(kind: str, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    s = size / 48.0

    def blob(cy, cx, sigma):
        return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * (sigma * s) ** 2))

    if kind == "eyes":
        img = blob(c - 6 * s, c - 9 * s, 4) + blob(c - 6 * s, c + 9 * s, 4)
    elif kind == "mouth":
        img = np.exp(-((yy - (c + 10 * s)) ** 2) / (2 * (3 * s) ** 2)) * (np.abs(xx - c) < 13 * s)
    elif kind == "ring":
        r = np.hypot(yy - c, xx - c)
        img = np.exp(-((r - 12 * s) ** 2) / (2 * (2.5 * s) ** 2))
    elif kind == "cross":
        img = (np.exp(-((yy - c) ** 2) / (2 * (2.5 * s) ** 2)) * (np.abs(xx - c) < 14 * s)
               + np.exp(-((xx - c) ** 2) / (2 * (2.5 * s) ** 2)) * (np.abs(yy - c) < 14 * s))
    else:
        raise ValueError(kind)
    return img / img.max()


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=key)))


def _render(template, trajectory, shifts, amps, bgs, noise, size):
    n = len(amps)
    clips = np.empty((n, len(trajectory), size, size), dtype=np.float64)
    traj = np.asarray(trajectory)
    for i in range(n):
        shifted = np.roll(template, shift=(int(shifts[i, 0]), int(shifts[i, 1])), axis=(0, 1))
        clips[i] = bgs[i] + 0.65 * amps[i] * traj[:, None, None] * shifted
    clips += noise
    return np.clip(clips, 0.0, 1.0).astype(np.float32)


def generate_synthetic(per_class: int, seed: int = 0, noise: float = 0.05, size: int = 48,
                       max_shift: int = 3) -> DatasetArchive:
    """``per_class`` clips for each of the seven classes, class-major order.

    Shift, amplitude and background draws come from a stream keyed by the
    pair, so both classes of a pair share them sample by sample; per-class
    noise comes from a separate stream. With ``noise=0`` the final frames of
    matched samples are identical across a pair.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    groups = [(names[:2], names[2]) for names in PAIRS] + [((STATIC[0],), STATIC[1])]
    stacks = np.empty((7 * per_class, 5, size, size), dtype=np.float32)
    labels = np.empty(7 * per_class, dtype=np.int64)
    provenance: list[tuple[str, int]] = [("", 0)] * (7 * per_class)
    for g, (classes, kind) in enumerate(groups):
        template = _template(kind, size)
        shared = _rng(seed, g)
        shifts = shared.integers(-max_shift, max_shift + 1, size=(per_class, 2))
        amps = shared.uniform(0.7, 1.0, size=per_class)
        bgs = shared.uniform(0.1, 0.25, size=per_class)
        for name in classes:
            k = EMOTIONS.index(name)
            noise_field = _rng(seed, 100 + k).normal(0.0, noise, size=(per_class, 5, size, size)) if noise > 0 else 0.0
            block = slice(k * per_class, (k + 1) * per_class)
            stacks[block] = _render(template, TRAJECTORIES[name], shifts, amps, bgs, noise_field, size)
            labels[block] = k
            for i in range(per_class):
                provenance[k * per_class + i] = (f"synthetic/{name}/{i}", 0)
    return DatasetArchive(stacks, labels, EMOTIONS, provenance)


def paired_classes() -> list[tuple[int, int]]:
    return [(EMOTIONS.index(a), EMOTIONS.index(b)) for a, b, _ in PAIRS]
