"""TCVX dataset archives: sub-sequence stacks, labels and provenance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import container
from ..container import FormatError

MAGIC = b"TCVX"
VERSION = 1

EMOTIONS = ("angry", "disgust", "fear", "happy", "sad", "surprise", "neutral")

# Per-class sample counts of the published aggregate dataset.
BIGFACEX_COUNTS = {
    "angry": 8951,
    "disgust": 8823,
    "fear": 6069,
    "happy": 12832,
    "sad": 13870,
    "surprise": 6197,
    "neutral": 11621,
}
BIGFACEX_TOTAL = 68_363


@dataclass
class SubSequenceStack:
    pixels: np.ndarray  # (t, H, W) float32 in [0, 1]
    label: int
    clip_id: str = ""
    start: int = 0


@dataclass
class DatasetArchive:
    stacks: np.ndarray  # (N, t, H, W) float32
    labels: np.ndarray  # (N,) int
    label_names: tuple[str, ...] = EMOTIONS
    provenance: list[tuple[str, int]] = field(default_factory=list)

    def __post_init__(self):
        self.stacks = np.ascontiguousarray(self.stacks, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.stacks.ndim != 4:
            raise ValueError(f"stacks must be (N, t, H, W), got {self.stacks.shape}")
        if self.labels.shape != (len(self.stacks),):
            raise ValueError("one label per stack required")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.label_names)):
            raise ValueError("label index outside the label map")
        if not self.provenance:
            self.provenance = [("", 0)] * len(self.stacks)
        self.label_names = tuple(self.label_names)

    def __len__(self):
        return len(self.labels)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.stacks.shape[1:])

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    def class_counts(self) -> list[int]:
        return np.bincount(self.labels, minlength=self.num_classes).tolist()

    def subset(self, indices) -> "DatasetArchive":
        indices = np.asarray(indices, dtype=np.int64)
        return DatasetArchive(self.stacks[indices], self.labels[indices], self.label_names,
                              [self.provenance[i] for i in indices])

    def stats(self) -> dict:
        counts = self.class_counts()
        return {"total": len(self), "per_class": dict(zip(self.label_names, counts))}

    def to_bytes(self) -> bytes:
        meta = {
            "count": len(self),
            "dims": list(self.dims),
            "labels": list(self.label_names),
            "class_counts": self.class_counts(),
            "provenance": [[c, int(s)] for c, s in self.provenance],
        }
        arrays = [self.labels.astype("<u1"), self.stacks.astype("<f4")]
        return container.pack(MAGIC, VERSION, container.pack_json_and_arrays(meta, arrays))

    @classmethod
    def from_bytes(cls, data: bytes) -> "DatasetArchive":
        _, body = container.unpack(data, MAGIC)
        meta, payload = container.split_json(body)
        n = int(meta["count"])
        t, h, w = (int(d) for d in meta["dims"])
        need = n + 4 * n * t * h * w
        if len(payload) != need:
            raise FormatError(f"payload is {len(payload)} bytes, expected {need}")
        labels = np.frombuffer(payload[:n], dtype="<u1").astype(np.int64)
        stacks = np.frombuffer(payload[n:], dtype="<f4").reshape(n, t, h, w).astype(np.float32)
        archive = cls(stacks, labels, tuple(meta["labels"]), [(c, s) for c, s in meta["provenance"]])
        if archive.class_counts() != list(meta["class_counts"]) or sum(meta["class_counts"]) != n:
            raise FormatError("per-class counts disagree with the labels")
        return archive

    def save(self, path) -> None:
        container.write_file(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "DatasetArchive":
        return cls.from_bytes(container.read_file(path))


def table_total(counts: dict[str, int] = BIGFACEX_COUNTS) -> int:
    return sum(counts.values())
