"""Clip-to-archive pipeline: windowing, face-box cropping, resizing, stacking.

Manifest schema (JSON)::

    {
      "clips": [
        {
          "id": "S005_001",
          "frames": "frames/S005_001",        # image directory or .npy (T, H, W)
          "label": "happy",
          "profile": "ck_like",               # ck_like | baum_like | enterface_like | custom
          "boxes": "whole-frame",             # or [x, y, w, h] or one box per frame
          "stride": 1, "skip_head": 0         # optional, override the profile
        }
      ]
    }

Relative frame paths are resolved against the manifest's directory.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .archive import EMOTIONS, DatasetArchive, SubSequenceStack

log = logging.getLogger(__name__)

OUTPUT_SIZE = 48
BOX_EXTENSION = 0.10
WHOLE_FRAME = "whole-frame"
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".pgm", ".tif", ".tiff"}

# Labels present in the source corpora but deliberately left out.
EXCLUDED_LABELS = {"contempt", "unsure", "concentrating", "bored", "boredom"}


class ManifestError(ValueError):
    pass


class FrameReadError(IOError):
    pass


@dataclass(frozen=True)
class WindowSpec:
    width: int = 5
    stride: int = 1
    skip_head: int = 0

    def __post_init__(self):
        if self.width < 1 or self.stride < 1 or self.skip_head < 0:
            raise ValueError(f"invalid window spec {self}")


PROFILES = {
    "ck_like": WindowSpec(5, 1, 0),
    "baum_like": WindowSpec(5, 2, 5),
    "enterface_like": WindowSpec(5, 2, 5),
    "custom": WindowSpec(5, 1, 0),
}


def extract_windows(n_frames: int, spec: WindowSpec) -> list[int]:
    """Start indices of every full window after the skipped head."""
    starts = list(range(spec.skip_head, n_frames - spec.width + 1, spec.stride))
    if not starts:
        log.info("clip of %d frames yields no %d-frame window (skip_head=%d)", n_frames, spec.width,
                 spec.skip_head)
    return starts


def window_count(n_frames: int, spec: WindowSpec) -> int:
    return max(0, (n_frames - spec.skip_head - spec.width) // spec.stride + 1)


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def extend_box(box, frac: float, frame_w: int, frame_h: int) -> tuple[int, int, int, int]:
    """Grow an (x, y, w, h) box by ``frac`` of its size on every side, clipped to the frame."""
    if frac < 0:
        raise ValueError("extension fraction must be non-negative")
    x, y, w, h = box
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate box {tuple(box)}")
    left = max(0, _round_half_up(x - frac * w))
    top = max(0, _round_half_up(y - frac * h))
    right = min(frame_w, _round_half_up(x + w + frac * w))
    bottom = min(frame_h, _round_half_up(y + h + frac * h))
    if right <= left or bottom <= top:
        raise ValueError(f"box {tuple(box)} lies outside the {frame_w}x{frame_h} frame")
    return left, top, right - left, bottom - top


def center_box(frame_w: int, frame_h: int, frac: float = 0.6) -> tuple[int, int, int, int]:
    """Trivial face-box provider for synthetic clips: a centred square."""
    side = max(1, int(round(min(frame_w, frame_h) * frac)))
    return (frame_w - side) // 2, (frame_h - side) // 2, side, side


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres; sample positions clamped at the borders
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    r0, r1, fr = _axis_weights(image.shape[0], out_h)
    c0, c1, fc = _axis_weights(image.shape[1], out_w)
    rows = image[r0] * (1 - fr)[:, None] + image[r1] * fr[:, None]
    return rows[:, c0] * (1 - fc) + rows[:, c1] * fc


def preprocess_frame(frame: np.ndarray, box=None, size: int = OUTPUT_SIZE) -> np.ndarray:
    """Crop to ``box`` (whole frame if None), resize to size×size, scale to [0, 1]."""
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise FrameReadError(f"expected a grayscale frame, got shape {frame.shape}")
    if box is not None:
        x, y, w, h = box
        if x < 0 or y < 0 or w <= 0 or h <= 0 or x + w > frame.shape[1] or y + h > frame.shape[0]:
            raise ValueError(f"box {tuple(box)} outside frame of shape {frame.shape}")
        frame = frame[y : y + h, x : x + w]
    out = bilinear_resize(frame, size, size) / 255.0
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def stack_window(frames: Sequence[np.ndarray], label: int, clip_id: str = "", start: int = 0,
                 width: int = 5) -> SubSequenceStack:
    """Merge ``width`` preprocessed frames along the channel axis, earliest first."""
    if len(frames) != width:
        raise ValueError(f"expected {width} frames, got {len(frames)}")
    return SubSequenceStack(np.stack([np.asarray(f, dtype=np.float32) for f in frames]), int(label), clip_id, start)


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ClipManifestEntry:
    clip_id: str
    frames: object  # path or (T, H, W) array
    label: str
    profile: str = "ck_like"
    boxes: object = WHOLE_FRAME
    stride: int | None = None
    skip_head: int | None = None
    extra: dict = field(default_factory=dict)

    def window_spec(self, overrides: dict | None = None) -> WindowSpec:
        spec = PROFILES[self.profile]
        if self.stride is not None:
            spec = replace(spec, stride=self.stride)
        if self.skip_head is not None:
            spec = replace(spec, skip_head=self.skip_head)
        if overrides:
            spec = replace(spec, **overrides)
        return spec


def validate_entry(entry: ClipManifestEntry) -> int:
    """Return the label index or raise with the offending entry's id."""
    label = str(entry.label).lower()
    if label in EXCLUDED_LABELS:
        raise ManifestError(f"clip {entry.clip_id!r}: label {entry.label!r} is excluded from the 7-class set")
    if label not in EMOTIONS:
        raise ManifestError(f"clip {entry.clip_id!r}: unknown label {entry.label!r}")
    if entry.profile not in PROFILES:
        raise ManifestError(f"clip {entry.clip_id!r}: unknown profile {entry.profile!r}")
    return EMOTIONS.index(label)


def load_manifest(path) -> list[ClipManifestEntry]:
    path = Path(path)
    doc = json.loads(path.read_text())
    clips = doc["clips"] if isinstance(doc, dict) else doc
    entries = []
    for i, item in enumerate(clips):
        try:
            frames = item["frames"]
            if isinstance(frames, str) and not Path(frames).is_absolute():
                frames = str(path.parent / frames)
            entries.append(ClipManifestEntry(
                clip_id=str(item.get("id", i)),
                frames=frames,
                label=item["label"],
                profile=item.get("profile", "ck_like"),
                boxes=item.get("boxes", WHOLE_FRAME),
                stride=item.get("stride"),
                skip_head=item.get("skip_head"),
            ))
        except KeyError as exc:
            raise ManifestError(f"manifest entry {i} lacks field {exc}") from exc
    return entries


def load_frames(source, clip_id: str = "") -> np.ndarray:
    """Frames as a (T, H, W) array from an array, a .npy file or an image directory."""
    if isinstance(source, np.ndarray):
        frames = source
    else:
        p = Path(source)
        try:
            if p.is_dir():
                from PIL import Image

                files = sorted(f for f in p.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES)
                frames = np.stack([np.asarray(Image.open(f).convert("L")) for f in files]) if files else np.zeros((0, 1, 1))
            else:
                frames = np.load(p)
        except Exception as exc:
            raise FrameReadError(f"clip {clip_id!r}: cannot read frames from {p}: {exc}") from exc
    if frames.ndim != 3:
        raise FrameReadError(f"clip {clip_id!r}: frames must be (T, H, W), got {frames.shape}")
    return frames


def _frame_boxes(entry: ClipManifestEntry, frames: np.ndarray, extension: float):
    n, fh, fw = frames.shape
    boxes = entry.boxes
    if boxes is None or boxes == WHOLE_FRAME:
        log.info("clip %s: using whole-frame boxes", entry.clip_id)
        return [None] * n
    boxes = np.asarray(boxes)
    if boxes.shape == (4,):
        boxes = np.repeat(boxes[None], n, axis=0)
    if boxes.shape != (n, 4):
        raise ManifestError(f"clip {entry.clip_id!r}: expected {n} boxes, got shape {boxes.shape}")
    return [extend_box(tuple(int(v) for v in b), extension, fw, fh) for b in boxes]


def process_clip(entry: ClipManifestEntry, overrides: dict | None = None,
                 extension: float = BOX_EXTENSION, size: int = OUTPUT_SIZE) -> list[SubSequenceStack]:
    label = validate_entry(entry)
    spec = entry.window_spec(overrides)
    frames = load_frames(entry.frames, entry.clip_id)
    starts = extract_windows(len(frames), spec)
    if not starts:
        return []
    boxes = _frame_boxes(entry, frames, extension)
    needed = sorted({s + k for s in starts for k in range(spec.width)})
    cache = {i: preprocess_frame(frames[i], boxes[i], size) for i in needed}
    return [stack_window([cache[s + k] for k in range(spec.width)], label, entry.clip_id, s, spec.width)
            for s in starts]


def build_archive(manifest: Sequence[ClipManifestEntry], out_path=None, overrides: dict | None = None,
                  workers: int = 1) -> tuple[DatasetArchive, dict]:
    """Process every clip and assemble an archive in manifest/window order.

    Clips may be processed by several threads; assembly order never depends
    on ``workers``, so the written bytes are identical for any worker count.
    """
    for entry in manifest:
        validate_entry(entry)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            per_clip = list(pool.map(lambda e: process_clip(e, overrides), manifest))
    else:
        per_clip = [process_clip(e, overrides) for e in manifest]
    stacks = [s for clip in per_clip for s in clip]
    if not stacks:
        raise ManifestError("manifest produced no samples")
    archive = DatasetArchive(
        np.stack([s.pixels for s in stacks]),
        np.array([s.label for s in stacks]),
        EMOTIONS,
        [(s.clip_id, s.start) for s in stacks],
    )
    if out_path is not None:
        archive.save(out_path)
    stats = archive.stats()
    stats["clips"] = len(manifest)
    stats["clips_without_windows"] = sum(1 for c in per_clip if not c)
    return archive, stats
