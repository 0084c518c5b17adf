"""Inference latency benchmarking and a streaming ring-buffer simulator."""

from __future__ import annotations

import json
import platform
import queue
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .architectures import Network, adapt_stacks
from .data.pipeline import WindowSpec, preprocess_frame
from .tensor import make_rng, single_threaded

# Face detection is not part of the simulated pipeline; reports name it as excluded.
EXCLUDED_STAGE = "face detection (not simulated)"


def hardware_descriptor() -> str:
    import os

    return (f"{platform.machine()} {platform.processor() or 'cpu'}; {os.cpu_count()} logical cpus; "
            f"python {platform.python_version()}; numpy {np.__version__}; single-threaded BLAS")


def latency_stats(latencies_ms) -> dict[str, float]:
    lat = np.asarray(latencies_ms, dtype=np.float64)
    if lat.size == 0:
        raise ValueError("no latency samples")
    return {
        "mean_ms": float(np.mean(lat)),
        "median_ms": float(np.median(lat)),
        "p95_ms": float(np.percentile(lat, 95)),
        "p99_ms": float(np.percentile(lat, 99)),
    }


@dataclass
class BenchReport:
    arch_id: str
    runs: int
    warmup: int
    latencies_ms: list[float]
    mean_ms: float
    median_ms: float
    p95_ms: float
    p99_ms: float
    hardware: str = ""

    @classmethod
    def from_latencies(cls, arch_id: str, latencies_ms, warmup: int, hardware: str = "") -> "BenchReport":
        lat = [float(v) for v in latencies_ms]
        if not lat:
            raise ValueError("runs must be > 0")
        return cls(str(arch_id), len(lat), warmup, lat, hardware=hardware, **latency_stats(lat))

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def bench_inference(net: Network, runs: int = 1000, warmup: int = 50, seed: int = 0,
                    timer: Callable[[], float] = time.perf_counter) -> BenchReport:
    """Batch-1 eval-mode latency; warmup runs are excluded from the statistics."""
    if runs < 1:
        raise ValueError("runs must be > 0")
    x = make_rng(seed).random((1, *net.input_shape), dtype=np.float32)
    latencies = []
    with single_threaded():
        for _ in range(warmup):
            net.forward(x)
        for _ in range(runs):
            start = timer()
            net.forward(x)
            latencies.append((timer() - start) * 1000.0)
    return BenchReport.from_latencies(net.arch_id.value, latencies, warmup, hardware_descriptor())


# ---------------------------------------------------------------------------
# streaming


class StreamError(RuntimeError):
    pass


@dataclass
class StreamReport:
    arch_id: str
    frames: int
    window: int
    predictions: list[tuple[int, int]]  # (frame index, predicted class)
    preprocess_ms: list[float]  # one entry per frame
    inference_ms: list[float]  # one entry per prediction
    latency_ms: list[float]  # preprocess + inference for frames that emitted a prediction
    wall_s: float
    fps: float
    budget_ms: float | None = None
    over_budget: int = 0
    excluded: str = EXCLUDED_STAGE
    stacks: list[np.ndarray] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("stacks")
        out["summary"] = {
            "preprocess": latency_stats(self.preprocess_ms),
            "inference": latency_stats(self.inference_ms) if self.inference_ms else None,
            "end_to_end": latency_stats(self.latency_ms) if self.latency_ms else None,
        }
        return out

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def threaded_source(frames: Iterable[np.ndarray], maxsize: int = 8) -> Iterator[np.ndarray]:
    """Feed frames from a producer thread through a bounded queue."""
    q: queue.Queue = queue.Queue(maxsize)
    done = object()

    def produce():
        for f in frames:
            q.put(f)
        q.put(done)

    threading.Thread(target=produce, daemon=True).start()
    while (item := q.get()) is not done:
        yield item


def stream_simulate(frame_source: Iterable[np.ndarray], net: Network, window: WindowSpec = WindowSpec(),
                    fps_target: float | None = 25.0, box=None, record_stacks: bool = False,
                    timer: Callable[[], float] = time.perf_counter, warmup: bool = True) -> StreamReport:
    """Run a live-style loop: preprocess each frame, keep the last t in a ring buffer,
    predict whenever the buffer is full (respecting the window's skip and stride).

    Timing covers the consumer only; ``box`` is a fixed face box (whole frame if None).
    With ``warmup`` one untimed forward pass runs first so kernel compilation is not counted.
    """
    if warmup:
        net.forward(np.zeros((1, *net.input_shape), dtype=np.float32))
    ring: deque[np.ndarray] = deque(maxlen=window.width)
    predictions, pre_ms, inf_ms, lat_ms, stacks = [], [], [], [], []
    budget = 1000.0 / fps_target if fps_target else None
    over = 0
    n = 0
    with single_threaded():
        start = timer()
        for idx, frame in enumerate(frame_source):
            t0 = timer()
            processed = preprocess_frame(frame, box)
            t1 = timer()
            pre_ms.append((t1 - t0) * 1000.0)
            ring.append(processed)
            n = idx + 1
            first = window.skip_head + window.width - 1
            if idx < first or (idx - first) % window.stride:
                continue
            stack = np.stack(ring)
            if record_stacks:
                stacks.append(stack)
            logits = net.forward(adapt_stacks(net.arch_id, stack[None]))
            t2 = timer()
            predictions.append((idx, int(np.argmax(logits[0]))))
            inf_ms.append((t2 - t1) * 1000.0)
            lat_ms.append((t2 - t0) * 1000.0)
            if budget is not None and lat_ms[-1] > budget:
                over += 1
        wall = timer() - start
    if n < window.skip_head + window.width:
        raise StreamError(f"source yielded {n} frames, fewer than the {window.skip_head + window.width} needed")
    return StreamReport(net.arch_id.value, n, window.width, predictions, pre_ms, inf_ms, lat_ms, wall,
                        n / wall if wall > 0 else float("inf"), budget, over, EXCLUDED_STAGE, stacks)
