"""TCWT weight checkpoints.

The body holds a JSON manifest (arch id, ordered tensor names, kinds and
shapes) followed by every tensor as little-endian float32 in manifest order.
Running batch-norm statistics are stored alongside learnable parameters so
eval-mode outputs survive a round trip bit-exactly.
"""

from __future__ import annotations

import numpy as np

from . import container
from .architectures import ArchId, Network, build_network
from .container import ChecksumError, FormatError, TruncatedFileError  # noqa: F401  (re-exported)

MAGIC = b"TCWT"
VERSION = 1
_LE_F32 = np.dtype("<f4")


class ArchMismatchError(FormatError):
    """Checkpoint holds a different architecture than the caller asked for."""


def checkpoint_bytes(net: Network, extra: dict | None = None) -> bytes:
    entries, arrays = [], []
    for name, param, _ in net.named_parameters():
        entries.append({"name": name, "kind": "param", "shape": list(param.shape)})
        arrays.append(param.astype(_LE_F32))
    for name, buf in net.named_buffers():
        entries.append({"name": name, "kind": "buffer", "shape": list(buf.shape)})
        arrays.append(buf.astype(_LE_F32))
    meta = {"arch_id": net.arch_id.value, "dtype": "<f4", "tensors": entries, "extra": extra or {}}
    return container.pack(MAGIC, VERSION, container.pack_json_and_arrays(meta, arrays))


def save_checkpoint(net: Network, path, extra: dict | None = None) -> None:
    container.write_file(path, checkpoint_bytes(net, extra))


def parse_checkpoint(data: bytes, arch: ArchId | str | None = None) -> tuple[Network, dict]:
    _, body = container.unpack(data, MAGIC)
    meta, payload = container.split_json(body)
    try:
        stored = ArchId(meta["arch_id"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"unknown architecture in checkpoint: {meta.get('arch_id')!r}") from exc
    if arch is not None and ArchId(arch) != stored:
        raise ArchMismatchError(f"checkpoint holds {stored}, expected {ArchId(arch)}")
    net = build_network(stored, 0)
    expected = [(n, list(p.shape)) for n, p, _ in net.named_parameters()]
    expected += [(n, list(b.shape)) for n, b in net.named_buffers()]
    manifest = [(e["name"], e["shape"]) for e in meta["tensors"]]
    if manifest != expected:
        raise ArchMismatchError(f"tensor manifest does not match the {stored} builder")
    state, offset = {}, 0
    for name, shape in manifest:
        count = int(np.prod(shape)) if shape else 1
        chunk = payload[offset : offset + 4 * count]
        if len(chunk) != 4 * count:
            raise FormatError(f"payload too short for tensor {name}")
        state[name] = np.frombuffer(chunk, dtype=_LE_F32).reshape(shape)
        offset += 4 * count
    if offset != len(payload):
        raise FormatError("payload has trailing bytes")
    net.load_state(state)
    return net, meta.get("extra", {})


def load_checkpoint(path, arch: ArchId | str | None = None) -> Network:
    """Load a network; ``arch`` (optional) must match the stored architecture."""
    net, _ = parse_checkpoint(container.read_file(path), arch)
    return net


def load_checkpoint_with_meta(path, arch: ArchId | str | None = None) -> tuple[Network, dict]:
    return parse_checkpoint(container.read_file(path), arch)
