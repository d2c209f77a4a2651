"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DIINCKPT"                      magic, 8 bytes
    u32 version                      currently 1
    u32 tensor count
    per tensor:
        u16 name length, name (utf-8)
        u8 rank, u32 × rank dims
        float32 × prod(dims)         raw row-major values
    u32 state length, state bytes    UTF-8 JSON object (training state)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointError

MAGIC = b"DIINCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    state: dict = field(default_factory=dict)


def encode(tensors: Mapping[str, np.ndarray], state: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw_name = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    blob = json.dumps(state, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    return b"".join(parts)


def expected_size(shapes: Mapping[str, tuple[int, ...]], state_bytes: int) -> int:
    """File size implied by the layout for the given tensors and state length."""
    size = len(MAGIC) + 8
    for name, shape in shapes.items():
        size += 2 + len(name.encode("utf-8")) + 1 + 4 * len(shape) + 4 * int(np.prod(shape, dtype=np.int64))
    return size + 4 + state_bytes


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated at byte {self.pos} (needed {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes, path="<bytes>") -> Checkpoint:
    r = _Reader(buf, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
    (slen,) = r.unpack("<I")
    try:
        state = json.loads(r.take(slen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt state blob ({exc})") from None
    if r.pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - r.pos} trailing bytes after state blob")
    return Checkpoint(tensors, state)


def save_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray], state: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(tensors, state))
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path, expected: Mapping[str, tuple[int, ...]] | None = None) -> Checkpoint:
    """Read a checkpoint; with ``expected`` also check every named shape."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from None
    ckpt = decode(buf, path)
    if expected is not None:
        check_shapes(ckpt, expected, path)
    return ckpt


def check_shapes(ckpt: Checkpoint, expected: Mapping[str, tuple[int, ...]], path="<checkpoint>") -> None:
    for name, shape in expected.items():
        if name not in ckpt.tensors:
            raise CheckpointError(f"{path}: tensor {name} missing")
        got = ckpt.tensors[name].shape
        if tuple(got) != tuple(shape):
            raise CheckpointError(f"{path}: tensor {name} has shape {tuple(got)}, config expects {tuple(shape)}")
