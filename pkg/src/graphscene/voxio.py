"""Binary voxel format (VXS1) and dataset manifest I/O.

VXS1 layout: magic ``VXS1``, little-endian u16 H, W, D, u8 class count, then
H*W*D class-index bytes in C row-major order over (H, W, D) — the vertical
axis varies fastest. BEV maps reuse the same container with D=1.

A dataset directory holds ``scenes/``, ``graphs/``, ``maps/`` plus a
``manifest.jsonl`` with one record per sample: relative file paths, the
generation seed, road type, and requested counts. A CarlaSC-style reader
would slot in by emitting the same manifest.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

MAGIC = b"VXS1"
_HEADER = struct.Struct("<HHH")


class VoxFormatError(ValueError):
    pass


def write_vxs(path: str | Path, grid: np.ndarray, num_classes: int) -> None:
    Path(path).write_bytes(vxs_bytes(grid, num_classes))


def vxs_bytes(grid: np.ndarray, num_classes: int) -> bytes:
    if grid.ndim == 2:
        grid = grid[:, :, None]
    if grid.ndim != 3:
        raise VoxFormatError(f"expected a 2D or 3D grid, got shape {grid.shape}")
    h, w, d = grid.shape
    if grid.min() < 0 or grid.max() >= num_classes:
        raise VoxFormatError("grid values outside [0, num_classes)")
    payload = np.ascontiguousarray(grid, dtype=np.uint8).tobytes()
    return MAGIC + _HEADER.pack(h, w, d) + bytes([num_classes]) + payload


def read_vxs(data: bytes | str | Path) -> tuple[np.ndarray, int]:
    """Parse VXS1 bytes (or a file path) into (grid, num_classes)."""
    if isinstance(data, (str, Path)):
        data = Path(data).read_bytes()
    if data[:4] != MAGIC:
        raise VoxFormatError("bad magic; not a VXS1 payload")
    if len(data) < 4 + _HEADER.size + 1:
        raise VoxFormatError("truncated header")
    h, w, d = _HEADER.unpack_from(data, 4)
    c = data[4 + _HEADER.size]
    body = data[4 + _HEADER.size + 1:]
    if len(body) != h * w * d:
        raise VoxFormatError(f"payload size {len(body)} != {h}*{w}*{d}")
    grid = np.frombuffer(body, dtype=np.uint8).reshape(h, w, d).copy()
    if grid.max(initial=0) >= c:
        raise VoxFormatError("voxel value outside declared class range")
    return grid, int(c)


def write_manifest(path: str | Path, records: list[dict]) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> Iterator[dict]:
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)
