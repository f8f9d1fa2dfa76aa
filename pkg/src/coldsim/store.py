"""Binary persistence for embedding tables.

File layout: a 16-byte header (magic ``CEMB``, uint32 version, uint32 rows,
uint32 dim, all little-endian) followed by ``rows * dim`` float32 values in
row-major order.  A TSV exporter is provided for eyeballing tables.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CEMB"
VERSION = 1

_HEADER = struct.Struct("<4sIII")


def save_table(path: str | Path, values: np.ndarray) -> None:
    """Write a 2-D array to ``path`` in the binary table format."""
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D table, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def load_table(path: str | Path) -> np.ndarray:
    """Read a binary table; returns a float32 array of shape (rows, dim)."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, rows, dim = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        payload = fh.read(rows * dim * 4)
    if len(payload) != rows * dim * 4:
        raise ValueError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, dim).copy()


def export_tsv(path: str | Path, values: np.ndarray) -> None:
    """Debug export: one row per line, ``id<TAB>v0 v1 ...``."""
    arr = np.asarray(values, dtype=np.float32)
    with open(path, "w", encoding="utf-8") as fh:
        for idx, row in enumerate(arr):
            fh.write(f"{idx}\t" + " ".join(f"{float(v):.8g}" for v in row) + "\n")
