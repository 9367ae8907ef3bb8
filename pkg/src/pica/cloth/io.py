"""Trajectory files: one OBJ per frame or a single binary blob."""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from ..mesh import TriMesh, save_obj

MAGIC = b"PICATRJ1"
HEADER = struct.Struct("<8sII")  # magic, frames, vertices -> 16 bytes


def write_trajectory(path: str | os.PathLike, frames) -> None:
    """Little-endian float32 ``frames x vertices x 3`` after a 16-byte header."""
    a = np.asarray(frames, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError("trajectory must have shape (T, V, 3)")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, a.shape[0], a.shape[1]))
        fh.write(a.astype("<f4").tobytes())


def read_trajectory(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size)
        if len(head) != HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, t, v = HEADER.unpack(head)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a trajectory file")
        data = fh.read()
    if len(data) != t * v * 12:
        raise ValueError(f"{path}: expected {t * v * 12} data bytes, got {len(data)}")
    return np.frombuffer(data, dtype="<f4").reshape(t, v, 3).astype(np.float64)


def write_obj_sequence(directory: str | os.PathLike, mesh: TriMesh, frames, stem: str = "frame") -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, p in enumerate(frames):
        path = d / f"{stem}_{t:04d}.obj"
        save_obj(path, mesh, p)
        paths.append(path)
    return paths
