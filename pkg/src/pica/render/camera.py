"""Pinhole cameras (OpenCV convention: x right, y down, z forward)."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: np.ndarray

    def __post_init__(self):
        w = np.array(self.world_to_camera, dtype=np.float64).reshape(4, 4)
        object.__setattr__(self, "world_to_camera", w)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("resolution must be positive")
        r = w[:3, :3]
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(r) - 1) > 1e-6:
            raise ValueError("world_to_camera must be a rigid transform")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def transformed(self, world_transform: np.ndarray) -> "Camera":
        """Camera seeing ``world_transform``-moved points as this one sees the originals."""
        w = self.world_to_camera @ np.linalg.inv(world_transform)
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, w)

    def scaled(self, width: int, height: int) -> "Camera":
        sx, sy = width / self.width, height / self.height
        return Camera(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height,
                      self.world_to_camera)


def look_at(eye, target, up=(0.0, 0.0, 1.0), *, width: int = 256, height: int = 256,
            fov_deg: float = 40.0) -> Camera:
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, (1.0, 0.0, 0.0))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd])
    w = np.eye(4)
    w[:3, :3] = r
    w[:3, 3] = -r @ eye
    f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
    return Camera(f, f, width / 2, height / 2, width, height, w)


def read_camera(path: str | os.PathLike) -> Camera:
    """``fx fy cx cy w h`` on the first line, then a 4x4 row-major transform."""
    with open(path, "r", encoding="ascii") as fh:
        nums = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if len(nums) != 5 or len(nums[0]) != 6 or any(len(r) != 4 for r in nums[1:]):
        raise ValueError(f"{path}: expected an intrinsics line and four transform rows")
    fx, fy, cx, cy = (float(x) for x in nums[0][:4])
    w, h = int(nums[0][4]), int(nums[0][5])
    return Camera(fx, fy, cx, cy, w, h, np.array(nums[1:], dtype=np.float64))


def write_camera(path: str | os.PathLike, cam: Camera) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{float(cam.fx)!r} {float(cam.fy)!r} {float(cam.cx)!r} {float(cam.cy)!r} {cam.width} {cam.height}\n")
        for row in cam.world_to_camera:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")
