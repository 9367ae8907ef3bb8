"""Per-Gaussian color: base RGB + linear view-direction basis + pose correction.

The view direction is expressed in the Gaussian's own frame (``R^T d``),
so the directional term follows the surface when the mesh moves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..gaussians import FEATURE_DIM, N_BASIS, GaussianGeometry
from .camera import Camera


def view_basis(dprime: np.ndarray) -> np.ndarray:
    dprime = np.atleast_2d(dprime)
    return np.column_stack([np.ones(len(dprime)), dprime])


def canonical_view_dirs(geom: GaussianGeometry, cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Unit camera-to-Gaussian directions in each Gaussian's frame.

    Returns ``(dprime, u)`` where ``u`` is the unnormalized world direction.
    """
    u = geom.mean - cam.center
    n = np.linalg.norm(u, axis=1)
    bad = np.flatnonzero(n == 0)
    if len(bad):
        raise ValueError(f"Gaussian {bad[0]} sits at the camera center")
    d = u / n[:, None]
    return np.einsum("nji,nj->ni", geom.rotation, d), u


def canonical_view_dir(geom: GaussianGeometry, cam: Camera, index: int = 0) -> np.ndarray:
    return canonical_view_dirs(geom[index:index + 1], cam)[0][0]


@dataclass
class ColorModel:
    base: np.ndarray  # (N, 3)
    coeffs: np.ndarray  # (N, 4, 3)
    pose_matrix: np.ndarray | None = None  # (N, 3, D)

    def __len__(self) -> int:
        return len(self.base)

    @classmethod
    def from_features(cls, features: np.ndarray, pose_matrix: np.ndarray | None = None) -> "ColorModel":
        f = np.asarray(features, dtype=np.float64).reshape(-1, FEATURE_DIM)
        return cls(f[:, :3], f[:, 3:].reshape(-1, N_BASIS, 3), pose_matrix)

    def raw(self, dprime: np.ndarray, pose_descriptor: np.ndarray | None = None) -> np.ndarray:
        out = self.base + np.einsum("nk,nkc->nc", view_basis(dprime), self.coeffs)
        if self.pose_matrix is not None and pose_descriptor is not None:
            out = out + self.pose_matrix @ np.asarray(pose_descriptor, dtype=np.float64)
        return out

    def shade_all(self, dprime: np.ndarray, pose_descriptor: np.ndarray | None = None) -> np.ndarray:
        return np.clip(self.raw(dprime, pose_descriptor), 0.0, 1.0)

    def backward(self, dprime: np.ndarray, pose_descriptor: np.ndarray | None, raw: np.ndarray,
                 d_rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
        """Gradients w.r.t. (flat features, pose matrix, dprime)."""
        d_raw = np.where((raw > 0.0) & (raw < 1.0), d_rgb, 0.0)
        basis = view_basis(dprime)
        d_feat = np.empty((len(raw), FEATURE_DIM))
        d_feat[:, :3] = d_raw
        d_feat[:, 3:] = (basis[:, :, None] * d_raw[:, None, :]).reshape(len(raw), -1)
        d_pose = None
        if self.pose_matrix is not None and pose_descriptor is not None:
            d_pose = d_raw[:, :, None] * np.asarray(pose_descriptor)[None, None, :]
        d_dprime = np.einsum("nkc,nc->nk", self.coeffs[:, 1:, :], d_raw)
        return d_feat, d_pose, d_dprime


def shade(model: ColorModel, index: int, dprime: np.ndarray,
          pose_descriptor: np.ndarray | None = None) -> np.ndarray:
    if not 0 <= index < len(model):
        raise IndexError(f"color model has no Gaussian {index}")
    sub = ColorModel(model.base[index:index + 1], model.coeffs[index:index + 1],
                     None if model.pose_matrix is None else model.pose_matrix[index:index + 1])
    return sub.shade_all(np.atleast_2d(dprime), pose_descriptor)[0]
