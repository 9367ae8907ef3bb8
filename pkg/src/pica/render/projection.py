"""EWA projection of 3D Gaussians to screen-space splats, with its adjoint."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..gaussians import GaussianGeometry
from .camera import Camera

NEAR = 0.01
LOWPASS = 0.3
MIN_ALPHA = 1.0 / 255.0


class Splat2D(NamedTuple):
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    source: int


@dataclass
class Splats:
    """A projected batch; arrays have leading axis N (culled entries flagged)."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray  # (N, 3): a, b, c of the inverse covariance
    depth: np.ndarray
    opacity: np.ndarray
    radius: np.ndarray
    valid: np.ndarray
    # kept for the backward pass
    cam_points: np.ndarray | None = None
    proj: np.ndarray | None = None  # J W_rot, (N, 2, 3)

    def __len__(self) -> int:
        return len(self.depth)

    @classmethod
    def from_2d(cls, mean2d, cov2d, depth, opacity) -> "Splats":
        mean2d = np.asarray(mean2d, dtype=np.float64).reshape(-1, 2)
        cov2d = np.asarray(cov2d, dtype=np.float64).reshape(-1, 2, 2)
        depth = np.asarray(depth, dtype=np.float64).ravel()
        opacity = np.asarray(opacity, dtype=np.float64).ravel()
        conic = conic_from_cov(cov2d)
        radius = splat_radius(cov2d, opacity)
        return cls(mean2d, cov2d, conic, depth, opacity, radius, np.isfinite(radius) & (radius > 0))


def conic_from_cov(cov2d: np.ndarray) -> np.ndarray:
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    return np.stack([c / det, -b / det, a / det], axis=1)


def splat_radius(cov2d: np.ndarray, opacity: np.ndarray) -> np.ndarray:
    """Pixel radius beyond which the weighted opacity is below 1/255.

    Returns -1 where the splat can never reach that threshold.
    """
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        k = 2.0 * np.log(np.maximum(opacity, 1e-300) / MIN_ALPHA)
    r = np.where(k >= 0, np.sqrt(np.maximum(k, 0.0) * lam) + 1.0, -1.0)
    return r


def project_gaussians(geom: GaussianGeometry, cam: Camera, opacity: np.ndarray,
                      lowpass: float = LOWPASS, near: float = NEAR) -> Splats:
    """``cov2d = J W cov W^T J^T + lowpass*I`` with the pinhole Jacobian at the mean."""
    wr, wt = cam.rotation, cam.translation
    tc = geom.mean @ wr.T + wt
    z = tc[:, 2]
    valid = z >= near
    zs = np.where(valid, z, 1.0)
    x, y = tc[:, 0], tc[:, 1]
    mean2d = np.stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy], axis=1)
    jac = np.zeros((len(z), 2, 3))
    jac[:, 0, 0] = cam.fx / zs
    jac[:, 0, 2] = -cam.fx * x / zs ** 2
    jac[:, 1, 1] = cam.fy / zs
    jac[:, 1, 2] = -cam.fy * y / zs ** 2
    t = jac @ wr
    cov2d = t @ geom.covariance @ t.transpose(0, 2, 1)
    cov2d[:, 0, 0] += lowpass
    cov2d[:, 1, 1] += lowpass
    opacity = np.asarray(opacity, dtype=np.float64)
    radius = splat_radius(cov2d, opacity)
    valid &= radius > 0
    return Splats(mean2d, cov2d, conic_from_cov(cov2d), z.copy(), opacity, radius, valid, tc, t)


def project(geom: GaussianGeometry, cam: Camera, index: int = 0,
            lowpass: float = LOWPASS, near: float = NEAR) -> Splat2D | None:
    """Project a single Gaussian; ``None`` when it lies in front of the near plane."""
    g = geom[index:index + 1]
    tc = g.mean @ cam.rotation.T + cam.translation
    if tc[0, 2] < near:
        return None
    s = project_gaussians(g, cam, np.ones(1), lowpass, near)
    return Splat2D(s.mean2d[0], s.cov2d[0], float(s.depth[0]), index)


def project_backward(splats: Splats, cam: Camera, geom: GaussianGeometry,
                     d_mean2d: np.ndarray, d_conic: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint of :func:`project_gaussians` for the mean and the 3D covariance.

    ``d_conic`` holds dL/d(a, b, c) where the exponent is
    ``-0.5 (a dx^2 + 2 b dx dy + c dy^2)``. Culled entries get zero gradient.
    """
    n = len(splats)
    q = np.empty((n, 2, 2))
    q[:, 0, 0], q[:, 0, 1], q[:, 1, 1] = splats.conic[:, 0], splats.conic[:, 1], splats.conic[:, 2]
    q[:, 1, 0] = q[:, 0, 1]
    gq = np.empty((n, 2, 2))
    gq[:, 0, 0] = d_conic[:, 0]
    gq[:, 1, 1] = d_conic[:, 2]
    gq[:, 0, 1] = gq[:, 1, 0] = 0.5 * d_conic[:, 1]
    g2 = -q @ gq @ q
    t = splats.proj
    d_cov = t.transpose(0, 2, 1) @ g2 @ t
    d_t = 2.0 * g2 @ t @ geom.covariance
    d_j = d_t @ cam.rotation.T

    tc = splats.cam_points
    x, y = tc[:, 0], tc[:, 1]
    z = np.where(splats.valid, tc[:, 2], 1.0)
    fx, fy = cam.fx, cam.fy
    d_tc = np.zeros((n, 3))
    d_tc[:, 0] = d_mean2d[:, 0] * fx / z - d_j[:, 0, 2] * fx / z ** 2
    d_tc[:, 1] = d_mean2d[:, 1] * fy / z - d_j[:, 1, 2] * fy / z ** 2
    d_tc[:, 2] = (
        -d_mean2d[:, 0] * fx * x / z ** 2 - d_mean2d[:, 1] * fy * y / z ** 2
        - d_j[:, 0, 0] * fx / z ** 2 + d_j[:, 0, 2] * 2 * fx * x / z ** 3
        - d_j[:, 1, 1] * fy / z ** 2 + d_j[:, 1, 2] * 2 * fy * y / z ** 3
    )
    d_mean = d_tc @ cam.rotation
    inv = ~splats.valid
    d_mean[inv] = 0.0
    d_cov[inv] = 0.0
    return d_mean, d_cov
