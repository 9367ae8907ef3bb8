"""Reconstruction losses with analytic gradients.

Every loss function returns its value together with the gradient of that
value; weights passed in are applied to both.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .gaussians import OPACITY_EPS
from .mesh import TriMesh, face_cross, laplacian_matrix, nearest_vertex, vertex_normals
from .render.images import ssim

BCE_CLAMP = 1e-6

TERMS = ("color_mse", "mask", "seg", "opac", "laplacian", "normal", "collision", "distance", "offset_smooth")
METRICS = ("ssim_metric",)


@dataclass
class LossWeights:
    """Weights of the training objective.

    ``ssim`` and ``lpips`` exist for config compatibility only: SSIM is
    reported as a metric and never enters the objective, and a perceptual
    term is not available, so ``lpips`` must stay 0.
    """

    color: float = 1.0
    mask: float = 1.0
    ssim: float = 0.0
    lpips: float = 0.0
    seg: float = 0.1
    opac: float = 1e-3
    collision: float = 1e5
    laplacian: float = 1.0
    normal: float = 0.01
    distance: float = 1.0
    offset_smooth: float = 1.0
    collision_eps: float = 0.005

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be >= 0")
        if self.collision_eps <= 0:
            raise ValueError("collision_eps must be > 0")
        if self.lpips != 0:
            raise ValueError("lpips weight must be 0: perceptual loss is not implemented")

    def for_term(self, term: str) -> float:
        return {
            "color_mse": self.color, "mask": self.mask, "seg": self.seg, "opac": self.opac,
            "laplacian": self.laplacian, "normal": self.normal, "collision": self.collision,
            "distance": self.distance, "offset_smooth": self.offset_smooth,
        }[term]


@dataclass
class LossReport:
    """Unweighted term values plus the weights that combine them."""

    terms: dict[str, float] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)
    metrics: dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(sum(self.weights[k] * v for k, v in self.terms.items()))

    def merge(self, other: "LossReport", scale: float = 1.0) -> "LossReport":
        for k, v in other.terms.items():
            self.terms[k] = self.terms.get(k, 0.0) + scale * v
            self.weights[k] = other.weights[k]
        for k, v in other.metrics.items():
            self.metrics[k] = self.metrics.get(k, 0.0) + scale * v
        return self

    def row(self) -> dict[str, float]:
        out = {k: self.terms.get(k, 0.0) for k in TERMS}
        out.update({k: self.metrics.get(k, 0.0) for k in METRICS})
        out["total"] = self.total
        return out


# ---------------------------------------------------------------- appearance


def bce(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy with the prediction clamped to [1e-6, 1-1e-6]."""
    p = np.clip(pred, BCE_CLAMP, 1 - BCE_CLAMP)
    val = -np.mean(target * np.log(p) + (1 - target) * np.log(1 - p))
    inside = (pred > BCE_CLAMP) & (pred < 1 - BCE_CLAMP)
    grad = np.where(inside, (p - target) / (p * (1 - p)), 0.0) / pred.size
    return float(val), grad


def appearance_losses(color: np.ndarray, mask: np.ndarray, label: np.ndarray,
                      gt_color: np.ndarray, gt_mask: np.ndarray, gt_seg: np.ndarray,
                      weights: LossWeights, with_ssim: bool = True) -> tuple[LossReport, dict[str, np.ndarray]]:
    """Color/mask MSE and segmentation BCE; gradients are of the weighted sum."""
    if color.shape != gt_color.shape or mask.shape != gt_mask.shape or label.shape != gt_seg.shape:
        raise ValueError("rendered and ground-truth buffers differ in size")
    dc = color - gt_color
    dm = mask - gt_mask
    seg, g_seg = bce(label, gt_seg)
    rep = LossReport(
        {"color_mse": float(np.mean(dc * dc)), "mask": float(np.mean(dm * dm)), "seg": seg},
        {"color_mse": weights.color, "mask": weights.mask, "seg": weights.seg},
    )
    if with_ssim:
        rep.metrics["ssim_metric"] = ssim(color, gt_color)
    grads = {
        "color": weights.color * 2.0 * dc / dc.size,
        "mask": weights.mask * 2.0 * dm / dm.size,
        "label": weights.seg * g_seg,
    }
    return rep, grads


def opacity_loss(opacities: np.ndarray, lam: float = 1.0) -> tuple[float, np.ndarray]:
    o = np.asarray(opacities, dtype=np.float64)
    if np.any(o < OPACITY_EPS) or np.any(o > 1 - OPACITY_EPS):
        raise ValueError("opacity_loss: opacities must be clamped to [eps, 1-eps] first")
    val = lam * np.mean(np.log(o) + np.log1p(-o))
    grad = lam * (1.0 / o - 1.0 / (1.0 - o)) / len(o)
    return float(val), grad


# ---------------------------------------------------------------- geometry


def collision_loss(clothing_positions: np.ndarray, body: TriMesh, body_positions: np.ndarray,
                   eps: float, lam: float = 1.0) -> tuple[float, np.ndarray, np.ndarray]:
    """Cubic hinge keeping clothing at least ``eps`` outside the body.

    The nearest body vertex and its area-weighted normal are frozen for the
    gradient. Returns ``(value, grad_clothing, grad_body)``.
    """
    if len(body_positions) == 0:
        raise ValueError("collision_loss: empty body mesh")
    x = np.asarray(clothing_positions, dtype=np.float64)
    j, _ = nearest_vertex(x, body_positions)
    nrm = vertex_normals(body_positions, body.faces)[j]
    margin = np.sum((x - body_positions[j]) * nrm, axis=1)
    h = np.maximum(eps - margin, 0.0)
    n = len(x)
    val = lam * np.sum(h ** 3) / n
    coef = (-3.0 * lam / n) * h * h
    g_cloth = coef[:, None] * nrm
    g_body = np.zeros_like(body_positions, dtype=np.float64)
    np.add.at(g_body, j, -g_cloth)
    return float(val), g_cloth, g_body


def collision_margins(clothing_positions: np.ndarray, body: TriMesh, body_positions: np.ndarray) -> np.ndarray:
    j, _ = nearest_vertex(clothing_positions, body_positions)
    nrm = vertex_normals(body_positions, body.faces)[j]
    return np.sum((clothing_positions - body_positions[j]) * nrm, axis=1)


def laplacian_loss(mesh: TriMesh, positions: np.ndarray) -> tuple[float, np.ndarray]:
    lap = laplacian_matrix(mesh)
    d = lap @ positions
    n = len(positions)
    return float(np.sum(d * d) / n), (2.0 / n) * (lap.T @ d)


def normal_consistency_loss(mesh: TriMesh, positions: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of ``1 - cos`` between normals of faces sharing an edge."""
    hg = mesh.hinges
    grad = np.zeros_like(positions, dtype=np.float64)
    if len(hg) == 0:
        return 0.0, grad
    c = face_cross(positions, mesh.faces)
    ln = np.linalg.norm(c, axis=1)
    nrm = c / ln[:, None]
    na, nb = nrm[hg.face_a], nrm[hg.face_b]
    m = len(hg)
    val = float(np.mean(1.0 - np.sum(na * nb, axis=1)))
    g_n = np.zeros_like(nrm)
    np.add.at(g_n, hg.face_a, -nb / m)
    np.add.at(g_n, hg.face_b, -na / m)
    # through n = c/|c|
    g_c = (g_n - nrm * np.sum(nrm * g_n, axis=1)[:, None]) / ln[:, None]
    p = positions[mesh.faces]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    g1 = np.cross(e2, g_c)
    g2 = np.cross(g_c, e1)
    np.add.at(grad, mesh.faces[:, 1], g1)
    np.add.at(grad, mesh.faces[:, 2], g2)
    np.add.at(grad, mesh.faces[:, 0], -(g1 + g2))
    return val, grad


def distance_loss(positions: np.ndarray, initial: np.ndarray) -> tuple[float, np.ndarray]:
    d = positions - initial
    n = len(positions)
    return float(np.sum(d * d) / n), 2.0 * d / n


def offset_smoothness(offsets: list[np.ndarray]) -> tuple[float, list[np.ndarray]]:
    """Mean squared change of per-vertex offsets between consecutive frames."""
    grads = [np.zeros_like(o) for o in offsets]
    if len(offsets) < 2:
        return 0.0, grads
    n = (len(offsets) - 1) * len(offsets[0])
    val = 0.0
    for t in range(1, len(offsets)):
        d = offsets[t] - offsets[t - 1]
        val += float(np.sum(d * d))
        grads[t] += 2 * d / n
        grads[t - 1] -= 2 * d / n
    return val / n, grads


def geometry_losses(meshes: list[TriMesh], positions: list[np.ndarray], body_index: int,
                    body_initial: np.ndarray, weights: LossWeights) -> tuple[LossReport, list[np.ndarray]]:
    """Laplacian and normal terms summed over meshes; distance on the body only.

    Returns the unweighted report and the gradient of the weighted sum for
    every mesh's positions.
    """
    lap_total, nrm_total = 0.0, 0.0
    grads = []
    for k, (mesh, p) in enumerate(zip(meshes, positions)):
        lv, lg = laplacian_loss(mesh, p)
        nv, ng = normal_consistency_loss(mesh, p)
        lap_total += lv
        nrm_total += nv
        g = weights.laplacian * lg + weights.normal * ng
        if k == body_index:
            dv, dg = distance_loss(p, body_initial)
            g = g + weights.distance * dg
        grads.append(g)
    dist = distance_loss(positions[body_index], body_initial)[0]
    rep = LossReport(
        {"laplacian": lap_total, "normal": nrm_total, "distance": dist},
        {"laplacian": weights.laplacian, "normal": weights.normal, "distance": weights.distance},
    )
    return rep, grads
