"""Acceleration predictors.

Any callable ``predictor(graph, rho) -> (n_clothing, 3)`` accelerations can
drive the integrator. :class:`AnalyticPredictor` is the default: gravity
plus mass-spring stretch, dihedral bending, edge dashpots and a penalty
contact with regularized Coulomb friction against body vertices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from ..mesh import Hinges
from .graph import HierarchicalGraph, dihedral_angles
from .params import PhysicalParams

# 9.81 rounded to single precision: every multiple by a power-of-two time
# step stays exact in float64, so free fall reproduces its closed form.
GRAVITY = float(np.float32(9.81))
CONTACT_MARGIN = 0.005


class AccelerationPredictor(Protocol):
    def __call__(self, graph: HierarchicalGraph, rho: PhysicalParams) -> np.ndarray: ...


def stretch_forces(x: np.ndarray, edges: np.ndarray, rest: np.ndarray, k: float) -> np.ndarray:
    """Hooke springs: each endpoint pulled toward the other with ``k * (len - rest)``."""
    f = np.zeros_like(x)
    if len(edges) == 0:
        return f
    d = x[edges[:, 1]] - x[edges[:, 0]]
    ln = np.linalg.norm(d, axis=1)
    fe = (k * (ln - rest) / ln)[:, None] * d
    np.add.at(f, edges[:, 0], fe)
    np.add.at(f, edges[:, 1], -fe)
    return f


def dashpot_forces(x: np.ndarray, v: np.ndarray, edges: np.ndarray, c: float) -> np.ndarray:
    """Damping of the relative velocity along each edge direction."""
    f = np.zeros_like(x)
    if len(edges) == 0 or c == 0:
        return f
    d = x[edges[:, 1]] - x[edges[:, 0]]
    u = d / np.linalg.norm(d, axis=1)[:, None]
    rel = np.sum((v[edges[:, 1]] - v[edges[:, 0]]) * u, axis=1)
    fe = (c * rel)[:, None] * u
    np.add.at(f, edges[:, 0], fe)
    np.add.at(f, edges[:, 1], -fe)
    return f


def dihedral_gradients(x: np.ndarray, hinges: Hinges) -> np.ndarray:
    """d theta / d (wing_a, wing_b, edge0, edge1), shape (H, 4, 3)."""
    x3, x4 = x[hinges.edge[:, 0]], x[hinges.edge[:, 1]]
    x1, x2 = x[hinges.wing_a], x[hinges.wing_b]
    e = x4 - x3
    el = np.linalg.norm(e, axis=1)
    n1 = np.cross(x1 - x3, x1 - x4)
    n2 = np.cross(x2 - x4, x2 - x3)
    q1 = n1 / np.sum(n1 * n1, axis=1)[:, None]
    q2 = n2 / np.sum(n2 * n2, axis=1)[:, None]
    eh = e / el[:, None]
    u1 = el[:, None] * q1
    u2 = el[:, None] * q2
    u3 = np.sum((x1 - x4) * eh, axis=1)[:, None] * q1 + np.sum((x2 - x4) * eh, axis=1)[:, None] * q2
    u4 = -np.sum((x1 - x3) * eh, axis=1)[:, None] * q1 - np.sum((x2 - x3) * eh, axis=1)[:, None] * q2
    return -np.stack([u1, u2, u3, u4], axis=1)


def bending_energy(x: np.ndarray, hinges: Hinges, rest: np.ndarray, weight: np.ndarray, kb: float) -> float:
    if len(hinges) == 0:
        return 0.0
    d = dihedral_angles(x, hinges) - rest
    return float(kb * np.sum(weight * d * d))


def bending_forces(x: np.ndarray, hinges: Hinges, rest: np.ndarray, weight: np.ndarray, kb: float) -> np.ndarray:
    """Negative gradient of ``kb * sum w (theta - theta0)^2``."""
    f = np.zeros_like(x)
    if len(hinges) == 0:
        return f
    d = dihedral_angles(x, hinges) - rest
    # keep the deviation continuous across the +-pi wrap
    d = (d + np.pi) % (2 * np.pi) - np.pi
    grad = dihedral_gradients(x, hinges)
    coef = -2.0 * kb * weight * d
    idx = (hinges.wing_a, hinges.wing_b, hinges.edge[:, 0], hinges.edge[:, 1])
    for k, ids in enumerate(idx):
        np.add.at(f, ids, coef[:, None] * grad[:, k])
    return f


def contact_forces(graph: HierarchicalGraph, rho: PhysicalParams, margin: float, stiffness: float,
                   v_reg: float) -> np.ndarray:
    """Penalty along the body normal inside ``margin`` plus regularized friction."""
    f = np.zeros_like(graph.clothing_positions)
    e = graph.body_edges
    if len(e) == 0:
        return f
    i, j = e[:, 0], e[:, 1]
    n = graph.body_normals[j]
    depth = margin - np.sum((graph.clothing_positions[i] - graph.body_positions[j]) * n, axis=1)
    act = depth > 0
    if not act.any():
        return f
    i, j, n, depth = i[act], j[act], n[act], depth[act]
    fn = stiffness * depth
    vrel = graph.clothing_velocities[i] - graph.body_velocities[j]
    vt = vrel - np.sum(vrel * n, axis=1)[:, None] * n
    speed = np.linalg.norm(vt, axis=1)
    ft = -(rho.friction_coeff * fn / np.maximum(speed, v_reg))[:, None] * vt
    np.add.at(f, i, fn[:, None] * n + ft)
    return f


@dataclass(frozen=True)
class AnalyticPredictor:
    """Default force model; accelerations are ``g + F / m`` per clothing node.

    Edge dashpots use a coefficient ``damping_time * stretch_stiffness``, so
    damping scales with the material. ``drag`` (1/s) is a mass-proportional
    air resistance; edge dashpots alone leave swinging modes undamped.
    Nodes with zero mass fall freely.
    """

    gravity: float = GRAVITY
    contact_margin: float = CONTACT_MARGIN
    contact_stiffness: float = 10.0
    friction_velocity: float = 0.1
    damping_time: float = 0.01
    drag: float = 3.0
    use_gravity: bool = True
    use_contact: bool = True

    def masses(self, graph: HierarchicalGraph, rho: PhysicalParams) -> np.ndarray:
        return rho.mass_density * graph.areas

    def forces(self, graph: HierarchicalGraph, rho: PhysicalParams) -> dict[str, np.ndarray]:
        """Per-node force contributions (N) by kind."""
        x, v = graph.clothing_positions, graph.clothing_velocities
        for name, arr in (("position", x), ("velocity", v)):
            bad = np.flatnonzero(~np.all(np.isfinite(arr), axis=1))
            if len(bad):
                raise FloatingPointError(f"non-finite {name} feature at clothing node {int(bad[0])}")
        if len(graph.body_positions):
            bad = np.flatnonzero(~np.all(np.isfinite(graph.body_positions), axis=1))
            if len(bad):
                raise FloatingPointError(f"non-finite position feature at body node {int(bad[0])}")
        springs, rest = graph.spring_edges, graph.spring_rest
        out = {
            "stretch": stretch_forces(x, springs, rest, rho.stretch_stiffness),
            "bend": bending_forces(x, graph.clothing.hinges, graph.rest_angles, graph.hinge_weight,
                                   rho.bending_coeff),
            "damping": dashpot_forces(x, v, springs, self.damping_time * rho.stretch_stiffness),
            "drag": (-self.drag * self.masses(graph, rho))[:, None] * v,
        }
        out["contact"] = (contact_forces(graph, rho, self.contact_margin, self.contact_stiffness,
                                         self.friction_velocity)
                          if self.use_contact else np.zeros_like(x))
        return out

    def stable_dt(self, graph: HierarchicalGraph, rho: PhysicalParams, safety: float = 0.8) -> float:
        """Largest step keeping semi-implicit Euler stable at the current state.

        Per node, Gershgorin row sums bound the mass-scaled stiffness K and
        damping C of springs, dashpots, bending and contact; the step solves
        ``h^2 K + 2 h C = 4 safety``. Massless and pinned nodes are ignored.
        """
        n = graph.n_clothing
        m = self.masses(graph, rho)
        e = graph.spring_edges
        deg = np.bincount(e.ravel(), minlength=n).astype(np.float64)
        k = 2.0 * rho.stretch_stiffness * deg
        c = 2.0 * self.damping_time * rho.stretch_stiffness * deg
        hinges = graph.clothing.hinges
        if len(hinges):
            u = np.linalg.norm(dihedral_gradients(graph.clothing_positions, hinges), axis=2)
            row = 2.0 * rho.bending_coeff * graph.hinge_weight[:, None] * u * u.sum(axis=1, keepdims=True)
            for j, ids in enumerate((hinges.wing_a, hinges.wing_b, hinges.edge[:, 0], hinges.edge[:, 1])):
                np.add.at(k, ids, row[:, j])
        if self.use_contact:
            k += self.contact_stiffness
            c += rho.friction_coeff * self.contact_stiffness * self.contact_margin / self.friction_velocity
        free = (m > 0) & ~graph.pinned
        if not free.any():
            return float("inf")
        kk, cc = k[free] / m[free], c[free] / m[free] + self.drag
        h = np.where(kk > 0, (-cc + np.sqrt(cc * cc + 4.0 * safety * kk)) / np.where(kk > 0, kk, 1.0),
                     np.where(cc > 0, 2.0 * safety / np.where(cc > 0, cc, 1.0), np.inf))
        return float(h.min())

    def __call__(self, graph: HierarchicalGraph, rho: PhysicalParams) -> np.ndarray:
        f = sum(self.forces(graph, rho).values())
        m = self.masses(graph, rho)
        g = np.array([0.0, 0.0, -self.gravity if self.use_gravity else 0.0])
        a = np.broadcast_to(g, f.shape).copy()
        ok = m > 0
        a[ok] += f[ok] / m[ok, None]
        return a
