"""Hierarchical simulation graph over clothing and body vertices.

Clothing nodes are linked by mesh edges and by coarse long-range edges;
clothing-to-body edges join each clothing node to its nearest body vertex
when that vertex lies within a distance threshold and are rebuilt from
current positions every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..mesh import EdgeSet, Hinges, TriMesh, coarsen, nearest_vertex, vertex_normals
from .params import PhysicalParams

DEFAULT_LEVELS = 3
DEFAULT_THRESHOLD = 0.03


def voronoi_areas(positions: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Mixed Voronoi area per vertex; sums to the total surface area.

    Non-obtuse triangles split by circumcentric Voronoi regions, obtuse
    ones give half their area to the obtuse corner and a quarter to each
    other corner.
    """
    p = np.asarray(positions, dtype=np.float64)
    f = np.asarray(faces)
    out = np.zeros(len(p))
    if len(f) == 0:
        return out
    tri = p[f]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    contrib = np.zeros((len(f), 3))
    cots = np.zeros((len(f), 3))
    dots = np.zeros((len(f), 3))
    for k in range(3):
        a, b, c = tri[:, k], tri[:, (k + 1) % 3], tri[:, (k + 2) % 3]
        u, v = b - a, c - a
        dots[:, k] = np.sum(u * v, axis=1)
        cots[:, k] = dots[:, k] / np.linalg.norm(np.cross(u, v), axis=1)
    obtuse = dots < 0
    for k in range(3):
        # Voronoi share of corner k from the two edges that meet there
        b, c = (k + 1) % 3, (k + 2) % 3
        e_kb = np.sum((tri[:, b] - tri[:, k]) ** 2, axis=1)
        e_kc = np.sum((tri[:, c] - tri[:, k]) ** 2, axis=1)
        contrib[:, k] = (e_kb * cots[:, c] + e_kc * cots[:, b]) / 8.0
    any_obt = obtuse.any(axis=1)
    contrib[any_obt] = np.where(obtuse[any_obt], area[any_obt, None] / 2, area[any_obt, None] / 4)
    for k in range(3):
        np.add.at(out, f[:, k], contrib[:, k])
    return out


def dihedral_angles(positions: np.ndarray, hinges: Hinges) -> np.ndarray:
    """Signed dihedral angle of every hinge; 0 for a flat pair, positive when folded along the normal."""
    x = np.asarray(positions, dtype=np.float64)
    x3, x4 = x[hinges.edge[:, 0]], x[hinges.edge[:, 1]]
    x1, x2 = x[hinges.wing_a], x[hinges.wing_b]
    n1 = np.cross(x1 - x3, x1 - x4)
    n2 = np.cross(x2 - x4, x2 - x3)
    e = x4 - x3
    el = np.linalg.norm(e, axis=1)
    n1 /= np.linalg.norm(n1, axis=1)[:, None]
    n2 /= np.linalg.norm(n2, axis=1)[:, None]
    sin = np.sum(np.cross(n1, n2) * e, axis=1) / el
    cos = np.sum(n1 * n2, axis=1)
    return np.arctan2(sin, cos)


def hinge_weights(positions: np.ndarray, mesh: TriMesh) -> np.ndarray:
    """Rest weights |e|^2 / (A1 + A2) of the dihedral energy."""
    x = np.asarray(positions, dtype=np.float64)
    hg = mesh.hinges
    if len(hg) == 0:
        return np.zeros(0)
    e2 = np.sum((x[hg.edge[:, 1]] - x[hg.edge[:, 0]]) ** 2, axis=1)
    tri = x[mesh.faces]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    return e2 / (area[hg.face_a] + area[hg.face_b])


def nearest_body_edges(clothing_positions: np.ndarray, body_positions: np.ndarray,
                       threshold: float) -> np.ndarray:
    """(K, 2) pairs ``(clothing node, nearest body vertex)`` with distance <= threshold."""
    if len(body_positions) == 0 or len(clothing_positions) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    j, d = nearest_vertex(clothing_positions, body_positions)
    keep = np.flatnonzero(d <= threshold)
    return np.stack([keep, j[keep]], axis=1).astype(np.int64)


@dataclass
class HierarchicalGraph:
    """Topology, rest state and current features of one simulation.

    Static parts: clothing mesh edges with rest lengths, coarse edge sets
    with rest lengths, hinges with rest angles and weights, per-node area
    (mass = density x area) and the pinned mask. Dynamic parts: positions,
    velocities and normals of clothing and body nodes, and the
    clothing-to-body edges derived from them.
    """

    clothing: TriMesh
    body: TriMesh
    threshold: float
    clothing_edges: np.ndarray
    clothing_rest: np.ndarray
    coarse: list[EdgeSet]
    coarse_rest: list[np.ndarray]
    rest_angles: np.ndarray
    hinge_weight: np.ndarray
    areas: np.ndarray
    pinned: np.ndarray
    clothing_positions: np.ndarray
    clothing_velocities: np.ndarray
    body_positions: np.ndarray
    body_velocities: np.ndarray
    body_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    clothing_normals: np.ndarray | None = None
    body_normals: np.ndarray | None = None
    rho: PhysicalParams | None = None

    @property
    def n_clothing(self) -> int:
        return len(self.clothing_positions)

    @property
    def n_body(self) -> int:
        return len(self.body_positions)

    @property
    def spring_edges(self) -> np.ndarray:
        """Clothing and coarse edges stacked, matching :attr:`spring_rest`."""
        return np.concatenate([self.clothing_edges, *(es.edges for es in self.coarse)]).reshape(-1, 2)

    @property
    def spring_rest(self) -> np.ndarray:
        return np.concatenate([self.clothing_rest, *self.coarse_rest])

    def node_features(self, rho: PhysicalParams | None = None) -> np.ndarray:
        """Per node (clothing then body): position, velocity, normal, rho; shape (N, 13)."""
        rho = rho or self.rho or PhysicalParams()
        pos = np.concatenate([self.clothing_positions, self.body_positions])
        vel = np.concatenate([self.clothing_velocities, self.body_velocities])
        nrm = np.concatenate([self.clothing_normals, self.body_normals])
        return np.column_stack([pos, vel, nrm, np.tile(rho.as_array(), (len(pos), 1))])

    def edge_features(self, kind: str = "clothing") -> np.ndarray:
        """Relative endpoint position and rest length, shape (E, 4).

        ``kind`` is ``clothing``, ``coarse`` (all levels stacked) or
        ``body``; body edges carry the activation threshold as rest length.
        """
        x = self.clothing_positions
        if kind == "clothing":
            e, rest = self.clothing_edges, self.clothing_rest
            rel = x[e[:, 1]] - x[e[:, 0]]
        elif kind == "coarse":
            e = np.concatenate([es.edges for es in self.coarse]).reshape(-1, 2) if self.coarse else np.zeros((0, 2), int)
            rest = np.concatenate(self.coarse_rest) if self.coarse_rest else np.zeros(0)
            rel = x[e[:, 1]] - x[e[:, 0]]
        elif kind == "body":
            e = self.body_edges
            rel = self.body_positions[e[:, 1]] - x[e[:, 0]]
            rest = np.full(len(e), self.threshold)
        else:
            raise ValueError(f"unknown edge kind {kind!r}")
        return np.column_stack([rel, rest])

    def with_state(self, clothing_positions: np.ndarray, clothing_velocities: np.ndarray,
                   body_positions: np.ndarray | None = None,
                   body_velocities: np.ndarray | None = None) -> "HierarchicalGraph":
        """New graph with refreshed node features and rebuilt body edges."""
        bp = self.body_positions if body_positions is None else np.asarray(body_positions, dtype=np.float64)
        bv = np.zeros_like(bp) if body_velocities is None else np.asarray(body_velocities, dtype=np.float64)
        g = replace(self, clothing_positions=np.asarray(clothing_positions, dtype=np.float64),
                    clothing_velocities=np.asarray(clothing_velocities, dtype=np.float64),
                    body_positions=bp, body_velocities=bv)
        return update_body_edges(g, g.clothing_positions, g.body_positions, g.threshold)


def _rest_lengths(x: np.ndarray, e: np.ndarray, what: str) -> np.ndarray:
    rest = np.linalg.norm(x[e[:, 1]] - x[e[:, 0]], axis=1) if len(e) else np.zeros(0)
    if np.any(rest <= 0):
        raise ValueError(f"{what} edge with zero rest length")
    return rest


def build_graph(clothing: TriMesh, body: TriMesh, levels: int = DEFAULT_LEVELS,
                threshold: float = DEFAULT_THRESHOLD, rho: PhysicalParams | None = None, *,
                clothing_positions: np.ndarray | None = None, body_positions: np.ndarray | None = None,
                rest_positions: np.ndarray | None = None, pinned=None,
                areas: np.ndarray | None = None) -> HierarchicalGraph:
    """Assemble the hierarchical graph.

    Rest lengths, rest angles and Voronoi areas come from ``rest_positions``
    (default: the clothing mesh's canonical vertices); the current state
    defaults to the meshes' vertices at rest. ``levels`` may be 0 to skip
    coarse edges. ``areas`` overrides the per-node Voronoi areas.
    """
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    if levels < 0:
        raise ValueError("levels must be >= 0")
    rest = clothing.vertices if rest_positions is None else np.asarray(rest_positions, dtype=np.float64)
    if rest.shape != clothing.vertices.shape:
        raise ValueError("rest positions do not match the clothing mesh")
    cp = rest.copy() if clothing_positions is None else np.asarray(clothing_positions, dtype=np.float64)
    bp = body.vertices.copy() if body_positions is None else np.asarray(body_positions, dtype=np.float64)
    edges = clothing.edges
    coarse = coarsen(clothing, levels) if levels > 0 and len(edges) else []
    pin = np.zeros(clothing.n_vertices, dtype=bool)
    if pinned is not None:
        pin[np.asarray(pinned, dtype=np.int64)] = True
    a = voronoi_areas(rest, clothing.faces) if areas is None else np.asarray(areas, dtype=np.float64)
    if a.shape != (clothing.n_vertices,):
        raise ValueError("areas must have one entry per clothing vertex")
    g = HierarchicalGraph(
        clothing=clothing, body=body, threshold=float(threshold),
        clothing_edges=edges, clothing_rest=_rest_lengths(rest, edges, "clothing"),
        coarse=coarse, coarse_rest=[_rest_lengths(rest, es.edges, "coarse") for es in coarse],
        rest_angles=dihedral_angles(rest, clothing.hinges) if len(clothing.hinges) else np.zeros(0),
        hinge_weight=hinge_weights(rest, clothing),
        areas=a, pinned=pin,
        clothing_positions=cp, clothing_velocities=np.zeros_like(cp),
        body_positions=bp, body_velocities=np.zeros_like(bp), rho=rho,
    )
    return update_body_edges(g, cp, bp, threshold)


def update_body_edges(graph: HierarchicalGraph, clothing_positions: np.ndarray,
                      body_positions: np.ndarray, threshold: float | None = None) -> HierarchicalGraph:
    """Rebuild clothing-to-body edges and normals from current positions."""
    cp = np.asarray(clothing_positions, dtype=np.float64)
    bp = np.asarray(body_positions, dtype=np.float64)
    if cp.shape != graph.clothing_positions.shape or bp.shape != graph.body_positions.shape:
        raise ValueError("positions do not match the graph's node counts")
    thr = graph.threshold if threshold is None else float(threshold)
    return replace(
        graph, threshold=thr, clothing_positions=cp, body_positions=bp,
        body_edges=nearest_body_edges(cp, bp, thr),
        clothing_normals=vertex_normals(cp, graph.clothing.faces),
        body_normals=vertex_normals(bp, graph.body.faces) if graph.body.n_faces else np.zeros_like(bp),
    )
