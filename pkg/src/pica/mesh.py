"""Indexed triangle meshes and the differential/graph operators built on them."""

from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

logger = logging.getLogger(__name__)

MIN_FACE_AREA = 1e-12


class Layer(str, enum.Enum):
    BODY = "body"
    CLOTHING = "clothing"


class MeshFormatError(ValueError):
    pass


class DegenerateFaceError(ValueError):
    def __init__(self, face: int, area: float):
        super().__init__(f"face {face} is degenerate (area {area:.3e} m^2)")
        self.face = face


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangle mesh with canonical vertex positions.

    ``vertices`` is (V, 3) float64 in meters, ``faces`` is (F, 3) int64.
    Construction validates index range, face area and orientation.
    """

    vertices: np.ndarray
    faces: np.ndarray
    layer: Layer = Layer.BODY
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "layer", Layer(self.layer))
        v.flags.writeable = False
        f.flags.writeable = False
        if len(f):
            if f.min() < 0 or f.max() >= len(v):
                raise MeshFormatError(f"face index out of range for {len(v)} vertices")
            area = face_areas(v, f)
            bad = np.flatnonzero(area <= MIN_FACE_AREA)
            if len(bad):
                raise DegenerateFaceError(int(bad[0]), float(area[bad[0]]))
            directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
            uniq = np.unique(directed, axis=0)
            if len(uniq) != len(directed):
                raise MeshFormatError("inconsistent face orientation (directed edge repeated)")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        return TriMesh(vertices, self.faces, self.layer)

    @property
    def edges(self) -> np.ndarray:
        if "edges" not in self._cache:
            self._cache["edges"] = unique_edges(self.faces)
        return self._cache["edges"]

    @property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 vertex adjacency."""
        if "adj" not in self._cache:
            self._cache["adj"] = adjacency_matrix(self.n_vertices, self.edges)
        return self._cache["adj"]

    @property
    def isolated_vertices(self) -> np.ndarray:
        deg = np.asarray(self.adjacency.sum(axis=1)).ravel()
        return np.flatnonzero(deg == 0)

    @property
    def hinges(self) -> "Hinges":
        if "hinges" not in self._cache:
            self._cache["hinges"] = build_hinges(self.faces)
        return self._cache["hinges"]

    def surface_area(self, positions: np.ndarray | None = None) -> float:
        p = self.vertices if positions is None else positions
        return float(face_areas(p, self.faces).sum())


# ---------------------------------------------------------------- OBJ I/O


def load_mesh(path: str | os.PathLike, layer: Layer | str = Layer.BODY) -> TriMesh:
    """Read ``v``/``f`` records of an ASCII OBJ file.

    Texture/normal indices in face records (``f 1/2/3 ...``) are ignored,
    negative (relative) indices are resolved. Non-triangular faces raise
    :class:`MeshFormatError`.
    """
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    verts.append([float(x) for x in parts[1:4]])
                    if len(parts) < 4:
                        raise ValueError("vertex needs 3 coordinates")
                elif tag == "f":
                    if len(parts) != 4:
                        raise MeshFormatError(
                            f"{path}:{lineno}: face with {len(parts) - 1} vertices, only triangles supported"
                        )
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        idx.append(i - 1 if i > 0 else len(verts) + i)
                    faces.append(idx)
            except MeshFormatError:
                raise
            except ValueError as exc:
                raise MeshFormatError(f"{path}:{lineno}: {exc}") from exc
    if not verts:
        raise MeshFormatError(f"{path}: no vertices")
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3), layer)


def save_obj(path: str | os.PathLike, mesh: TriMesh, positions: np.ndarray | None = None) -> None:
    p = mesh.vertices if positions is None else np.asarray(positions)
    with open(path, "w", encoding="ascii") as fh:
        for x, y, z in p:
            fh.write(f"v {float(x)!r} {float(y)!r} {float(z)!r}\n")
        for a, b, c in mesh.faces + 1:
            fh.write(f"f {a} {b} {c}\n")


# ---------------------------------------------------------------- geometry


def face_cross(positions: np.ndarray, faces: np.ndarray) -> np.ndarray:
    p = positions[faces]
    return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])


def face_areas(positions: np.ndarray, faces: np.ndarray) -> np.ndarray:
    return 0.5 * np.linalg.norm(face_cross(positions, faces), axis=1)


def face_normals(positions: np.ndarray, faces: np.ndarray) -> np.ndarray:
    c = face_cross(positions, faces)
    n = np.linalg.norm(c, axis=1)
    bad = np.flatnonzero(0.5 * n <= MIN_FACE_AREA)
    if len(bad):
        raise DegenerateFaceError(int(bad[0]), 0.5 * float(n[bad[0]]))
    return c / n[:, None]


def vertex_normals(positions: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted unit vertex normals; isolated vertices get zero."""
    c = face_cross(positions, faces)
    acc = np.zeros((len(positions), 3))
    for k in range(3):
        np.add.at(acc, faces[:, k], c)
    n = np.linalg.norm(acc, axis=1)
    out = np.zeros_like(acc)
    ok = n > 0
    out[ok] = acc[ok] / n[ok, None]
    return out


def face_frames(mesh: TriMesh, positions: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-face rotation whose columns are (normal, tangent, bitangent).

    The tangent points from the face centroid toward the face's first
    vertex; the bitangent is ``normal x tangent``. Returns ``(R, normals)``
    with ``R`` of shape (F, 3, 3).
    """
    p = mesh.vertices if positions is None else np.asarray(positions, dtype=np.float64)
    if p.shape != mesh.vertices.shape:
        raise ValueError(f"positions shape {p.shape} does not match mesh {mesh.vertices.shape}")
    r1 = face_normals(p, mesh.faces)
    tri = p[mesh.faces]
    t = tri[:, 0] - tri.mean(axis=1)
    r2 = t / np.linalg.norm(t, axis=1)[:, None]
    r3 = np.cross(r1, r2)
    return np.stack([r1, r2, r3], axis=2), r1


# ---------------------------------------------------------------- topology


def unique_edges(faces: np.ndarray) -> np.ndarray:
    """Undirected edges as sorted (u < v) pairs in lexicographic order."""
    f = np.asarray(faces, dtype=np.int64)
    if len(f) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def adjacency_matrix(n: int, edges: np.ndarray) -> sp.csr_matrix:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    a.data[:] = 1.0
    a.sort_indices()
    return a


@dataclass(frozen=True)
class Hinges:
    """Interior edges shared by exactly two faces.

    ``edge`` holds the shared vertex pair in the orientation of ``face_a``,
    ``wing_a``/``wing_b`` the vertices opposite the edge in each face.
    """

    edge: np.ndarray
    wing_a: np.ndarray
    wing_b: np.ndarray
    face_a: np.ndarray
    face_b: np.ndarray

    def __len__(self):
        return len(self.edge)


def build_hinges(faces: np.ndarray) -> Hinges:
    owner: dict[tuple[int, int], tuple[int, int]] = {}
    rows = []
    for fi, (a, b, c) in enumerate(np.asarray(faces).tolist()):
        for u, v, w in ((a, b, c), (b, c, a), (c, a, b)):
            other = owner.get((v, u))
            if other is not None:
                fo, wo = other
                # face fo owns directed edge (v, u); orient the hinge like fo
                rows.append((v, u, wo, w, fo, fi))
            else:
                owner[(u, v)] = (fi, w)
    rows.sort(key=lambda r: (min(r[0], r[1]), max(r[0], r[1])))
    arr = np.array(rows, dtype=np.int64).reshape(-1, 6)
    return Hinges(arr[:, 0:2], arr[:, 2], arr[:, 3], arr[:, 4], arr[:, 5])


# ---------------------------------------------------------------- Laplacian


def laplacian_matrix(mesh: TriMesh) -> sp.csr_matrix:
    """Uniform Laplacian operator ``L = D^-1 A - I`` (zero rows for isolated vertices)."""
    if "lap" not in mesh._cache:
        a = mesh.adjacency
        deg = np.asarray(a.sum(axis=1)).ravel()
        inv = np.zeros_like(deg)
        inv[deg > 0] = 1.0 / deg[deg > 0]
        ident = sp.diags((deg > 0).astype(np.float64))
        mesh._cache["lap"] = (sp.diags(inv) @ a - ident).tocsr()
    return mesh._cache["lap"]


def uniform_laplacian(mesh: TriMesh, positions: np.ndarray | None = None) -> np.ndarray:
    """Mean of (neighbor - vertex) over each vertex's one-ring."""
    p = mesh.vertices if positions is None else np.asarray(positions, dtype=np.float64)
    iso = mesh.isolated_vertices
    if len(iso):
        logger.warning("uniform_laplacian: %d isolated vertices (first %d) get zero", len(iso), iso[0])
    return laplacian_matrix(mesh) @ p


# ---------------------------------------------------------------- coarsening


@dataclass(frozen=True)
class EdgeSet:
    edges: np.ndarray
    level: int

    def __len__(self):
        return len(self.edges)


def _mis_greedy(adj: sp.csr_matrix, candidates: np.ndarray) -> np.ndarray:
    """Greedy maximal independent set over ``candidates`` in index order."""
    blocked = np.zeros(adj.shape[0], dtype=bool)
    keep = []
    indptr, indices = adj.indptr, adj.indices
    for v in candidates:
        if blocked[v]:
            continue
        keep.append(v)
        blocked[v] = True
        blocked[indices[indptr[v]:indptr[v + 1]]] = True
    return np.array(keep, dtype=np.int64)


def coarsen_graph(n_vertices: int, edges: np.ndarray, levels: int) -> list[EdgeSet]:
    """Hierarchical long-range edges by repeated MIS subsampling.

    Each level keeps a greedy maximal independent set (lowest index first)
    of the previous level's vertices and connects kept vertices that were
    within two hops, so level ``k`` edges span roughly ``2**k`` original hops.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    adj = adjacency_matrix(n_vertices, edges)
    ncomp, _ = connected_components(adj, directed=False)
    active = np.flatnonzero(np.asarray(adj.sum(axis=1)).ravel() > 0)
    if ncomp - (n_vertices - len(active)) > 1:
        logger.warning("coarsen: graph has %d components, coarsening each independently",
                       ncomp - (n_vertices - len(active)))
    out = []
    for level in range(1, levels + 1):
        keep = _mis_greedy(adj, active)
        two_hop = adj @ adj + adj
        sub = two_hop[keep][:, keep].tocoo()
        mask = sub.row < sub.col
        e = np.stack([keep[sub.row[mask]], keep[sub.col[mask]]], axis=1)
        e.sort(axis=1)
        e = np.unique(e, axis=0) if len(e) else np.zeros((0, 2), dtype=np.int64)
        out.append(EdgeSet(e, level))
        adj = adjacency_matrix(n_vertices, e)
        active = keep
    return out


def coarsen(mesh: TriMesh, levels: int) -> list[EdgeSet]:
    return coarsen_graph(mesh.n_vertices, mesh.edges, levels)


def write_edge_sets(path: str | os.PathLike, sets: Sequence[EdgeSet]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for es in sets:
            for u, v in es.edges:
                fh.write(f"{es.level} {u} {v}\n")


def read_edge_sets(path: str | os.PathLike) -> list[EdgeSet]:
    by_level: dict[int, list[tuple[int, int]]] = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            lvl, u, v = (int(x) for x in parts)
            by_level.setdefault(lvl, []).append((u, v))
    return [EdgeSet(np.array(e, dtype=np.int64).reshape(-1, 2), lvl) for lvl, e in sorted(by_level.items())]


# ---------------------------------------------------------------- nearest neighbors


def nearest_vertex(queries: np.ndarray, targets: np.ndarray, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest target for each query; ties go to the lowest target index."""
    q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    t = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    if len(t) == 0:
        raise ValueError("nearest_vertex: empty target set")
    idx = np.empty(len(q), dtype=np.int64)
    d2 = np.empty(len(q))
    for s in range(0, len(q), chunk):
        diff = q[s:s + chunk, None, :] - t[None, :, :]
        dd = np.einsum("ijk,ijk->ij", diff, diff)
        k = np.argmin(dd, axis=1)
        idx[s:s + chunk] = k
        d2[s:s + chunk] = dd[np.arange(len(k)), k]
    return idx, np.sqrt(d2)
