"""Triangle mesh container, per-face attributes and face adjacency."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Optional

import numpy as np
from scipy import sparse

from .errors import DataError, MeshFormatError

logger = logging.getLogger(__name__)

# faces with area below this fraction of diag^2 are dropped on validation
DEGENERATE_AREA_RATIO = 1e-12

ADJACENCY_MODES = ("vertex", "edge")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle surface.

    Parameters
    ----------
    vertices : (V, 3) array_like
        Vertex positions.
    faces : (F, 3) array_like of int
        Vertex index triples; winding defines the face normal.
    normals : (V, 3) array_like, optional
        Unit per-vertex normals.
    uvs : (V, 2) array_like, optional
        Per-vertex texture coordinates.
    dropped_faces : int
        Number of degenerate faces removed when the mesh was validated.
    """

    vertices: np.ndarray
    faces: np.ndarray
    normals: Optional[np.ndarray] = None
    uvs: Optional[np.ndarray] = None
    dropped_faces: int = 0

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise MeshFormatError("non-finite vertex coordinate")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshFormatError("face index out of range")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "faces", _frozen(f))
        if self.normals is not None:
            n = np.array(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(n) != len(v):
                raise MeshFormatError("normal count does not match vertex count")
            object.__setattr__(self, "normals", _frozen(n))
        if self.uvs is not None:
            uv = np.array(self.uvs, dtype=np.float64).reshape(-1, 2)
            if len(uv) != len(v):
                raise MeshFormatError("uv count does not match vertex count")
            object.__setattr__(self, "uvs", _frozen(uv))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def bbox_diagonal(self) -> float:
        if self.n_vertices == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    @cached_property
    def _cross(self) -> np.ndarray:
        p = self.vertices[self.faces]
        return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    def vertex_normals(self) -> np.ndarray:
        """Stored normals if present, else area-weighted face normals."""
        if self.normals is not None:
            return self.normals
        return self.computed_vertex_normals

    @cached_property
    def computed_vertex_normals(self) -> np.ndarray:
        acc = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(acc, self.faces[:, k], self._cross)
        norm = np.linalg.norm(acc, axis=1)
        out = np.zeros_like(acc)
        ok = norm > 0
        out[ok] = acc[ok] / norm[ok, None]
        out[~ok] = (0.0, 0.0, 1.0)
        return _frozen(out)

    def validated(self) -> "TriangleMesh":
        """Return a copy without degenerate faces.

        The number of removed faces is recorded in ``dropped_faces``.
        """
        keep = self.nondegenerate_mask()
        dropped = int((~keep).sum())
        if dropped:
            logger.info("dropped %d degenerate face(s)", dropped)
        return TriangleMesh(self.vertices, self.faces[keep], self.normals, self.uvs,
                            dropped_faces=self.dropped_faces + dropped)

    def nondegenerate_mask(self) -> np.ndarray:
        thresh = DEGENERATE_AREA_RATIO * self.bbox_diagonal ** 2
        return self.face_areas() > thresh

    def with_vertices(self, vertices, normals=None) -> "TriangleMesh":
        return TriangleMesh(vertices, self.faces, normals, self.uvs)

    def transformed(self, matrix=None, scale: float = 1.0, offset=None) -> "TriangleMesh":
        """Apply ``x -> scale * R x + offset``; normals are rotated only."""
        R = np.eye(3) if matrix is None else np.asarray(matrix, dtype=float)
        v = scale * self.vertices @ R.T
        if offset is not None:
            v = v + np.asarray(offset, dtype=float)
        n = None if self.normals is None else self.normals @ R.T
        return TriangleMesh(v, self.faces, n, self.uvs)

    def submesh(self, face_ids) -> tuple["TriangleMesh", np.ndarray]:
        """Extract faces into a compact mesh; returns it with the vertex map."""
        faces = self.faces[np.asarray(face_ids, dtype=np.int64)]
        used, inv = np.unique(faces, return_inverse=True)
        sub = TriangleMesh(
            self.vertices[used],
            inv.reshape(-1, 3),
            None if self.normals is None else self.normals[used],
            None if self.uvs is None else self.uvs[used],
        )
        return sub, used


@dataclass(frozen=True, eq=False)
class FaceAttributes:
    areas: np.ndarray
    normals: np.ndarray
    centroids: np.ndarray

    def __len__(self):
        return len(self.areas)


def compute_face_attributes(mesh: TriangleMesh) -> FaceAttributes:
    """Per-face area, unit normal (from winding) and centroid."""
    cross = mesh._cross
    norm = np.linalg.norm(cross, axis=1)
    safe = np.where(norm > 0, norm, 1.0)
    normals = cross / safe[:, None]
    centroids = mesh.vertices[mesh.faces].mean(axis=1)
    return FaceAttributes(_frozen(0.5 * norm), _frozen(normals), _frozen(centroids))


@dataclass(frozen=True, eq=False)
class FaceAdjacencyGraph:
    """Undirected graph over faces; ``edges`` holds sorted ``i < j`` pairs."""

    n_faces: int
    edges: np.ndarray
    mode: str = "vertex"

    @cached_property
    def matrix(self) -> sparse.csr_matrix:
        e = self.edges
        data = np.ones(2 * len(e), dtype=np.float64)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        m = sparse.csr_matrix((data, (rows, cols)), shape=(self.n_faces, self.n_faces))
        m.sort_indices()
        return m

    def neighbors(self, face: int) -> np.ndarray:
        m = self.matrix
        return m.indices[m.indptr[face]:m.indptr[face + 1]]

    def degree(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)


def face_vertex_incidence(mesh: TriangleMesh) -> sparse.csr_matrix:
    F = mesh.n_faces
    rows = np.repeat(np.arange(F), 3)
    return sparse.csr_matrix(
        (np.ones(3 * F, dtype=np.int32), (rows, mesh.faces.ravel())),
        shape=(F, mesh.n_vertices),
    )


def build_face_adjacency(mesh: TriangleMesh, mode: str = "vertex") -> FaceAdjacencyGraph:
    """Face graph linking faces that share a vertex (or an edge).

    Built from the face-vertex incidence matrix ``M``: ``(M M^T)[i, j]``
    counts vertices shared by faces ``i`` and ``j``.
    """
    if mode not in ADJACENCY_MODES:
        raise ValueError(f"unknown adjacency mode {mode!r}")
    M = face_vertex_incidence(mesh)
    shared = sparse.triu(M @ M.T, k=1).tocoo()
    need = 1 if mode == "vertex" else 2
    sel = shared.data >= need
    edges = np.stack([shared.row[sel], shared.col[sel]], axis=1).astype(np.int64)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return FaceAdjacencyGraph(mesh.n_faces, _frozen(edges[order]), mode)


def unique_edges(faces: np.ndarray) -> np.ndarray:
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def mean_edge_length(mesh: TriangleMesh) -> float:
    """Mean length over unique undirected edges."""
    if mesh.n_faces == 0:
        raise DataError("empty mesh has no edges")
    e = unique_edges(mesh.faces)
    return float(np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1).mean())


def face_dihedral_pairs(mesh: TriangleMesh, attrs: FaceAttributes):
    """Edge-adjacent face pairs and the angle between their normals."""
    graph = build_face_adjacency(mesh, "edge")
    e = graph.edges
    c = np.einsum("ij,ij->i", attrs.normals[e[:, 0]], attrs.normals[e[:, 1]])
    return e, np.arccos(np.clip(c, -1.0, 1.0))


def mean_face_dihedral(mesh: TriangleMesh, attrs: FaceAttributes) -> np.ndarray:
    """Per-face mean dihedral deviation over edge-adjacent faces."""
    e, ang = face_dihedral_pairs(mesh, attrs)
    F = mesh.n_faces
    s = np.bincount(e[:, 0], ang, minlength=F) + np.bincount(e[:, 1], ang, minlength=F)
    n = np.bincount(e.ravel(), minlength=F)
    return np.where(n > 0, s / np.maximum(n, 1), 0.0)


@dataclass(eq=False)
class PatternLabeling:
    """Per-face pattern label; 0 means plain surface."""

    labels: np.ndarray
    confidence: Optional[np.ndarray] = None
    catalog: Optional[Mapping[int, str]] = field(default=None)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if self.labels.size and self.labels.min() < 0:
            raise DataError("labels must be non-negative")
        if self.confidence is not None:
            self.confidence = np.asarray(self.confidence, dtype=np.float64).ravel()
            if len(self.confidence) != len(self.labels):
                raise DataError("confidence length differs from label length")
        if self.catalog is not None:
            self.catalog = {int(k): str(v) for k, v in self.catalog.items()}
            missing = set(np.unique(self.labels[self.labels > 0]).tolist()) - set(self.catalog)
            if missing:
                raise DataError(f"labels missing from catalog: {sorted(missing)}")

    def __len__(self):
        return len(self.labels)

    def label_set(self) -> set[int]:
        return set(int(x) for x in np.unique(self.labels))

    def pattern_set(self) -> set[int]:
        return self.label_set() - {0}

    def check_length(self, mesh: TriangleMesh):
        if len(self.labels) != mesh.n_faces:
            raise DataError(
                f"labeling has {len(self.labels)} entries but mesh has {mesh.n_faces} faces")
