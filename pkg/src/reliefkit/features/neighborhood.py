"""Adaptive-radius face neighborhoods over centroid positions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from ..errors import DataError
from ..mesh import FaceAttributes, TriangleMesh, face_vertex_incidence, mean_edge_length


@dataclass(frozen=True)
class NeighborhoodParams:
    """Radius schedule ``r_k = radius_factor * mean_edge * shrink**k``.

    Shrinking stops at the first radius whose ball holds at most
    ``max_neighbors`` faces.
    """

    radius_factor: float = 3.0
    max_neighbors: int = 200
    shrink: float = 0.75
    max_shrinks: int = 20

    def __post_init__(self):
        if not 0.0 < self.shrink < 1.0:
            raise DataError("shrink factor must lie in (0, 1)")
        if self.max_neighbors < 8:
            raise DataError("max_neighbors must be at least 8")
        if self.radius_factor <= 0:
            raise DataError("radius factor must be positive")
        if self.max_shrinks < 0:
            raise DataError("max_shrinks must be non-negative")


@dataclass
class Neighborhood:
    faces: np.ndarray  # sorted face ids, seed included
    radius: float
    fallback: bool = False
    shrinks: int = 0


class NeighborhoodIndex:
    """Spatial index plus the mesh constants neighborhood queries need."""

    def __init__(self, mesh: TriangleMesh, attrs: FaceAttributes,
                 params: NeighborhoodParams = NeighborhoodParams(),
                 mean_edge: Optional[float] = None):
        self.mesh = mesh
        self.attrs = attrs
        self.params = params
        self.mean_edge = mean_edge_length(mesh) if mean_edge is None else float(mean_edge)
        self.r0 = params.radius_factor * self.mean_edge
        self.tree = cKDTree(attrs.centroids)
        self._ring = None

    def one_ring(self, face: int) -> np.ndarray:
        """Faces sharing a vertex with ``face``, plus the face itself."""
        if self._ring is None:
            M = face_vertex_incidence(self.mesh)
            self._ring = (M @ M.T).tocsr()
            self._ring.sort_indices()
        R = self._ring
        return R.indices[R.indptr[face]:R.indptr[face + 1]].astype(np.int64)

    def query(self, face: int) -> Neighborhood:
        p = self.params
        c = self.attrs.centroids
        ring = self.one_ring(face)
        if len(ring) > p.max_neighbors:
            d = np.linalg.norm(c[ring] - c[face], axis=1)
            return Neighborhood(ring, float(d.max()), fallback=True)
        # candidates with a small slack so the kd-tree's own rounding never drops a face
        cand = np.asarray(self.tree.query_ball_point(c[face], self.r0 * (1 + 1e-9)), dtype=np.int64)
        d = np.linalg.norm(c[cand] - c[face], axis=1)
        for k in range(p.max_shrinks + 1):
            r = self.r0 * p.shrink ** k
            inside = d <= r
            if inside.sum() <= p.max_neighbors:
                faces = np.union1d(cand[inside], [face])
                return Neighborhood(faces, r, shrinks=k)
        dr = np.linalg.norm(c[ring] - c[face], axis=1)
        return Neighborhood(ring, float(dr.max()), fallback=True, shrinks=p.max_shrinks)


def collect_neighborhood(mesh: TriangleMesh, attrs: FaceAttributes, face: int,
                         params: NeighborhoodParams = NeighborhoodParams(),
                         index: Optional[NeighborhoodIndex] = None) -> Neighborhood:
    """Faces whose centroid lies within an adaptively shrunk radius of ``face``.

    Falls back to the vertex 1-ring (``fallback=True``) when the 1-ring
    alone exceeds ``max_neighbors`` or the shrink budget runs out.
    """
    if index is None:
        index = NeighborhoodIndex(mesh, attrs, params)
    if not 0 <= face < mesh.n_faces:
        raise DataError(f"face id {face} out of range")
    return index.query(int(face))


def collect_neighborhoods(index: NeighborhoodIndex, faces) -> list[Neighborhood]:
    return [index.query(int(f)) for f in np.asarray(faces, dtype=np.int64)]
