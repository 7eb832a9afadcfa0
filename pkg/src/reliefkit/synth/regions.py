"""Partition a mesh into connected face regions."""
from __future__ import annotations

import numpy as np
from scipy.sparse import csgraph

from ..errors import DataError
from ..mesh import FaceAdjacencyGraph, TriangleMesh, build_face_adjacency, compute_face_attributes

STRATEGIES = ("axis-split", "geodesic-seeds")


def _components_within(graph: FaceAdjacencyGraph, faces: np.ndarray):
    sub = graph.matrix[faces][:, faces]
    n, comp = csgraph.connected_components(sub, directed=False)
    return n, comp


def region_is_connected(graph: FaceAdjacencyGraph, mask: np.ndarray, region: int) -> bool:
    faces = np.flatnonzero(mask == region)
    if len(faces) == 0:
        return False
    n, _ = _components_within(graph, faces)
    return n == 1


def _repair_connectivity(graph: FaceAdjacencyGraph, mask: np.ndarray, k: int) -> np.ndarray:
    """Keep each region's largest component and regrow the strays into neighbours."""
    mask = mask.copy()
    for r in range(k):
        faces = np.flatnonzero(mask == r)
        if len(faces) == 0:
            continue
        n, comp = _components_within(graph, faces)
        if n > 1:
            sizes = np.bincount(comp)
            keep = np.argmax(sizes)
            mask[faces[comp != keep]] = -1
    A = graph.matrix
    while np.any(mask < 0):
        pending = np.flatnonzero(mask < 0)
        changed = False
        new = mask.copy()
        for f in pending:
            nb = A.indices[A.indptr[f]:A.indptr[f + 1]]
            lab = mask[nb]
            lab = lab[lab >= 0]
            if len(lab):
                new[f] = lab.min()
                changed = True
        mask = new
        if not changed:
            raise DataError(f"{k} connected regions unachievable on this mesh")
    return mask


def plan_regions(mesh: TriangleMesh, region_count: int, seed: int = 0,
                 strategy: str = "axis-split",
                 graph: FaceAdjacencyGraph | None = None) -> np.ndarray:
    """Split faces into ``region_count`` connected regions, ids 0..k-1.

    ``axis-split`` slices faces into equal-count slabs along one of the two
    longest bounding-box axes (chosen by ``seed``).  ``geodesic-seeds``
    places farthest-point seeds in the face graph and assigns each face to
    its nearest seed by hop count, ties going to the lower seed index.
    """
    F = mesh.n_faces
    k = int(region_count)
    if k < 1:
        raise DataError("region count must be at least 1")
    if k > F:
        raise DataError(f"region count {k} exceeds face count {F}")
    if k == 1:
        return np.zeros(F, dtype=np.int64)
    if graph is None:
        graph = build_face_adjacency(mesh, "vertex")
    rng = np.random.default_rng(seed)

    if strategy == "axis-split":
        centroids = compute_face_attributes(mesh).centroids
        ext = np.ptp(mesh.vertices, axis=0)
        axes = np.argsort(-ext, kind="stable")[:2]
        axis = axes[rng.integers(2)] if ext[axes[1]] >= 0.5 * ext[axes[0]] else axes[0]
        order = np.lexsort((np.arange(F), centroids[:, axis]))
        mask = np.empty(F, dtype=np.int64)
        mask[order] = (np.arange(F) * k) // F
        mask = _repair_connectivity(graph, mask, k)
    elif strategy == "geodesic-seeds":
        seeds = [int(rng.integers(F))]
        dist = csgraph.shortest_path(graph.matrix, unweighted=True, indices=seeds)
        while len(seeds) < k:
            dmin = dist.min(axis=0)
            dmin = np.where(np.isinf(dmin), -1.0, dmin)
            nxt = int(np.argmax(dmin))
            if dmin[nxt] <= 0:
                raise DataError(f"{k} connected regions unachievable on this mesh")
            seeds.append(nxt)
            d = csgraph.shortest_path(graph.matrix, unweighted=True, indices=[nxt])
            dist = np.vstack([dist, d])
        if np.any(np.isinf(dist.min(axis=0))):
            raise DataError("mesh is disconnected; geodesic seeds cannot reach every face")
        mask = np.argmin(dist, axis=0).astype(np.int64)
    else:
        raise DataError(f"unknown region strategy {strategy!r}")

    for r in range(k):
        if not region_is_connected(graph, mask, r):
            raise DataError(f"{k} connected regions unachievable on this mesh")
    return mask
