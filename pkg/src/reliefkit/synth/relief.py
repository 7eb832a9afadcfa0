"""Displace patterned regions of a base mesh along vertex normals."""
from __future__ import annotations

from typing import Mapping, Optional

import numpy as np
from scipy import sparse

from ..errors import DataError
from ..mesh import PatternLabeling, TriangleMesh, unique_edges
from .heightfield import HeightField

UV_MODES = ("stored", "planar", "lscm", "triplanar")


def vertex_adjacency(mesh: TriangleMesh) -> sparse.csr_matrix:
    e = unique_edges(mesh.faces)
    V = mesh.n_vertices
    data = np.ones(2 * len(e))
    return sparse.csr_matrix((data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(V, V))


def vertex_regions(mesh: TriangleMesh, mask: np.ndarray):
    """Region of each vertex and a flag for vertices touching several regions."""
    V = mesh.n_vertices
    fr = np.repeat(mask, 3)
    vi = mesh.faces.ravel()
    lo = np.full(V, np.iinfo(np.int64).max)
    hi = np.full(V, -1)
    np.minimum.at(lo, vi, fr)
    np.maximum.at(hi, vi, fr)
    used = hi >= 0
    boundary = used & (lo != hi)
    region = np.where(used, lo, -1)
    return region, boundary


def blend_weights(mesh: TriangleMesh, mask: np.ndarray, rings: int = 2,
                  adjacency: Optional[sparse.csr_matrix] = None) -> np.ndarray:
    """Per-vertex weight ``min(d, rings) / rings`` with d the hop distance to a region boundary."""
    _, boundary = vertex_regions(mesh, mask)
    V = mesh.n_vertices
    if rings <= 0:
        return np.where(boundary, 0.0, 1.0)
    if not boundary.any():
        return np.ones(V)
    A = vertex_adjacency(mesh) if adjacency is None else adjacency
    dist = np.full(V, rings, dtype=np.int64)
    reached = boundary.copy()
    dist[reached] = 0
    frontier = reached.astype(np.float64)
    for r in range(1, rings):
        nxt = (A @ frontier) > 0
        new = nxt & ~reached
        dist[new] = r
        reached |= new
        frontier = new.astype(np.float64)
    return dist / float(rings)


def _planar_uv(points: np.ndarray) -> np.ndarray:
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    return (points - c) @ vt[:2].T


def _region_uvs(mesh: TriangleMesh, mask, vregion, mode) -> np.ndarray:
    uv = np.zeros((mesh.n_vertices, 2))
    for r in np.unique(mask):
        faces = np.flatnonzero(mask == r)
        verts = np.unique(mesh.faces[faces])
        own = verts[vregion[verts] == r]
        if mode == "planar":
            local = _planar_uv(mesh.vertices[verts])
        else:
            from ..features.lscm import lscm_flatten

            sub, _ = mesh.submesh(faces)
            res = lscm_flatten(sub, np.arange(sub.n_faces))
            local = res.uv_scaled_to_area(sub)
        pos = np.searchsorted(verts, own)
        uv[own] = local[pos]
    return uv


def _triplanar(hf: HeightField, points, normals) -> np.ndarray:
    w = np.abs(normals) ** 4
    w /= w.sum(axis=1, keepdims=True)
    hx = hf.sample(points[:, 1], points[:, 2])
    hy = hf.sample(points[:, 0], points[:, 2])
    hz = hf.sample(points[:, 0], points[:, 1])
    return w[:, 0] * hx + w[:, 1] * hy + w[:, 2] * hz


def apply_relief(mesh: TriangleMesh, mask, assignment: Mapping[int, int],
                 patterns: Mapping[int, HeightField], amplitude: float,
                 uv_mode: str = "stored", blend_rings: int = 2,
                 catalog: Optional[Mapping[int, str]] = None):
    """Displace each patterned region by ``amplitude * w * h(uv) * n``.

    ``assignment`` maps region id to pattern id (0 = plain) and ``patterns``
    maps pattern id to its heightfield.  ``w`` is the boundary blend weight
    from :func:`blend_weights`; it is 1 away from region boundaries.

    Returns the displaced mesh and the exact per-face labeling.
    """
    mask = np.asarray(mask, dtype=np.int64)
    if len(mask) != mesh.n_faces:
        raise DataError("region mask length differs from face count")
    if amplitude < 0:
        raise DataError("amplitude must be non-negative")
    if uv_mode not in UV_MODES:
        raise DataError(f"unknown uv mode {uv_mode!r}")
    regions = np.unique(mask)
    missing = [int(r) for r in regions if int(r) not in assignment]
    if missing:
        raise DataError(f"region id(s) {missing} missing from assignment")
    lut = np.zeros(int(regions.max()) + 1, dtype=np.int64)
    for r, p in assignment.items():
        if 0 <= int(r) < len(lut):
            lut[int(r)] = int(p)
    face_labels = lut[mask]
    for p in np.unique(face_labels):
        if p != 0 and int(p) not in patterns:
            raise DataError(f"pattern id {int(p)} has no heightfield")
    labeling = PatternLabeling(face_labels, catalog=catalog)
    if uv_mode == "stored" and mesh.uvs is None:
        raise DataError("uv mode 'stored' requires stored UVs")
    if amplitude == 0:
        return TriangleMesh(mesh.vertices, mesh.faces, None, mesh.uvs), labeling

    vregion, _ = vertex_regions(mesh, mask)
    weight = blend_weights(mesh, mask, blend_rings)
    vpattern = np.where(vregion >= 0, lut[np.maximum(vregion, 0)], 0)
    weight = np.where(vpattern > 0, weight, 0.0)
    normals = mesh.vertex_normals()

    if uv_mode == "stored":
        uv = mesh.uvs
    elif uv_mode in ("planar", "lscm"):
        uv = _region_uvs(mesh, mask, vregion, uv_mode)
    else:
        uv = None

    height = np.zeros(mesh.n_vertices)
    for p in np.unique(vpattern[weight > 0]):
        sel = (vpattern == p) & (weight > 0)
        hf = patterns[int(p)]
        if uv is None:
            height[sel] = _triplanar(hf, mesh.vertices[sel], normals[sel])
        else:
            height[sel] = hf.sample(uv[sel, 0], uv[sel, 1])

    disp = amplitude * weight * height
    out = mesh.vertices.copy()
    moved = disp != 0
    out[moved] += disp[moved, None] * normals[moved]
    return TriangleMesh(out, mesh.faces, None, mesh.uvs), labeling
