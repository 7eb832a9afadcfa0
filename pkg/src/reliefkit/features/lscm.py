"""Least-squares conformal flattening of disk-like face patches."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import splu

from ..errors import DataError, SolverError
from ..mesh import TriangleMesh, build_face_adjacency

RESIDUAL_TOL = 1e-8
MAX_REFINEMENTS = 5


@dataclass
class LSCMResult:
    vertices: np.ndarray  # global ids of the patch vertices, sorted
    uv: np.ndarray  # (len(vertices), 2)
    pins: tuple[int, int]  # global ids pinned to (0, 0) and (1, 0)
    residual: float
    flipped: int
    area_3d: float

    def uv_area(self, faces_local: np.ndarray) -> float:
        t = self.uv[faces_local]
        return 0.5 * float(np.abs(_cross2(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])).sum())

    def uv_scaled_to_area(self, sub: TriangleMesh) -> np.ndarray:
        """UVs rescaled so the flattened area equals the 3D patch area."""
        s = np.sqrt(self.area_3d / self.uv_area(sub.faces))
        return self.uv * s


def _cross2(a, b):
    return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]


def _local_frames(points: np.ndarray):
    """2D coordinates of each triangle in its own orthonormal frame."""
    p0, p1, p2 = points[:, 0], points[:, 1], points[:, 2]
    e1 = p1 - p0
    l1 = np.linalg.norm(e1, axis=1)
    e1 = e1 / l1[:, None]
    n = np.cross(p1 - p0, p2 - p0)
    n /= np.linalg.norm(n, axis=1)[:, None]
    e2 = np.cross(n, e1)
    d2 = p2 - p0
    z = np.zeros((len(points), 3), dtype=np.complex128)
    z[:, 1] = l1
    z[:, 2] = np.einsum("ij,ij->i", d2, e1) + 1j * np.einsum("ij,ij->i", d2, e2)
    return z


def conformal_matrix(points: np.ndarray, faces_local: np.ndarray, n_vertices: int) -> sparse.csr_matrix:
    """Real (2F x 2V) matrix whose squared norm times x is the conformal energy.

    ``x`` stacks all u coordinates followed by all v coordinates.
    """
    z = _local_frames(points[faces_local])
    area2 = np.abs((np.conj(z[:, 1] - z[:, 0]) * (z[:, 2] - z[:, 0])).imag)
    W = np.stack([z[:, 2] - z[:, 1], z[:, 0] - z[:, 2], z[:, 1] - z[:, 0]], axis=1)
    W /= np.sqrt(area2)[:, None]
    F = len(faces_local)
    rows = np.repeat(np.arange(F), 3)
    cols = faces_local.ravel()
    a, b = W.real.ravel(), W.imag.ravel()
    V = n_vertices
    r = np.concatenate([rows, rows, rows + F, rows + F])
    c = np.concatenate([cols, cols + V, cols, cols + V])
    d = np.concatenate([a, -b, b, a])
    return sparse.csr_matrix((d, (r, c)), shape=(2 * F, 2 * V))


def conformal_energy(points: np.ndarray, faces_local: np.ndarray, uv: np.ndarray) -> float:
    A = conformal_matrix(points, faces_local, len(points))
    x = np.concatenate([uv[:, 0], uv[:, 1]])
    r = A @ x
    return float(r @ r)


def _check_disk(mesh: TriangleMesh, faces: np.ndarray):
    sub, vmap = mesh.submesh(faces)
    graph = build_face_adjacency(sub, "edge")
    n, _ = csgraph.connected_components(graph.matrix, directed=False)
    e = np.concatenate([sub.faces[:, [0, 1]], sub.faces[:, [1, 2]], sub.faces[:, [2, 0]]])
    e.sort(axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    chi = sub.n_vertices - len(edges) + sub.n_faces
    if n != 1 or chi != 1 or np.any(counts > 2):
        raise DataError("non-disk patch")
    return sub, vmap, edges[counts == 1]


def farthest_boundary_pair(sub: TriangleMesh, boundary_edges: np.ndarray) -> tuple[int, int]:
    """Boundary vertex pair with the largest hop distance (lowest ids on ties)."""
    bverts = np.unique(boundary_edges)
    e = np.unique(np.sort(np.concatenate(
        [sub.faces[:, [0, 1]], sub.faces[:, [1, 2]], sub.faces[:, [2, 0]]]), axis=1), axis=0)
    V = sub.n_vertices
    A = sparse.csr_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                          shape=(V, V))
    D = csgraph.shortest_path(A, unweighted=True, indices=bverts)[:, bverts]
    flat = int(np.argmax(D))
    i, j = divmod(flat, len(bverts))
    return int(bverts[i]), int(bverts[j])


def lscm_flatten(mesh: TriangleMesh, patch) -> LSCMResult:
    """Flatten a disk-like face patch to the plane.

    Two boundary vertices farthest apart in hop distance are pinned to
    (0, 0) and (1, 0); the remaining coordinates minimise the conformal
    energy.  Raises :class:`DataError` when the patch is not a topological
    disk and :class:`SolverError` if the solve does not reach the residual
    tolerance.
    """
    faces = np.unique(np.asarray(patch, dtype=np.int64))
    if len(faces) == 0:
        raise DataError("non-disk patch")
    sub, vmap, bedges = _check_disk(mesh, faces)
    V = sub.n_vertices
    p, q = farthest_boundary_pair(sub, bedges)
    A = conformal_matrix(sub.vertices, sub.faces, V).tocsc()

    pinned = np.array([p, q, p + V, q + V])
    pinned_vals = np.array([0.0, 1.0, 0.0, 0.0])
    free = np.setdiff1d(np.arange(2 * V), pinned)
    Af = A[:, free]
    rhs0 = -(A[:, pinned] @ pinned_vals)
    N = (Af.T @ Af).tocsc()
    b = Af.T @ rhs0
    lu = splu(N)
    x = lu.solve(b)
    bnorm = max(np.linalg.norm(b), 1e-300)
    res = np.linalg.norm(N @ x - b) / bnorm
    it = 0
    while res > RESIDUAL_TOL and it < MAX_REFINEMENTS:
        x += lu.solve(b - N @ x)
        res = np.linalg.norm(N @ x - b) / bnorm
        it += 1
    if not np.isfinite(res) or res > RESIDUAL_TOL:
        raise SolverError(f"LSCM solve did not converge (relative residual {res:.3g})")

    full = np.zeros(2 * V)
    full[pinned] = pinned_vals
    full[free] = x
    uv = np.stack([full[:V], full[V:]], axis=1)
    t = uv[sub.faces]
    signed = _cross2(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
    flipped = int(np.sum(signed <= 0))
    return LSCMResult(vmap, uv, (int(vmap[p]), int(vmap[q])), float(res), flipped,
                      float(sub.face_areas().sum()))
