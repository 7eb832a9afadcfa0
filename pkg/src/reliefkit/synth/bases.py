"""Procedural base surfaces.

Sheet-like bases (grid, wavy-grid, folded-sheet) carry arc-length UVs of the
unit square they were built from; closed and tubular bases carry none.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import DataError
from ..mesh import TriangleMesh

BASE_KINDS = ("grid", "wavy-grid", "cylinder", "torus", "sphere", "folded-sheet")


def _grid_faces(nu: int, nv: int, wrap_u: bool = False, wrap_v: bool = False) -> np.ndarray:
    """Triangulate an nu x nv vertex lattice indexed ``i * nv + j``."""
    iu = nu if wrap_u else nu - 1
    iv = nv if wrap_v else nv - 1
    i, j = np.meshgrid(np.arange(iu), np.arange(iv), indexing="ij")
    i, j = i.ravel(), j.ravel()
    i1, j1 = (i + 1) % nu, (j + 1) % nv
    a, b, c, d = i * nv + j, i1 * nv + j, i1 * nv + j1, i * nv + j1
    return np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])


def _sheet(n: int):
    x, y = np.meshgrid(np.linspace(0.0, 1.0, n), np.linspace(0.0, 1.0, n), indexing="ij")
    return x.ravel(), y.ravel(), _grid_faces(n, n)


def make_grid(n: int) -> TriangleMesh:
    x, y, faces = _sheet(n)
    v = np.stack([x, y, np.zeros_like(x)], 1)
    return TriangleMesh(v, faces, uvs=np.stack([x, y], 1))


def make_wavy_grid(n: int, amplitude: float = 0.06, waves: float = 1.5) -> TriangleMesh:
    x, y, faces = _sheet(n)
    z = amplitude * np.sin(2 * np.pi * waves * x) * np.cos(2 * np.pi * waves * y)
    return TriangleMesh(np.stack([x, y, z], 1), faces, uvs=np.stack([x, y], 1))


def make_folded_sheet(n: int, angle: float = 2.2, width: float = 0.08) -> TriangleMesh:
    """Unit sheet bent along x = 0.5; the profile curve is arc-length exact."""
    s = np.linspace(0.0, 1.0, n)
    # integrate the unit tangent (cos, sin) with the trapezoid rule on a fine grid
    fine = np.linspace(0.0, 1.0, 16 * (n - 1) + 1)
    th = angle / (1.0 + np.exp(-(fine - 0.5) / width))
    dx = np.diff(fine)
    px = np.concatenate([[0.0], np.cumsum(0.5 * (np.cos(th[1:]) + np.cos(th[:-1])) * dx)])
    pz = np.concatenate([[0.0], np.cumsum(0.5 * (np.sin(th[1:]) + np.sin(th[:-1])) * dx)])
    px, pz = px[::16], pz[::16]
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i, j = i.ravel(), j.ravel()
    v = np.stack([px[i], s[j], pz[i]], 1)
    return TriangleMesh(v, _grid_faces(n, n), uvs=np.stack([s[i], s[j]], 1))


def make_cylinder(target: int, radius: float = 0.2, height: float = 1.0) -> TriangleMesh:
    """Open tube around the z axis."""
    circ = 2 * np.pi * radius
    nv = max(2, int(round(math.sqrt(target * height / circ))))
    nu = max(3, int(round(target / nv)))
    t = np.arange(nu) * (2 * np.pi / nu)
    z = np.linspace(0.0, height, nv)
    T, Z = np.meshgrid(t, z, indexing="ij")
    v = np.stack([radius * np.cos(T.ravel()), radius * np.sin(T.ravel()), Z.ravel()], 1)
    return TriangleMesh(v, _grid_faces(nu, nv, wrap_u=True))


def make_torus(target: int, major: float = 0.35, minor: float = 0.12) -> TriangleMesh:
    ratio = major / minor
    nv = max(3, int(round(math.sqrt(target / ratio))))
    nu = max(3, int(round(target / nv)))
    u = np.arange(nu) * (2 * np.pi / nu)
    w = np.arange(nv) * (2 * np.pi / nv)
    U, W = np.meshgrid(u, w, indexing="ij")
    U, W = U.ravel(), W.ravel()
    r = major + minor * np.cos(W)
    v = np.stack([r * np.cos(U), r * np.sin(U), minor * np.sin(W)], 1)
    return TriangleMesh(v, _grid_faces(nu, nv, wrap_u=True, wrap_v=True))


def icosphere(level: int, radius: float = 1.0) -> TriangleMesh:
    """Subdivided icosahedron with 10 * 4**level + 2 vertices."""
    phi = (1 + 5 ** 0.5) / 2
    verts = [(-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
             (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
             (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    v = np.array(verts, dtype=np.float64)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array(faces, dtype=np.int64)
    for _ in range(level):
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        uniq, inv = np.unique(e, axis=0, return_inverse=True)
        inv = inv.ravel()
        mid = v[uniq[:, 0]] + v[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = inv.reshape(3, -1).T + len(v)
        v = np.concatenate([v, mid])
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        ab, bc, ca = m[:, 0], m[:, 1], m[:, 2]
        f = np.concatenate([np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1),
                            np.stack([c, ca, bc], 1), np.stack([ab, bc, ca], 1)])
    return TriangleMesh(radius * v, f)


def fibonacci_sphere(n: int, radius: float = 1.0) -> TriangleMesh:
    """Sphere with exactly ``n`` near-uniform vertices (convex hull)."""
    from scipy.spatial import ConvexHull

    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    r = np.sqrt(1 - z * z)
    t = np.pi * (1 + 5 ** 0.5) * k
    v = np.stack([r * np.cos(t), r * np.sin(t), z], 1)
    hull = ConvexHull(v)
    f = hull.simplices.astype(np.int64)
    p = v[f]
    outward = np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p.mean(1)) > 0
    f[~outward] = f[~outward][:, ::-1]
    return TriangleMesh(radius * v, f)


def make_sphere(target: int, radius: float = 0.35) -> TriangleMesh:
    """Icosphere when a subdivision level is within 10% of ``target``."""
    for level in range(0, 9):
        count = 10 * 4 ** level + 2
        if abs(count - target) <= 0.1 * target:
            return icosphere(level, radius)
        if count > target:
            break
    return fibonacci_sphere(target, radius)


def make_base_surface(kind: str, resolution: int, **params) -> TriangleMesh:
    """Build a base surface with roughly ``resolution`` vertices."""
    if resolution < 9:
        raise DataError("resolution must be at least 9 vertices")
    n = max(3, int(round(math.sqrt(resolution))))
    if kind == "grid":
        return make_grid(n)
    if kind == "wavy-grid":
        return make_wavy_grid(n, **params)
    if kind == "folded-sheet":
        return make_folded_sheet(n, **params)
    if kind == "cylinder":
        return make_cylinder(resolution, **params)
    if kind == "torus":
        return make_torus(resolution, **params)
    if kind == "sphere":
        return make_sphere(resolution, **params)
    raise DataError(f"unknown base kind {kind!r}")


# Named base variants used by dataset generation.
BASE_CATALOG: dict[str, tuple[str, dict]] = {
    "sheet-flat": ("grid", {}),
    "sheet-wavy": ("wavy-grid", {}),
    "sheet-wavy-strong": ("wavy-grid", {"amplitude": 0.1, "waves": 1.0}),
    "sheet-fold": ("folded-sheet", {}),
    "sheet-fold-deep": ("folded-sheet", {"angle": 2.8, "width": 0.05}),
    "sheet-fold-soft": ("folded-sheet", {"angle": 1.4, "width": 0.12}),
    "tube": ("cylinder", {}),
    "tube-wide": ("cylinder", {"radius": 0.3, "height": 0.8}),
    "tube-slim": ("cylinder", {"radius": 0.15, "height": 1.2}),
    "ring": ("torus", {}),
    "ring-fat": ("torus", {"major": 0.3, "minor": 0.16}),
    "ring-thin": ("torus", {"major": 0.42, "minor": 0.09}),
    "ball": ("sphere", {}),
    "ball-large": ("sphere", {"radius": 0.45}),
    "ball-small": ("sphere", {"radius": 0.28}),
}

QUERY_BASES = ("sheet-flat", "sheet-wavy", "sheet-wavy-strong", "sheet-fold",
               "sheet-fold-deep", "sheet-fold-soft")
RETRIEVAL_BASES = tuple(BASE_CATALOG)


def make_named_base(name: str, resolution: int) -> TriangleMesh:
    try:
        kind, params = BASE_CATALOG[name]
    except KeyError:
        raise DataError(f"unknown base id {name!r}") from None
    return make_base_surface(kind, resolution, **params)
