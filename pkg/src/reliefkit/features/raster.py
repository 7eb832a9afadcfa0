"""Rasterize flattened patches into multi-channel feature images."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..fileio import write_pgm


@dataclass
class PatchImage:
    """G x G x C image; uncovered cells are NaN and ``coverage`` is False there."""

    channels: np.ndarray
    coverage: np.ndarray
    face_index: np.ndarray  # (G, G) covering face (row into the input faces), -1 if none
    degenerate: np.ndarray  # per channel, True when min == max over covered cells

    @property
    def size(self) -> int:
        return self.coverage.shape[0]

    def coverage_fraction(self) -> float:
        return float(self.coverage.mean())


def cell_centers(uv: np.ndarray, G: int):
    """Cell-center UV positions of a G x G grid over the uv bounding box (uniform scale)."""
    lo = uv.min(0)
    ext = float(np.max(uv.max(0) - lo))
    if ext <= 0:
        ext = 1.0
    t = (np.arange(G) + 0.5) / G * ext
    # row index runs along v, column index along u
    return lo[0] + t[None, :].repeat(G, 0), lo[1] + t[:, None].repeat(G, 1)


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def point_in_triangle(tri: np.ndarray, px, py) -> np.ndarray:
    """Closed point-in-triangle test for either orientation."""
    (ax, ay), (bx, by), (cx, cy) = tri
    e0 = _edge(ax, ay, bx, by, px, py)
    e1 = _edge(bx, by, cx, cy, px, py)
    e2 = _edge(cx, cy, ax, ay, px, py)
    return ((e0 >= 0) & (e1 >= 0) & (e2 >= 0)) | ((e0 <= 0) & (e1 <= 0) & (e2 <= 0))


def assign_cells(uv: np.ndarray, faces: np.ndarray, G: int, face_ids=None) -> np.ndarray:
    """Row into ``faces`` covering each cell center; ties go to the lowest face id."""
    ids = np.arange(len(faces)) if face_ids is None else np.asarray(face_ids)
    px, py = cell_centers(uv, G)
    lo = uv.min(0)
    ext = float(np.max(uv.max(0) - lo)) or 1.0
    out = np.full((G, G), -1, dtype=np.int64)
    for row in np.argsort(ids, kind="stable"):
        tri = uv[faces[row]]
        # restrict to the cells of the triangle's bounding box
        c0 = np.clip(np.floor((tri[:, 0].min() - lo[0]) / ext * G - 0.5).astype(int), 0, G)
        c1 = np.clip(np.ceil((tri[:, 0].max() - lo[0]) / ext * G + 0.5).astype(int), 0, G)
        r0 = np.clip(np.floor((tri[:, 1].min() - lo[1]) / ext * G - 0.5).astype(int), 0, G)
        r1 = np.clip(np.ceil((tri[:, 1].max() - lo[1]) / ext * G + 0.5).astype(int), 0, G)
        if c1 <= c0 or r1 <= r0:
            continue
        sub = (slice(r0, r1), slice(c0, c1))
        hit = point_in_triangle(tri, px[sub], py[sub]) & (out[sub] < 0)
        out[sub][hit] = row
    return out


def rasterize_patch(uv, faces, face_values, G: int = 64, face_ids=None) -> PatchImage:
    """Sample per-face values at grid cell centers.

    Parameters
    ----------
    uv : (V, 2) array
        Flattened vertex positions.
    faces : (F, 3) int array
        Triangles indexing ``uv``.
    face_values : (F, C) array
        Per-face channel values (e.g. depth, curvature, surface variation).
    G : int
        Grid size, at least 8.
    face_ids : (F,) array, optional
        Ids used for tie-breaking (lowest wins); defaults to row order.
    """
    uv = np.asarray(uv, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    vals = np.asarray(face_values, dtype=np.float64)
    if vals.ndim == 1:
        vals = vals[:, None]
    if len(faces) == 0:
        raise DataError("empty patch")
    if G < 8:
        raise DataError("grid size must be at least 8")
    if len(vals) != len(faces):
        raise DataError("one value row per face required")
    idx = assign_cells(uv, faces, G, face_ids)
    cov = idx >= 0
    C = vals.shape[1]
    img = np.full((G, G, C), np.nan)
    img[cov] = vals[idx[cov]]
    degenerate = np.zeros(C, dtype=bool)
    for c in range(C):
        ch = img[..., c]
        if not cov.any():
            degenerate[c] = True
            continue
        lo, hi = ch[cov].min(), ch[cov].max()
        if hi - lo <= 1e-12 * max(1.0, abs(lo), abs(hi)):
            ch[cov] = 0.5
            degenerate[c] = True
        else:
            ch[cov] = np.clip((ch[cov] - lo) / (hi - lo), 0.0, 1.0)
    return PatchImage(img, cov, idx, degenerate)


def export_patch_pgm(image: PatchImage, stem) -> list[Path]:
    """Write one PGM per channel (uncovered cells black)."""
    stem = Path(stem)
    out = []
    for c in range(image.channels.shape[2]):
        out.append(write_pgm(stem.with_name(f"{stem.name}_c{c}.pgm"), image.channels[..., c]))
    return out
