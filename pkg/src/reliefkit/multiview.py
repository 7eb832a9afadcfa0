"""Six-view orthographic depth rendering and handcrafted view descriptors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .errors import DataError
from .fileio import write_pgm
from .mesh import TriangleMesh

VIEWS = ("+X", "-X", "+Y", "-Y", "+Z", "-Z")

# view -> (axis, sign, image-x axis, image-y axis)
_VIEW_AXES = {
    "+X": (0, 1, 1, 2), "-X": (0, -1, 1, 2),
    "+Y": (1, 1, 0, 2), "-Y": (1, -1, 0, 2),
    "+Z": (2, 1, 0, 1), "-Z": (2, -1, 0, 1),
}

DEPTH_STEP = 1.0 / 255.0
GRAD_BINS = 16  # bin 0: zero gradient, bins 1..15: orientation
LBP_BINS = 59
PYRAMID_LEVELS = 4
BLOCK_DIM = GRAD_BINS + LBP_BINS + PYRAMID_LEVELS


@dataclass
class DepthImage:
    """Depth below the cube face the camera sits on (unit-cube units).

    ``background`` marks pixels no triangle covers; their depth is NaN.
    """

    depth: np.ndarray
    background: np.ndarray
    view: str

    @property
    def shape(self):
        return self.depth.shape

    def silhouette_area(self) -> int:
        return int((~self.background).sum())

    def to_pgm(self, path):
        img = np.where(self.background, 0.0, 1.0 - np.nan_to_num(self.depth))
        return write_pgm(path, img)


def normalize_to_unit_cube(mesh: TriangleMesh) -> np.ndarray:
    """Vertices centered on the bbox center and scaled to span [-0.5, 0.5] on the longest axis."""
    if mesh.n_faces == 0:
        raise DataError("cannot render an empty mesh")
    v = mesh.vertices
    lo, hi = v.min(0), v.max(0)
    ext = float(np.max(hi - lo))
    if ext <= 0:
        raise DataError("mesh has zero extent")
    return (v - 0.5 * (lo + hi)) / ext


def _rasterize(px, py, pz, faces, W, H):
    """Z-buffer: nearest (smallest) depth per pixel over all triangles."""
    tri_x, tri_y, tri_z = px[faces], py[faces], pz[faces]
    x0 = np.clip(np.ceil(tri_x.min(1) - 0.5), 0, W).astype(np.int64)
    x1 = np.clip(np.floor(tri_x.max(1) - 0.5) + 1, 0, W).astype(np.int64)
    y0 = np.clip(np.ceil(tri_y.min(1) - 0.5), 0, H).astype(np.int64)
    y1 = np.clip(np.floor(tri_y.max(1) - 0.5) + 1, 0, H).astype(np.int64)
    wx, wy = np.maximum(x1 - x0, 0), np.maximum(y1 - y0, 0)
    n = wx * wy
    depth = np.full(H * W, np.inf)
    ok = n > 0
    if not ok.any():
        return depth.reshape(H, W)
    tid = np.repeat(np.flatnonzero(ok), n[ok])
    start = np.concatenate([[0], np.cumsum(n[ok])[:-1]])
    local = np.arange(len(tid)) - np.repeat(start, n[ok])
    cx = x0[tid] + local % wx[tid]
    cy = y0[tid] + local // wx[tid]
    sx, sy = cx + 0.5, cy + 0.5
    ax, ay = tri_x[tid, 0], tri_y[tid, 0]
    bx, by = tri_x[tid, 1], tri_y[tid, 1]
    qx, qy = tri_x[tid, 2], tri_y[tid, 2]
    area = (bx - ax) * (qy - ay) - (by - ay) * (qx - ax)
    w0 = (bx - sx) * (qy - sy) - (by - sy) * (qx - sx)
    w1 = (qx - sx) * (ay - sy) - (qy - sy) * (ax - sx)
    w2 = (ax - sx) * (by - sy) - (ay - sy) * (bx - sx)
    inside = (area != 0) & (((w0 >= 0) & (w1 >= 0) & (w2 >= 0)) | ((w0 <= 0) & (w1 <= 0) & (w2 <= 0)))
    safe = np.where(area != 0, area, 1.0)
    z = (w0 * tri_z[tid, 0] + w1 * tri_z[tid, 1] + w2 * tri_z[tid, 2]) / safe
    flat = (cy * W + cx)[inside]
    np.minimum.at(depth, flat, z[inside])
    return depth.reshape(H, W)


def render_orthographic(mesh: TriangleMesh, view: str, resolution=(128, 128),
                        quantize: bool = True) -> DepthImage:
    """Orthographic depth image of the unit-cube-normalized mesh.

    The camera sits on the cube face ``view`` points to and looks inward;
    depth is the distance from that face, quantized to 1/255 steps.  Row 0
    is the lowest image-y coordinate.
    """
    if view not in _VIEW_AXES:
        raise DataError(f"unknown view {view!r}")
    W, H = (resolution, resolution) if np.isscalar(resolution) else tuple(resolution)
    v = normalize_to_unit_cube(mesh)
    axis, sign, ix, iy = _VIEW_AXES[view]
    px = (v[:, ix] + 0.5) * W
    py = (v[:, iy] + 0.5) * H
    pz = 0.5 - sign * v[:, axis]
    d = _rasterize(px, py, pz, mesh.faces, W, H)
    bg = ~np.isfinite(d)
    d = np.clip(d, 0.0, 1.0)
    if quantize:
        d = np.round(d / DEPTH_STEP) * DEPTH_STEP
    d[bg] = np.nan
    return DepthImage(d, bg, view)


def render_views(mesh: TriangleMesh, resolution=128) -> list[DepthImage]:
    return [render_orthographic(mesh, v, resolution) for v in VIEWS]


# ------------------------------------------------------------- descriptors

def _lbp_table() -> np.ndarray:
    """Map 8-bit codes to 58 uniform bins plus one shared non-uniform bin."""
    table = np.full(256, LBP_BINS - 1, dtype=np.int64)
    nxt = 0
    for code in range(256):
        bits = [(code >> i) & 1 for i in range(8)]
        transitions = sum(bits[i] != bits[(i + 1) % 8] for i in range(8))
        if transitions <= 2:
            table[code] = nxt
            nxt += 1
    return table


_LBP = _lbp_table()
_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def gradient_histogram(depth: np.ndarray, fg: np.ndarray) -> np.ndarray:
    H, W = depth.shape
    hist = np.zeros(GRAD_BINS)
    if H < 3 or W < 3:
        hist[0] = 1.0
        return hist
    c = (slice(1, -1), slice(1, -1))
    valid = fg[c] & fg[:-2, 1:-1] & fg[2:, 1:-1] & fg[1:-1, :-2] & fg[1:-1, 2:]
    if not valid.any():
        hist[0] = 1.0
        return hist
    gx = (depth[1:-1, 2:] - depth[1:-1, :-2])[valid]
    gy = (depth[2:, 1:-1] - depth[:-2, 1:-1])[valid]
    flat = (np.abs(gx) < 1e-12) & (np.abs(gy) < 1e-12)
    ang = np.mod(np.arctan2(gy, gx), 2 * np.pi)
    b = 1 + np.minimum((ang / (2 * np.pi) * (GRAD_BINS - 1)).astype(np.int64), GRAD_BINS - 2)
    b[flat] = 0
    hist = np.bincount(b, minlength=GRAD_BINS).astype(np.float64)
    return hist / hist.sum()


def lbp_histogram(depth: np.ndarray, fg: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    H, W = depth.shape
    hist = np.zeros(LBP_BINS)
    if H < 3 or W < 3:
        hist[_LBP[255]] = 1.0
        return hist
    center = depth[1:-1, 1:-1]
    valid = fg[1:-1, 1:-1].copy()
    code = np.zeros(center.shape, dtype=np.int64)
    for bit, (dy, dx) in enumerate(_OFFSETS):
        nb = depth[1 + dy:H - 1 + dy, 1 + dx:W - 1 + dx]
        valid &= fg[1 + dy:H - 1 + dy, 1 + dx:W - 1 + dx]
        code |= (np.nan_to_num(nb) >= np.nan_to_num(center) - eps).astype(np.int64) << bit
    if not valid.any():
        hist[_LBP[255]] = 1.0
        return hist
    hist = np.bincount(_LBP[code[valid]], minlength=LBP_BINS).astype(np.float64)
    return hist / hist.sum()


def depth_pyramid(depth: np.ndarray, fg: np.ndarray, levels: int = PYRAMID_LEVELS) -> np.ndarray:
    """Mean within-cell foreground depth variance on 1, 2x2, 4x4, 8x8 grids."""
    H, W = depth.shape
    out = np.zeros(levels)
    d = np.where(fg, depth, 0.0)
    for lvl in range(levels):
        n = 2 ** lvl
        ys = np.minimum(np.arange(H) * n // H, n - 1)
        xs = np.minimum(np.arange(W) * n // W, n - 1)
        cell = (ys[:, None] * n + xs[None, :])[fg]
        vals = d[fg]
        cnt = np.bincount(cell, minlength=n * n)
        s1 = np.bincount(cell, vals, minlength=n * n)
        s2 = np.bincount(cell, vals * vals, minlength=n * n)
        ok = cnt >= 2
        if ok.any():
            var = np.clip(s2[ok] / cnt[ok] - (s1[ok] / cnt[ok]) ** 2, 0.0, None)
            out[lvl] = var.mean()
    return out


def _block(depth, fg) -> np.ndarray:
    return np.concatenate([gradient_histogram(depth, fg), lbp_histogram(depth, fg),
                           depth_pyramid(depth, fg)])


def _d4(a: np.ndarray):
    for k in range(4):
        r = np.rot90(a, k)
        yield r
        yield r[:, ::-1]


def view_block(image: DepthImage, canonical: bool = True) -> np.ndarray:
    """79-value block of one view; canonicalized over the 8 square symmetries.

    The canonical block is the lexicographically smallest of the blocks of
    the 8 rotated/reflected images (values rounded to 12 decimals), which
    makes it independent of in-plane image rotation.
    """
    fg = ~image.background
    depth = np.where(fg, image.depth, 0.0)
    if not canonical:
        return np.round(_block(depth, fg), 12)
    best = None
    square = depth.shape[0] == depth.shape[1]
    transforms = zip(_d4(depth), _d4(fg)) if square else [(depth, fg), (depth[::-1, ::-1], fg[::-1, ::-1]),
                                                          (depth[::-1], fg[::-1]), (depth[:, ::-1], fg[:, ::-1])]
    for d, f in transforms:
        b = np.round(_block(np.ascontiguousarray(d), np.ascontiguousarray(f)), 12)
        if best is None or tuple(b) < tuple(best):
            best = b
    return best


def view_descriptor(images: Sequence[DepthImage], canonical: bool = True) -> np.ndarray:
    """Concatenate the blocks of the six views in +X, -X, +Y, -Y, +Z, -Z order."""
    if len(images) != 6:
        raise DataError("exactly 6 views required")
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise DataError("mismatched view resolutions")
    by_view = {im.view: im for im in images}
    order = [by_view[v] for v in VIEWS] if set(by_view) == set(VIEWS) else list(images)
    return np.concatenate([view_block(im, canonical) for im in order])


def mesh_view_descriptor(mesh: TriangleMesh, resolution=128) -> np.ndarray:
    return view_descriptor(render_views(mesh, resolution))


def corpus_diameter(descriptors: np.ndarray, percentile: float = 99.5) -> float:
    d = pdist(np.asarray(descriptors, dtype=np.float64))
    if len(d) == 0:
        return 1.0
    v = float(np.percentile(d, percentile))
    return v if v > 0 else 1.0


def multiview_score(a, b, d_max: float) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError("descriptor dimension mismatch")
    if d_max <= 0:
        raise DataError("d_max must be positive")
    return float(np.clip(1.0 - np.linalg.norm(a - b) / d_max, 0.0, 1.0))


def multiview_matrix(queries: np.ndarray, targets: np.ndarray, d_max: Optional[float] = None):
    """Score matrix; ``d_max`` defaults to the diameter of the pooled corpus."""
    Qd = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    Td = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if Qd.shape[1] != Td.shape[1]:
        raise DataError("descriptor dimension mismatch")
    if d_max is None:
        d_max = corpus_diameter(np.vstack([Qd, Td]))
    D = np.linalg.norm(Qd[:, None, :] - Td[None, :, :], axis=2)
    return np.clip(1.0 - D / d_max, 0.0, 1.0), d_max
