"""Per-face local geometric descriptors and their normalization."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import DataError
from ..fileio import FLOAT_FMT, atomic_write_text
from ..mesh import FaceAttributes, TriangleMesh, build_face_adjacency
from .neighborhood import Neighborhood

CHANNELS = ("depth", "log_area", "surface_variation", "curvature", "normal_deviation")
N_CHANNELS = len(CHANNELS)

# eigenvalue ratio below which the centroid scatter is treated as a line
_COLLINEAR_EPS = 1e-12


@dataclass
class FaceDescriptor:
    depth: float
    log_area: float
    surface_variation: float
    curvature: float
    normal_deviation: float
    degenerate: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.depth, self.log_area, self.surface_variation,
                         self.curvature, self.normal_deviation])


@dataclass
class DescriptorSet:
    """Descriptors of a set of faces, rows aligned with ``faces``."""

    faces: np.ndarray
    values: np.ndarray  # (n, 5)
    degenerate: np.ndarray  # PCA degenerate flag
    fallback: np.ndarray  # neighborhood fell back to the 1-ring
    radius: np.ndarray

    def __len__(self):
        return len(self.faces)

    def subset(self, rows) -> "DescriptorSet":
        rows = np.asarray(rows)
        return DescriptorSet(self.faces[rows], self.values[rows], self.degenerate[rows],
                             self.fallback[rows], self.radius[rows])


def edge_neighbor_table(mesh: TriangleMesh, attrs: FaceAttributes):
    """Padded (F, m) tables of edge-adjacent faces and their dihedral angles."""
    e = build_face_adjacency(mesh, "edge").edges
    F = mesh.n_faces
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    cos = np.einsum("ij,ij->i", attrs.normals[src], attrs.normals[dst])
    ang = np.arccos(np.clip(cos, -1.0, 1.0))
    order = np.lexsort((dst, src))
    src, dst, ang = src[order], dst[order], ang[order]
    deg = np.bincount(src, minlength=F)
    m = max(int(deg.max()) if len(deg) else 0, 1)
    start = np.concatenate([[0], np.cumsum(deg)[:-1]])
    slot = np.arange(len(src)) - start[src]
    nbr = np.full((F, m), -1, dtype=np.int64)
    angle = np.zeros((F, m))
    nbr[src, slot] = dst
    angle[src, slot] = ang
    return nbr, angle


def _pad(neighborhoods: Sequence[Neighborhood]):
    sizes = np.array([len(n.faces) for n in neighborhoods])
    K = int(sizes.max())
    P = np.zeros((len(neighborhoods), K), dtype=np.int64)
    valid = np.arange(K)[None, :] < sizes[:, None]
    P[valid] = np.concatenate([n.faces for n in neighborhoods])
    return P, valid, sizes


def describe_faces(mesh: TriangleMesh, attrs: FaceAttributes, seeds,
                   neighborhoods: Sequence[Neighborhood], edge_table=None) -> DescriptorSet:
    """Vectorized descriptors for ``seeds`` given their neighborhoods.

    Channels: signed depth of the seed centroid w.r.t. the least-squares
    plane of the neighborhood centroids (plane normal oriented along the
    area-weighted mean normal); log of seed area over mean neighborhood
    area; surface variation ``l0 / (l0 + l1 + l2)``; area-weighted mean
    dihedral angle over edge pairs inside the neighborhood; angle between
    the seed normal and the mean normal.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    if len(seeds) != len(neighborhoods):
        raise DataError("one neighborhood per seed face required")
    if len(seeds) == 0:
        z = np.zeros(0, dtype=bool)
        return DescriptorSet(seeds, np.zeros((0, N_CHANNELS)), z, z, np.zeros(0))
    if any(len(n.faces) == 0 for n in neighborhoods):
        raise DataError("neighborhood must contain at least one face")
    nbr, angle = edge_neighbor_table(mesh, attrs) if edge_table is None else edge_table
    P, valid, sizes = _pad(neighborhoods)
    w = valid.astype(np.float64)
    S = len(seeds)

    C = attrs.centroids[P]  # (S, K, 3)
    A = attrs.areas[P] * w
    Nn = attrs.normals[P] * w[..., None]
    mean_c = (C * w[..., None]).sum(1) / sizes[:, None]
    mean_n = (Nn * attrs.areas[P][..., None]).sum(1)
    nn = np.linalg.norm(mean_n, axis=1)
    seed_n = attrs.normals[seeds]
    mean_n = np.where(nn[:, None] > 0, mean_n / np.where(nn > 0, nn, 1.0)[:, None], seed_n)

    D = (C - mean_c[:, None, :]) * w[..., None]
    cov = np.einsum("ski,skj->sij", D, D) / sizes[:, None, None]
    lam, vec = np.linalg.eigh(cov)
    lam = np.clip(lam, 0.0, None)
    total = lam.sum(1)
    plane_n = vec[:, :, 0]
    degenerate = (sizes < 3) | (lam[:, 1] <= _COLLINEAR_EPS * np.maximum(lam[:, 2], 1e-300))
    if degenerate.any():
        # normal of the plane through the best-fit line closest to the mean normal
        line = vec[degenerate, :, 2]
        m = mean_n[degenerate]
        pn = m - np.einsum("ij,ij->i", m, line)[:, None] * line
        pl = np.linalg.norm(pn, axis=1)
        pn = np.where(pl[:, None] > 1e-12, pn / np.where(pl > 0, pl, 1.0)[:, None], plane_n[degenerate])
        plane_n[degenerate] = pn
    flip = np.einsum("ij,ij->i", plane_n, mean_n) < 0
    plane_n[flip] *= -1
    depth = np.einsum("ij,ij->i", attrs.centroids[seeds] - mean_c, plane_n)
    sv = np.where((total > 0) & ~degenerate, lam[:, 0] / np.where(total > 0, total, 1.0), 0.0)
    sv = np.clip(sv, 0.0, 1.0 / 3.0)

    log_area = np.log(attrs.areas[seeds] / (A.sum(1) / sizes))

    # dihedral angles over edge pairs with both faces in the neighborhood
    F = mesh.n_faces
    offset = np.arange(S) * F
    members = (P + offset[:, None])[valid]
    keys = nbr[P] + offset[:, None, None]  # (S, K, m)
    inside = (nbr[P] >= 0) & valid[..., None]
    inside &= np.isin(keys, members)
    cnt = inside.sum(2)
    mean_ang = np.where(cnt > 0, (angle[P] * inside).sum(2) / np.maximum(cnt, 1), 0.0)
    wa = A * (cnt > 0)
    wsum = wa.sum(1)
    curv = np.where(wsum > 0, (wa * mean_ang).sum(1) / np.where(wsum > 0, wsum, 1.0), 0.0)

    ndev = np.arccos(np.clip(np.einsum("ij,ij->i", seed_n, mean_n), -1.0, 1.0))
    values = np.stack([depth, log_area, sv, curv, ndev], axis=1)
    return DescriptorSet(
        seeds, values, degenerate,
        np.array([n.fallback for n in neighborhoods]),
        np.array([n.radius for n in neighborhoods], dtype=np.float64),
    )


def face_descriptor(mesh: TriangleMesh, attrs: FaceAttributes, face: int,
                    neighborhood) -> FaceDescriptor:
    """Descriptor of one face over the given neighborhood (face ids or :class:`Neighborhood`)."""
    if not isinstance(neighborhood, Neighborhood):
        neighborhood = Neighborhood(np.unique(np.asarray(neighborhood, dtype=np.int64)), 0.0)
    ds = describe_faces(mesh, attrs, [face], [neighborhood])
    return FaceDescriptor(*ds.values[0].tolist(), degenerate=bool(ds.degenerate[0]))


@dataclass
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray
    zero_variance: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        out = (np.asarray(values, dtype=np.float64) - self.mean) / np.where(self.zero_variance, 1.0, self.std)
        out[:, self.zero_variance] = 0.0
        return out

    def invert(self, normalized: np.ndarray) -> np.ndarray:
        return np.asarray(normalized) * np.where(self.zero_variance, 0.0, self.std) + self.mean


def normalize_bank(descriptors, stats: Optional[ChannelStats] = None):
    """Per-channel z-score.

    With ``stats`` omitted the statistics come from ``descriptors`` itself
    (at least two rows needed); pass stored statistics to map new data into
    an existing normalized space.  Zero-variance channels map to 0 and are
    flagged in ``stats.zero_variance``.
    """
    X = np.asarray(descriptors.values if isinstance(descriptors, DescriptorSet) else descriptors,
                   dtype=np.float64)
    if X.ndim != 2:
        raise DataError("descriptor array must be 2D")
    if stats is None:
        if len(X) < 2:
            raise DataError("normalization needs at least two descriptors")
        mean = X.mean(0)
        std = X.std(0)
        zero = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
        stats = ChannelStats(mean, std, zero)
    return stats.apply(X), stats


def write_descriptor_csv(path, ds: DescriptorSet):
    lines = ["face_id," + ",".join(CHANNELS)]
    for f, row in zip(ds.faces, ds.values):
        lines.append(str(int(f)) + "," + ",".join(FLOAT_FMT % x for x in row))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_descriptor_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0].astype(np.int64), data[:, 1:]
