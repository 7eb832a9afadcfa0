"""Dense relief-pattern segmentation: sample, describe, classify, propagate."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .errors import DataError
from .features.descriptors import (N_CHANNELS, ChannelStats, DescriptorSet, describe_faces,
                                   edge_neighbor_table, normalize_bank)
from .features.neighborhood import NeighborhoodIndex, NeighborhoodParams
from .fileio import atomic_write_bytes
from .mesh import (FaceAdjacencyGraph, FaceAttributes, PatternLabeling, TriangleMesh,
                   build_face_adjacency, compute_face_attributes, mean_face_dihedral)

logger = logging.getLogger(__name__)

FALLBACKS = ("global-majority", "nearest-labeled")


# ------------------------------------------------------------------ sampling

def sample_faces(mesh_or_count, count: int, seed: int = 0) -> np.ndarray:
    """Uniform sample of face ids without replacement, sorted."""
    F = mesh_or_count.n_faces if isinstance(mesh_or_count, TriangleMesh) else int(mesh_or_count)
    if not 1 <= count <= F:
        raise DataError(f"sample count {count} must lie in [1, {F}]")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(F, size=count, replace=False))


# --------------------------------------------------------------- features

@dataclass(frozen=True)
class FeatureParams:
    """How sampled faces are turned into classifier features.

    ``context_radius`` is in mean-edge-length units: each sample is
    described by its own normalized descriptor plus the mean and standard
    deviation of the normalized descriptors of the samples within that
    radius.
    """

    sample_count: int = 2000
    seed: int = 0
    neighborhood: NeighborhoodParams = NeighborhoodParams()
    context_radius: float = 12.0
    relative_depth: bool = True  # divide depth by the bbox diagonal

    @property
    def dim(self) -> int:
        return 3 * N_CHANNELS


@dataclass
class MeshSample:
    """Descriptors of the sampled faces of one mesh."""

    faces: np.ndarray
    descriptors: DescriptorSet
    raw: np.ndarray  # descriptor matrix fed to normalization
    centroids: np.ndarray
    mean_edge: float
    attrs: FaceAttributes


def describe_mesh(mesh: TriangleMesh, params: FeatureParams, attrs: Optional[FaceAttributes] = None,
                  faces=None) -> MeshSample:
    attrs = compute_face_attributes(mesh) if attrs is None else attrs
    if faces is None:
        faces = sample_faces(mesh, min(params.sample_count, mesh.n_faces), params.seed)
    faces = np.asarray(faces, dtype=np.int64)
    index = NeighborhoodIndex(mesh, attrs, params.neighborhood)
    nbs = [index.query(int(f)) for f in faces]
    ds = describe_faces(mesh, attrs, faces, nbs, edge_neighbor_table(mesh, attrs))
    raw = ds.values.copy()
    if params.relative_depth:
        raw[:, 0] /= max(mesh.bbox_diagonal, 1e-300)
    return MeshSample(faces, ds, raw, attrs.centroids[faces], index.mean_edge, attrs)


def context_matrix(centroids: np.ndarray, radius: float) -> sparse.csr_matrix:
    """Binary matrix linking samples within ``radius`` of each other (self included)."""
    tree = cKDTree(centroids)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    n = len(centroids)
    r = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
    c = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
    return sparse.csr_matrix((np.ones(len(r)), (r, c)), shape=(n, n))


def context_features(sample: MeshSample, normalized: np.ndarray, params: FeatureParams) -> np.ndarray:
    A = context_matrix(sample.centroids, params.context_radius * sample.mean_edge)
    deg = np.asarray(A.sum(1)).ravel()
    mean = (A @ normalized) / deg[:, None]
    var = np.clip((A @ normalized ** 2) / deg[:, None] - mean ** 2, 0.0, None)
    return np.hstack([normalized, mean, np.sqrt(var)])


# ------------------------------------------------------------------- bank

BANK_MAGIC = b"RKBANK01"
BANK_VERSION = 1


@dataclass
class ReferenceBank:
    """Labeled classifier features harvested from training meshes.

    ``stats`` is the descriptor normalization every mesh is mapped through;
    ``d_max`` is the signature normalization diameter used by retrieval.
    """

    features: np.ndarray  # (n, D)
    labels: np.ndarray  # (n,) class ids, 0 = plain
    catalog: dict[int, str]
    stats: ChannelStats
    d_max: float = 1.0
    params: FeatureParams = field(default_factory=FeatureParams)
    _tree: Optional[cKDTree] = field(default=None, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise DataError("bank feature and label counts differ")

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.features)
        return self._tree

    def class_counts(self) -> dict[int, int]:
        u, c = np.unique(self.labels, return_counts=True)
        return {int(a): int(b) for a, b in zip(u, c)}


def save_bank(bank: ReferenceBank, path) -> Path:
    """Binary little-endian layout.

    ``magic[8] version:u32 n_classes:u32 n_rows:u64 dim:u32 channels:u32``,
    then per class ``id:u32 count:u64 name_len:u16 name[utf-8]``, then
    ``mean:f64[channels] std:f64[channels] zero_var:u8[channels]``, then
    ``d_max:f64 sample_count:u32 seed:u64 context_radius:f64
    radius_factor:f64 max_neighbors:u32 shrink:f64 max_shrinks:u32
    relative_depth:u8``, then the ``n_rows x dim`` f64 feature matrix in row
    order and ``n_rows`` u32 labels.
    """
    counts = bank.class_counts()
    p = bank.params
    out = [BANK_MAGIC, struct.pack("<IIQII", BANK_VERSION, len(counts), len(bank.labels),
                                   bank.features.shape[1] if bank.features.ndim == 2 else 0,
                                   len(bank.stats.mean))]
    for cid, n in counts.items():
        name = bank.catalog.get(cid, "plain" if cid == 0 else str(cid)).encode("utf-8")
        out.append(struct.pack("<IQH", cid, n, len(name)) + name)
    out.append(np.asarray(bank.stats.mean, "<f8").tobytes())
    out.append(np.asarray(bank.stats.std, "<f8").tobytes())
    out.append(np.asarray(bank.stats.zero_variance, "u1").tobytes())
    nb = p.neighborhood
    out.append(struct.pack("<dIQddIdIB", bank.d_max, p.sample_count, p.seed, p.context_radius,
                           nb.radius_factor, nb.max_neighbors, nb.shrink, nb.max_shrinks,
                           int(p.relative_depth)))
    out.append(np.ascontiguousarray(bank.features, "<f8").tobytes())
    out.append(bank.labels.astype("<u4").tobytes())
    return atomic_write_bytes(path, b"".join(out))


def load_bank(path) -> ReferenceBank:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read bank {path}: {exc}") from exc
    if data[:8] != BANK_MAGIC:
        raise DataError(f"{path}: not a reference bank file")
    try:
        pos = 8
        version, n_cls, n_rows, dim, ch = struct.unpack_from("<IIQII", data, pos)
        pos += struct.calcsize("<IIQII")
        if version != BANK_VERSION:
            raise DataError(f"{path}: unsupported bank version {version}")
        catalog = {}
        for _ in range(n_cls):
            cid, _n, ln = struct.unpack_from("<IQH", data, pos)
            pos += struct.calcsize("<IQH")
            catalog[int(cid)] = data[pos:pos + ln].decode("utf-8")
            pos += ln
        mean = np.frombuffer(data, "<f8", ch, pos).copy(); pos += 8 * ch
        std = np.frombuffer(data, "<f8", ch, pos).copy(); pos += 8 * ch
        zero = np.frombuffer(data, "u1", ch, pos).astype(bool); pos += ch
        fmt = "<dIQddIdIB"
        d_max, sc, seed, crad, rf, nmax, shrink, msh, rel = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        feats = np.frombuffer(data, "<f8", n_rows * dim, pos).reshape(n_rows, dim).copy()
        pos += 8 * n_rows * dim
        labels = np.frombuffer(data, "<u4", n_rows, pos).astype(np.int64)
        pos += 4 * n_rows
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated bank file") from exc
    if pos != len(data):
        raise DataError(f"{path}: trailing bytes in bank file")
    params = FeatureParams(int(sc), int(seed), NeighborhoodParams(rf, int(nmax), shrink, int(msh)),
                           crad, bool(rel))
    catalog.pop(0, None)
    return ReferenceBank(feats, labels, catalog, ChannelStats(mean, std, zero), float(d_max), params)


def region_aggregates(normalized: np.ndarray, labels: np.ndarray, include_plain: bool = False):
    """Per-label (label, mean, std) of normalized descriptors."""
    out = []
    for lab in np.unique(labels):
        if lab == 0 and not include_plain:
            continue
        x = normalized[labels == lab]
        out.append((int(lab), np.concatenate([x.mean(0), x.std(0)])))
    return out


def build_bank(meshes: Sequence[TriangleMesh], labelings: Sequence[PatternLabeling],
               params: FeatureParams = FeatureParams(), max_per_class: int = 4000,
               catalog: Optional[Mapping[int, str]] = None, seed: int = 0,
               percentile: float = 99.5) -> ReferenceBank:
    """Harvest features of sampled faces of labeled training meshes.

    Samples whose context ball mixes several ground-truth labels are left
    out, then every class is subsampled to at most ``max_per_class`` rows.
    """
    if len(meshes) == 0:
        raise DataError("bank needs at least one training mesh")
    samples, truths = [], []
    for mesh, lab in zip(meshes, labelings):
        lab.check_length(mesh)
        s = describe_mesh(mesh, params)
        samples.append(s)
        truths.append(lab.labels[s.faces])
    _, stats = normalize_bank(np.vstack([s.raw for s in samples]))
    feats, labs, aggs = [], [], []
    for s, t in zip(samples, truths):
        z = stats.apply(s.raw)
        f = context_features(s, z, params)
        A = context_matrix(s.centroids, params.context_radius * s.mean_edge)
        lo = np.full(len(t), np.iinfo(np.int64).max)
        hi = np.full(len(t), -1)
        coo = A.tocoo()
        np.minimum.at(lo, coo.row, t[coo.col])
        np.maximum.at(hi, coo.row, t[coo.col])
        pure = lo == hi
        feats.append(f[pure])
        labs.append(t[pure])
        aggs.extend(a for _, a in region_aggregates(z, t))
    feats = np.vstack(feats)
    labs = np.concatenate(labs)
    rng = np.random.default_rng(seed)
    keep = []
    for c in np.unique(labs):
        idx = np.flatnonzero(labs == c)
        if len(idx) > max_per_class:
            idx = np.sort(rng.choice(idx, size=max_per_class, replace=False))
        keep.append(idx)
    keep = np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)
    if len(keep) == 0:
        raise DataError("no pure training samples; bank would be empty")
    d_max = signature_diameter(np.array(aggs), percentile) if len(aggs) >= 2 else 1.0
    cat = dict(catalog) if catalog else {}
    for lab in labelings:
        if lab.catalog:
            cat.update(lab.catalog)
    present = [int(c) for c in np.unique(labs) if c != 0]
    cat = {c: str(cat.get(c, f"class-{c}")) for c in present}
    return ReferenceBank(feats[keep], labs[keep], cat, stats, d_max, params)


def signature_diameter(aggregates: np.ndarray, percentile: float = 99.5) -> float:
    from scipy.spatial.distance import pdist

    d = pdist(np.asarray(aggregates, dtype=np.float64))
    if len(d) == 0:
        return 1.0
    v = float(np.percentile(d, percentile))
    return v if v > 0 else 1.0


# ------------------------------------------------------------- classifier

def classify_sampled(features: np.ndarray, reference: ReferenceBank, k: int = 7):
    """k-nearest-neighbor vote in feature space.

    Returns ``(labels, confidence)``; confidence is the winning class's
    share of the ``k`` votes, ties go to the lowest class id.
    """
    if len(reference.labels) == 0:
        raise DataError("empty reference bank")
    if k < 1:
        raise DataError("k must be at least 1")
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    k_eff = min(k, len(reference.labels))
    _, idx = reference.tree().query(X, k=k_eff)
    idx = np.asarray(idx).reshape(len(X), k_eff)
    classes = reference.classes
    votes_cls = np.searchsorted(classes, reference.labels[idx])
    counts = np.zeros((len(X), len(classes)), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(len(X)), k_eff), votes_cls.ravel()), 1)
    best = np.argmax(counts, axis=1)  # first max -> lowest class id
    conf = counts[np.arange(len(X)), best] / float(k_eff)
    return classes[best], conf


# ------------------------------------------------------------ propagation

@dataclass(frozen=True)
class PropagationConfig:
    """Vote weight ``alpha*max(0, n_i.n_j) + beta*exp(-d^2 / 2 sigma^2) + gamma*exp(-|k_i - k_j|)``.

    ``sigma`` is ``sigma_factor`` mean edge lengths.
    """

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    tau: float = 0.4
    max_iterations: int = 200
    fallback: str = "global-majority"
    sigma_factor: float = 3.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0 or self.alpha + self.beta + self.gamma <= 0:
            raise DataError("vote weights must be non-negative and not all zero")
        if not 0 < self.tau <= 1:
            raise DataError("tau must lie in (0, 1]")
        if self.max_iterations < 1:
            raise DataError("max_iterations must be at least 1")
        if self.fallback not in FALLBACKS:
            raise DataError(f"unknown fallback {self.fallback!r}")


def edge_weights(graph: FaceAdjacencyGraph, attrs: Optional[FaceAttributes], config: PropagationConfig,
                 curvature: Optional[np.ndarray] = None, sigma: Optional[float] = None) -> sparse.csr_matrix:
    e = graph.edges
    i, j = e[:, 0], e[:, 1]
    w = np.zeros(len(e))
    if config.alpha and attrs is not None:
        w += config.alpha * np.maximum(0.0, np.einsum("ij,ij->i", attrs.normals[i], attrs.normals[j]))
    if config.beta and attrs is not None:
        d2 = np.sum((attrs.centroids[i] - attrs.centroids[j]) ** 2, axis=1)
        s = sigma if sigma else 1.0
        w += config.beta * np.exp(-d2 / (2 * s * s))
    if config.gamma:
        kap = np.zeros(graph.n_faces) if curvature is None else np.asarray(curvature)
        w += config.gamma * np.exp(-np.abs(kap[i] - kap[j]))
    W = sparse.csr_matrix((np.r_[w, w], (np.r_[i, j], np.r_[j, i])), shape=(graph.n_faces,) * 2)
    W.sort_indices()
    return W


@dataclass
class PropagationResult:
    labeling: PatternLabeling
    iterations: int
    history: list[int]  # unlabeled count after each iteration
    fallback_faces: int


def _one_hot(labels, conf, classes):
    F = len(labels)
    lab = labels >= 0
    col = np.searchsorted(classes, labels[lab])
    return sparse.csr_matrix((conf[lab], (np.flatnonzero(lab), col)), shape=(F, len(classes)))


def propagate_labels(graph: FaceAdjacencyGraph, attrs: Optional[FaceAttributes], labels, confidence=None,
                     config: PropagationConfig = PropagationConfig(), curvature=None,
                     sigma: Optional[float] = None, weights: Optional[sparse.csr_matrix] = None,
                     return_result: bool = False):
    """Synchronous weighted voting from labeled seed faces.

    ``labels`` holds a class id per face or -1 for unlabeled.  Each round
    every unlabeled face sums ``w_ij * conf_j`` per label over its labeled
    neighbors and adopts the top label when its share of the vote is at
    least ``tau`` (its confidence becomes that share).  Seeds never change.
    Faces still unlabeled after convergence get the fallback label.
    """
    labels = np.asarray(labels, dtype=np.int64).copy()
    F = graph.n_faces
    if len(labels) != F:
        raise DataError("label array length differs from graph size")
    conf = np.ones(F) if confidence is None else np.asarray(confidence, dtype=np.float64).copy()
    conf = np.where(labels >= 0, conf, 0.0)
    if not np.any(labels >= 0):
        raise DataError("no labeled faces to propagate from")
    W = edge_weights(graph, attrs, config, curvature, sigma) if weights is None else weights
    classes = np.unique(labels[labels >= 0])
    history = []
    it = 0
    while it < config.max_iterations:
        it += 1
        un = labels < 0
        if not un.any():
            history.append(0)
            break
        V = (W[un] @ _one_hot(labels, conf, classes)).toarray()
        tot = V.sum(1)
        best = np.argmax(V, axis=1)
        share = np.where(tot > 0, V[np.arange(len(V)), best] / np.where(tot > 0, tot, 1.0), 0.0)
        adopt = (tot > 0) & (share >= config.tau)
        rows = np.flatnonzero(un)[adopt]
        labels[rows] = classes[best[adopt]]
        conf[rows] = share[adopt]
        history.append(int((labels < 0).sum()))
        if not adopt.any():
            break
    remaining = labels < 0
    n_fb = int(remaining.sum())
    if n_fb:
        labels, conf = _fallback(graph, labels, conf, classes, config.fallback)
    lab = PatternLabeling(labels, conf)
    if return_result:
        return PropagationResult(lab, it, history, n_fb)
    return lab


def _majority(labels, classes):
    counts = np.bincount(np.searchsorted(classes, labels[labels >= 0]), minlength=len(classes))
    return classes[int(np.argmax(counts))]


def _fallback(graph, labels, conf, classes, policy):
    labels = labels.copy()
    conf = conf.copy()
    if policy == "nearest-labeled":
        A = graph.matrix
        while np.any(labels < 0):
            un = labels < 0
            Y = _one_hot(labels, np.ones(len(labels)), classes)
            V = (A[un] @ Y).toarray()
            reach = V.sum(1) > 0
            if not reach.any():
                break  # components without any labeled face
            rows = np.flatnonzero(un)[reach]
            labels[rows] = classes[np.argmax(V[reach], axis=1)]
            conf[rows] = 0.0
    rest = labels < 0
    if rest.any():
        labels[rest] = _majority(labels, classes)
        conf[rest] = 0.0
    return labels, conf


# ------------------------------------------------------------ full pipeline

@dataclass(frozen=True)
class SegmenterConfig:
    k: int = 7
    propagation: PropagationConfig = PropagationConfig()
    adjacency: str = "vertex"
    sample_count: Optional[int] = None  # defaults to the bank's
    seed: Optional[int] = None


def mesh_features(mesh: TriangleMesh, bank: ReferenceBank, params: Optional[FeatureParams] = None,
                  attrs=None, faces=None):
    params = bank.params if params is None else params
    s = describe_mesh(mesh, params, attrs, faces)
    z = bank.stats.apply(s.raw)
    return s, z, context_features(s, z, params)


def segment_mesh(mesh: TriangleMesh, reference: ReferenceBank,
                 config: SegmenterConfig = SegmenterConfig(), return_details: bool = False):
    """Label every face: sample, describe, normalize, classify, propagate."""
    params = reference.params
    if config.sample_count is not None or config.seed is not None:
        params = replace(params,
                         sample_count=config.sample_count if config.sample_count is not None else params.sample_count,
                         seed=config.seed if config.seed is not None else params.seed)
    attrs = compute_face_attributes(mesh)
    s, z, feats = mesh_features(mesh, reference, params, attrs)
    lab, conf = classify_sampled(feats, reference, config.k)
    sparse_labels = np.full(mesh.n_faces, -1, dtype=np.int64)
    sparse_labels[s.faces] = lab
    sparse_conf = np.zeros(mesh.n_faces)
    sparse_conf[s.faces] = conf
    graph = build_face_adjacency(mesh, config.adjacency)
    curv = mean_face_dihedral(mesh, attrs)
    res = propagate_labels(graph, attrs, sparse_labels, sparse_conf, config.propagation, curv,
                           sigma=config.propagation.sigma_factor * s.mean_edge, return_result=True)
    labeling = PatternLabeling(res.labeling.labels, res.labeling.confidence,
                               {k: v for k, v in reference.catalog.items()
                                if k in set(res.labeling.labels.tolist())})
    if return_details:
        return labeling, {"sample": s, "normalized": z, "features": feats, "sparse_labels": lab,
                          "sparse_conf": conf, "propagation": res}
    return labeling
