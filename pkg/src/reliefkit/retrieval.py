"""Pattern signatures, pairwise scores, membership matrices and localization."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .fileio import read_matrix_csv, write_matrix_csv
from .mesh import PatternLabeling, TriangleMesh


@dataclass
class SignatureRegion:
    label: int
    share: float
    vector: np.ndarray  # per-channel mean then per-channel std


@dataclass
class ModelSignature:
    """Aggregated descriptors per detected pattern region of one model.

    ``d_max`` is the normalization diameter carried over from the bank.
    """

    regions: list[SignatureRegion]
    d_max: float = 1.0
    model_id: str = ""

    @property
    def labels(self) -> list[int]:
        return [r.label for r in self.regions]

    @property
    def vectors(self) -> np.ndarray:
        if not self.regions:
            return np.zeros((0, 0))
        return np.stack([r.vector for r in self.regions])

    def shares(self) -> np.ndarray:
        return np.array([r.share for r in self.regions])


def build_signature(labeling: PatternLabeling, sample_faces, normalized, d_max: float = 1.0,
                    include_plain: bool = False, allow_empty: bool = False,
                    model_id: str = "") -> ModelSignature:
    """Signature from a dense labeling and the normalized descriptors of sampled faces.

    Shares are exact face-count fractions of the dense labeling over the
    kept regions.  Regions that received no sampled face are dropped (their
    share is redistributed).  An all-plain labeling with plain excluded
    raises ``DataError("no pattern regions")`` unless ``allow_empty``.
    """
    labels = np.asarray(labeling.labels)
    faces = np.asarray(sample_faces, dtype=np.int64)
    Z = np.asarray(normalized, dtype=np.float64)
    if len(faces) != len(Z):
        raise DataError("one normalized descriptor per sampled face required")
    sample_labels = labels[faces]
    counts = np.bincount(labels)
    keep = [int(l) for l in np.flatnonzero(counts)
            if (include_plain or l != 0) and np.any(sample_labels == l)]
    if not keep:
        if allow_empty:
            return ModelSignature([], d_max, model_id)
        raise DataError("no pattern regions")
    total = float(sum(counts[l] for l in keep))
    regions = []
    for l in keep:
        x = Z[sample_labels == l]
        regions.append(SignatureRegion(l, counts[l] / total, np.concatenate([x.mean(0), x.std(0)])))
    return ModelSignature(regions, float(d_max), model_id)


def signature_from_mesh(mesh: TriangleMesh, labeling: PatternLabeling, bank, include_plain: bool = False,
                        allow_empty: bool = False, model_id: str = "") -> ModelSignature:
    """Describe ``mesh`` with the bank's feature settings, then aggregate per label."""
    from .segment import mesh_features

    labeling.check_length(mesh)
    s, z, _ = mesh_features(mesh, bank)
    return build_signature(labeling, s.faces, z, bank.d_max, include_plain, allow_empty, model_id)


def pair_scores(query: ModelSignature, target: ModelSignature, d_max: Optional[float] = None) -> np.ndarray:
    """(nq, nt) matrix of clamped ``1 - ||a - b|| / d_max`` over region pairs."""
    d = query.d_max if d_max is None else float(d_max)
    if d <= 0:
        raise DataError("d_max must be positive")
    A, B = query.vectors, target.vectors
    if len(A) == 0 or len(B) == 0:
        return np.zeros((len(A), len(B)))
    D = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=2)
    return np.clip(1.0 - D / d, 0.0, 1.0)


def score_pair(query: ModelSignature, target: ModelSignature, d_max: Optional[float] = None) -> float:
    """Best region-pair similarity; 0 when either side has no regions."""
    S = pair_scores(query, target, d_max)
    return float(S.max()) if S.size else 0.0


@dataclass
class MembershipMatrix:
    values: np.ndarray
    query_ids: list[str] = field(default_factory=list)
    target_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError("membership matrix must be 2D")
        Q, T = self.values.shape
        if not self.query_ids:
            self.query_ids = [f"q{i}" for i in range(Q)]
        if not self.target_ids:
            self.target_ids = [f"t{j}" for j in range(T)]
        if len(self.query_ids) != Q or len(self.target_ids) != T:
            raise DataError("membership ids do not match matrix dimensions")
        if not np.all(np.isfinite(self.values)) or self.values.min(initial=0) < 0 or self.values.max(initial=0) > 1:
            raise DataError("membership scores must be finite and within [0, 1]")

    @property
    def shape(self):
        return self.values.shape

    def to_csv(self, path):
        return write_matrix_csv(path, ["query"] + list(self.target_ids), list(self.query_ids), self.values)

    @classmethod
    def from_csv(cls, path) -> "MembershipMatrix":
        rows, cols, vals = read_matrix_csv(path)
        return cls(vals, rows, cols)


def build_membership_matrix(queries: Sequence[ModelSignature], targets: Sequence[ModelSignature],
                            d_max: Optional[float] = None) -> MembershipMatrix:
    if len(queries) == 0 or len(targets) == 0:
        raise DataError("membership matrix needs nonempty query and target sets")
    M = np.array([[score_pair(q, t, d_max) for t in targets] for q in queries])
    return MembershipMatrix(M, [q.model_id or f"q{i}" for i, q in enumerate(queries)],
                            [t.model_id or f"t{j}" for j, t in enumerate(targets)])


def localize_shared(query: ModelSignature, target_labeling: PatternLabeling, target: ModelSignature,
                    threshold: float = 0.8, d_max: Optional[float] = None) -> np.ndarray:
    """Annotate target faces whose region matches a query region.

    Each target region takes the query label with the highest pair score
    (ties to the lower label) if that score reaches ``threshold``; all
    other faces get 0.
    """
    out = np.zeros(len(target_labeling.labels), dtype=np.int64)
    S = pair_scores(query, target, d_max)
    if S.size == 0:
        return out
    qlabels = np.array(query.labels)
    order = np.argsort(qlabels, kind="stable")
    for j, reg in enumerate(target.regions):
        col = S[order, j]
        best = int(np.argmax(col))
        if col[best] >= threshold:
            out[target_labeling.labels == reg.label] = qlabels[order][best]
    return out
