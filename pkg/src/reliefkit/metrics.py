"""Retrieval and segmentation evaluation.

Ranking convention: descending score, ties broken by ascending target
index.  Relevance is binary (shares at least one nonzero pattern class)
unless graded gains are requested for nDCG.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataError
from .fileio import atomic_write_text
from .mesh import FaceAdjacencyGraph, PatternLabeling

E_CUTOFF = 32


def _pattern_set(x) -> set[int]:
    if isinstance(x, PatternLabeling):
        return x.pattern_set()
    return {int(v) for v in x if int(v) != 0}


def _check_catalogs(items):
    merged: dict[int, str] = {}
    for it in items:
        cat = getattr(it, "catalog", None)
        if not cat:
            continue
        for k, v in cat.items():
            if merged.setdefault(k, v) != v:
                raise DataError(f"catalog mismatch for class {k}: {merged[k]!r} vs {v!r}")


def relevance_from_labels(queries: Sequence, targets: Sequence, graded: bool = False) -> np.ndarray:
    """Q x T relevance: 1 where the nonzero pattern sets intersect.

    Items may be :class:`PatternLabeling` objects or iterables of class ids.
    With ``graded`` the entry is the number of shared classes.
    """
    _check_catalogs(list(queries) + list(targets))
    qs = [_pattern_set(q) for q in queries]
    ts = [_pattern_set(t) for t in targets]
    R = np.array([[len(q & t) for t in ts] for q in qs], dtype=np.int64).reshape(len(qs), len(ts))
    return R if graded else (R > 0).astype(np.int64)


def _values(m):
    return np.asarray(getattr(m, "values", m), dtype=np.float64)


def filter_queries(membership, relevance):
    """Drop queries without any relevant target.

    Returns ``(membership, relevance, kept_rows)``.
    """
    M = _values(membership)
    R = np.asarray(relevance)
    if M.shape != R.shape:
        raise DataError(f"membership shape {M.shape} differs from relevance shape {R.shape}")
    keep = np.flatnonzero((R > 0).any(axis=1))
    if len(keep) == 0:
        raise DataError("no evaluable queries")
    return M[keep], R[keep], keep


def ranking(scores: np.ndarray) -> np.ndarray:
    """Target order: descending score, ascending index on ties."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(len(scores)), -scores))


@dataclass
class QueryMetrics:
    nn: float
    ft: float
    st: float
    ap: float
    ndcg: float
    e: float


def query_metrics(scores, relevance, gains=None, cutoff: int = E_CUTOFF) -> QueryMetrics:
    rel = (np.asarray(relevance) > 0).astype(np.float64)
    T = len(rel)
    r = int(rel.sum())
    if r == 0:
        raise DataError("query has no relevant target")
    order = ranking(scores)
    hits = rel[order]
    cum = np.cumsum(hits)
    ranks = np.arange(1, T + 1)
    nn = hits[0]
    ft = cum[r - 1] / r
    st = cum[min(2 * r, T) - 1] / r
    ap = float(np.mean(cum[hits > 0] / ranks[hits > 0]))
    g = rel if gains is None else np.asarray(gains, dtype=np.float64)
    disc = 1.0 / np.log2(ranks + 1)
    dcg = float(np.sum(g[order] * disc))
    idcg = float(np.sum(np.sort(g)[::-1] * disc))
    ndcg = dcg / idcg
    c = min(cutoff, T)
    k = cum[c - 1]
    p, rc = k / c, k / r
    e = 0.0 if k == 0 else 2.0 / (1.0 / p + 1.0 / rc)
    return QueryMetrics(float(nn), float(ft), float(st), ap, ndcg, float(e))


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_auc(membership, relevance) -> RocCurve:
    """Pooled ROC over all (query, target) pairs and its AUC.

    AUC is the Mann-Whitney statistic with ties counted half; the curve has
    one point per distinct score threshold plus the (0, 0) origin.
    """
    s = _values(membership).ravel()
    y = (np.asarray(relevance) > 0).ravel()
    P, N = int(y.sum()), int((~y).sum())
    if P == 0 or N == 0:
        raise DataError("ROC needs at least one positive and one negative pair")
    ranks = rankdata(s)
    auc = (ranks[y].sum() - P * (P + 1) / 2.0) / (P * N)
    thr = np.unique(s)[::-1]
    pos = np.sort(s[y])
    neg = np.sort(s[~y])
    tp = P - np.searchsorted(pos, thr, side="left")
    fp = N - np.searchsorted(neg, thr, side="left")
    fpr = np.concatenate([[0.0], fp / N])
    tpr = np.concatenate([[0.0], tp / P])
    return RocCurve(fpr, tpr, np.concatenate([[np.inf], thr]), float(auc))


@dataclass
class RetrievalMetrics:
    nn: float
    ft: float
    st: float
    map: float
    ndcg: float
    e: float
    auc: float
    queries: int
    roc: Optional[RocCurve] = field(default=None, repr=False)
    per_query: list = field(default_factory=list, repr=False)
    kept: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {"NN": self.nn, "FT": self.ft, "ST": self.st, "mAP": self.map, "nDCG": self.ndcg,
                "e": self.e, "AUC": self.auc, "queries": self.queries}


def retrieval_metrics(membership, relevance, gains=None, cutoff: int = E_CUTOFF,
                      filtered: bool = False) -> RetrievalMetrics:
    """Average the per-query metrics over queries with at least one relevant target.

    ``gains`` (same shape as ``relevance``) switches nDCG to graded gains.
    Set ``filtered`` when the rows were already filtered.
    """
    M = _values(membership)
    R = np.asarray(relevance)
    if filtered:
        if M.shape != R.shape:
            raise DataError("membership and relevance shapes differ")
        kept = np.arange(len(M))
        if len(M) == 0 or not np.all((R > 0).any(1)):
            raise DataError("no evaluable queries")
    else:
        M, R, kept = filter_queries(M, R)
    G = None if gains is None else np.asarray(gains, dtype=np.float64)[kept]
    per = [query_metrics(M[i], R[i], None if G is None else G[i], cutoff) for i in range(len(M))]
    roc = roc_auc(M, R)
    mean = {k: float(np.mean([getattr(p, k) for p in per])) for k in ("nn", "ft", "st", "ap", "ndcg", "e")}
    return RetrievalMetrics(mean["nn"], mean["ft"], mean["st"], mean["ap"], mean["ndcg"], mean["e"],
                            roc.auc, len(M), roc, per, [int(k) for k in kept])


# ---------------------------------------------------------------- segmentation

@dataclass
class SegmentationMetrics:
    accuracy: float
    mean_iou: float
    band_accuracy: float
    band: int
    per_class_iou: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["per_class_iou"] = {str(k): v for k, v in self.per_class_iou.items()}
        return d


def boundary_band(graph: FaceAdjacencyGraph, truth: np.ndarray, rings: int) -> np.ndarray:
    """Faces within ``rings`` graph hops of a face touching a differently labeled face."""
    e = graph.edges
    truth = np.asarray(truth)
    diff = truth[e[:, 0]] != truth[e[:, 1]]
    band = np.zeros(graph.n_faces, dtype=bool)
    band[e[diff].ravel()] = True
    A = graph.matrix
    for _ in range(max(rings, 0)):
        band |= (A @ band.astype(np.float64)) > 0
    return band


def segmentation_metrics(predicted, truth, graph: Optional[FaceAdjacencyGraph] = None,
                         band: int = 2) -> SegmentationMetrics:
    p = np.asarray(getattr(predicted, "labels", predicted))
    t = np.asarray(getattr(truth, "labels", truth))
    if len(p) != len(t):
        raise DataError("predicted and truth labelings differ in length")
    if len(t) == 0:
        raise DataError("empty labeling")
    ok = p == t
    ious = {}
    for c in np.unique(t):
        inter = np.sum((p == c) & (t == c))
        union = np.sum((p == c) | (t == c))
        ious[int(c)] = float(inter / union)
    if graph is not None and band >= 0:
        keep = ~boundary_band(graph, t, band)
        band_acc = float(ok[keep].mean()) if keep.any() else float("nan")
    else:
        band_acc = float(ok.mean())
    return SegmentationMetrics(float(ok.mean()), float(np.mean(list(ious.values()))), band_acc, band, ious)


# ---------------------------------------------------------------- reports

def _clean(x):
    if isinstance(x, float):
        return float(repr(x)) if np.isfinite(x) else None
    return x


def write_report(path, metrics: RetrievalMetrics, query_ids: Optional[Sequence[str]] = None,
                 extra: Optional[Mapping] = None):
    """JSON-lines report: one summary line, then one line per retained query."""
    summary = {"type": "summary", **metrics.as_dict()}
    if extra:
        summary.update(extra)
    lines = [json.dumps({k: _clean(v) for k, v in summary.items()}, sort_keys=True)]
    for k, q in zip(metrics.kept, metrics.per_query):
        rec = {"type": "query", "index": k,
               "id": query_ids[k] if query_ids is not None else str(k),
               "NN": q.nn, "FT": q.ft, "ST": q.st, "AP": q.ap, "nDCG": q.ndcg, "e": q.e}
        lines.append(json.dumps(rec, sort_keys=True))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def write_roc_csv(path, roc: RocCurve):
    rows = ["threshold,fpr,tpr"]
    for th, f, t in zip(roc.thresholds, roc.fpr, roc.tpr):
        rows.append(f"{'inf' if np.isinf(th) else repr(float(th))},{float(f)!r},{float(t)!r}")
    return atomic_write_text(path, "\n".join(rows) + "\n")


def read_report(path) -> list[dict]:
    from pathlib import Path

    return [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]


__all__ = ["relevance_from_labels", "filter_queries", "retrieval_metrics", "roc_auc",
           "segmentation_metrics", "RetrievalMetrics", "SegmentationMetrics", "RocCurve",
           "write_report", "write_roc_csv", "query_metrics", "ranking", "boundary_band"]
