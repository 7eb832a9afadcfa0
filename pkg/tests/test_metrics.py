import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reliefkit import errors
from reliefkit.mesh import FaceAdjacencyGraph, PatternLabeling
from reliefkit.metrics import (boundary_band, filter_queries, query_metrics, read_report, relevance_from_labels,
                               retrieval_metrics, roc_auc, segmentation_metrics, write_report, write_roc_csv)

from oracles import naive_retrieval


def random_instance(rng, qmax=10, tmax=20):
    Q, T = rng.integers(1, qmax + 1), rng.integers(2, tmax + 1)
    M = rng.random((Q, T))
    if rng.random() < 0.5:  # plenty of ties
        M = np.round(M * 4) / 4
    R = (rng.random((Q, T)) < rng.uniform(0.1, 0.7)).astype(int)
    R[0, rng.integers(T)] = 1
    j = rng.integers(T)
    R[:, j] = 0  # at least one negative for ROC
    if R[0].sum() == 0:
        R[0, (j + 1) % T] = 1
    return M, R


# ------------------------------------------------------------------ relevance

def test_relevance_by_set_intersection():
    q = [{1, 2}]
    t = [{2, 3}, {3}, {1}]
    assert relevance_from_labels(q, t).tolist() == [[1, 0, 1]]
    assert relevance_from_labels([{4}], [{4}]).tolist() == [[1]]
    assert relevance_from_labels([{4}], [{5}]).tolist() == [[0]]
    assert relevance_from_labels(q, t, graded=True).tolist() == [[1, 0, 1]]
    lab = PatternLabeling([0, 0, 2])
    assert relevance_from_labels([lab], [PatternLabeling([0, 0])]).tolist() == [[0]]


def test_relevance_catalog_mismatch():
    a = PatternLabeling([1], catalog={1: "bumps"})
    b = PatternLabeling([1], catalog={1: "ridges"})
    with pytest.raises(errors.DataError, match="catalog mismatch"):
        relevance_from_labels([a], [b])


def test_filter_queries():
    M = np.array([[0.2, 0.3], [0.4, 0.5]])
    _, R, kept = filter_queries(M, [[1, 0], [0, 0]])
    assert kept.tolist() == [0]
    _, _, kept = filter_queries(M, [[1, 0], [0, 1]])
    assert kept.tolist() == [0, 1]
    with pytest.raises(errors.DataError, match="no evaluable queries"):
        filter_queries(M, [[0, 0], [0, 0]])


def test_exclusion_fixture_54_queries():
    rng = np.random.default_rng(0)
    R = (rng.random((54, 30)) < 0.3).astype(int)
    R[:, 0] = 1
    R[rng.choice(54, 6, replace=False)] = 0
    res = retrieval_metrics(rng.random((54, 30)), R)
    assert res.queries == 48


# ---------------------------------------------------------------- hand cases

def test_hand_fixture():
    q = query_metrics([0.9, 0.8, 0.7, 0.1], [1, 0, 1, 0])
    assert (q.nn, q.ft, q.st) == (1.0, 0.5, 1.0)
    assert q.ap == pytest.approx(5 / 6, abs=1e-12)
    assert q.ndcg == pytest.approx((1 + 1 / math.log2(4)) / (1 + 1 / math.log2(3)), abs=1e-12)
    assert q.e == pytest.approx(2 * 0.5 * 1 / 1.5)


def test_perfect_ranking():
    q = query_metrics([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert (q.nn, q.ft, q.st, q.ap, q.ndcg) == (1, 1, 1, 1, 1)


def test_ties_break_by_target_index():
    q = query_metrics([0.5, 0.5, 0.5], [0, 1, 0])
    assert q.nn == 0.0 and q.ap == 0.5


def test_graded_gains():
    q = query_metrics([0.9, 0.8], [1, 1], gains=[1, 2])
    ideal = 2 + 1 / math.log2(3)
    assert q.ndcg == pytest.approx((1 + 2 / math.log2(3)) / ideal)


def test_auc_fixtures():
    assert roc_auc([[0.9, 0.7, 0.8, 0.1]], [[1, 1, 0, 0]]).auc == 0.75
    assert roc_auc([[0.9, 0.8, 0.2, 0.1]], [[1, 1, 0, 0]]).auc == 1.0
    assert roc_auc([[0.3] * 4], [[1, 0, 1, 0]]).auc == 0.5
    with pytest.raises(errors.DataError):
        roc_auc([[0.1, 0.2]], [[1, 1]])


def test_roc_curve_shape():
    roc = roc_auc([[0.9, 0.7, 0.8, 0.1]], [[1, 1, 0, 0]])
    assert roc.fpr[0] == 0 and roc.tpr[0] == 0 and roc.fpr[-1] == 1 and roc.tpr[-1] == 1
    assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)
    assert np.trapezoid(roc.tpr, roc.fpr) == pytest.approx(roc.auc)


# ------------------------------------------------------------------- oracles

def test_random_instances_match_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        M, R = random_instance(rng)
        got = retrieval_metrics(M, R)
        ref = naive_retrieval(M.tolist(), R.tolist())
        for key, val in (("nn", got.nn), ("ft", got.ft), ("st", got.st), ("ap", got.map),
                         ("ndcg", got.ndcg), ("e", got.e), ("auc", got.auc)):
            assert val == pytest.approx(ref[key], abs=1e-9), key


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_cube_transform_invariance(seed):
    M, R = random_instance(np.random.default_rng(seed))
    a = retrieval_metrics(M, R).as_dict()
    b = retrieval_metrics(M ** 3, R).as_dict()
    for k in a:
        assert abs(a[k] - b[k]) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_metric_ranges(seed):
    M, R = random_instance(np.random.default_rng(seed))
    d = retrieval_metrics(M, R).as_dict()
    for k in ("NN", "FT", "ST", "mAP", "nDCG", "e", "AUC"):
        assert 0.0 <= d[k] <= 1.0
    assert d["FT"] <= d["ST"]


def test_random_scores_auc_near_half():
    rng = np.random.default_rng(7)
    R = (rng.random((40, 200)) < 0.3).astype(int)
    assert abs(roc_auc(rng.random((40, 200)), R).auc - 0.5) < 0.02


# -------------------------------------------------------------- segmentation

def test_segmentation_fixtures():
    s = segmentation_metrics([1, 2, 2, 2], [1, 1, 2, 2])
    assert s.accuracy == 0.75
    assert s.per_class_iou == {1: 0.5, 2: pytest.approx(2 / 3)}
    assert s.mean_iou == pytest.approx((0.5 + 2 / 3) / 2)
    same = segmentation_metrics([3, 0, 3], [3, 0, 3])
    assert same.accuracy == 1 and same.mean_iou == 1
    assert segmentation_metrics([1, 0], [0, 1]).accuracy == 0


def test_boundary_band_on_path():
    g = FaceAdjacencyGraph(8, np.array([[i, i + 1] for i in range(7)]))
    truth = np.array([1, 1, 1, 1, 2, 2, 2, 2])
    assert np.flatnonzero(boundary_band(g, truth, 0)).tolist() == [3, 4]
    assert np.flatnonzero(boundary_band(g, truth, 2)).tolist() == [1, 2, 3, 4, 5, 6]
    s = segmentation_metrics([1, 1, 2, 2, 2, 2, 2, 1], truth, g, band=2)
    assert s.band_accuracy == 0.5
    allband = segmentation_metrics([1, 2], [1, 2], FaceAdjacencyGraph(2, np.array([[0, 1]])), band=1)
    assert np.isnan(allband.band_accuracy)


# -------------------------------------------------------------------- reports

def test_report_roundtrip(tmp_path):
    M = np.array([[0.9, 0.8, 0.7, 0.1], [0.1, 0.2, 0.3, 0.4], [0.5, 0.5, 0.5, 0.5]])
    R = np.array([[1, 0, 1, 0], [0, 0, 0, 0], [0, 1, 0, 0]])
    res = retrieval_metrics(M, R)
    write_report(tmp_path / "r.jsonl", res, ["a", "b", "c"])
    rows = read_report(tmp_path / "r.jsonl")
    assert rows[0]["type"] == "summary" and rows[0]["queries"] == 2
    assert [r["id"] for r in rows[1:]] == ["a", "c"]
    assert rows[1]["AP"] == pytest.approx(5 / 6)
    write_roc_csv(tmp_path / "roc.csv", res.roc)
    lines = (tmp_path / "roc.csv").read_text().splitlines()
    assert lines[0] == "threshold,fpr,tpr" and lines[1].startswith("inf,0.0,0.0")
