import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps
from scipy.spatial.distance import cdist

from reliefkit import errors
from reliefkit.features.descriptors import normalize_bank
from reliefkit.mesh import FaceAdjacencyGraph, TriangleMesh, build_face_adjacency
from reliefkit.metrics import segmentation_metrics
from reliefkit.segment import (PropagationConfig, ReferenceBank, SegmenterConfig,
                               classify_sampled, load_bank, propagate_labels, sample_faces, save_bank,
                               segment_mesh)

from synthetic import sheet_bank, sheet_model


@pytest.fixture(scope="module")
def bank():
    return sheet_bank()


def _bank(X, y):
    X = np.asarray(X, float)
    return ReferenceBank(X, y, {int(c): f"c{c}" for c in np.unique(y) if c}, normalize_bank(
        np.vstack([X[:, :5], X[:, :5] + 1]) if X.shape[1] >= 5 else np.zeros((2, 5)))[1])


def _path(n):
    e = np.array([[i, i + 1] for i in range(n - 1)])
    return FaceAdjacencyGraph(n, e)


# ---------------------------------------------------------------- sampling

def test_sample_all_and_deterministic():
    assert sample_faces(50, 50).tolist() == list(range(50))
    assert np.array_equal(sample_faces(1000, 100, 4), sample_faces(1000, 100, 4))
    with pytest.raises(errors.DataError):
        sample_faces(10, 11)


def test_sampling_frequency_is_uniform():
    F, runs = 10_000, 100
    hits = np.zeros(F)
    for seed in range(runs):
        hits[sample_faces(F, F // 2, seed)] += 1
    freq = hits / runs
    assert freq.mean() == pytest.approx(0.5, abs=1e-12)
    # per-face counts should follow Binomial(100, 1/2): check the spread and tails
    assert freq.std() == pytest.approx(0.05, abs=0.005)
    assert np.all(np.abs(freq - 0.5) <= 0.25)
    within = np.mean(np.abs(hits - runs // 2) <= 5)
    expect = sps.binom.cdf(55, runs, 0.5) - sps.binom.cdf(44, runs, 0.5)
    assert within == pytest.approx(expect, abs=0.03)


# --------------------------------------------------------------------- kNN

def test_single_class_reference():
    ref = _bank(np.random.default_rng(0).random((20, 15)), np.full(20, 3))
    lab, conf = classify_sampled(np.random.default_rng(1).random((7, 15)), ref)
    assert np.all(lab == 3) and np.all(conf == 1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_separable_gaussians(seed):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(0, 0.1, (30, 15)), rng.normal(10, 0.1, (30, 15))])
    y = np.r_[np.full(30, 1), np.full(30, 2)]
    ref = _bank(X, y)
    Q = np.vstack([rng.normal(0, 0.1, (10, 15)), rng.normal(10, 0.1, (10, 15))])
    lab, conf = classify_sampled(Q, ref, k=5)
    # brute-force nearest-neighbor oracle
    nn = np.argsort(cdist(Q, X), axis=1, kind="stable")[:, :5]
    expect = [np.bincount(y[r]).argmax() for r in nn]
    assert lab.tolist() == expect == [1] * 10 + [2] * 10
    assert np.all(conf == 1.0)


def test_knn_tie_goes_to_lower_class():
    ref = _bank([[1.0] + [0] * 14, [-1.0] + [0] * 14], np.array([5, 2]))
    lab, conf = classify_sampled(np.zeros((1, 15)), ref, k=2)
    assert lab[0] == 2 and conf[0] == 0.5


# ------------------------------------------------------------- propagation

def test_all_prelabeled_is_identity():
    g = _path(5)
    labels = np.array([1, 2, 1, 1, 2])
    res = propagate_labels(g, None, labels, weights=g.matrix, return_result=True)
    assert np.array_equal(res.labeling.labels, labels)
    assert res.iterations == 1


def test_four_face_path():
    g = _path(4)
    res = propagate_labels(g, None, [1, -1, -1, 2], [1, 0, 0, 1], PropagationConfig(tau=0.5),
                           weights=g.matrix, return_result=True)
    assert res.labeling.labels.tolist() == [1, 1, 2, 2]
    assert res.fallback_faces == 0


def test_isolated_component_takes_global_majority():
    # component {0..4} labeled, component {5, 6} never reached
    e = np.array([[0, 1], [1, 2], [2, 3], [3, 4], [5, 6]])
    g = FaceAdjacencyGraph(7, e)
    labels = np.array([2, 2, 3, -1, 2, -1, -1])
    for policy in ("global-majority", "nearest-labeled"):
        res = propagate_labels(g, None, labels, config=PropagationConfig(fallback=policy),
                               weights=g.matrix, return_result=True)
        assert res.labeling.labels[5:].tolist() == [2, 2]
        assert np.all(res.labeling.labels >= 0)


def test_nearest_labeled_fallback_uses_graph_distance():
    # tau 1 with mixed neighbors blocks consensus in the middle
    g = _path(5)
    cfg = PropagationConfig(tau=1.0, fallback="nearest-labeled")
    res = propagate_labels(g, None, [1, -1, -1, -1, 3], config=cfg, weights=g.matrix, return_result=True)
    assert res.labeling.labels.tolist() == [1, 1, 1, 3, 3]
    cfg2 = PropagationConfig(tau=1.0, fallback="global-majority")
    res2 = propagate_labels(_path(3), None, [4, -1, 6], config=cfg2,
                            weights=_path(3).matrix, return_result=True)
    assert res2.labeling.labels.tolist() == [4, 4, 6] and res2.fallback_faces == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 1.0))
def test_propagation_total_and_monotone(seed, tau):
    rng = np.random.default_rng(seed)
    from reliefkit.synth.bases import make_grid

    m = make_grid(8)
    g = build_face_adjacency(m)
    labels = np.full(m.n_faces, -1)
    pick = rng.choice(m.n_faces, 6, replace=False)
    labels[pick] = rng.integers(0, 3, 6)
    res = propagate_labels(g, None, labels, rng.random(m.n_faces), PropagationConfig(tau=tau),
                           weights=g.matrix, return_result=True)
    assert np.all(res.labeling.labels >= 0)
    assert np.all(res.labeling.labels[pick] == labels[pick])
    assert all(a >= b for a, b in zip(res.history, res.history[1:]))


def test_propagation_errors():
    g = _path(3)
    with pytest.raises(errors.DataError):
        propagate_labels(g, None, [-1, -1, -1], weights=g.matrix)
    with pytest.raises(errors.DataError):
        propagate_labels(g, None, [1, -1], weights=g.matrix)
    with pytest.raises(errors.DataError):
        PropagationConfig(tau=0)
    with pytest.raises(errors.DataError):
        PropagationConfig(fallback="coinflip")


# ------------------------------------------------------------------- bank

def test_bank_roundtrip(bank, tmp_path):
    p = tmp_path / "b.rkb"
    save_bank(bank, p)
    b2 = load_bank(p)
    assert np.array_equal(b2.features, bank.features)
    assert np.array_equal(b2.labels, bank.labels)
    assert b2.catalog == bank.catalog
    assert b2.d_max == bank.d_max
    assert np.array_equal(b2.stats.mean, bank.stats.mean)
    assert b2.params == bank.params


def test_bank_rejects_garbage(tmp_path):
    p = tmp_path / "x.rkb"
    p.write_bytes(b"not a bank")
    with pytest.raises(errors.DataError):
        load_bank(p)


def test_bank_classes(bank):
    assert set(bank.class_counts()) == {0, 1, 2}
    assert bank.catalog == {1: "bumps", 2: "ridges"}
    assert bank.d_max > 0


# ---------------------------------------------------------------- segmentation

@pytest.mark.parametrize("cls", [1, 2])
def test_single_pattern_mesh(bank, cls):
    m, gt = sheet_model("sheet-flat", [cls], 50 + cls)
    lab = segment_mesh(m, bank)
    assert np.mean(lab.labels == cls) >= 0.95


def test_plain_grid(bank):
    m, gt = sheet_model("sheet-flat", [0], 77)
    lab = segment_mesh(m, bank)
    assert np.mean(lab.labels == 0) >= 0.95


def test_half_split_accuracy(bank):
    m, gt = sheet_model("sheet-flat", [1, 2], 99)
    lab = segment_mesh(m, bank)
    sm = segmentation_metrics(lab, gt, build_face_adjacency(m), band=2)
    assert sm.band_accuracy >= 0.90


def test_segmentation_deterministic_and_total(bank):
    m, _ = sheet_model("sheet-wavy", [2, 1], 5, resolution=2500)
    a = segment_mesh(m, bank)
    b = segment_mesh(m, bank)
    assert np.array_equal(a.labels, b.labels)
    assert len(a.labels) == m.n_faces and np.all(a.labels >= 0)


def test_permutation_equivariance_with_full_sampling(bank):
    m, _ = sheet_model("sheet-flat", [1, 2], 3, resolution=900)
    perm = np.random.default_rng(0).permutation(m.n_faces)
    mp = TriangleMesh(m.vertices, m.faces[perm])
    cfg = SegmenterConfig(sample_count=m.n_faces)
    a = segment_mesh(m, bank, cfg)
    b = segment_mesh(mp, bank, cfg)
    assert np.array_equal(a.labels[perm], b.labels)
