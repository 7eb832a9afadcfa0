import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from reliefkit import errors
from reliefkit.features.descriptors import (describe_faces, face_descriptor, normalize_bank,
                                            read_descriptor_csv, write_descriptor_csv)
from reliefkit.features.lscm import conformal_energy, lscm_flatten
from reliefkit.features.neighborhood import (NeighborhoodIndex, NeighborhoodParams, collect_neighborhood,
                                             collect_neighborhoods)
from reliefkit.features.raster import assign_cells, export_patch_pgm, rasterize_patch
from reliefkit.fileio import read_pgm
from reliefkit.mesh import TriangleMesh, compute_face_attributes, mean_edge_length
from reliefkit.synth.bases import icosphere, make_grid
from reliefkit.synth.heightfield import make_heightfield
from reliefkit.synth.relief import apply_relief

from oracles import barycentric_inside, similarity_rms, svd_surface_variation

# unit-spaced planar grid, 40 x 40 cells
GRID = make_grid(41).transformed(scale=40.0)
GRID_ATTRS = compute_face_attributes(GRID)


def _bumpy(n=30, seed=0):
    g = make_grid(n)
    out, _ = apply_relief(g, np.zeros(g.n_faces, int), {0: 1}, {1: make_heightfield("bumps", 3)}, 0.03)
    return out


# ----------------------------------------------------------- neighborhoods

def test_isolated_triangle():
    m = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    nb = collect_neighborhood(m, compute_face_attributes(m), 0)
    assert nb.faces.tolist() == [0]
    assert nb.radius == pytest.approx(3.0 * mean_edge_length(m))
    assert not nb.fallback


def test_center_seed_shrinks_to_brute_force():
    c = GRID_ATTRS.centroids
    seed = int(np.argmin(np.linalg.norm(c - c.mean(0), axis=1)))
    me = mean_edge_length(GRID)
    r0 = np.sqrt(300 / (2 * np.pi))  # two faces per unit area
    params = NeighborhoodParams(radius_factor=r0 / me, max_neighbors=100)
    d = np.linalg.norm(c - c[seed], axis=1)
    assert 250 <= (d <= r0).sum() <= 350
    nb = collect_neighborhood(GRID, GRID_ATTRS, seed, params)
    assert nb.shrinks >= 1 and not nb.fallback
    assert len(nb.faces) <= 100
    assert nb.faces.tolist() == np.flatnonzero(d <= nb.radius).tolist()
    assert nb.radius == pytest.approx(r0 * 0.75 ** nb.shrinks)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, GRID.n_faces - 1), st.floats(0.5, 8.0), st.integers(8, 150))
def test_neighborhood_matches_distance_scan(face, factor, nmax):
    params = NeighborhoodParams(radius_factor=factor, max_neighbors=nmax)
    nb = collect_neighborhood(GRID, GRID_ATTRS, face, params)
    c = GRID_ATTRS.centroids
    d = np.linalg.norm(c - c[face], axis=1)
    assert face in nb.faces
    assert np.all(d[nb.faces] <= nb.radius * (1 + 1e-12))
    if not nb.fallback:
        expect = np.union1d(np.flatnonzero(d <= nb.radius), [face])
        assert nb.faces.tolist() == expect.tolist()
        assert len(nb.faces) <= nmax


def test_one_ring_fallback():
    # a fan with 12 triangles has a 12-face 1-ring; N_max 8 cannot hold it
    ang = np.linspace(0, 2 * np.pi, 13)[:-1]
    v = np.vstack([[0, 0, 0], np.c_[np.cos(ang), np.sin(ang), np.zeros(12)]])
    f = [[0, 1 + i, 1 + (i + 1) % 12] for i in range(12)]
    m = TriangleMesh(v, f)
    nb = collect_neighborhood(m, compute_face_attributes(m), 0, NeighborhoodParams(max_neighbors=8))
    assert nb.fallback
    assert nb.faces.tolist() == list(range(12))


def test_neighborhood_errors():
    with pytest.raises(errors.DataError):
        collect_neighborhood(GRID, GRID_ATTRS, GRID.n_faces)
    with pytest.raises(errors.DataError):
        NeighborhoodParams(shrink=1.0)
    with pytest.raises(errors.DataError):
        NeighborhoodParams(max_neighbors=2)


# ------------------------------------------------------------- descriptors

def test_planar_descriptor():
    d = face_descriptor(GRID, GRID_ATTRS, 500, collect_neighborhood(GRID, GRID_ATTRS, 500))
    assert abs(d.depth) < 1e-12
    assert abs(d.surface_variation) < 1e-12
    assert abs(d.normal_deviation) < 1e-7
    assert abs(d.curvature) < 1e-7


def test_rigid_motion_invariance():
    m = _bumpy()
    R = Rotation.from_euler("xyz", [0.3, -1.1, 2.0]).as_matrix()
    moved = m.transformed(R, offset=[5.0, -2.0, 1.5])
    faces = np.arange(0, m.n_faces, 37)
    out = []
    for mesh in (m, moved):
        a = compute_face_attributes(mesh)
        idx = NeighborhoodIndex(mesh, a)
        out.append(describe_faces(mesh, a, faces, collect_neighborhoods(idx, faces)).values)
    assert np.allclose(out[0], out[1], atol=1e-9, rtol=0)


@pytest.mark.parametrize("face", [0, 100, 2000])
def test_spherical_cap_surface_variation_matches_svd(face):
    s = icosphere(4)
    a = compute_face_attributes(s)
    nb = collect_neighborhood(s, a, face, NeighborhoodParams(radius_factor=4.0))
    d = face_descriptor(s, a, face, nb)
    assert d.surface_variation > 0
    assert d.surface_variation == pytest.approx(svd_surface_variation(a.centroids[nb.faces]), abs=1e-9)
    assert d.curvature > 0


def test_descriptor_given_face_list():
    a = compute_face_attributes(GRID)
    d = face_descriptor(GRID, a, 3, [3, 4, 5])
    assert d.degenerate or d.surface_variation == pytest.approx(0, abs=1e-12)


def test_collinear_neighborhood_is_flagged():
    v = np.array([[0, 0, 0], [1, 0, 0], [0.5, 1e-3, 0]], float)
    m = TriangleMesh(v, [[0, 1, 2]])
    d = face_descriptor(m, compute_face_attributes(m), 0, [0])
    assert d.degenerate and d.surface_variation == 0


def test_descriptor_csv_roundtrip(tmp_path):
    m = _bumpy(12)
    a = compute_face_attributes(m)
    faces = np.arange(0, m.n_faces, 5)
    ds = describe_faces(m, a, faces, collect_neighborhoods(NeighborhoodIndex(m, a), faces))
    write_descriptor_csv(tmp_path / "d.csv", ds)
    f, v = read_descriptor_csv(tmp_path / "d.csv")
    assert np.array_equal(f, faces) and np.array_equal(v, ds.values)


# ------------------------------------------------------------ normalization

@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.integers(0, 10_000))
def test_normalization_moments(n, seed):
    X = np.random.default_rng(seed).normal(3, 2, (n, 5))
    Z, stats = normalize_bank(X)
    ok = ~stats.zero_variance
    assert np.allclose(Z.mean(0), 0, atol=1e-9)
    assert np.allclose(Z[:, ok].var(0), 1, atol=1e-6)


def test_normalization_duplicated_row():
    Z, stats = normalize_bank(np.tile([1.0, -2.0, 0.1, 5.0, 0.0], (10, 1)))
    assert np.all(Z == 0) and np.all(stats.zero_variance)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 4), st.floats(-100, 100), st.integers(0, 1000))
def test_normalization_shift_invariance(ch, c, seed):
    X = np.random.default_rng(seed).random((20, 5))
    Y = X.copy()
    Y[:, ch] += c
    assert np.allclose(normalize_bank(X)[0], normalize_bank(Y)[0], atol=1e-8)


def test_normalization_apply_and_invert():
    X = np.random.default_rng(1).random((30, 5))
    Z, stats = normalize_bank(X)
    assert np.allclose(stats.invert(Z), X)
    Z2, _ = normalize_bank(X[:4], stats)
    assert np.allclose(Z2, Z[:4])
    with pytest.raises(errors.DataError):
        normalize_bank(X[:1])


# -------------------------------------------------------------------- LSCM

def test_planar_patch_identity():
    rng = np.random.default_rng(3)
    g = make_grid(15)
    xy = g.vertices[:, :2] + rng.uniform(-0.01, 0.01, (g.n_vertices, 2))
    R = Rotation.from_euler("xyz", [0.7, 0.2, -0.4]).as_matrix()
    pts = np.c_[xy, np.zeros(len(xy))] @ R.T + [1, 2, 3]
    m = TriangleMesh(pts, g.faces)
    res = lscm_flatten(m, np.arange(m.n_faces))
    diam = np.linalg.norm(np.ptp(xy, axis=0))
    assert similarity_rms(res.uv, xy[res.vertices]) < 1e-6 * diam
    assert res.flipped == 0
    assert conformal_energy(m.vertices[res.vertices], m.faces, res.uv) < 1e-12


def half_cylinder(r=1.0, h=2.6, nt=64, nz=40):
    t = np.linspace(0, np.pi, nt)
    z = np.linspace(0, h, nz)
    T, Z = np.meshgrid(t, z, indexing="ij")
    v = np.c_[r * np.cos(T.ravel()), r * np.sin(T.ravel()), Z.ravel()]
    f = []
    for i in range(nt - 1):
        for j in range(nz - 1):
            a, b, c, d = i * nz + j, (i + 1) * nz + j, (i + 1) * nz + j + 1, i * nz + j + 1
            f += [[a, b, c], [a, c, d]]
    return TriangleMesh(v, f), nt, nz


def test_half_cylinder_unrolls_to_rectangle():
    r, h = 1.0, 2.6
    m, nt, nz = half_cylinder(r, h)
    res = lscm_flatten(m, np.arange(m.n_faces))
    uv = np.zeros((m.n_vertices, 2))
    uv[res.vertices] = res.uv
    c00, c10, c01 = 0, (nt - 1) * nz, nz - 1
    width = np.linalg.norm(uv[c10] - uv[c00])
    height = np.linalg.norm(uv[c01] - uv[c00])
    assert abs(width / height - np.pi * r / h) < 1e-3
    assert res.uv_area(m.faces[:0].reshape(0, 3)) == 0.0


def test_lscm_rejects_non_disk():
    m = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 0, 0], [6, 0, 0], [5, 1, 0]],
                     [[0, 1, 2], [3, 4, 5]])
    with pytest.raises(errors.DataError, match="non-disk patch"):
        lscm_flatten(m, [0, 1])
    with pytest.raises(errors.DataError, match="non-disk patch"):
        lscm_flatten(icosphere(1), np.arange(80))


def test_lscm_pins():
    g = make_grid(6)
    res = lscm_flatten(g, np.arange(g.n_faces))
    uv = dict(zip(res.vertices.tolist(), map(tuple, res.uv)))
    assert uv[res.pins[0]] == (0.0, 0.0) and uv[res.pins[1]] == (1.0, 0.0)
    assert res.residual < 1e-8


# ------------------------------------------------------------------ raster

def _oracle_cells(uv, faces, G, ids):
    lo = uv.min(0)
    ext = float(np.max(uv.max(0) - lo))
    out = np.full((G, G), -1)
    order = sorted(range(len(faces)), key=lambda k: ids[k])
    for r in range(G):
        for c in range(G):
            p = (lo[0] + (c + 0.5) / G * ext, lo[1] + (r + 0.5) / G * ext)
            for k in order:
                if barycentric_inside(uv[faces[k]], p):
                    out[r, c] = k
                    break
    return out


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_cell_assignment_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    g = make_grid(7)
    uv = g.vertices[:, :2] + rng.uniform(-0.04, 0.04, (g.n_vertices, 2))
    keep = rng.random(g.n_faces) < 0.8
    faces = g.faces[keep]
    ids = rng.permutation(len(faces))
    G = 24
    got = assign_cells(uv, faces, G, ids)
    assert np.array_equal(got, _oracle_cells(uv, faces, G, ids))


def test_constant_values_flagged():
    g = make_grid(5)
    img = rasterize_patch(g.vertices[:, :2], g.faces, np.ones((g.n_faces, 2)), G=16)
    assert np.all(img.degenerate)
    assert np.all(img.channels[img.coverage] == 0.5)


def test_full_square_coverage(tmp_path):
    uv = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    img = rasterize_patch(uv, [[0, 1, 2], [0, 2, 3]], [[0.0], [1.0]], G=16)
    assert img.coverage_fraction() == 1.0
    assert set(np.unique(img.channels)) == {0.0, 1.0}
    paths = export_patch_pgm(img, tmp_path / "p")
    assert read_pgm(paths[0]).shape == (16, 16)


def test_raster_errors():
    with pytest.raises(errors.DataError):
        rasterize_patch(np.zeros((3, 2)), np.zeros((0, 3), int), np.zeros((0, 1)))
    with pytest.raises(errors.DataError):
        rasterize_patch(np.eye(3)[:, :2], [[0, 1, 2]], [[1.0]], G=4)
