import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_oriented
from oracles import naive_hp_ppf, naive_ranks
from hpppf.errors import InputError
from hpppf.geomfeat import (HpPpfMatrix, PanelSpec, compute_ppf, default_panel_spec, distance_ranks, hp_ppf,
                            knn_panel_feature, panel_feature, scaled_cuts)
from hpppf.pointcloud import OrientedPointCloud, PointCloud
from hpppf.pose import random_rotation

mpmath.mp.dps = 50


def _mp_angle(u, v):
    u = [mpmath.mpf(float(x)) for x in u]
    v = [mpmath.mpf(float(x)) for x in v]
    c = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
    return mpmath.atan2(mpmath.sqrt(sum(x * x for x in c)), sum(a * b for a, b in zip(u, v)))


def _mp_ppf(pi, ni, pj, nj):
    dv = [mpmath.mpf(float(b)) - mpmath.mpf(float(a)) for a, b in zip(pi, pj)]
    d = mpmath.sqrt(sum(x * x for x in dv))
    return [d, _mp_angle(ni, dv), _mp_angle(nj, dv), _mp_angle(nj, ni)]


def _unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def test_ppf_orthogonal_and_collinear_cases():
    f = compute_ppf((0, 0, 0), (0, 0, 1), (1, 0, 0), (0, 0, 1))
    assert f == pytest.approx((1.0, math.pi / 2, math.pi / 2, 0.0), abs=1e-15)
    f = compute_ppf((0, 0, 0), (0, 0, 1), (0, 0, 2), (0, 0, 1))
    assert f == pytest.approx((2.0, 0.0, 0.0, 0.0), abs=1e-15)


def test_ppf_matches_extended_precision():
    gen = np.random.default_rng(11)
    for _ in range(200):
        pi, pj = gen.normal(size=3), gen.normal(size=3)
        ni, nj = _unit(gen.normal(size=3)), _unit(gen.normal(size=3))
        got = compute_ppf(pi, ni, pj, nj)
        ref = _mp_ppf(pi, ni, pj, nj)
        for g, r in zip(got, ref):
            assert abs(g - float(r)) <= 1e-12


def test_ppf_near_parallel_angles_accurate():
    n = np.array([0.0, 0.0, 1.0])
    m = _unit([1e-9, 0.0, 1.0])
    f = compute_ppf((0, 0, 0), n, (1, 0, 0), m)
    assert f.theta == pytest.approx(1e-9, rel=1e-6)


def test_ppf_rejects_coincident_points():
    with pytest.raises(InputError):
        compute_ppf((1, 2, 3), (0, 0, 1), (1, 2, 3), (0, 0, 1))


def test_ranks_simple_cases():
    pts = [(0, 0, 0), (1, 0, 0), (3, 0, 0)]
    assert distance_ranks(pts, 0).tolist() == [0, 1, 2]
    square = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (-1, 0, 0), (0, -1, 0)]
    assert distance_ranks(square, 0).tolist() == [0, 1, 2, 3, 4]


def test_ranks_match_full_sort_oracle():
    for seed in range(10):
        pts = np.random.default_rng(seed).normal(size=(20, 3))
        for i in range(20):
            assert distance_ranks(pts, i).tolist() == naive_ranks(pts, i)


def test_ranks_tie_break_by_index_on_lattice():
    pts = np.stack(np.meshgrid(*[np.arange(3.0)] * 3), -1).reshape(-1, 3)
    for i in range(len(pts)):
        assert distance_ranks(pts, i).tolist() == naive_ranks(pts, i)


def test_panel_feature_cases():
    cloud = OrientedPointCloud(PointCloud([(0, 0, 0), (1, 0, 0), (-1, 0, 0)]), [(0, 0, 1)] * 3)
    assert panel_feature(cloud, 0, [1, 2]) == pytest.approx([1, math.pi / 2, math.pi / 2, 0], abs=1e-15)
    single = panel_feature(cloud, 0, [2])
    assert single.tolist() == list(compute_ppf(cloud.points[0], cloud.normals[0], cloud.points[2], cloud.normals[2]))
    with pytest.raises(InputError):
        panel_feature(cloud, 0, [])
    with pytest.raises(InputError):
        panel_feature(cloud, 0, [0, 1])


def test_panel_feature_five_members_is_mean():
    oc = random_oriented(8, 3)
    members = [1, 3, 4, 6, 7]
    ref = np.mean([compute_ppf(oc.points[0], oc.normals[0], oc.points[j], oc.normals[j]) for j in members], axis=0)
    np.testing.assert_allclose(panel_feature(oc, 0, members), ref, rtol=0, atol=1e-15)


def test_four_points_two_panels():
    oc = random_oriented(4, 5)
    feats = hp_ppf(oc, PanelSpec((0, 1, 3))).features
    assert feats.shape == (4, 8)
    for i in range(4):
        r = distance_ranks(oc.points, i)
        nearest = [j for j in range(4) if r[j] == 1]
        far = [j for j in range(4) if r[j] in (2, 3)]
        np.testing.assert_array_equal(feats[i, :4], panel_feature(oc, i, nearest))
        np.testing.assert_array_equal(feats[i, 4:], panel_feature(oc, i, far))


def test_single_panel_is_global_mean():
    oc = random_oriented(12, 6)
    feats = hp_ppf(oc, PanelSpec((0, 11))).features
    for i in range(12):
        np.testing.assert_array_equal(feats[i], panel_feature(oc, i, [j for j in range(12) if j != i]))


def test_default_shape_and_spec():
    from hpppf.robustness import make_shape
    m = hp_ppf(make_shape("blob", 300, 0))
    assert isinstance(m, HpPpfMatrix)
    assert m.shape == (300, 12)
    assert m.panel_spec.cuts == (0, 10, 60, 299)
    assert np.all(np.isfinite(m.features))


def test_spec_validation_and_scaling():
    for bad in [(1, 5), (0,), (0, 3, 3), (0, 5, 2)]:
        with pytest.raises(InputError):
            PanelSpec(bad)
    assert PanelSpec.parse("0,10,60,299").levels == 3
    assert scaled_cuts((0, 10, 60, 299), 150).cuts == (0, 5, 30, 149)
    assert default_panel_spec(300).size == 300
    tiny = scaled_cuts((0, 10, 60, 299), 5)
    assert tiny.cuts[0] == 0 and tiny.cuts[-1] == 4
    assert all(b > a for a, b in zip(tiny.cuts, tiny.cuts[1:]))
    with pytest.raises(InputError):
        hp_ppf(random_oriented(10, 0), PanelSpec((0, 3, 8)))


def test_duplicate_points_rejected():
    oc = random_oriented(6, 0)
    pts = oc.points.copy()
    pts[3] = pts[1]
    with pytest.raises(InputError):
        hp_ppf(OrientedPointCloud(PointCloud(pts), oc.normals))


@pytest.mark.parametrize("n", [5, 9, 14, 20])
def test_matches_naive_enumeration(n):
    for seed in range(5):
        oc = random_oriented(n, 100 + seed)
        spec = scaled_cuts((0, 10, 60, 299), n)
        ref = naive_hp_ppf(oc.points, oc.normals, spec.cuts)
        assert np.array_equal(hp_ppf(oc, spec).features, ref)


def test_matches_naive_enumeration_with_ties():
    pts = np.stack(np.meshgrid(np.arange(3.0), np.arange(3.0), np.arange(2.0)), -1).reshape(-1, 3)
    nrm = np.random.default_rng(0).normal(size=pts.shape)
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    oc = OrientedPointCloud(PointCloud(pts), nrm)
    for cuts in [(0, 4, 17), (0, 1, 6, 17), (0, 17)]:
        assert np.array_equal(hp_ppf(oc, PanelSpec(cuts)).features, naive_hp_ppf(pts, nrm, cuts))


def test_large_cloud_path_matches_small_cloud_path(monkeypatch):
    import hpppf.geomfeat as gf
    oc = random_oriented(200, 9)
    full = hp_ppf(oc).features
    monkeypatch.setattr(gf, "_FULL_LIMIT", 0)
    chunked = hp_ppf(oc).features
    threaded = hp_ppf(oc, threads=4).features
    assert full.tobytes() == chunked.tobytes() == threaded.tobytes()


def test_knn_baseline():
    oc = random_oriented(40, 4)
    full = knn_panel_feature(oc, 39)
    np.testing.assert_array_equal(full, hp_ppf(oc, PanelSpec((0, 39))).features)
    one = knn_panel_feature(oc, 1)
    for i in range(40):
        j = int(np.argmin(np.where(np.arange(40) == i, np.inf, np.linalg.norm(oc.points - oc.points[i], axis=1))))
        assert one[i].tolist() == list(compute_ppf(oc.points[i], oc.normals[i], oc.points[j], oc.normals[j]))
    with pytest.raises(InputError):
        knn_panel_feature(oc, 40)


def test_knn_ten_on_300_points_matches_brute_force():
    oc = random_oriented(300, 8)
    got = knn_panel_feature(oc, 10)
    for i in range(0, 300, 23):
        r = naive_ranks(oc.points, i)
        nbrs = [j for j in range(300) if 1 <= r[j] <= 10]
        total = np.zeros(4)
        for j in nbrs:
            total = total + np.array(compute_ppf(oc.points[i], oc.normals[i], oc.points[j], oc.normals[j]))
        np.testing.assert_array_equal(got[i], total / 10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 60))
def test_rigid_motion_invariance(seed, n):
    oc = random_oriented(n, seed)
    gen = np.random.default_rng(seed + 1)
    R = random_rotation(gen)
    t = gen.normal(size=3) * 5
    moved = OrientedPointCloud(PointCloud(oc.points @ R.T + t), oc.normals @ R.T)
    a = hp_ppf(oc).features
    b = hp_ppf(moved).features
    assert np.max(np.abs(a - b)) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 60))
def test_permutation_equivariance(seed, n):
    oc = random_oriented(n, seed)
    perm = np.random.default_rng(seed).permutation(n)
    a = hp_ppf(oc).features
    b = hp_ppf(oc.take(perm)).features
    np.testing.assert_allclose(b, a[perm], rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 40))
def test_panels_partition_other_points(seed, n):
    pts = np.random.default_rng(seed).normal(size=(n, 3))
    spec = scaled_cuts((0, 10, 60, 299), n)
    for i in range(n):
        r = distance_ranks(pts, i)
        counts = [int(np.sum((r > a) & (r <= b))) for a, b in zip(spec.cuts, spec.cuts[1:])]
        assert sum(counts) == n - 1
        assert counts == [b - a for a, b in zip(spec.cuts, spec.cuts[1:])]
        assert sorted(r.tolist()) == list(range(n))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_angles_in_range(seed):
    feats = hp_ppf(random_oriented(25, seed)).features
    angles = np.concatenate([feats[:, 1::4], feats[:, 2::4], feats[:, 3::4]], axis=1)
    assert np.all(feats[:, 0::4] >= 0)
    assert np.all((angles >= 0) & (angles <= np.pi))
