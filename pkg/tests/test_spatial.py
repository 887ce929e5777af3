import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from amplan.env import Environment
from amplan.metrics import DiffusionMap, EuclideanMetric, GeodesicOracle
from amplan.spatial import DualIndex, _PointStore, _vp_build, _vp_nearest


def euclid_index(points):
    idx = DualIndex(EuclideanMetric())
    for i, p in enumerate(points):
        idx.insert(i, p)
    return idx


# -- point store vs linear scan ------------------------------------------------

@settings(max_examples=120, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)),
                min_size=1, max_size=60),
       st.tuples(st.floats(0, 100), st.floats(0, 100)),
       st.floats(0.5, 30))
def test_store_matches_linear_oracle(points, q, r):
    idx = euclid_index(points)
    assert idx.nearest_euclid(q) == oracles.linear_nearest(points, q)
    assert idx.within_euclid(q, r) == oracles.linear_radius(points, q, r)


def test_nearest_tie_breaks_to_lowest_id():
    pts = [(4.0, 4.0), (6.0, 4.0), (4.0, 4.0), (6.0, 4.0)]
    idx = euclid_index(pts)
    assert idx.nearest_euclid((5.0, 4.0)) == 0
    assert idx.nearest_euclid((6.1, 4.0)) == 1


def test_within_is_closed_ball():
    idx = euclid_index([(0.0, 0.0), (3.0, 0.0), (3.0001, 0.0)])
    assert idx.within_euclid((0.0, 0.0), 3.0) == [0, 1]


def test_empty_index_raises():
    with pytest.raises(ValueError):
        _PointStore().nearest((1.0, 1.0))


def test_queries_far_from_points():
    idx = euclid_index([(1.0, 1.0), (2.0, 2.0)])
    assert idx.nearest_euclid((95.0, 95.0)) == 1
    assert idx.within_euclid((95.0, 95.0), 1.0) == []


def test_store_growth_preserves_order():
    pts = [(float(i % 37), float(i % 11)) for i in range(600)]
    idx = _PointStore()
    for i, p in enumerate(pts):             # crosses the capacity doubling
        idx.insert(i, p)
    assert len(idx) == 600
    for q in [(36.0, 10.0), (0.0, 0.0), (-4.0, 18.0)]:
        assert idx.nearest(q) == oracles.linear_nearest(pts, q)
        assert idx.within(q, 3.0) == oracles.linear_radius(pts, q, 3.0)


def test_store_matches_linear_oracle_at_two_thousand(rng):
    pts = [(float(x), float(y))
           for x, y in rng.uniform(0.0, 100.0, size=(2000, 2))]
    idx = _PointStore()
    for i, p in enumerate(pts):
        idx.insert(i, p)
    for _ in range(50):
        q = (float(rng.uniform(0, 100)), float(rng.uniform(0, 100)))
        assert idx.nearest(q) == oracles.linear_nearest(pts, q)
        assert idx.within(q, 8.0) == oracles.linear_radius(pts, q, 8.0)


def test_vp_forest_matches_linear_oracle_at_two_thousand(rng):
    pts = [(float(x), float(y), float(z))
           for x, y, z in rng.uniform(-5.0, 5.0, size=(2000, 3))]
    root = _vp_build([(p, i) for i, p in enumerate(pts)])
    for _ in range(50):
        q = tuple(float(v) for v in rng.uniform(-5.0, 5.0, size=3))
        _, got = _vp_nearest(root, q, (math.inf, -1))
        assert got == oracles.linear_nearest(pts, q)


# -- vp-tree core ----------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)),
                min_size=1, max_size=50),
       st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)))
def test_vp_tree_matches_linear_oracle(points, q):
    root = _vp_build([(p, i) for i, p in enumerate(points)])
    d, i = _vp_nearest(root, q, (math.inf, -1))
    want = oracles.linear_nearest(points, q)
    assert i == want
    assert d == pytest.approx(oracles.dist(points[want], q), abs=1e-12)


def test_vp_tree_duplicate_points_tie_break():
    pts = [(1.0, 1.0)] * 7
    root = _vp_build([(p, i) for i, p in enumerate(pts)])
    assert _vp_nearest(root, (1.0, 1.0), (math.inf, -1)) == (0.0, 0)


# -- assisting kinds ---------------------------------------------------------------

def test_diffusion_index_matches_brute_force(corridor10, rng):
    dm = DiffusionMap.build(corridor10, k=6)
    idx = DualIndex(dm)
    points = []
    from amplan.env import sample_free
    # enough inserts to force at least one vp-tree rebuild plus a buffer tail
    for i in range(300):
        p = sample_free(corridor10, rng)
        idx.insert(i, p)
        points.append(p)
    assert idx._forest.built > 0
    assert idx._forest.built < len(points)
    for _ in range(100):
        q = sample_free(corridor10, rng)
        got = idx.nearest_assist(q)
        want = min(range(len(points)),
                   key=lambda i: (dm.distance(points[i], q), i))
        assert (dm.distance(points[got], q), got) == \
            (dm.distance(points[want], q), want)


def test_geodesic_index_matches_brute_force(corridor10, rng):
    geo = GeodesicOracle(corridor10)
    idx = DualIndex(geo)
    from amplan.env import sample_free
    points = [sample_free(corridor10, rng) for _ in range(80)]
    for i, p in enumerate(points):
        idx.insert(i, p)
    for _ in range(40):
        q = sample_free(corridor10, rng)
        got = idx.nearest_assist(q)
        want = min(range(len(points)),
                   key=lambda i: (geo.distance(points[i], q), i))
        assert (geo.distance(points[got], q), got) == \
            (geo.distance(points[want], q), want)


def test_euclidean_kind_aliases_point_store(rng):
    idx = DualIndex(EuclideanMetric())
    pts = [(1.0, 1.0), (8.0, 8.0), (4.0, 5.0)]
    for i, p in enumerate(pts):
        idx.insert(i, p)
    q = (7.0, 7.0)
    assert idx.nearest_assist(q) == idx.nearest_euclid(q) == 1
    assert idx.assist_distance((0.0, 0.0), (3.0, 4.0)) == 5.0


def test_cross_component_query_falls_back_to_euclidean():
    env = Environment.from_text("map 3 1 1\n.#.\n")
    dm = DiffusionMap.build(env, r_grid=1.0, k=2)
    idx = DualIndex(dm)
    idx.insert(0, (0.5, 0.5))          # only the left component is occupied
    assert idx.nearest_assist((2.5, 0.5)) == 0
    geo = GeodesicOracle(env, r_grid=1.0)
    gidx = DualIndex(geo)
    gidx.insert(0, (0.5, 0.5))
    assert gidx.nearest_assist((2.5, 0.5)) == 0
