import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pytest import approx
from scipy.stats import spearmanr

import oracles
from amplan.env import Environment
from amplan.metrics import (
    DiffusionMap,
    EuclideanMetric,
    GeodesicOracle,
    build_grid_graph,
    euclidean,
    make_assisting_metric,
)
from conftest import CORRIDOR10


def free_centers(env):
    return [((c + 0.5) * env.cell_size, env.height - (r + 0.5) * env.cell_size)
            for r, c in oracles.grid_free_nodes(env)]


# -- grid graph ---------------------------------------------------------------

def test_grid_graph_empty10(empty10):
    g = build_grid_graph(empty10, 1.0)
    assert len(g) == 100
    # 90 horizontal + 90 vertical + 162 diagonal neighbor pairs
    assert len(g.edges) == 342
    assert g.n_components == 1
    lens = sorted(set(round(float(x), 9) for x in g.edge_len))
    assert lens == [approx(1.0), approx(math.sqrt(2))]


def test_grid_graph_corridor10(corridor10):
    assert len(build_grid_graph(corridor10, 1.0)) == 91
    coarse = build_grid_graph(corridor10, 2.0)
    # 5x5 lattice; the wall column blocks 4 of the 5 cells over it
    assert len(coarse) == 21
    assert coarse.n_components == 1


def test_grid_graph_disconnected():
    env = Environment.from_text("map 3 1 1\n.#.\n")
    g = build_grid_graph(env, 1.0)
    assert len(g) == 2
    assert g.n_components == 2
    assert len(g.edges) == 0


def test_grid_graph_bad_resolution(empty10):
    with pytest.raises(ValueError):
        build_grid_graph(empty10, 0.0)


# -- diffusion map -------------------------------------------------------------

def test_diffusion_metric_axioms(corridor10, rng):
    dm = DiffusionMap.build(corridor10, k=6)
    assert dm.graph.r_grid == 2.0          # default: twice the cell size
    pts = [(rng.random() * 10, rng.random() * 10) for _ in range(40)]
    pts = [p for p in pts if corridor10.in_free(p)]
    for a in pts[:15]:
        assert dm.distance(a, a) == 0.0
        for b in pts[:15]:
            dab = dm.distance(a, b)
            assert dab >= 0.0
            assert dab == approx(dm.distance(b, a), abs=1e-12)
    for a in pts[:8]:
        for b in pts[:8]:
            for c in pts[:8]:
                assert dm.distance(a, b) <= (dm.distance(a, c)
                                             + dm.distance(c, b) + 1e-9)


def test_diffusion_same_snap_is_zero(corridor10):
    dm = DiffusionMap.build(corridor10)
    assert dm.distance((2.1, 2.1), (2.4, 2.3)) == 0.0   # same lattice cell


def test_diffusion_sees_the_wall(corridor10):
    # Equal straight-line separations, but one pair is wall-separated: the
    # embedding must rank it farther.
    dm = DiffusionMap.build(corridor10)
    across = dm.distance((2.0, 2.0), (8.0, 2.0))
    along = dm.distance((2.0, 2.0), (2.0, 8.0))
    assert across > along


def test_diffusion_matches_dense_oracle(corridor10, rng):
    # Implementation path: sparse lattice, symmetric normalization, Lanczos.
    # Oracle path: dense kernel, random-walk operator, general eigensolver.
    k, t = 6, 2.0
    dm = DiffusionMap.build(corridor10, r_grid=1.0, k=k, t_diff=t)
    centers, coords = oracles.diffusion_coords_dense(corridor10, 1.0, k, t)
    assert len(centers) == 91
    for _ in range(200):
        a = centers[int(rng.integers(len(centers)))]
        b = centers[int(rng.integers(len(centers)))]
        want = oracles.diffusion_distance_dense(centers, coords, a, b)
        assert dm.distance(a, b) == approx(want, rel=1e-6, abs=1e-9)


def test_diffusion_default_time_matches_dense_oracle(corridor10, rng):
    # The gap-matched default time must come out identical through both
    # spectral routes, or the adaptive rule depends on solver internals.
    dm = DiffusionMap.build(corridor10, r_grid=1.0, k=6)
    centers, coords = oracles.diffusion_coords_dense(corridor10, 1.0, 6, None)
    for _ in range(100):
        a = centers[int(rng.integers(len(centers)))]
        b = centers[int(rng.integers(len(centers)))]
        want = oracles.diffusion_distance_dense(centers, coords, a, b)
        assert dm.distance(a, b) == approx(want, rel=1e-6, abs=1e-9)


def test_diffusion_degenerate_blocks_keep_symmetry(empty10):
    # A square empty world has a symmetry group that forces eigenvalue
    # multiplicities; truncation must keep whole blocks or symmetric pairs
    # would get asymmetric distances.
    dm = DiffusionMap.build(empty10, r_grid=1.0, k=8)
    c = [(2.5, 2.5), (7.5, 7.5), (2.5, 7.5), (7.5, 2.5)]
    d_diag1 = dm.distance(c[0], c[1])
    d_diag2 = dm.distance(c[2], c[3])
    assert d_diag1 == approx(d_diag2, rel=1e-6, abs=1e-6)
    d_up = dm.distance(c[0], c[2])
    d_right = dm.distance(c[0], c[3])
    assert d_up == approx(d_right, rel=1e-6, abs=1e-6)


def test_diffusion_tracks_geodesic_order(corridor10, rng):
    # Rank agreement with true lattice distance is what makes the embedding
    # a useful stand-in for geodesic distance.
    dm = DiffusionMap.build(corridor10)
    centers = free_centers(corridor10)
    src = (2.5, 2.5)
    field = oracles.dijkstra_grid(corridor10, corridor10.cell_of(*src))
    dd, dg = [], []
    for _ in range(200):
        b = centers[int(rng.integers(len(centers)))]
        dd.append(dm.distance(src, b))
        dg.append(field[corridor10.cell_of(*b)])
    rho = spearmanr(dd, dg).statistic
    assert rho >= 0.9


def test_diffusion_cross_component_is_infinite():
    env = Environment.from_text("map 3 1 1\n.#.\n")
    dm = DiffusionMap.build(env, r_grid=1.0, k=2)
    assert dm.distance((0.5, 0.5), (2.5, 0.5)) == math.inf
    assert dm.distance((0.5, 0.5), (0.5, 0.5)) == 0.0


def test_diffusion_sidecar_round_trip(corridor10, tmp_path):
    dm = DiffusionMap.build(corridor10, k=5)
    path = tmp_path / "c10.dmap"
    dm.save(path)
    again = DiffusionMap.load(path, corridor10)
    assert again.k == 5
    assert again.t_diff == dm.t_diff
    for a, b in [((2.0, 2.0), (8.0, 2.0)), ((1.0, 9.0), (9.0, 9.0))]:
        assert again.distance(a, b) == approx(dm.distance(a, b), abs=1e-15)
    for v1, v2 in zip(dm.comp_eigvals, again.comp_eigvals):
        assert np.array_equal(v1, v2)


def test_diffusion_sidecar_rejects_other_map(corridor10, empty10, tmp_path):
    path = tmp_path / "c10.dmap"
    DiffusionMap.build(corridor10, k=4).save(path)
    with pytest.raises(ValueError):
        DiffusionMap.load(path, empty10)
    with pytest.raises(ValueError):
        DiffusionMap.load(__file__, corridor10)     # not a sidecar at all


# -- geodesic ---------------------------------------------------------------------

def test_geodesic_matches_reference_dijkstra(corridor10):
    geo = GeodesicOracle(corridor10)
    assert geo.graph.r_grid == 1.0
    for src in [(2.5, 2.5), (7.5, 7.5), (5.5, 4.5)]:
        ref = oracles.dijkstra_grid(corridor10, corridor10.cell_of(*src))
        for cell, want in ref.items():
            r, c = cell
            b = ((c + 0.5), corridor10.height - (r + 0.5))
            assert geo.distance(src, b) == approx(want, abs=1e-9)


def test_geodesic_routes_around_wall(corridor10):
    geo = GeodesicOracle(corridor10)
    d = geo.distance((2.5, 2.5), (7.5, 2.5))
    # Shortest lattice route threads the gap cell: two diagonal pairs plus
    # one straight move, versus 5.0 straight-line.
    assert d == approx(1.0 + 4.0 * math.sqrt(2.0), abs=1e-9)
    assert geo.distance((2.5, 2.5), (2.5, 2.5)) == 0.0


def test_geodesic_cross_component_infinite():
    env = Environment.from_text("map 3 1 1\n.#.\n")
    geo = GeodesicOracle(env, r_grid=1.0)
    assert geo.distance((0.5, 0.5), (2.5, 0.5)) == math.inf


def test_geodesic_batch_matches_scalar(corridor10, rng):
    geo = GeodesicOracle(corridor10)
    states = [(rng.random() * 10, rng.random() * 10) for _ in range(30)]
    states = [s for s in states if corridor10.in_free(s)]
    b = (5.5, 4.5)
    batch = geo.distances_to_many(b, states)
    for s, d in zip(states, batch):
        assert d == approx(geo.distance(s, b), abs=1e-12)


def test_geodesic_cache_bounded(corridor10):
    geo = GeodesicOracle(corridor10, cache_size=2)
    for src in [(1.5, 1.5), (2.5, 2.5), (3.5, 3.5), (1.5, 1.5)]:
        geo.distance(src, (8.5, 8.5))
    assert len(geo._fields) <= 2


# -- factory -------------------------------------------------------------------------

def test_make_assisting_metric_kinds(corridor10, tmp_path):
    assert make_assisting_metric("euclidean", corridor10).kind == "euclidean"
    side = tmp_path / "m.dmap"
    dm = make_assisting_metric("diffusion", corridor10, sidecar=side)
    assert dm.kind == "diffusion"
    assert side.exists()
    dm2 = make_assisting_metric("diffusion", corridor10, sidecar=side)
    assert dm2.distance((2.0, 2.0), (8.0, 2.0)) == approx(
        dm.distance((2.0, 2.0), (8.0, 2.0)), abs=1e-15)
    geo = make_assisting_metric("geodesic", corridor10)
    assert geo.kind == "geodesic"
    assert geo.graph.r_grid == 2.0        # assisting default is the coarse lattice
    with pytest.raises(ValueError):
        make_assisting_metric("manhattan", corridor10)


def test_euclidean_metric():
    assert euclidean((0.0, 0.0), (3.0, 4.0)) == approx(5.0)
    assert EuclideanMetric().distance((1.0, 1.0), (1.0, 1.0)) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 9.9), st.floats(0.1, 9.9), st.floats(0.1, 9.9),
       st.floats(0.1, 9.9))
def test_geodesic_lower_bounded_by_euclidean(x0, y0, x1, y1):
    env = Environment.from_text(CORRIDOR10)
    a, b = (x0, y0), (x1, y1)
    if not (env.in_free(a) and env.in_free(b)):
        return
    geo = GeodesicOracle(env)
    d = geo.distance(a, b)
    # Grid distance between snapped cells can undershoot the point-to-point
    # straight line by at most the two snap offsets (half a cell diagonal each).
    slack = math.sqrt(2.0) * env.cell_size
    assert d >= euclidean(a, b) - slack