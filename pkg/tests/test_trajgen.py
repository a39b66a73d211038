import math

import numpy as np
import pytest

from mapmatch.errors import ExplosionGuard, InsufficientPoints, UnknownEdge, ValidationError
from mapmatch.roadnet import Edge, RoadNetwork, Vertex
from mapmatch.routes import collapse
from mapmatch.trajgen import (
    GenerationConfig,
    GpsTrajectory,
    add_noise,
    enumerate_routes,
    generate_corpus,
    generate_points,
    generate_pseudo_real,
    select_points,
)


def _dfs_routes(table, n):
    # independent recursive enumeration
    results = []

    def rec(path):
        if len(path) == n:
            results.append(list(path))
            return
        for succ in table[path[-1]]:
            rec(path + [succ])

    for start in sorted(table):
        rec([start])
    return results


def test_enumerate_routes_chain(chain_net):
    assert enumerate_routes(chain_net, 2) == [[0, 1]]


def test_enumerate_routes_single_segment(grid2):
    routes = enumerate_routes(grid2, 1)
    assert routes == [[e] for e in sorted(grid2.edges)]


def test_enumerate_routes_matches_dfs_oracle(grid2):
    for exclude in (True, False):
        table = grid2.connection_table(exclude_uturn=exclude)
        got = enumerate_routes(grid2, 3, exclude_uturn=exclude)
        want = _dfs_routes(table, 3)
        assert got == want
        assert len({tuple(r) for r in got}) == len(got)


def test_enumerate_routes_is_lexicographic(grid3):
    routes = enumerate_routes(grid3, 2)
    assert routes == sorted(routes)


def test_enumerate_routes_explosion_guard(grid3):
    with pytest.raises(ExplosionGuard):
        enumerate_routes(grid3, 4, cap=10)


def _straight_edge_net(length_points):
    # one straight edge along a parallel with the given polyline breakpoints (meters east)
    lat = 37.5
    lon0 = 127.0
    cos0 = math.cos(math.radians(lat))
    lons = [lon0 + math.degrees(x / (6371000.0 * cos0)) for x in length_points]
    vertices = [Vertex(0, lons[0], lat), Vertex(1, lons[-1], lat)]
    poly = tuple((lon, lat) for lon in lons)
    return RoadNetwork(vertices, [Edge(0, 0, 1, poly)])


def test_generate_points_constant_spacing():
    net = _straight_edge_net([0.0, 100.0])
    pts = generate_points(net, 0, 25.0)
    assert [p.ordinal for p in pts] == [0, 1, 2, 3]
    offsets = [net.project_onto_edge(0, (p.lon, p.lat))[1] for p in pts]
    assert offsets == pytest.approx([0.0, 25.0, 50.0, 75.0], abs=1e-6)


def test_generate_points_spacing_larger_than_edge():
    net = _straight_edge_net([0.0, 100.0])
    pts = generate_points(net, 0, 150.0)
    assert len(pts) == 1
    assert pts[0].ordinal == 0


def test_generate_points_l_shaped_polyline():
    # 40 m east then 20 m north: total 60 m, D=20 puts points at 0, 20, 40
    lat0, lon0 = 37.5, 127.0
    R = 6371000.0
    cos0 = math.cos(math.radians(lat0))
    p0 = (lon0, lat0)
    p1 = (lon0 + math.degrees(40.0 / (R * cos0)), lat0)
    p2 = (p1[0], lat0 + math.degrees(20.0 / R))
    net = RoadNetwork([Vertex(0, *p0), Vertex(1, *p2)], [Edge(0, 0, 1, (p0, p1, p2))])
    pts = generate_points(net, 0, 20.0)
    assert len(pts) == 3
    offsets = [net.project_onto_edge(0, (p.lon, p.lat))[1] for p in pts]
    assert offsets == pytest.approx([0.0, 20.0, 40.0], abs=1e-6)
    # first two points on the east leg (constant latitude), third on the north leg
    assert pts[0].lat == pytest.approx(lat0, abs=1e-12)
    assert pts[1].lat == pytest.approx(lat0, abs=1e-9)
    assert pts[2].lon == pytest.approx(p1[0], abs=1e-9)


def test_generate_points_unknown_edge(grid2):
    with pytest.raises(UnknownEdge):
        generate_points(grid2, 999, 10.0)


def _segment_points(net, route, spacing):
    return [generate_points(net, e, spacing) for e in route]


def test_select_points_all_available(grid3):
    route = enumerate_routes(grid3, 3)[0]
    seg_points = _segment_points(grid3, route, 30.0)
    n = len(seg_points[0])
    rng = np.random.default_rng(0)
    picked = select_points(seg_points, (n, n), rng)
    assert [p.ordinal for p in picked] == list(range(n)) * 3
    assert [p.edge_id for p in picked] == [e for e in route for _ in range(n)]


def test_select_points_one_per_segment(grid3):
    route = enumerate_routes(grid3, 3)[0]
    seg_points = _segment_points(grid3, route, 30.0)
    picked = select_points(seg_points, (1, 1), np.random.default_rng(1))
    assert [p.edge_id for p in picked] == route


def test_select_points_ordinals_increase(grid3):
    route = enumerate_routes(grid3, 3)[0]
    seg_points = _segment_points(grid3, route, 30.0)
    rng = np.random.default_rng(5)
    for _ in range(10_000):
        picked = select_points(seg_points, (2, 5), rng)
        by_edge = {}
        for p in picked:
            by_edge.setdefault(p.edge_id, []).append(p.ordinal)
        for ordinals in by_edge.values():
            assert all(a < b for a, b in zip(ordinals, ordinals[1:]))


def test_select_points_insufficient(grid3):
    route = enumerate_routes(grid3, 2)[0]
    seg_points = _segment_points(grid3, route, 150.0)  # two points per 200 m edge
    with pytest.raises(InsufficientPoints):
        select_points(seg_points, (3, 4), np.random.default_rng(0))


def test_add_noise_zero_sigma_is_identity():
    traj = GpsTrajectory("t", [(127.0, 37.5), (127.001, 37.5), (127.002, 37.5)], [0, 0, 1])
    out = add_noise(traj, 0.0, np.random.default_rng(0))
    assert out.points == traj.points
    assert out.truth == traj.truth


def _displacements_m(clean, noisy):
    R = 6371000.0
    out = []
    for (lon0, lat0), (lon1, lat1) in zip(clean.points, noisy.points):
        dx = math.radians(lon1 - lon0) * R * math.cos(math.radians(lat0))
        dy = math.radians(lat1 - lat0) * R
        out.append((dx, dy))
    return np.array(out)


def test_add_noise_moments():
    n = 100_000
    traj = GpsTrajectory("t", [(127.0, 37.5)] * n, None)
    noisy = add_noise(traj, 15.0, np.random.default_rng(42))
    d = _displacements_m(traj, noisy)
    assert abs(d[:, 0].mean()) < 0.2 and abs(d[:, 1].mean()) < 0.2
    assert abs(d[:, 0].std() - 15.0) < 0.2 and abs(d[:, 1].std() - 15.0) < 0.2


def test_add_noise_axes_uncorrelated():
    n = 100_000
    traj = GpsTrajectory("t", [(127.0, 37.5)] * n, None)
    noisy = add_noise(traj, 15.0, np.random.default_rng(3))
    d = _displacements_m(traj, noisy)
    corr = np.corrcoef(d[:, 0], d[:, 1])[0, 1]
    assert abs(corr) < 0.02


def test_generate_corpus_empty(grid3):
    assert generate_corpus(grid3, GenerationConfig(seed=0), 0) == []


def test_generate_corpus_deterministic(grid5):
    cfg = GenerationConfig(route_length=4, point_spacing_m=30.0, select_range=(2, 5), sigma_m=10.0, seed=9)
    c1 = generate_corpus(grid5, cfg, 40)
    c2 = generate_corpus(grid5, cfg, 40)
    assert [(t.traj_id, t.points, t.truth) for t in c1] == [(t.traj_id, t.points, t.truth) for t in c2]


def test_generate_corpus_truth_routes_valid(grid5):
    cfg = GenerationConfig(route_length=4, point_spacing_m=30.0, select_range=(2, 5), sigma_m=10.0, seed=1)
    corpus = generate_corpus(grid5, cfg, 2000)
    assert len(corpus) == 2000
    for traj in corpus:
        seg = collapse(traj.truth)
        assert len(seg) == 4
        assert grid5.validate_route(seg)


def test_generate_corpus_noiseless_points_on_edges(grid5):
    cfg = GenerationConfig(route_length=3, sigma_m=0.0, seed=4)
    for traj in generate_corpus(grid5, cfg, 20):
        for (lon, lat), edge_id in zip(traj.points, traj.truth):
            d, _, _ = grid5.project_onto_edge(edge_id, (lon, lat))
            assert d < 1e-6


def test_pseudo_real_count_and_perturbation(grid5):
    cfg = GenerationConfig(route_length=4, sigma_m=0.0, seed=6)
    pseudo = generate_pseudo_real(grid5, cfg, 60)
    assert len(pseudo) == 60
    # even with a zero base sigma the heavy-tail branch moves ~10% of points
    moved = 0
    total = 0
    for traj in pseudo:
        for (lon, lat), edge_id in zip(traj.points, traj.truth):
            d, _, _ = grid5.project_onto_edge(edge_id, (lon, lat))
            total += 1
            if d > 1e-6:
                moved += 1
    assert 0.02 < moved / total < 0.25


def test_pseudo_real_noise_exceeds_matched_synthetic(grid5):
    cfg = GenerationConfig(route_length=4, sigma_m=15.0, seed=8)
    clean_cfg = GenerationConfig(route_length=4, sigma_m=0.0, seed=8)
    noisy = generate_pseudo_real(grid5, cfg, 150)
    synthetic = generate_corpus(grid5, cfg, 150)

    def corpus_noise_std(corpus):
        deviations = []
        for traj in corpus:
            for (lon, lat), edge_id in zip(traj.points, traj.truth):
                d, _, _ = grid5.project_onto_edge(edge_id, (lon, lat))
                deviations.append(d)
        return np.sqrt(np.mean(np.square(deviations)))

    assert corpus_noise_std(noisy) > corpus_noise_std(synthetic)


def test_pseudo_real_sized_to_reference_dataset(grid5):
    cfg = GenerationConfig(route_length=4, seed=2)
    pseudo = generate_pseudo_real(grid5, cfg, 1331)
    assert len(pseudo) == 1331


def test_trajectory_requires_three_points():
    with pytest.raises(ValidationError):
        GpsTrajectory("t", [(127.0, 37.5), (127.001, 37.5)], None)


def test_trajectory_truth_length_must_match():
    with pytest.raises(ValidationError):
        GpsTrajectory("t", [(127.0, 37.5)] * 3, [1, 2])


def test_generation_config_validation():
    with pytest.raises(ValidationError):
        GenerationConfig(route_length=0)
    with pytest.raises(ValidationError):
        GenerationConfig(select_range=(3, 2))
    with pytest.raises(ValidationError):
        GenerationConfig(sigma_m=-1.0)
