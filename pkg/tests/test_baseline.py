import itertools
import math

import numpy as np
import pytest

from mapmatch.baseline import (
    Candidate,
    HmmConfig,
    candidates_for_point,
    emission_logp,
    route_distance,
    transition_logp,
    viterbi_match,
)
from mapmatch.errors import NoCandidates, ValidationError
from mapmatch.trajgen import GenerationConfig, GpsTrajectory, generate_corpus


def brute_force_match(traj, net, cfg):
    """Enumerate every candidate sequence; maximize score, then lexicographic order.

    Scores accumulate exactly (Fraction) so mathematical ties are real ties
    regardless of term order; unreachable transitions score None like the
    matcher's pruning.
    """
    from fractions import Fraction

    layers = [candidates_for_point(net, p, cfg) for p in traj.points]
    assert all(layers)
    best_score, best_path = None, None
    for combo in itertools.product(*layers):
        score = Fraction(0)
        for c in combo:
            score += Fraction(emission_logp(c, cfg))
        for c1, c2 in zip(combo, combo[1:]):
            tr = transition_logp(c1, c2, net, cfg)
            if math.isinf(tr):
                score = None
                break
            score += Fraction(tr)
        path = tuple(c.edge_id for c in combo)
        if best_path is None:
            best_score, best_path = score, path
        elif score is None:
            if best_score is None and path < best_path:
                best_path = path
        elif best_score is None or score > best_score or (score == best_score and path < best_path):
            best_score, best_path = score, path
    return list(best_path)


def test_emission_logp_values():
    cfg = HmmConfig(sigma_emission_m=15.0)
    at_zero = emission_logp(Candidate(0, (0, 0), 0.0, 0.0), cfg)
    assert at_zero == pytest.approx(-math.log(15.0 * math.sqrt(2 * math.pi)))
    at_sigma = emission_logp(Candidate(0, (0, 0), 15.0, 0.0), cfg)
    assert at_zero - at_sigma == pytest.approx(0.5)
    assert at_sigma == pytest.approx(-4.1272, abs=1e-3)


def test_hmm_config_requires_positive_fields():
    with pytest.raises(ValidationError):
        HmmConfig(sigma_emission_m=0.0)
    with pytest.raises(ValidationError):
        HmmConfig(radius_m=-1.0)


def test_transition_same_edge_forward(grid3):
    cfg = HmmConfig()
    p1 = grid3.point_on_edge(0, 40.0)
    p2 = grid3.point_on_edge(0, 120.0)
    c1 = Candidate(0, p1, 0.0, 40.0)
    c2 = Candidate(0, p2, 0.0, 120.0)
    assert route_distance(c1, c2, grid3) == pytest.approx(80.0, abs=1e-6)
    assert transition_logp(c1, c2, grid3, cfg) == pytest.approx(0.0, abs=1e-6)


def test_transition_unreachable(chain_net):
    cfg = HmmConfig()
    # chain 0 -> 1; nothing leads back from edge 1 to edge 0
    c1 = Candidate(1, chain_net.point_on_edge(1, 10.0), 0.0, 10.0)
    c2 = Candidate(0, chain_net.point_on_edge(0, 10.0), 0.0, 10.0)
    assert transition_logp(c1, c2, chain_net, cfg) == -math.inf


def test_transition_detour_scaling(grid3):
    # adjacent parallel positions: route runs along the edges, straight line cuts across
    cfg = HmmConfig(beta_transition=50.0)
    c1 = Candidate(0, grid3.point_on_edge(0, 100.0), 0.0, 100.0)
    table = grid3.connection_table(exclude_uturn=True)
    nxt = table[0][0]
    c2 = Candidate(nxt, grid3.point_on_edge(nxt, 100.0), 0.0, 100.0)
    d_route = route_distance(c1, c2, grid3)
    x1 = grid3.project(c1.point)
    x2 = grid3.project(c2.point)
    d_straight = math.hypot(x2[0] - x1[0], x2[1] - x1[1])
    expected = -abs(d_straight - d_route) / 50.0
    assert transition_logp(c1, c2, grid3, cfg) == pytest.approx(expected)


def test_viterbi_single_edge_noiseless(grid3):
    pts = [grid3.point_on_edge(0, o) for o in (20.0, 80.0, 140.0)]
    traj = GpsTrajectory("t", pts, None)
    route = viterbi_match(traj, grid3, HmmConfig())
    assert route == [0, 0, 0]


def test_viterbi_no_candidates(grid3):
    lon0, lat0 = grid3.projection_origin
    pts = [grid3.point_on_edge(0, 20.0), (lon0 + 0.5, lat0 + 0.5), grid3.point_on_edge(0, 140.0)]
    traj = GpsTrajectory("t", pts, None)
    with pytest.raises(NoCandidates) as err:
        viterbi_match(traj, grid3, HmmConfig())
    assert err.value.point_index == 1


def test_viterbi_output_length(grid5):
    corpus = generate_corpus(grid5, GenerationConfig(route_length=4, sigma_m=15.0, seed=3), 10)
    for traj in corpus:
        assert len(viterbi_match(traj, grid5, HmmConfig())) == len(traj)


def test_viterbi_matches_brute_force(grid3):
    rng = np.random.default_rng(12)
    cfg = HmmConfig(sigma_emission_m=15.0, beta_transition=50.0, k_candidates=4, radius_m=150.0)
    lat_min, lat_max, lon_min, lon_max = grid3.bounds()
    checked = 0
    attempts = 0
    while checked < 120 and attempts < 2000:
        attempts += 1
        n_points = int(rng.integers(3, 6))
        pts = [
            (rng.uniform(lon_min, lon_max), rng.uniform(lat_min, lat_max))
            for _ in range(n_points)
        ]
        traj = GpsTrajectory("t", pts, None)
        try:
            got = viterbi_match(traj, grid3, cfg)
        except NoCandidates:
            continue
        want = brute_force_match(traj, grid3, cfg)
        assert got == want
        checked += 1
    assert checked == 120


def test_viterbi_radius_monotonicity(grid3):
    # a larger candidate radius can only improve the best achievable score
    def best_score(traj, cfg):
        layers = [candidates_for_point(grid3, p, cfg) for p in traj.points]
        best = -math.inf
        for combo in itertools.product(*layers):
            s = sum(emission_logp(c, cfg) for c in combo)
            for c1, c2 in zip(combo, combo[1:]):
                s += transition_logp(c1, c2, grid3, cfg)
            best = max(best, s)
        return best

    rng = np.random.default_rng(5)
    lat_min, lat_max, lon_min, lon_max = grid3.bounds()
    for _ in range(10):
        pts = [(rng.uniform(lon_min, lon_max), rng.uniform(lat_min, lat_max)) for _ in range(3)]
        traj = GpsTrajectory("t", pts, None)
        s_small = best_score(traj, HmmConfig(k_candidates=3, radius_m=180.0))
        s_large = best_score(traj, HmmConfig(k_candidates=3, radius_m=400.0))
        assert s_large >= s_small - 1e-9
