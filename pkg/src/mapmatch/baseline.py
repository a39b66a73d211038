"""Rule-based HMM map matcher decoded with Viterbi.

Hidden states are candidate edges near each GPS point. Emission scores a
candidate by its perpendicular distance, transition by how much the
along-network travel between consecutive candidates deviates from the
straight-line displacement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import NoCandidates, ValidationError
from .roadnet import RoadNetwork
from .routes import PointRoute
from .trajgen import GpsTrajectory


@dataclass(frozen=True)
class Candidate:
    edge_id: int
    point: tuple[float, float]  # projected (lon, lat) on the edge
    distance_m: float  # perpendicular distance from the observation
    offset_m: float  # arc-length position along the edge


@dataclass(frozen=True)
class HmmConfig:
    sigma_emission_m: float = 15.0
    beta_transition: float = 50.0
    k_candidates: int = 4
    radius_m: float = 100.0

    def __post_init__(self):
        if min(self.sigma_emission_m, self.beta_transition, self.k_candidates, self.radius_m) <= 0:
            raise ValidationError("all HmmConfig fields must be strictly positive")

    def to_dict(self) -> dict:
        return {
            "sigma_emission_m": self.sigma_emission_m,
            "beta_transition": self.beta_transition,
            "k_candidates": self.k_candidates,
            "radius_m": self.radius_m,
        }


def candidates_for_point(net: RoadNetwork, p: tuple[float, float], cfg: HmmConfig) -> list[Candidate]:
    found = []
    for edge_id, proj, dist in net.nearest_edges(p, cfg.k_candidates, cfg.radius_m):
        _, offset, _ = net.project_onto_edge(edge_id, p)
        found.append(Candidate(edge_id, proj, dist, offset))
    return found


def emission_logp(c: Candidate, cfg: HmmConfig) -> float:
    sigma = cfg.sigma_emission_m
    return -(c.distance_m**2) / (2.0 * sigma**2) - math.log(sigma * math.sqrt(2.0 * math.pi))


def route_distance(c1: Candidate, c2: Candidate, net: RoadNetwork) -> float:
    """Meters traveled along the network between two candidate positions."""
    if c1.edge_id == c2.edge_id and c2.offset_m >= c1.offset_m:
        return c2.offset_m - c1.offset_m
    remaining = net.edge_length(c1.edge_id) - c1.offset_m
    connecting = net.shortest_path_length(c1.edge_id, c2.edge_id)
    if math.isinf(connecting):
        return math.inf
    return remaining + connecting + c2.offset_m


def transition_logp(c1: Candidate, c2: Candidate, net: RoadNetwork, cfg: HmmConfig) -> float:
    d_route = route_distance(c1, c2, net)
    if math.isinf(d_route):
        return -math.inf
    x1 = net.project(c1.point)
    x2 = net.project(c2.point)
    d_straight = math.hypot(x2[0] - x1[0], x2[1] - x1[1])
    return -abs(d_straight - d_route) / cfg.beta_transition


def _better(score, path, best_score, best_path) -> bool:
    # None marks an unreachable (-inf) score
    if score is None:
        return best_score is None and best_path is not None and path < best_path
    if best_score is None:
        return True
    return score > best_score or (score == best_score and path < best_path)


def viterbi_match(traj: GpsTrajectory, net: RoadNetwork, cfg: HmmConfig | None = None) -> PointRoute:
    """Best-scoring candidate sequence, one edge id per trajectory point.

    Ties resolve toward the lexicographically smallest edge-id sequence. The
    grid symmetry this matcher runs on produces genuine score ties, so path
    scores accumulate in exact rational arithmetic: float rounding would both
    miss real ties and manufacture false ones, making the tie-break rule
    ill-defined. Unreachable transitions prune the path (score None).
    """
    cfg = cfg or HmmConfig()
    layers: list[list[Candidate]] = []
    for i, p in enumerate(traj.points):
        cands = candidates_for_point(net, p, cfg)
        if not cands:
            raise NoCandidates(i)
        layers.append(cands)

    # best[j] = (exact score or None, path) over paths ending at layers[t][j]
    best: list[tuple[Fraction | None, tuple[int, ...]]] = [
        (Fraction(emission_logp(c, cfg)), (c.edge_id,)) for c in layers[0]
    ]
    for t in range(1, len(layers)):
        nxt = []
        for c2 in layers[t]:
            em = Fraction(emission_logp(c2, cfg))
            top_score: Fraction | None = None
            top_path: tuple[int, ...] | None = None
            for (prev_score, prev_path), c1 in zip(best, layers[t - 1]):
                tr = transition_logp(c1, c2, net, cfg)
                if prev_score is None or math.isinf(tr):
                    score = None
                else:
                    score = prev_score + Fraction(tr) + em
                path = prev_path + (c2.edge_id,)
                if top_path is None or _better(score, path, top_score, top_path):
                    top_score, top_path = score, path
            nxt.append((top_score, top_path))
        best = nxt

    top_score, top_path = best[0]
    for score, path in best[1:]:
        if _better(score, path, top_score, top_path):
            top_score, top_path = score, path
    return list(top_path)
