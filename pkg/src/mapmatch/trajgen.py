"""Synthetic labeled GPS trajectory generation over a road network.

A trajectory is built in four steps: enumerate connected routes of a fixed
segment count, lay points at constant arc-length spacing along each segment,
sample an ordered subset of points per segment, then perturb every point
with zero-mean Gaussian noise in the meter plane. Everything is a pure
function of (network, config, seed), so corpora regenerate bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ExplosionGuard, InsufficientPoints, ValidationError
from .roadnet import EARTH_RADIUS_M, RoadNetwork
from .routes import PointRoute, SegmentRoute

DEFAULT_ROUTE_CAP = 10_000_000

# Pseudo-real corpora draw a per-trajectory sigma from [0.5, 2] x base sigma
# and give 10% of points heavy-tailed noise at 4x that sigma (floored so the
# heavy branch perturbs even a zero-noise base).
PSEUDO_REAL_SIGMA_SPREAD = (0.5, 2.0)
PSEUDO_REAL_HEAVY_FRACTION = 0.10
PSEUDO_REAL_HEAVY_FACTOR = 4.0
PSEUDO_REAL_HEAVY_FLOOR_M = 1.0


@dataclass(frozen=True)
class LabeledPoint:
    lon: float
    lat: float
    edge_id: int
    ordinal: int  # position index along the segment, increasing with travel direction


@dataclass
class GpsTrajectory:
    traj_id: str
    points: list[tuple[float, float]]  # (lon, lat)
    truth: PointRoute | None = None

    def __post_init__(self):
        if len(self.points) < 3:
            raise ValidationError(f"trajectory {self.traj_id} has fewer than 3 points")
        if self.truth is not None and len(self.truth) != len(self.points):
            raise ValidationError(f"trajectory {self.traj_id}: truth length != point count")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class GenerationConfig:
    route_length: int = 4  # segments per route
    point_spacing_m: float = 30.0  # distance between generated points
    select_range: tuple[int, int] = (2, 6)  # points kept per segment, inclusive
    sigma_m: float = 15.0  # Gaussian noise std in meters
    seed: int = 0
    exclude_uturn: bool = True
    route_cap: int = DEFAULT_ROUTE_CAP

    def __post_init__(self):
        r1, r2 = self.select_range
        if self.route_length < 1:
            raise ValidationError("route_length must be >= 1")
        if self.point_spacing_m <= 0:
            raise ValidationError("point_spacing_m must be > 0")
        if not (1 <= r1 <= r2):
            raise ValidationError("select_range must satisfy 1 <= r1 <= r2")
        if self.sigma_m < 0:
            raise ValidationError("sigma_m must be >= 0")

    def to_dict(self) -> dict:
        return {
            "route_length": self.route_length,
            "point_spacing_m": self.point_spacing_m,
            "select_range": list(self.select_range),
            "sigma_m": self.sigma_m,
            "seed": self.seed,
            "exclude_uturn": self.exclude_uturn,
            "route_cap": self.route_cap,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GenerationConfig":
        kwargs = dict(doc)
        if "select_range" in kwargs:
            kwargs["select_range"] = tuple(kwargs["select_range"])
        return cls(**kwargs)


def enumerate_routes(
    net: RoadNetwork,
    n_segments: int,
    *,
    exclude_uturn: bool = True,
    cap: int = DEFAULT_ROUTE_CAP,
) -> list[SegmentRoute]:
    """All routes of exactly n_segments connected edges, lexicographic order."""
    if n_segments < 1:
        raise ValidationError("n_segments must be >= 1")
    table = net.connection_table(exclude_uturn=exclude_uturn)
    routes: list[SegmentRoute] = []
    stack: list[int] = []

    def extend(edge_id: int):
        stack.append(edge_id)
        if len(stack) == n_segments:
            if len(routes) >= cap:
                raise ExplosionGuard(f"more than {cap} routes of length {n_segments}")
            routes.append(list(stack))
        else:
            for succ in table[edge_id]:
                extend(succ)
        stack.pop()

    for edge_id in sorted(net.edges):
        extend(edge_id)
    return routes


def generate_points(net: RoadNetwork, edge_id: int, spacing_m: float) -> list[LabeledPoint]:
    """Points at arc-length offsets 0, D, 2D, ... strictly below the edge length."""
    if spacing_m <= 0:
        raise ValidationError("spacing_m must be > 0")
    length = net.edge_length(edge_id)
    points = []
    ordinal = 0
    offset = 0.0
    while offset < length:
        lon, lat = net.point_on_edge(edge_id, offset)
        points.append(LabeledPoint(lon, lat, edge_id, ordinal))
        ordinal += 1
        offset = ordinal * spacing_m
    return points


def select_points(
    route_points: list[list[LabeledPoint]],
    select_range: tuple[int, int],
    rng: np.random.Generator,
    *,
    clamp_to_available: bool = False,
) -> list[LabeledPoint]:
    """Sample an ordinal-increasing subset of each segment's points, in route order.

    The kept count is uniform in [r1, min(r2, available)] per segment. With
    ``clamp_to_available`` a segment holding fewer than r1 points keeps all of
    them instead of raising.
    """
    r1, r2 = select_range
    chosen: list[LabeledPoint] = []
    for seg_points in route_points:
        available = len(seg_points)
        lo = r1
        if available < r1:
            if not clamp_to_available:
                raise InsufficientPoints(f"segment has {available} points, need >= {r1}")
            lo = available
        count = int(rng.integers(lo, min(r2, available) + 1))
        idx = np.sort(rng.choice(available, size=count, replace=False))
        chosen.extend(seg_points[i] for i in idx)
    return chosen


def add_noise(traj: GpsTrajectory, sigma_m: float, rng: np.random.Generator) -> GpsTrajectory:
    """Perturb each coordinate independently with N(0, sigma^2) in the meter plane."""
    if sigma_m < 0:
        raise ValidationError("sigma_m must be >= 0")
    if sigma_m == 0.0:
        return GpsTrajectory(traj.traj_id, list(traj.points), None if traj.truth is None else list(traj.truth))
    return _noisy(traj, np.full(len(traj.points), sigma_m), rng)


def _noisy(traj: GpsTrajectory, sigma_per_point: np.ndarray, rng: np.random.Generator) -> GpsTrajectory:
    # Meter-plane displacement about each point's own latitude keeps the noise
    # isotropic in meters without needing a network projection.
    noise = rng.normal(0.0, 1.0, size=(len(traj.points), 2)) * sigma_per_point[:, None]
    out = []
    for (lon, lat), (dx, dy) in zip(traj.points, noise):
        dlon = math.degrees(dx / (EARTH_RADIUS_M * math.cos(math.radians(lat))))
        dlat = math.degrees(dy / EARTH_RADIUS_M)
        out.append((lon + dlon, lat + dlat))
    return GpsTrajectory(traj.traj_id, out, None if traj.truth is None else list(traj.truth))


def _trajectory_rng(seed: int, index: int) -> np.random.Generator:
    # Per-trajectory stream so corpus generation can be partitioned by index
    # without changing results.
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def _segment_points(net: RoadNetwork, route: SegmentRoute, spacing_m: float) -> list[list[LabeledPoint]]:
    return [generate_points(net, edge_id, spacing_m) for edge_id in route]


def _build_one(
    net: RoadNetwork,
    routes: list[SegmentRoute],
    cfg: GenerationConfig,
    index: int,
    *,
    pseudo_real: bool,
    prefix: str,
) -> GpsTrajectory:
    rng = _trajectory_rng(cfg.seed, index)
    route = routes[int(rng.integers(len(routes)))]
    select_range = cfg.select_range
    if pseudo_real:
        select_range = (cfg.select_range[0] + 1, cfg.select_range[1] + 2)
    seg_points = _segment_points(net, route, cfg.point_spacing_m)
    picked = select_points(seg_points, select_range, rng, clamp_to_available=pseudo_real)
    truth = [p.edge_id for p in picked]
    clean = GpsTrajectory(f"{prefix}{index:06d}", [(p.lon, p.lat) for p in picked], truth)

    if not pseudo_real:
        return add_noise(clean, cfg.sigma_m, rng)

    sigma_lo, sigma_hi = PSEUDO_REAL_SIGMA_SPREAD
    sigma_traj = float(rng.uniform(sigma_lo * cfg.sigma_m, sigma_hi * cfg.sigma_m))
    heavy = rng.random(len(clean.points)) < PSEUDO_REAL_HEAVY_FRACTION
    sigma_per_point = np.where(
        heavy,
        PSEUDO_REAL_HEAVY_FACTOR * max(sigma_traj, PSEUDO_REAL_HEAVY_FLOOR_M),
        sigma_traj,
    )
    return _noisy(clean, sigma_per_point, rng)


def generate_corpus(net: RoadNetwork, cfg: GenerationConfig, count: int, *, prefix: str = "syn-") -> list[GpsTrajectory]:
    """Labeled noisy trajectories with routes drawn uniformly (with replacement)."""
    routes = enumerate_routes(net, cfg.route_length, exclude_uturn=cfg.exclude_uturn, cap=cfg.route_cap)
    if not routes:
        raise ValidationError(f"network has no routes of length {cfg.route_length}")
    return [_build_one(net, routes, cfg, i, pseudo_real=False, prefix=prefix) for i in range(count)]


def generate_pseudo_real(net: RoadNetwork, cfg: GenerationConfig, count: int, *, prefix: str = "real-") -> list[GpsTrajectory]:
    """Stand-in ground-truth corpus with deliberately shifted statistics.

    Per-trajectory sigma varies uniformly in [0.5, 2] x cfg.sigma_m, 10% of
    points get heavy-tailed noise at 4x that sigma (with a 1 m floor so even
    a zero-noise base is perturbed), and per-segment point counts shift to
    (r1+1, r2+2), clamped to what the segment offers.
    """
    routes = enumerate_routes(net, cfg.route_length, exclude_uturn=cfg.exclude_uturn, cap=cfg.route_cap)
    if not routes:
        raise ValidationError(f"network has no routes of length {cfg.route_length}")
    return [_build_one(net, routes, cfg, i, pseudo_real=True, prefix=prefix) for i in range(count)]
