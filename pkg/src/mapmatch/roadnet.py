"""Directed road-network graph: loading, validation, geometry queries.

Coordinates are WGS84 degrees on the wire; every metric computation happens
in a local equirectangular meter plane anchored at the network's projection
origin (the mean of its vertex coordinates). Networks are immutable after
construction and all queries are pure reads, so a single instance can be
shared freely across threads.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, UnknownEdge, ValidationError
from .routes import SegmentRoute

EARTH_RADIUS_M = 6_371_000.0

# Endpoint coincidence tolerance for edge polylines, in degrees.
_ENDPOINT_TOL_DEG = 1e-9


@dataclass(frozen=True)
class Vertex:
    id: int
    x: float  # longitude, degrees
    y: float  # latitude, degrees


@dataclass(frozen=True)
class Edge:
    id: int
    start: int
    end: int
    polyline: tuple[tuple[float, float], ...]  # (lon, lat) pairs, len >= 2


class _EdgeGeometry:
    """Meter-plane polyline of one edge with cumulative arc lengths."""

    __slots__ = ("xy", "cumlen", "length")

    def __init__(self, xy: np.ndarray):
        self.xy = xy
        seg = np.diff(xy, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.cumlen = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.length = float(self.cumlen[-1])

    def point_at(self, offset_m: float) -> tuple[float, float]:
        """Interpolate the point at a given arc-length offset."""
        offset = min(max(offset_m, 0.0), self.length)
        i = int(np.searchsorted(self.cumlen, offset, side="right")) - 1
        i = min(max(i, 0), len(self.xy) - 2)
        span = self.cumlen[i + 1] - self.cumlen[i]
        t = 0.0 if span == 0.0 else (offset - self.cumlen[i]) / span
        p = self.xy[i] + t * (self.xy[i + 1] - self.xy[i])
        return float(p[0]), float(p[1])

    def project(self, px: float, py: float) -> tuple[float, float, float, float]:
        """Closest point on the polyline: (distance, x, y, arc offset)."""
        p = np.array([px, py])
        a = self.xy[:-1]
        b = self.xy[1:]
        ab = b - a
        denom = np.einsum("ij,ij->i", ab, ab)
        t = np.where(denom > 0.0, np.einsum("ij,ij->i", p - a, ab) / np.where(denom > 0.0, denom, 1.0), 0.0)
        t = np.clip(t, 0.0, 1.0)
        proj = a + t[:, None] * ab
        d = np.hypot(proj[:, 0] - px, proj[:, 1] - py)
        i = int(np.argmin(d))
        offset = float(self.cumlen[i] + t[i] * np.sqrt(denom[i]))
        return float(d[i]), float(proj[i, 0]), float(proj[i, 1]), offset


class RoadNetwork:
    """Validated directed graph with per-edge polyline geometry.

    Edge ids are dense integers 0..|E|-1; ``edge_id_map`` maps each dense id
    back to the id found in the source file when a remap was needed.
    """

    def __init__(
        self,
        vertices: list[Vertex],
        edges: list[Edge],
        meta: dict | None = None,
        edge_id_map: dict[int, int] | None = None,
    ):
        if not edges:
            raise ValidationError("network has no edges")
        self.vertices: dict[int, Vertex] = {}
        for v in vertices:
            if v.id in self.vertices:
                raise ValidationError(f"duplicate vertex id {v.id}")
            if not (-180.0 <= v.x <= 180.0 and -90.0 <= v.y <= 90.0):
                raise ValidationError(f"vertex {v.id} outside WGS84 range")
            self.vertices[v.id] = v

        lons = [v.x for v in vertices]
        lats = [v.y for v in vertices]
        self.projection_origin = (sum(lons) / len(lons), sum(lats) / len(lats))
        self._cos_lat0 = math.cos(math.radians(self.projection_origin[1]))

        self.edges: dict[int, Edge] = {}
        self._geometry: dict[int, _EdgeGeometry] = {}
        self._out_edges: dict[int, list[int]] = {v.id: [] for v in vertices}
        for e in edges:
            if e.id in self.edges:
                raise ValidationError(f"duplicate edge id {e.id}")
            if e.start not in self.vertices or e.end not in self.vertices:
                raise ValidationError(f"edge {e.id} references a missing vertex")
            if len(e.polyline) < 2:
                raise ValidationError(f"edge {e.id} polyline has fewer than 2 points")
            sv, ev = self.vertices[e.start], self.vertices[e.end]
            if (
                abs(e.polyline[0][0] - sv.x) > _ENDPOINT_TOL_DEG
                or abs(e.polyline[0][1] - sv.y) > _ENDPOINT_TOL_DEG
                or abs(e.polyline[-1][0] - ev.x) > _ENDPOINT_TOL_DEG
                or abs(e.polyline[-1][1] - ev.y) > _ENDPOINT_TOL_DEG
            ):
                raise ValidationError(f"edge {e.id} polyline does not join its vertices")
            geom = _EdgeGeometry(np.array([self.project(p) for p in e.polyline]))
            if geom.length <= 0.0:
                raise ValidationError(f"edge {e.id} has zero length")
            self.edges[e.id] = e
            self._geometry[e.id] = geom
            self._out_edges[e.start].append(e.id)
        for out in self._out_edges.values():
            out.sort()

        self.meta = dict(meta) if meta else {}
        self.edge_id_map = dict(edge_id_map) if edge_id_map else {e.id: e.id for e in edges}
        self._sssp_cache: dict[int, dict[int, float]] = {}

    # -- geometry ----------------------------------------------------------

    def project(self, p: tuple[float, float]) -> tuple[float, float]:
        """(lon, lat) degrees -> local meter-plane (x, y)."""
        lon0, lat0 = self.projection_origin
        x = EARTH_RADIUS_M * math.radians(p[0] - lon0) * self._cos_lat0
        y = EARTH_RADIUS_M * math.radians(p[1] - lat0)
        return x, y

    def unproject(self, xy: tuple[float, float]) -> tuple[float, float]:
        """Local meter-plane (x, y) -> (lon, lat) degrees."""
        lon0, lat0 = self.projection_origin
        lon = lon0 + math.degrees(xy[0] / (EARTH_RADIUS_M * self._cos_lat0))
        lat = lat0 + math.degrees(xy[1] / EARTH_RADIUS_M)
        return lon, lat

    def edge_length(self, edge_id: int) -> float:
        return self._edge_geometry(edge_id).length

    def point_on_edge(self, edge_id: int, offset_m: float) -> tuple[float, float]:
        """(lon, lat) of the point at an arc-length offset along an edge."""
        return self.unproject(self._edge_geometry(edge_id).point_at(offset_m))

    def project_onto_edge(self, edge_id: int, p: tuple[float, float]) -> tuple[float, float, tuple[float, float]]:
        """Closest point on an edge: (distance_m, offset_m, (lon, lat))."""
        d, x, y, offset = self._edge_geometry(edge_id).project(*self.project(p))
        return d, offset, self.unproject((x, y))

    def nearest_edges(
        self, p: tuple[float, float], k: int, radius_m: float
    ) -> list[tuple[int, tuple[float, float], float]]:
        """The k closest edges within radius, ascending by distance.

        Returns (edge_id, projected (lon, lat), distance_m) triples; ties are
        broken by edge id. May return fewer than k entries.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if radius_m <= 0:
            raise ValueError("radius_m must be > 0")
        px, py = self.project(p)
        hits = []
        for edge_id, geom in self._geometry.items():
            d, x, y, _ = geom.project(px, py)
            if d <= radius_m:
                hits.append((d, edge_id, (x, y)))
        hits.sort(key=lambda h: (h[0], h[1]))
        return [(edge_id, self.unproject(xy), d) for d, edge_id, xy in hits[:k]]

    # -- topology ----------------------------------------------------------

    def connection_table(self, *, exclude_uturn: bool = True) -> dict[int, list[int]]:
        """Successor edges per edge: those starting where the key edge ends.

        With ``exclude_uturn`` the exact reverse edge (swapped endpoints) is
        removed from each successor list.
        """
        table: dict[int, list[int]] = {}
        for e in self.edges.values():
            succ = list(self._out_edges.get(e.end, []))
            if exclude_uturn:
                succ = [s for s in succ if not (self.edges[s].end == e.start and self.edges[s].start == e.end)]
            table[e.id] = succ
        return table

    def validate_route(self, route: SegmentRoute) -> bool:
        """True iff every consecutive edge pair shares the required vertex."""
        for edge_id in route:
            if edge_id not in self.edges:
                raise UnknownEdge(f"edge {edge_id} not in network")
        for a, b in zip(route, route[1:]):
            if self.edges[a].end != self.edges[b].start:
                return False
        return True

    def shortest_path_length(self, from_edge: int, to_edge: int) -> float:
        """Meters along the network from the end of one edge to the start of another.

        Returns 0.0 for adjacent edges and ``math.inf`` when unreachable.
        """
        source = self._edge_checked(from_edge).end
        target = self._edge_checked(to_edge).start
        if source == target:
            return 0.0
        return self._sssp(source).get(target, math.inf)

    def bounds(self) -> tuple[float, float, float, float]:
        """(lat_min, lat_max, lon_min, lon_max) over all edge polylines."""
        lats: list[float] = []
        lons: list[float] = []
        for e in self.edges.values():
            for lon, lat in e.polyline:
                lons.append(lon)
                lats.append(lat)
        return min(lats), max(lats), min(lons), max(lons)

    # -- internals ---------------------------------------------------------

    def _edge_geometry(self, edge_id: int) -> _EdgeGeometry:
        try:
            return self._geometry[edge_id]
        except KeyError:
            raise UnknownEdge(f"edge {edge_id} not in network") from None

    def _edge_checked(self, edge_id: int) -> Edge:
        if edge_id not in self.edges:
            raise UnknownEdge(f"edge {edge_id} not in network")
        return self.edges[edge_id]

    def _sssp(self, source_vertex: int) -> dict[int, float]:
        """Dijkstra distances from a vertex, memoized per source."""
        cached = self._sssp_cache.get(source_vertex)
        if cached is not None:
            return cached
        dist: dict[int, float] = {source_vertex: 0.0}
        heap: list[tuple[float, int]] = [(0.0, source_vertex)]
        while heap:
            d, v = heapq.heappop(heap)
            if d > dist.get(v, math.inf):
                continue
            for edge_id in self._out_edges.get(v, []):
                e = self.edges[edge_id]
                nd = d + self._geometry[edge_id].length
                if nd < dist.get(e.end, math.inf):
                    dist[e.end] = nd
                    heapq.heappush(heap, (nd, e.end))
        self._sssp_cache[source_vertex] = dist
        return dist


# -- module-level operation wrappers ---------------------------------------


def connection_table(net: RoadNetwork, *, exclude_uturn: bool = True) -> dict[int, list[int]]:
    return net.connection_table(exclude_uturn=exclude_uturn)


def validate_route(net: RoadNetwork, route: SegmentRoute) -> bool:
    return net.validate_route(route)


def project(net: RoadNetwork, p: tuple[float, float]) -> tuple[float, float]:
    return net.project(p)


def unproject(net: RoadNetwork, xy: tuple[float, float]) -> tuple[float, float]:
    return net.unproject(xy)


def nearest_edges(net: RoadNetwork, p: tuple[float, float], k: int, radius_m: float):
    return net.nearest_edges(p, k, radius_m)


def shortest_path_length(net: RoadNetwork, from_edge: int, to_edge: int) -> float:
    return net.shortest_path_length(from_edge, to_edge)


# -- file format -------------------------------------------------------------


def network_to_dict(net: RoadNetwork) -> dict:
    doc = {
        "vertices": [{"id": v.id, "x": v.x, "y": v.y} for v in sorted(net.vertices.values(), key=lambda v: v.id)],
        "edges": [
            {"id": e.id, "start": e.start, "end": e.end, "polyline": [[lon, lat] for lon, lat in e.polyline]}
            for e in sorted(net.edges.values(), key=lambda e: e.id)
        ],
    }
    if net.meta:
        doc["meta"] = net.meta
    return doc


def save_network(net: RoadNetwork, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(network_to_dict(net), f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_network(path) -> RoadNetwork:
    """Load and validate a network JSON file.

    Edge ids are remapped to dense 0..|E|-1 (ascending by original id) when
    the file's ids are not already dense; the mapping is kept on the network.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot parse network file {path}: {exc}") from exc

    try:
        raw_vertices = [Vertex(int(v["id"]), float(v["x"]), float(v["y"])) for v in doc["vertices"]]
        raw_edges = [
            (
                int(e["id"]),
                int(e["start"]),
                int(e["end"]),
                tuple((float(p[0]), float(p[1])) for p in e["polyline"]),
            )
            for e in doc["edges"]
        ]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ParseError(f"network file {path} is malformed: {exc}") from exc

    ids = [eid for eid, *_ in raw_edges]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate edge id in network file")
    if sorted(ids) == list(range(len(ids))):
        id_map = {eid: eid for eid in ids}
    else:
        id_map = {dense: orig for dense, orig in enumerate(sorted(ids))}
    rev = {orig: dense for dense, orig in id_map.items()}
    edges = [Edge(rev[eid], start, end, poly) for eid, start, end, poly in raw_edges]
    return RoadNetwork(raw_vertices, edges, meta=doc.get("meta"), edge_id_map=id_map)


def make_grid_network(rows: int, cols: int, spacing_m: float) -> RoadNetwork:
    """Rectangular grid with two directed edges per orthogonal adjacency.

    Vertex id is ``row * cols + col``. Adjacencies are visited row-major,
    east neighbor before south neighbor; each contributes the forward edge
    followed by its reverse, so edge ids are sequential pairs.
    """
    if rows < 2 or cols < 2:
        raise ValueError("rows and cols must be >= 2")
    if spacing_m <= 0:
        raise ValueError("spacing_m must be > 0")

    anchor_lon, anchor_lat = 127.0, 37.5
    cos0 = math.cos(math.radians(anchor_lat))

    def place(r: int, c: int) -> tuple[float, float]:
        x = (c - (cols - 1) / 2.0) * spacing_m
        y = ((rows - 1) / 2.0 - r) * spacing_m  # row 0 is the northern row
        lon = anchor_lon + math.degrees(x / (EARTH_RADIUS_M * cos0))
        lat = anchor_lat + math.degrees(y / EARTH_RADIUS_M)
        return lon, lat

    vertices = []
    coords: dict[int, tuple[float, float]] = {}
    for r in range(rows):
        for c in range(cols):
            vid = r * cols + c
            lon, lat = place(r, c)
            coords[vid] = (lon, lat)
            vertices.append(Vertex(vid, lon, lat))

    edges = []
    next_id = 0

    def add_pair(a: int, b: int):
        nonlocal next_id
        pa, pb = coords[a], coords[b]
        edges.append(Edge(next_id, a, b, (pa, pb)))
        edges.append(Edge(next_id + 1, b, a, (pb, pa)))
        next_id += 2

    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                add_pair(r * cols + c, r * cols + c + 1)
            if r + 1 < rows:
                add_pair(r * cols + c, (r + 1) * cols + c)

    meta = {
        "rows": rows,
        "cols": cols,
        "spacing_m": spacing_m,
        "id_scheme": "vertex id = row*cols+col; adjacencies row-major, east then south; each yields forward edge id k, reverse k+1",
    }
    return RoadNetwork(vertices, edges, meta=meta)
