import json

import pytest

from mapmatch.roadnet import Edge, RoadNetwork, Vertex, make_grid_network


def chain_network() -> RoadNetwork:
    """A -> B -> C along the equator-ish, 100 m edges."""
    vertices = [
        Vertex(0, 127.000, 37.500),
        Vertex(1, 127.001, 37.500),
        Vertex(2, 127.002, 37.500),
    ]
    edges = [
        Edge(0, 0, 1, ((127.000, 37.500), (127.001, 37.500))),
        Edge(1, 1, 2, ((127.001, 37.500), (127.002, 37.500))),
    ]
    return RoadNetwork(vertices, edges)


@pytest.fixture
def chain_net():
    return chain_network()


@pytest.fixture
def grid2():
    return make_grid_network(2, 2, 100.0)


@pytest.fixture
def grid3():
    return make_grid_network(3, 3, 200.0)


@pytest.fixture
def grid5():
    return make_grid_network(5, 5, 200.0)


def write_network_json(path, vertices, edges, meta=None):
    doc = {
        "vertices": [{"id": i, "x": x, "y": y} for i, x, y in vertices],
        "edges": [{"id": i, "start": s, "end": e, "polyline": p} for i, s, e, p in edges],
    }
    if meta is not None:
        doc["meta"] = meta
    path.write_text(json.dumps(doc))
    return path
