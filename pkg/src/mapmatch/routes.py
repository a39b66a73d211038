"""Route sequence aliases and the point-to-segment collapse rule."""

from __future__ import annotations

# A point-level route has one edge id per GPS point; a segment-level route is
# its order-preserving consecutive deduplication.
PointRoute = list[int]
SegmentRoute = list[int]


def collapse(route: PointRoute) -> SegmentRoute:
    """Remove consecutive duplicates, keeping order.

    Non-consecutive repeats survive: [1, 2, 1] stays [1, 2, 1].
    """
    out: SegmentRoute = []
    for edge_id in route:
        if not out or out[-1] != edge_id:
            out.append(edge_id)
    return out
