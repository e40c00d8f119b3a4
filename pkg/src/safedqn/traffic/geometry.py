"""Lane polylines, the lane graph and rectangle overlap tests."""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field


def wrap_angle(a: float) -> float:
    """Map an angle to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


class Lane:
    """A directed lane centerline with arc-length parametrisation."""

    def __init__(self, lane_id: int, name: str, points, speed_limit: float):
        pts = [(float(x), float(y)) for x, y in points]
        if len(pts) < 2:
            raise ValueError(f"lane {name!r} needs at least two points")
        self.id = lane_id
        self.name = name
        self.points = pts
        self.speed_limit = float(speed_limit)
        self.left: int | None = None
        self.right: int | None = None
        self.successors: list[int] = []
        cum = [0.0]
        self._seg = []  # (x0, y0, ux, uy, heading)
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            seg_len = math.hypot(x1 - x0, y1 - y0)
            if seg_len <= 0.0:
                raise ValueError(f"lane {name!r} has a zero-length segment")
            cum.append(cum[-1] + seg_len)
            self._seg.append((x0, y0, (x1 - x0) / seg_len, (y1 - y0) / seg_len, math.atan2(y1 - y0, x1 - x0)))
        self.cum = cum
        self.length = cum[-1]

    def pose(self, s: float) -> tuple[float, float, float]:
        """(x, y, heading) at arc length ``s`` (clamped to the lane)."""
        if s <= 0.0:
            k = 0
            s = 0.0
        elif s >= self.length:
            k = len(self._seg) - 1
            s = self.length
        else:
            k = bisect_right(self.cum, s) - 1
        x0, y0, ux, uy, h = self._seg[k]
        d = s - self.cum[k]
        return x0 + ux * d, y0 + uy * d, h

    def __repr__(self):
        return f"Lane({self.id}, {self.name!r}, length={self.length:.1f})"


@dataclass
class EntryPoint:
    """Spawn location for background traffic; each path is a lane-id sequence."""

    name: str
    paths: list[list[int]]

    @property
    def lane(self) -> int:
        return self.paths[0][0]


@dataclass
class LaneGraph:
    lanes: list[Lane] = field(default_factory=list)
    route: list[int] = field(default_factory=list)
    goal_lanes: list[int] = field(default_factory=list)
    entry_points: list[EntryPoint] = field(default_factory=list)

    def add(self, name: str, points, speed_limit: float) -> int:
        lane = Lane(len(self.lanes), name, points, speed_limit)
        self.lanes.append(lane)
        return lane.id

    def by_name(self, name: str) -> int:
        for lane in self.lanes:
            if lane.name == name:
                return lane.id
        raise KeyError(name)

    def connect(self, a: int, b: int) -> None:
        if b not in self.lanes[a].successors:
            self.lanes[a].successors.append(b)

    def set_neighbors(self, right: int, left: int) -> None:
        """Declare ``left`` as the left neighbour of ``right`` (and vice versa)."""
        self.lanes[right].left = left
        self.lanes[left].right = right

    def bounds(self, pad: float = 5.0) -> tuple[float, float, float, float]:
        xs = [x for lane in self.lanes for x, _ in lane.points]
        ys = [y for lane in self.lanes for _, y in lane.points]
        return min(xs) - pad, max(xs) + pad, min(ys) - pad, max(ys) + pad

    def validate(self) -> None:
        for lane in self.lanes:
            for nb, back in ((lane.left, "right"), (lane.right, "left")):
                if nb is not None and getattr(self.lanes[nb], back) != lane.id:
                    raise ValueError(f"neighbour relation of {lane.name!r} is not symmetric")
        route = set(self.route)
        for lid in self.route:
            lane = self.lanes[lid]
            linked = set(lane.successors) | {lane.left, lane.right}
            preds = {l.id for l in self.lanes if lid in l.successors}
            if lid != self.route[0] and not (linked | preds) & route:
                raise ValueError(f"route lane {lane.name!r} is disconnected from the route")
        if not set(self.goal_lanes) <= route:
            raise ValueError("goal lanes must lie on the route")
        for ep in self.entry_points:
            for path in ep.paths:
                for a, b in zip(path[:-1], path[1:]):
                    if b not in self.lanes[a].successors:
                        raise ValueError(f"entry path of {ep.name!r} is not connected")

    def signature(self) -> tuple:
        """Hashable description used to compare graphs."""
        return tuple(
            (l.name, tuple(l.points), l.speed_limit, l.left, l.right, tuple(l.successors)) for l in self.lanes
        ) + (tuple(self.route), tuple(self.goal_lanes),
             tuple((e.name, tuple(map(tuple, e.paths))) for e in self.entry_points))


def rect_corners(cx, cy, heading, length, width):
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    return [
        (cx + c * hl - s * hw, cy + s * hl + c * hw),
        (cx + c * hl + s * hw, cy + s * hl - c * hw),
        (cx - c * hl + s * hw, cy - s * hl - c * hw),
        (cx - c * hl - s * hw, cy - s * hl + c * hw),
    ]


def rects_overlap(a, b) -> bool:
    """Separating-axis test for two oriented rectangles ``(cx, cy, heading, length, width)``."""
    ca = rect_corners(*a)
    cb = rect_corners(*b)
    for heading in (a[2], b[2]):
        for ax, ay in ((math.cos(heading), math.sin(heading)), (-math.sin(heading), math.cos(heading))):
            pa = [x * ax + y * ay for x, y in ca]
            pb = [x * ax + y * ay for x, y in cb]
            if max(pa) < min(pb) or max(pb) < min(pa):
                return False
    return True


def arc_points(cx, cy, radius, a0, a1, n=12):
    """Points on a circular arc from angle ``a0`` to ``a1`` (radians)."""
    return [(cx + radius * math.cos(a0 + (a1 - a0) * k / n), cy + radius * math.sin(a0 + (a1 - a0) * k / n))
            for k in range(n + 1)]
