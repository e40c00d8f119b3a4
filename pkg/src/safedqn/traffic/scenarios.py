"""Procedural geometry for the six scenario archetypes."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

from .geometry import EntryPoint, LaneGraph, arc_points

SCENARIOS = ("left_turn", "right_turn", "roundabout", "highway_drive", "highway_merge", "highway_split")


@dataclass
class ScenarioParams:
    lane_width: float = 3.5
    city_speed_limit: float = 10.0
    highway_speed_limit: float = 14.0
    # intersections
    box_half: float = 12.0
    approach_length: float = 60.0
    exit_length: float = 40.0
    # roundabout
    ring_radius: float = 20.0
    ring_arm_length: float = 60.0
    ring_offset_deg: float = 15.0
    # highways
    highway_length: float = 400.0
    merge_point: float = 150.0
    taper_length: float = 40.0
    split_point: float = 200.0
    exit_ramp_length: float = 120.0
    ego_start_offset: float = 20.0

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    @classmethod
    def load(cls, path) -> "ScenarioParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)


def _rot(p, k):
    """Rotate point ``p`` by ``k`` quarter turns counter-clockwise."""
    x, y = p
    for _ in range(k % 4):
        x, y = -y, x
    return x, y


def _intersection(p: ScenarioParams) -> tuple[LaneGraph, dict]:
    """Four-arm junction, two lanes per direction, arms S, E, N, W = 0..3.

    Geometry is written for the south arm and rotated for the others.
    """
    g = LaneGraph()
    B, L, X, w = p.box_half, p.approach_length, p.exit_length, p.lane_width
    inner, outer = 0.5 * w, 1.5 * w
    ids = {}
    for k in range(4):
        for tag, off in (("inner", inner), ("outer", outer)):
            ids[k, "in", tag] = g.add(f"arm{k}_in_{tag}", [_rot((off, -B - L), k), _rot((off, -B), k)],
                                      p.city_speed_limit)
            ids[k, "out", tag] = g.add(f"arm{k}_out_{tag}", [_rot((-off, -B), k), _rot((-off, -B - X), k)],
                                       p.city_speed_limit)
        g.set_neighbors(ids[k, "in", "outer"], ids[k, "in", "inner"])
        g.set_neighbors(ids[k, "out", "inner"], ids[k, "out", "outer"])
    for k in range(4):
        # inner lane: straight or left; outer lane: straight or right
        straight_in = g.add(f"arm{k}_straight_inner", [_rot((inner, -B), k), _rot((inner, B), k)],
                            p.city_speed_limit)
        straight_out = g.add(f"arm{k}_straight_outer", [_rot((outer, -B), k), _rot((outer, B), k)],
                             p.city_speed_limit)
        r_left = B + inner
        left = g.add(f"arm{k}_left", [_rot(q, k) for q in arc_points(-B, -B, r_left, 0.0, math.pi / 2)],
                     p.city_speed_limit)
        r_right = B - outer
        right = g.add(f"arm{k}_right", [_rot(q, k) for q in arc_points(B, -B, r_right, math.pi, math.pi / 2)],
                      p.city_speed_limit)
        ids[k, "straight", "inner"], ids[k, "straight", "outer"] = straight_in, straight_out
        ids[k, "left"], ids[k, "right"] = left, right
        g.connect(ids[k, "in", "inner"], left)
        g.connect(ids[k, "in", "inner"], straight_in)
        g.connect(ids[k, "in", "outer"], straight_out)
        g.connect(ids[k, "in", "outer"], right)
        g.connect(straight_in, ids[(k + 2) % 4, "out", "inner"])
        g.connect(straight_out, ids[(k + 2) % 4, "out", "outer"])
        g.connect(left, ids[(k + 3) % 4, "out", "inner"])
        g.connect(right, ids[(k + 1) % 4, "out", "outer"])
    return g, ids


def _left_turn(p):
    g, ids = _intersection(p)
    g.route = [ids[0, "in", "inner"], ids[0, "in", "outer"], ids[0, "left"], ids[3, "out", "inner"]]
    g.goal_lanes = [ids[3, "out", "inner"]]
    # oncoming traffic from the north crosses the ego's turn
    g.entry_points = [
        EntryPoint("north_inner", [[ids[2, "in", "inner"], ids[2, "straight", "inner"], ids[0, "out", "inner"]]]),
        EntryPoint("north_outer", [[ids[2, "in", "outer"], ids[2, "straight", "outer"], ids[0, "out", "outer"]],
                                   [ids[2, "in", "outer"], ids[2, "right"], ids[3, "out", "outer"]]]),
        EntryPoint("west_outer", [[ids[3, "in", "outer"], ids[3, "straight", "outer"], ids[1, "out", "outer"]]]),
    ]
    return g


def _right_turn(p):
    g, ids = _intersection(p)
    g.route = [ids[0, "in", "outer"], ids[0, "in", "inner"], ids[0, "right"], ids[1, "out", "outer"]]
    g.goal_lanes = [ids[1, "out", "outer"]]
    # eastbound traffic from the west arm shares the ego's exit lane
    g.entry_points = [
        EntryPoint("west_outer", [[ids[3, "in", "outer"], ids[3, "straight", "outer"], ids[1, "out", "outer"]]]),
        EntryPoint("west_inner", [[ids[3, "in", "inner"], ids[3, "straight", "inner"], ids[1, "out", "inner"]]]),
        EntryPoint("north_inner", [[ids[2, "in", "inner"], ids[2, "left"], ids[1, "out", "inner"]]]),
    ]
    return g


def _roundabout(p):
    g = LaneGraph()
    R, A, w = p.ring_radius, p.ring_arm_length, p.lane_width
    d = math.radians(p.ring_offset_deg)
    arms = [0.0, math.pi / 2, math.pi, 1.5 * math.pi]  # E, N, W, S
    nodes = []  # (angle, kind, arm)
    for k, th in enumerate(arms):
        nodes.append((th - d, "exit", k))
        nodes.append((th + d, "entry", k))
    nodes.sort()
    ring = []
    for i, (a0, _, _) in enumerate(nodes):
        a1 = nodes[(i + 1) % len(nodes)][0]
        if a1 <= a0:
            a1 += 2 * math.pi
        ring.append(g.add(f"ring{i}", arc_points(0.0, 0.0, R, a0, a1, n=6), p.city_speed_limit))
    for i in range(len(ring)):
        g.connect(ring[i], ring[(i + 1) % len(ring)])
    entries, exits = {}, {}
    for i, (ang, kind, k) in enumerate(nodes):
        th = arms[k]
        u = (math.cos(th), math.sin(th))
        n = (-u[1], u[0])
        ring_pt = (R * math.cos(ang), R * math.sin(ang))
        far = R + A
        if kind == "entry":
            start = (far * u[0] + 0.5 * w * n[0], far * u[1] + 0.5 * w * n[1])
            entries[k] = g.add(f"arm{k}_in", [start, ring_pt], p.city_speed_limit)
            g.connect(entries[k], ring[i])
        else:
            end = (far * u[0] - 0.5 * w * n[0], far * u[1] - 0.5 * w * n[1])
            exits[k] = g.add(f"arm{k}_out", [ring_pt, end], p.city_speed_limit)
            g.connect(ring[i - 1], exits[k])

    def path(k_in, k_out):
        start = next(i for i, nd in enumerate(nodes) if nd[1] == "entry" and nd[2] == k_in)
        seq = [entries[k_in]]
        i = start
        while True:
            seq.append(ring[i])
            nxt = nodes[(i + 1) % len(nodes)]
            if nxt[1] == "exit" and nxt[2] == k_out:
                break
            i = (i + 1) % len(nodes)
        return seq + [exits[k_out]]

    g.route = path(3, 1)  # south to north
    g.goal_lanes = [g.route[-1]]
    g.entry_points = [EntryPoint(f"arm{k}", [path(k, j) for j in range(4) if j != k]) for k in range(4)]
    return g


def _highway_drive(p):
    g = LaneGraph()
    w, L = p.lane_width, p.highway_length
    lanes = [g.add(f"lane{i}", [(0.0, i * w), (L, i * w)], p.highway_speed_limit) for i in range(3)]
    for a, b in zip(lanes[:-1], lanes[1:]):
        g.set_neighbors(a, b)
    g.route = [lanes[1], lanes[0], lanes[2]]
    g.goal_lanes = list(lanes)
    g.entry_points = [EntryPoint(f"lane{i}", [[lane]]) for i, lane in enumerate(lanes)]
    return g


def _highway_merge(p):
    g = LaneGraph()
    w, L, M, T = p.lane_width, p.highway_length, p.merge_point, p.taper_length
    ramp = g.add("ramp", [(0.0, -w), (M - T, -w), (M, 0.0)], p.highway_speed_limit)
    a = [g.add(f"main{i}_a", [(0.0, i * w), (M, i * w)], p.highway_speed_limit) for i in range(2)]
    b = [g.add(f"main{i}_b", [(M, i * w), (L, i * w)], p.highway_speed_limit) for i in range(2)]
    g.set_neighbors(ramp, a[0])
    g.set_neighbors(a[0], a[1])
    g.set_neighbors(b[0], b[1])
    g.connect(ramp, b[0])
    for i in range(2):
        g.connect(a[i], b[i])
    g.route = [ramp, a[0], a[1], b[0], b[1]]
    g.goal_lanes = list(b)
    g.entry_points = [EntryPoint(f"main{i}", [[a[i], b[i]]]) for i in range(2)]
    return g


def _highway_split(p):
    g = LaneGraph()
    w, L, S, X = p.lane_width, p.highway_length, p.split_point, p.exit_ramp_length
    a = [g.add(f"lane{i}_a", [(0.0, i * w), (S, i * w)], p.highway_speed_limit) for i in range(3)]
    b = [g.add(f"lane{i}_b", [(S, i * w), (L, i * w)], p.highway_speed_limit) for i in range(3)]
    exit_ = g.add("exit", [(S, 0.0), (S + 40.0, -2.0 * w), (S + X, -2.0 * w - 0.5 * (X - 40.0))],
                  p.highway_speed_limit)
    for lanes in (a, b):
        for lo, hi in zip(lanes[:-1], lanes[1:]):
            g.set_neighbors(lo, hi)
    for i in range(3):
        g.connect(a[i], b[i])
    g.connect(a[0], exit_)
    g.route = [a[1], a[0], a[2], exit_]
    g.goal_lanes = [exit_]
    g.entry_points = [
        EntryPoint("lane0", [[a[0], b[0]], [a[0], exit_]]),
        EntryPoint("lane1", [[a[1], b[1]]]),
        EntryPoint("lane2", [[a[2], b[2]]]),
    ]
    return g


_BUILDERS = {
    "left_turn": _left_turn,
    "right_turn": _right_turn,
    "roundabout": _roundabout,
    "highway_drive": _highway_drive,
    "highway_merge": _highway_merge,
    "highway_split": _highway_split,
}


def build_graph(tag: str, params: ScenarioParams | None = None) -> LaneGraph:
    """Lane graph, ego route and traffic entry points for a scenario tag."""
    if tag not in _BUILDERS:
        raise ValueError(f"unknown scenario {tag!r}; expected one of {SCENARIOS}")
    g = _BUILDERS[tag](params or ScenarioParams())
    g.validate()
    return g
