"""Lane-based traffic world: ego control, background traffic, randomization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..cmdp import CRASH, GOAL, OFF_ROUTE, RUNNING, TIMEOUT, StepOutcome, check_action, named_streams
from .geometry import LaneGraph, rects_overlap, wrap_angle
from .scenarios import ScenarioParams, build_graph

NOOP, LEFT, RIGHT = 0, 1, 2
STREAMS = ("spawn", "speed_mult", "brake", "perturb")


@dataclass
class SimConfig:
    dt: float = 0.1
    v_max: float = 14.0
    speed_levels: int = 6
    ego_accel: float = 3.0
    ego_brake: float = 6.0
    ego_speed_gain: float = 2.0  # 1/s, first-order relaxation toward target speed
    lane_change_time: float = 1.0
    vehicle_length: float = 4.5
    vehicle_width: float = 1.8
    time_limit: int = 500
    # background traffic
    follow_headway: float = 1.5
    follow_accel: float = 2.6
    follow_decel: float = 3.0
    follow_max_decel: float = 9.0
    follow_gap: float = 2.0
    follow_lookahead: float = 80.0
    spawn_window: float = 1.0
    spawn_clearance: float = 12.0
    spawn_p_range: tuple = (0.2, 0.6)
    speed_mult_mean: float = 0.7
    speed_mult_std: float = 1.0
    speed_mult_clip: tuple = (0.4, 2.0)
    brake_every: float = 3.0
    brake_duration: float = 2.0
    brake_decel: float = 8.0
    perturb_scale: float = 5.0
    perturb_duration: float = 3.0
    cone_half_angle_deg: float = 30.0
    # observation
    radius: float = 50.0
    k_vehicles: int = 8
    n_waypoints: int = 5
    waypoint_spacing: float = 5.0
    # traffic switch (0 disables spawning and pre-seeding)
    traffic: bool = True

    @property
    def action_count(self) -> int:
        return 3 + self.speed_levels

    @property
    def target_speeds(self) -> np.ndarray:
        return np.linspace(0.0, self.v_max, self.speed_levels)


def clamp_speed_multiplier(s: float, lo: float = 0.4, hi: float = 2.0) -> float:
    return min(max(s, lo), hi)


@dataclass
class Vehicle:
    lane: int
    offset: float
    speed: float
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    target_speed: float = 0.0
    length: float = 4.5
    width: float = 1.8
    path: list[int] = field(default_factory=list)
    path_idx: int = 0
    brake_left: float = 0.0
    perturb_dv: float = 0.0
    perturb_left: float = 0.0
    # ego lane change blend
    lc_from: int | None = None
    lc_left: float = 0.0

    @property
    def behavior(self) -> str:
        if self.brake_left > 0.0:
            return "emergency_braking"
        if self.perturb_left > 0.0:
            return "perturbed"
        return "normal"

    def rect(self):
        return (self.x, self.y, self.heading, self.length, self.width)


@dataclass
class ObservationLayout:
    k_vehicles: int = 8
    n_waypoints: int = 5
    radius: float = 50.0
    v_max: float = 14.0
    bounds: tuple = (-100.0, 100.0, -100.0, 100.0)

    EGO = 5
    VEH = 5
    WP = 4

    @property
    def dim(self) -> int:
        return self.EGO + self.VEH * self.k_vehicles + self.WP * self.n_waypoints + 2

    def vehicle_slice(self, k: int) -> slice:
        start = self.EGO + self.VEH * k
        return slice(start, start + self.VEH)

    def waypoint_slice(self, k: int) -> slice:
        start = self.EGO + self.VEH * self.k_vehicles + self.WP * k
        return slice(start, start + self.WP)

    @property
    def ego_slice(self) -> slice:
        return slice(0, self.EGO)

    @property
    def lane_option_slice(self) -> slice:
        return slice(self.dim - 2, self.dim)


def _unit(v, lo, hi):
    """Affine map of [lo, hi] onto [-1, 1], clipped."""
    return min(1.0, max(-1.0, 2.0 * (v - lo) / (hi - lo) - 1.0))


def encode_observation(layout: ObservationLayout, ego, others, waypoints, lane_options) -> np.ndarray:
    """Build the standardized observation vector.

    ``ego`` = (x, y, v, heading, v_target); ``others`` = iterable of
    (x, y, v, heading); ``waypoints`` = list of (x, y, heading);
    ``lane_options`` = (left_available, right_available).
    """
    R = layout.radius
    vtop = 2.0 * layout.v_max
    xmin, xmax, ymin, ymax = layout.bounds
    ex, ey, ev, eh, evt = ego
    obs = np.zeros(layout.dim)
    obs[0] = _unit(ex, xmin, xmax)
    obs[1] = _unit(ey, ymin, ymax)
    obs[2] = _unit(ev, 0.0, vtop)
    obs[3] = wrap_angle(eh) / math.pi
    obs[4] = _unit(evt, 0.0, vtop)
    c, s = math.cos(eh), math.sin(eh)

    near = []
    for ox, oy, ov, oh in others:
        dx, dy = ox - ex, oy - ey
        d = math.hypot(dx, dy)
        if d <= R:
            near.append((d, dx, dy, ov, oh))
    near.sort(key=lambda t: t[0])
    for k, (d, dx, dy, ov, oh) in enumerate(near[: layout.k_vehicles]):
        sl = layout.vehicle_slice(k)
        obs[sl] = (
            max(-1.0, min(1.0, (c * dx + s * dy) / R)),
            max(-1.0, min(1.0, (-s * dx + c * dy) / R)),
            _unit(ov, 0.0, vtop),
            wrap_angle(oh - eh) / math.pi,
            _unit(d, 0.0, R),
        )
    for k, (wx, wy, wh) in enumerate(waypoints[: layout.n_waypoints]):
        dx, dy = wx - ex, wy - ey
        obs[layout.waypoint_slice(k)] = (
            max(-1.0, min(1.0, (c * dx + s * dy) / R)),
            max(-1.0, min(1.0, (-s * dx + c * dy) / R)),
            wrap_angle(wh - eh) / math.pi,
            _unit(math.hypot(dx, dy), 0.0, R),
        )
    obs[layout.dim - 2] = float(lane_options[0])
    obs[layout.dim - 1] = float(lane_options[1])
    return obs


class ScenarioWorld:
    """One episode of a scenario: ego, background traffic and the clock."""

    def __init__(self, tag: str, seed: int, params: ScenarioParams | None = None,
                 sim: SimConfig | None = None, graph: LaneGraph | None = None):
        self.tag = tag
        self.params = params or ScenarioParams()
        self.sim = sim or SimConfig()
        self.graph = graph if graph is not None else build_graph(tag, self.params)
        self.route = set(self.graph.route)
        self.goal_lanes = set(self.graph.goal_lanes)
        self.layout = ObservationLayout(self.sim.k_vehicles, self.sim.n_waypoints, self.sim.radius,
                                        self.sim.v_max, self.graph.bounds())
        self.dt = self.sim.dt
        self.clock = 0
        self.rng = named_streams(seed, STREAMS)
        self.status = RUNNING
        start = self.graph.route[0]
        self.ego = Vehicle(start, self.params.ego_start_offset, 0.0,
                           length=self.sim.vehicle_length, width=self.sim.vehicle_width)
        self._place(self.ego)
        self.others: list[Vehicle] = []
        lo, hi = self.sim.spawn_p_range
        self.spawn_p = [float(self.rng["spawn"].uniform(lo, hi)) for _ in self.graph.entry_points]
        if self.sim.traffic:
            self._preseed()

    # geometry helpers

    def _place(self, v: Vehicle) -> None:
        lane = self.graph.lanes[v.lane]
        x, y, h = lane.pose(v.offset)
        if v.lc_from is not None and v.lc_left > 0.0:
            src = self.graph.lanes[v.lc_from]
            s_src = v.offset * src.length / lane.length
            if s_src < src.length:
                sx, sy, _ = src.pose(s_src)
                u = v.lc_left / self.sim.lane_change_time
                w = 0.5 - 0.5 * math.cos(math.pi * (1.0 - u))
                lat_rate = math.hypot(x - sx, y - sy) / self.sim.lane_change_time
                sign = 1.0 if (math.cos(h) * (y - sy) - math.sin(h) * (x - sx)) > 0 else -1.0
                x, y = sx + w * (x - sx), sy + w * (y - sy)
                h = h + sign * math.atan2(lat_rate, max(v.speed, 1.0))
            else:
                v.lc_from, v.lc_left = None, 0.0
        v.x, v.y, v.heading = x, y, h

    def _clear_at(self, x, y, radius) -> bool:
        if math.hypot(self.ego.x - x, self.ego.y - y) < radius:
            return False
        return all(math.hypot(o.x - x, o.y - y) >= radius for o in self.others)

    def _new_vehicle(self, path, offset) -> Vehicle:
        lane = self.graph.lanes[path[0]]
        mult = clamp_speed_multiplier(
            float(self.rng["speed_mult"].normal(self.sim.speed_mult_mean, self.sim.speed_mult_std)),
            *self.sim.speed_mult_clip,
        )
        pref = lane.speed_limit * mult
        v = Vehicle(path[0], offset, pref, target_speed=pref, path=list(path),
                    length=self.sim.vehicle_length, width=self.sim.vehicle_width)
        leader = self._leader(v, self._occupancy())
        if leader is not None:
            # enter no faster than allows a comfortable stop behind the leader
            room = max(leader[0] - self.sim.follow_gap, 0.0)
            v.speed = min(v.speed, math.sqrt(2.0 * self.sim.follow_decel * room))
        self._place(v)
        return v

    def _preseed(self) -> None:
        rng = self.rng["spawn"]
        for ep, p in zip(self.graph.entry_points, self.spawn_p):
            lane = self.graph.lanes[ep.lane]
            s = float(rng.uniform(5.0, 25.0))
            while s < lane.length - 5.0:
                u = float(rng.random())
                path = ep.paths[int(rng.integers(len(ep.paths)))]
                x, y, _ = lane.pose(s)
                if u < p and self._clear_at(x, y, self.sim.spawn_clearance):
                    self.others.append(self._new_vehicle(path, s))
                s += float(rng.uniform(15.0, 40.0))

    # actions

    def lane_options(self) -> tuple[bool, bool]:
        lane = self.graph.lanes[self.ego.lane]
        busy = self.ego.lc_from is not None
        return (lane.left is not None and not busy, lane.right is not None and not busy)

    def apply_action(self, action: int) -> None:
        a = check_action(action, self.sim.action_count)
        if a == NOOP:
            return
        if a in (LEFT, RIGHT):
            left_ok, right_ok = self.lane_options()
            lane = self.graph.lanes[self.ego.lane]
            target = lane.left if a == LEFT else lane.right
            if (a == LEFT and not left_ok) or (a == RIGHT and not right_ok):
                return
            new = self.graph.lanes[target]
            self.ego.lc_from = self.ego.lane
            self.ego.lc_left = self.sim.lane_change_time
            self.ego.offset = min(self.ego.offset * new.length / lane.length, new.length)
            self.ego.lane = target
            return
        self.ego.target_speed = float(self.sim.target_speeds[a - 3])

    # randomization

    def cone_vehicles(self) -> list[Vehicle]:
        """Vehicles within the radius and the forward cone of the ego."""
        half = math.radians(self.sim.cone_half_angle_deg)
        out = []
        for o in self.others:
            dx, dy = o.x - self.ego.x, o.y - self.ego.y
            d = math.hypot(dx, dy)
            if 0.0 < d <= self.sim.radius and abs(wrap_angle(math.atan2(dy, dx) - self.ego.heading)) <= half:
                out.append(o)
        return out

    def randomize(self) -> None:
        sim = self.sim
        window = max(1, round(sim.spawn_window / self.dt))
        if sim.traffic and self.clock % window == 0 and self.clock > 0:
            rng = self.rng["spawn"]
            for ep, p in zip(self.graph.entry_points, self.spawn_p):
                u = float(rng.random())
                path = ep.paths[int(rng.integers(len(ep.paths)))]
                x, y, _ = self.graph.lanes[ep.lane].pose(0.0)
                if u < p and self._clear_at(x, y, sim.spawn_clearance):
                    self.others.append(self._new_vehicle(path, 0.0))
        brake_every = max(1, round(sim.brake_every / self.dt))
        if self.clock % brake_every == 0 and self.clock > 0:
            cone = self.cone_vehicles()
            if cone:
                cone[int(self.rng["brake"].integers(len(cone)))].brake_left = sim.brake_duration
        cone = self.cone_vehicles()
        if cone:
            rng = self.rng["perturb"]
            o = cone[int(rng.integers(len(cone)))]
            o.perturb_dv = float(rng.normal(0.0, 1.0)) * sim.perturb_scale
            o.perturb_left = sim.perturb_duration

    # motion

    def _move_ego(self) -> str:
        sim, ego = self.sim, self.ego
        acc = sim.ego_speed_gain * (ego.target_speed - ego.speed)
        acc = min(max(acc, -sim.ego_brake), sim.ego_accel)
        ego.speed = max(0.0, ego.speed + acc * self.dt)
        if abs(ego.speed - ego.target_speed) < 1e-3:
            ego.speed = ego.target_speed
        if ego.lc_left > 0.0:
            ego.lc_left = max(0.0, ego.lc_left - self.dt)
            if ego.lc_left == 0.0:
                ego.lc_from = None
        s = ego.offset + ego.speed * self.dt
        status = RUNNING
        while True:
            lane = self.graph.lanes[ego.lane]
            if s <= lane.length:
                break
            if ego.lane in self.goal_lanes:
                s = lane.length
                status = GOAL
                break
            s -= lane.length
            ego.lc_from, ego.lc_left = None, 0.0
            on_route = [l for l in lane.successors if l in self.route]
            if on_route:
                ego.lane = on_route[0]
            else:
                if lane.successors:
                    ego.lane = lane.successors[0]
                status = OFF_ROUTE
                break
        ego.offset = min(s, self.graph.lanes[ego.lane].length)
        self._place(ego)
        if status == RUNNING and ego.lane not in self.route:
            status = OFF_ROUTE
        return status

    def _occupancy(self) -> dict[int, list[tuple[float, Vehicle]]]:
        occ: dict[int, list] = {}
        for o in self.others:
            occ.setdefault(o.lane, []).append((o.offset, o))
        ego = self.ego
        occ.setdefault(ego.lane, []).append((ego.offset, ego))
        if ego.lc_from is not None:
            src = self.graph.lanes[ego.lc_from]
            s_src = ego.offset * src.length / self.graph.lanes[ego.lane].length
            occ.setdefault(ego.lc_from, []).append((s_src, ego))
        return occ

    def _leader(self, v: Vehicle, occ) -> tuple[float, float] | None:
        """(gap, leader speed) of the nearest vehicle ahead along ``v``'s path."""
        base = -v.offset
        for lid in v.path[v.path_idx:]:
            best = None
            for off, o in occ.get(lid, ()):
                if o is v or (lid == v.lane and off <= v.offset):
                    continue
                if best is None or off < best[0]:
                    best = (off, o)
            if best is not None:
                gap = base + best[0] - 0.5 * (v.length + best[1].length)
                return gap, best[1].speed
            base += self.graph.lanes[lid].length
            if base > self.sim.follow_lookahead:
                return None
        return None

    def _follow_accel(self, v: Vehicle, leader) -> float:
        sim = self.sim
        if v.brake_left > 0.0:
            return -sim.brake_decel
        v_des = max(0.0, v.target_speed + (v.perturb_dv if v.perturb_left > 0.0 else 0.0))
        a_free = min(max(0.5 * (v_des - v.speed), -sim.follow_decel), sim.follow_accel)
        if leader is None:
            return a_free
        gap, v_lead = leader
        if gap <= sim.follow_gap:
            return -sim.follow_max_decel
        need = (v.speed * v.speed - v_lead * v_lead) / (2.0 * max(gap - sim.follow_gap, 0.1))
        if gap < sim.follow_headway * v.speed or need > sim.follow_decel:
            return -min(sim.follow_max_decel, max(1.0, need))
        return a_free

    def _move_others(self) -> None:
        occ = self._occupancy()
        accels = [self._follow_accel(o, self._leader(o, occ)) for o in self.others]
        keep = []
        for o, a in zip(self.others, accels):
            o.speed = max(0.0, o.speed + a * self.dt)
            o.offset += o.speed * self.dt
            o.brake_left = max(0.0, o.brake_left - self.dt)
            o.perturb_left = max(0.0, o.perturb_left - self.dt)
            alive = True
            while o.offset > self.graph.lanes[o.lane].length:
                o.offset -= self.graph.lanes[o.lane].length
                o.path_idx += 1
                if o.path_idx >= len(o.path):
                    alive = False
                    break
                o.lane = o.path[o.path_idx]
            if alive:
                self._place(o)
                keep.append(o)
        self.others = keep

    def crashed(self) -> bool:
        ego = self.ego
        reach = ego.length + 1.0
        er = ego.rect()
        for o in self.others:
            if abs(o.x - ego.x) < reach and abs(o.y - ego.y) < reach and rects_overlap(er, o.rect()):
                return True
        return False

    def step(self, action: int) -> StepOutcome:
        if self.status != RUNNING:
            raise RuntimeError("step() called on a finished episode")
        self.apply_action(action)
        self.randomize()
        route_status = self._move_ego()
        self._move_others()
        self.clock += 1
        reward = self.ego.speed / self.sim.v_max
        if self.crashed():
            self.status = CRASH
            reward -= 100.0
        elif route_status == OFF_ROUTE:
            self.status = OFF_ROUTE
            reward -= 100.0
        elif route_status == GOAL:
            self.status = GOAL
            reward += 100.0
        terminated = self.status != RUNNING
        truncated = not terminated and self.clock >= self.sim.time_limit
        info = self.status if terminated else (TIMEOUT if truncated else RUNNING)
        if truncated:
            self.status = TIMEOUT
        return StepOutcome(self.observe(), reward, 1.0 if info == CRASH else 0.0, terminated, truncated, info)

    # observation

    def waypoints(self) -> list[tuple[float, float, float]]:
        pts = []
        lane = self.graph.lanes[self.ego.lane]
        s = self.ego.offset
        for k in range(1, self.sim.n_waypoints + 1):
            target = s + k * self.sim.waypoint_spacing
            lid = lane.id
            while target > self.graph.lanes[lid].length:
                cur = self.graph.lanes[lid]
                nxt = [l for l in cur.successors if l in self.route] or cur.successors
                if not nxt:
                    target = cur.length
                    break
                target -= cur.length
                lid = nxt[0]
            pts.append(self.graph.lanes[lid].pose(target))
        return pts

    def observe(self) -> np.ndarray:
        e = self.ego
        return encode_observation(
            self.layout,
            (e.x, e.y, e.speed, e.heading, e.target_speed),
            [(o.x, o.y, o.speed, o.heading) for o in self.others],
            self.waypoints(),
            self.lane_options(),
        )

    def snapshot(self) -> dict:
        """Plain-data view of all vehicle positions (for trace export)."""
        return {
            "t": self.clock,
            "ego": [self.ego.x, self.ego.y, self.ego.heading, self.ego.speed],
            "others": [[o.x, o.y, o.heading, o.speed] for o in self.others],
        }


class TrafficEnv:
    """Environment wrapper around :class:`ScenarioWorld` with seeded resets."""

    def __init__(self, tag: str, params: ScenarioParams | None = None, sim: SimConfig | None = None,
                 record_trace: bool = False):
        self.tag = tag
        self.params = params or ScenarioParams()
        self.sim = sim or SimConfig()
        self.graph = build_graph(tag, self.params)
        self.action_count = self.sim.action_count
        self.world: ScenarioWorld | None = None
        self.record_trace = record_trace
        self.trace: list[dict] = []
        self.layout = ScenarioWorld(tag, 0, self.params, SimConfig(**{**self.sim.__dict__, "traffic": False}),
                                    self.graph).layout
        self.observation_dim = self.layout.dim

    def reset(self, seed: int) -> np.ndarray:
        self.world = ScenarioWorld(self.tag, seed, self.params, self.sim, self.graph)
        self.trace = []
        if self.record_trace:
            self.trace.append({**self.world.snapshot(), "action": None, "reward": 0.0, "cost": 0.0})
        return self.world.observe()

    def step(self, action: int) -> StepOutcome:
        out = self.world.step(action)
        if self.record_trace:
            self.trace.append({**self.world.snapshot(), "action": int(action), "reward": out.reward,
                               "cost": out.cost, "info": out.info})
        return out
