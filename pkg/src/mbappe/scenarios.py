"""Scenario definition, JSON serialization, and synthetic scenario families.

A scenario is a map, an ego start state, replayed agent tracks, static
boxes, and a duration. The generators build deterministic parametric
scenarios; the seed jitters family parameters inside safe ranges unless a
parameter is pinned explicitly.
"""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass

from .errors import ConfigError, MalformedInputError, ScenarioInvalidError
from .kinematics import EgoState, VehicleParams
from .world import (
    AgentKind,
    AgentTrack,
    Centerline,
    MapModel,
    OrientedBox,
    Pose,
    TRACK_DT,
    ego_footprint,
    footprint_in_drivable,
)

FAMILIES = (
    "straight",
    "right_turn",
    "stopped_lead_vehicle",
    "crossing_pedestrian",
    "intersection_pass",
)


@dataclass(frozen=True)
class Scenario:
    id: str
    map: MapModel
    ego_init: EgoState
    vehicle: VehicleParams
    agents: tuple[AgentTrack, ...]
    statics: tuple[OrientedBox, ...]
    duration: float
    tick: float = TRACK_DT

    @property
    def n_ticks(self) -> int:
        return int(math.ceil(self.duration / self.tick - 1e-9))


def validate_scenario(scenario: Scenario) -> None:
    """Raise ScenarioInvalidError if the scenario breaks its invariants."""
    if scenario.duration <= 0.0:
        raise ScenarioInvalidError(f"{scenario.id}: duration must be positive")
    if not scenario.map.route:
        raise ScenarioInvalidError(f"{scenario.id}: route is empty")
    needed = scenario.n_ticks + 1
    for track in scenario.agents:
        if len(track.trajectory) < needed:
            raise ScenarioInvalidError(
                f"{scenario.id}: agent {track.id!r} track covers "
                f"{(len(track.trajectory) - 1) * TRACK_DT:.1f} s < duration {scenario.duration} s"
            )
    if not footprint_in_drivable(ego_footprint(scenario.ego_init, scenario.vehicle), scenario.map):
        raise ScenarioInvalidError(f"{scenario.id}: ego start is outside the drivable area")


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "id": s.id,
        "duration": s.duration,
        "tick": s.tick,
        "ego": {"x": s.ego_init.x, "y": s.ego_init.y, "heading": s.ego_init.heading, "v": s.ego_init.v},
        "vehicle": {
            "wheelbase": s.vehicle.wheelbase,
            "length": s.vehicle.length,
            "width": s.vehicle.width,
            "rear_overhang": s.vehicle.rear_overhang,
        },
        "map": {
            "centerlines": [
                {
                    "id": cl.id,
                    "points": [[x, y] for x, y in cl.points],
                    "speed_limit": cl.speed_limit,
                    "lane_width": cl.lane_width,
                    "blocked": cl.blocked,
                }
                for cl in s.map.centerlines.values()
            ],
            "drivable_area": [[[x, y] for x, y in poly] for poly in s.map.drivable_area],
            "route": list(s.map.route),
        },
        "agents": [
            {
                "id": a.id,
                "kind": a.kind.value,
                "length": a.length,
                "width": a.width,
                "trajectory": [[x, y, h] for x, y, h in a.trajectory],
            }
            for a in s.agents
        ],
        "statics": [
            {"x": b.x, "y": b.y, "heading": b.heading, "length": b.length, "width": b.width}
            for b in s.statics
        ],
    }


def scenario_from_dict(d: dict) -> Scenario:
    try:
        ego = d["ego"]
        veh = d["vehicle"]
        m = d["map"]
        scenario = Scenario(
            id=str(d["id"]),
            duration=float(d["duration"]),
            tick=float(d.get("tick", TRACK_DT)),
            ego_init=EgoState(ego["x"], ego["y"], ego["heading"], ego["v"]),
            vehicle=VehicleParams(veh["wheelbase"], veh["length"], veh["width"], veh["rear_overhang"]),
            map=MapModel(
                centerlines=[
                    Centerline(
                        c["id"],
                        [tuple(p) for p in c["points"]],
                        c["speed_limit"],
                        c["lane_width"],
                        c.get("blocked", False),
                    )
                    for c in m["centerlines"]
                ],
                drivable_area=[[tuple(p) for p in poly] for poly in m["drivable_area"]],
                route=m["route"],
            ),
            agents=tuple(
                AgentTrack(
                    a["id"],
                    AgentKind(a["kind"]),
                    a["length"],
                    a["width"],
                    tuple((p[0], p[1], p[2]) for p in a["trajectory"]),
                )
                for a in d.get("agents", [])
            ),
            statics=tuple(
                OrientedBox(b["x"], b["y"], b["heading"], b["length"], b["width"])
                for b in d.get("statics", [])
            ),
        )
    except (KeyError, TypeError, ValueError, MalformedInputError) as exc:
        raise MalformedInputError(f"malformed scenario document: {exc}") from exc
    return scenario


def save_scenario(scenario: Scenario, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=1)
        fh.write("\n")


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# synthetic families


def _track_samples(n_ticks: int, pose_fn) -> tuple[Pose, ...]:
    return tuple(pose_fn(k * TRACK_DT) for k in range(n_ticks + 1))


def _corridor(points: list[tuple[float, float]], half_width: float) -> list[tuple[float, float]]:
    """Offset band polygon around a polyline (right side out, left side back)."""
    headings = []
    for k in range(len(points) - 1):
        dx = points[k + 1][0] - points[k][0]
        dy = points[k + 1][1] - points[k][1]
        headings.append(math.atan2(dy, dx))
    headings.append(headings[-1])
    left, right = [], []
    for (x, y), h in zip(points, headings):
        nx, ny = -math.sin(h), math.cos(h)
        left.append((x + nx * half_width, y + ny * half_width))
        right.append((x - nx * half_width, y - ny * half_width))
    return right + left[::-1]


def _sample_line(p0: tuple[float, float], p1: tuple[float, float], step: float) -> list[tuple[float, float]]:
    length = math.hypot(p1[0] - p0[0], p1[1] - p0[1])
    n = max(1, int(math.ceil(length / step)))
    return [
        (p0[0] + (p1[0] - p0[0]) * k / n, p0[1] + (p1[1] - p0[1]) * k / n)
        for k in range(n + 1)
    ]


def _jitter(rng: random.Random, params: dict, key: str, lo: float, hi: float) -> float:
    if key in params:
        return float(params[key])
    return rng.uniform(lo, hi)


def _stationary_after(x_stop: float, y: float, heading: float, v0: float, t_brake_start: float,
                      t_stop: float) -> callable:
    """Pose function for a vehicle moving at v0, braking linearly between
    t_brake_start and t_stop, then holding x_stop."""
    brake_time = t_stop - t_brake_start
    x_start_brake = x_stop - v0 * brake_time / 2.0

    def pose(t: float) -> Pose:
        if t <= t_brake_start:
            return (x_start_brake - v0 * (t_brake_start - t), y, heading)
        if t >= t_stop:
            return (x_stop, y, heading)
        tau = t - t_brake_start
        x = x_start_brake + v0 * tau - v0 * tau * tau / (2.0 * brake_time)
        return (x, y, heading)

    return pose


def generate_scenario(family: str, params: dict | None = None, seed: int = 0) -> Scenario:
    """Deterministic synthetic scenario of the given family.

    The seed drives a local RNG that varies free parameters inside
    family-specific ranges; pass a parameter in `params` to pin it.
    """
    if family not in FAMILIES:
        raise ConfigError(f"unknown scenario family {family!r}; choose from {FAMILIES}")
    params = dict(params or {})
    rng = random.Random(f"{family}:{seed}")
    vehicle = VehicleParams()
    builder = {
        "straight": _gen_straight,
        "right_turn": _gen_right_turn,
        "stopped_lead_vehicle": _gen_stopped_lead,
        "crossing_pedestrian": _gen_crossing_pedestrian,
        "intersection_pass": _gen_intersection_pass,
    }[family]
    scenario = builder(params, rng, vehicle, f"{family}-{seed:03d}")
    validate_scenario(scenario)
    return scenario


def _gen_straight(params, rng, vehicle, sid) -> Scenario:
    limit = _jitter(rng, params, "speed_limit", 4.0, 7.0)
    duration = _jitter(rng, params, "duration", 12.0, 12.0)
    length = _jitter(rng, params, "length", limit * duration + 30.0, limit * duration + 60.0)
    lane_width = _jitter(rng, params, "lane_width", 4.0, 4.0)
    half = _jitter(rng, params, "corridor_half_width", 4.5, 5.0)
    cl = Centerline("lane0", _sample_line((0.0, 0.0), (length, 0.0), 2.0), limit, lane_width)
    map_model = MapModel(
        [cl],
        [[(-10.0, -half), (length + 10.0, -half), (length + 10.0, half), (-10.0, half)]],
        ["lane0"],
    )
    return Scenario(
        id=sid,
        map=map_model,
        ego_init=EgoState(0.0, 0.0, 0.0, limit),
        vehicle=vehicle,
        agents=(),
        statics=(),
        duration=duration,
    )


def _gen_right_turn(params, rng, vehicle, sid) -> Scenario:
    limit = _jitter(rng, params, "speed_limit", 4.0, 5.5)
    duration = _jitter(rng, params, "duration", 14.0, 14.0)
    radius = _jitter(rng, params, "radius", 16.0, 24.0)
    approach = _jitter(rng, params, "approach", 22.0, 32.0)
    exit_len = _jitter(rng, params, "exit", 40.0, 60.0)
    lane_width = 4.0
    half = 4.5

    entry_pts = _sample_line((0.0, 0.0), (approach, 0.0), 2.0)
    # right turn: quarter circle, center below the end of the approach
    arc_pts = []
    n_arc = max(8, int(radius * (math.pi / 2.0) / 2.0))
    for k in range(n_arc + 1):
        phi = (math.pi / 2.0) * k / n_arc
        arc_pts.append(
            (approach + radius * math.sin(phi), -radius + radius * math.cos(phi))
        )
    exit_pts = _sample_line(
        (approach + radius, -radius), (approach + radius, -radius - exit_len), 2.0
    )
    entry = Centerline("entry", entry_pts, limit, lane_width)
    turn = Centerline("turn", arc_pts + exit_pts[1:], limit, lane_width)
    # the corridor extends behind the ego start so the rear footprint fits
    corridor = _corridor([(-10.0, 0.0)] + entry_pts + arc_pts[1:] + exit_pts[1:], half)
    map_model = MapModel([entry, turn], [corridor], ["entry", "turn"])
    return Scenario(
        id=sid,
        map=map_model,
        ego_init=EgoState(0.0, 0.0, 0.0, limit),
        vehicle=vehicle,
        agents=(),
        statics=(),
        duration=duration,
    )


def _gen_stopped_lead(params, rng, vehicle, sid) -> Scenario:
    limit = _jitter(rng, params, "speed_limit", 4.0, 6.0)
    duration = _jitter(rng, params, "duration", 15.0, 15.0)
    gap = _jitter(rng, params, "gap", 25.0, 40.0)
    length = max(120.0, gap + limit * 4.0 + 60.0)
    lane_width = 4.0
    half = 4.5
    cl = Centerline("lane0", _sample_line((0.0, 0.0), (length, 0.0), 2.0), limit, lane_width)
    map_model = MapModel(
        [cl],
        [[(-10.0, -half), (length + 10.0, -half), (length + 10.0, half), (-10.0, half)]],
        ["lane0"],
    )
    n_ticks = int(math.ceil(duration / TRACK_DT - 1e-9))
    # lead starts `gap` ahead, cruises 1 s, brakes to rest by t = 3 s
    x_stop = gap + limit * 1.0 + limit * 1.0
    lead_pose = _stationary_after(x_stop, 0.0, 0.0, limit, 1.0, 3.0)
    lead = AgentTrack(
        "lead", AgentKind.VEHICLE, 4.5, 2.0, _track_samples(n_ticks, lead_pose)
    )
    return Scenario(
        id=sid,
        map=map_model,
        ego_init=EgoState(0.0, 0.0, 0.0, limit),
        vehicle=vehicle,
        agents=(lead,),
        statics=(),
        duration=duration,
    )


def _gen_crossing_pedestrian(params, rng, vehicle, sid) -> Scenario:
    limit = _jitter(rng, params, "speed_limit", 4.0, 6.0)
    duration = _jitter(rng, params, "duration", 12.0, 12.0)
    cross_x = _jitter(rng, params, "cross_x", 28.0, 42.0)
    walk_speed = _jitter(rng, params, "walk_speed", 1.1, 1.6)
    arrival_offset = _jitter(rng, params, "arrival_offset", -1.0, 1.0)
    length = max(120.0, limit * duration + 40.0)
    lane_width = 4.0
    half = 4.5
    cl = Centerline("lane0", _sample_line((0.0, 0.0), (length, 0.0), 2.0), limit, lane_width)
    map_model = MapModel(
        [cl],
        [[(-10.0, -half), (length + 10.0, -half), (length + 10.0, half), (-10.0, half)]],
        ["lane0"],
    )
    n_ticks = int(math.ceil(duration / TRACK_DT - 1e-9))
    y_start = -8.0
    # timed so the pedestrian reaches the lane center when a constant-speed
    # ego would arrive at cross_x (plus a seeded offset)
    t_conflict = cross_x / limit + arrival_offset
    t_start = t_conflict - (-y_start) / walk_speed

    def ped_pose(t: float) -> Pose:
        y = y_start + walk_speed * max(0.0, t - t_start)
        return (cross_x, min(y, 8.0), math.pi / 2.0)

    ped = AgentTrack(
        "ped", AgentKind.PEDESTRIAN, 0.6, 0.6, _track_samples(n_ticks, ped_pose)
    )
    return Scenario(
        id=sid,
        map=map_model,
        ego_init=EgoState(0.0, 0.0, 0.0, limit),
        vehicle=vehicle,
        agents=(ped,),
        statics=(),
        duration=duration,
    )


def _gen_intersection_pass(params, rng, vehicle, sid) -> Scenario:
    limit = _jitter(rng, params, "speed_limit", 4.0, 6.0)
    duration = _jitter(rng, params, "duration", 12.0, 12.0)
    cross_x = _jitter(rng, params, "cross_x", 32.0, 44.0)
    cross_speed = _jitter(rng, params, "cross_speed", 4.0, 6.0)
    arrival_offset = _jitter(rng, params, "arrival_offset", -1.5, 1.5)
    length = max(120.0, limit * duration + 40.0)
    lane_width = 4.0
    half = 4.5
    cl = Centerline("lane0", _sample_line((0.0, 0.0), (length, 0.0), 2.0), limit, lane_width)
    map_model = MapModel(
        [cl],
        [
            [(-10.0, -half), (length + 10.0, -half), (length + 10.0, half), (-10.0, half)],
            [(cross_x - half, -60.0), (cross_x + half, -60.0), (cross_x + half, 60.0), (cross_x - half, 60.0)],
        ],
        ["lane0"],
    )
    n_ticks = int(math.ceil(duration / TRACK_DT - 1e-9))
    t_conflict = cross_x / limit + arrival_offset

    def cross_pose(t: float) -> Pose:
        return (cross_x, cross_speed * (t - t_conflict), math.pi / 2.0)

    crossing = AgentTrack(
        "crossing", AgentKind.VEHICLE, 4.5, 2.0, _track_samples(n_ticks, cross_pose)
    )
    return Scenario(
        id=sid,
        map=map_model,
        ego_init=EgoState(0.0, 0.0, 0.0, limit),
        vehicle=vehicle,
        agents=(crossing,),
        statics=(),
        duration=duration,
    )
