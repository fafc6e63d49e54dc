"""Map geometry, agents, and the geometric queries the reward needs.

Everything here is immutable after construction and safe to share across
concurrent searches. Centerlines cache per-segment arrays so projections
are a handful of vectorized operations; collision tests use the
separating-axis theorem on oriented rectangles in plain float arithmetic.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, MalformedInputError
from .kinematics import EgoState, VehicleParams, wrap_angle

Pose = tuple[float, float, float]

TRACK_DT = 0.1


class AgentKind(enum.Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    OBJECT = "object"

    @property
    def severe(self) -> bool:
        """Vehicle/pedestrian contact outranks object contact."""
        return self is not AgentKind.OBJECT


@dataclass(frozen=True)
class OrientedBox:
    """An oriented rectangle: center, heading, and full extents."""

    x: float
    y: float
    heading: float
    length: float
    width: float

    def __post_init__(self) -> None:
        if self.length <= 0.0 or self.width <= 0.0:
            raise ValueError("box extents must be strictly positive")

    def corners(self) -> list[tuple[float, float]]:
        c, s = math.cos(self.heading), math.sin(self.heading)
        hl, hw = self.length / 2.0, self.width / 2.0
        return [
            (self.x + c * dl - s * dw, self.y + s * dl + c * dw)
            for dl, dw in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw))
        ]


def ego_footprint(state: EgoState, params: VehicleParams) -> OrientedBox:
    """Footprint of the ego at a rear-axle state (center shifted forward)."""
    off = params.center_offset
    return OrientedBox(
        state.x + math.cos(state.heading) * off,
        state.y + math.sin(state.heading) * off,
        state.heading,
        params.length,
        params.width,
    )


def obb_overlap_raw(
    ax: float, ay: float, ca: float, sa: float, ahl: float, ahw: float,
    bx: float, by: float, cb: float, sb: float, bhl: float, bhw: float,
) -> bool:
    """Separating-axis test on raw box components (center, cos/sin of the
    heading, half extents). Kept free of object construction for the search
    inner loop. Touching edges (zero-area contact) count as no overlap."""
    tx, ty = bx - ax, by - ay
    for ux, uy in ((ca, sa), (-sa, ca), (cb, sb), (-sb, cb)):
        ra = ahl * abs(ux * ca + uy * sa) + ahw * abs(uy * ca - ux * sa)
        rb = bhl * abs(ux * cb + uy * sb) + bhw * abs(uy * cb - ux * sb)
        if abs(ux * tx + uy * ty) >= ra + rb:
            return False
    return True


def boxes_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    """Separating-axis test on the 4 box axes of two oriented rectangles."""
    return obb_overlap_raw(
        a.x, a.y, math.cos(a.heading), math.sin(a.heading), a.length / 2.0, a.width / 2.0,
        b.x, b.y, math.cos(b.heading), math.sin(b.heading), b.length / 2.0, b.width / 2.0,
    )


def check_collision(
    ego_box: OrientedBox, others: Iterable[tuple[OrientedBox, AgentKind]]
) -> AgentKind | None:
    """Kind of the first overlapping box, vehicles/pedestrians checked before
    objects so the most severe class wins when several overlap."""
    objects = []
    for box, kind in others:
        if kind.severe:
            if boxes_overlap(ego_box, box):
                return kind
        else:
            objects.append(box)
    for box in objects:
        if boxes_overlap(ego_box, box):
            return AgentKind.OBJECT
    return None


class Centerline:
    """An ordered lane polyline with a speed limit and nominal width.

    Per-segment direction, heading, and cumulative arc length are cached at
    construction for fast point projection.
    """

    def __init__(
        self,
        id: str,
        points: Sequence[tuple[float, float]],
        speed_limit: float,
        lane_width: float,
        blocked: bool = False,
    ):
        if len(points) < 2:
            raise MalformedInputError(f"centerline {id!r} needs >= 2 points")
        if speed_limit <= 0.0 or lane_width <= 0.0:
            raise MalformedInputError(f"centerline {id!r} needs positive speed limit and width")
        self.id = id
        self.points = tuple((float(x), float(y)) for x, y in points)
        self.speed_limit = float(speed_limit)
        self.lane_width = float(lane_width)
        self.blocked = bool(blocked)

        pts = np.asarray(self.points, dtype=float)
        d = np.diff(pts, axis=0)
        seg_len = np.hypot(d[:, 0], d[:, 1])
        if np.any(seg_len == 0.0):
            raise MalformedInputError(f"centerline {id!r} has repeated consecutive points")
        self._ax = pts[:-1, 0]
        self._ay = pts[:-1, 1]
        self._ux = d[:, 0] / seg_len
        self._uy = d[:, 1] / seg_len
        self._seg_len = seg_len
        self._cum = np.concatenate(([0.0], np.cumsum(seg_len)))
        self._headings = np.arctan2(d[:, 1], d[:, 0])
        self.length = float(self._cum[-1])

    def project(self, x: float, y: float) -> tuple[float, float, float]:
        """(distance, arc length, segment heading) of the closest polyline point."""
        dx = x - self._ax
        dy = y - self._ay
        t = np.clip(dx * self._ux + dy * self._uy, 0.0, self._seg_len)
        ex = dx - t * self._ux
        ey = dy - t * self._uy
        d2 = ex * ex + ey * ey
        i = int(np.argmin(d2))
        return math.sqrt(float(d2[i])), float(self._cum[i] + t[i]), float(self._headings[i])

    def point_at(self, s: float) -> tuple[float, float, float]:
        """(x, y, heading) at arc length s, clamped to the polyline span."""
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self._cum, s, side="right")) - 1
        i = min(max(i, 0), len(self._seg_len) - 1)
        t = s - float(self._cum[i])
        return (
            float(self._ax[i] + self._ux[i] * t),
            float(self._ay[i] + self._uy[i] * t),
            float(self._headings[i]),
        )


def _segments_properly_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0


def _polygon_is_simple(poly: Sequence[tuple[float, float]]) -> bool:
    n = len(poly)
    for i in range(n):
        a1, a2 = poly[i], poly[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            b1, b2 = poly[j], poly[(j + 1) % n]
            if _segments_properly_intersect(a1, a2, b1, b2):
                return False
    return True


def point_in_polygon(x: float, y: float, poly: Sequence[tuple[float, float]]) -> bool:
    """Ray-casting containment test; boundary points count as inside."""
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        # on-edge check: collinear and inside the segment bounding box
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if cross == 0.0 and min(x1, x2) <= x <= max(x1, x2) and min(y1, y2) <= y <= max(y1, y2):
            return True
        if (y1 > y) != (y2 > y):
            x_hit = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_hit:
                inside = not inside
    return inside


class MapModel:
    """Centerlines, a drivable area (union of simple polygons), and the route
    as an ordered list of centerline ids."""

    def __init__(
        self,
        centerlines: Sequence[Centerline],
        drivable_area: Sequence[Sequence[tuple[float, float]]],
        route: Sequence[str],
    ):
        self.centerlines: dict[str, Centerline] = {}
        for cl in centerlines:
            if cl.id in self.centerlines:
                raise MalformedInputError(f"duplicate centerline id {cl.id!r}")
            self.centerlines[cl.id] = cl
        self.drivable_area = tuple(
            tuple((float(x), float(y)) for x, y in poly) for poly in drivable_area
        )
        for poly in self.drivable_area:
            if len(poly) < 3:
                raise MalformedInputError("drivable polygons need >= 3 vertices")
            if not _polygon_is_simple(poly):
                raise MalformedInputError("drivable polygons must be simple")
        self.route = tuple(route)
        offset = 0.0
        self._route_offset: dict[str, float] = {}
        for cid in self.route:
            if cid not in self.centerlines:
                raise MalformedInputError(f"route id {cid!r} has no centerline")
            self._route_offset[cid] = offset
            offset += self.centerlines[cid].length
        self.route_length = offset

    def route_centerlines(self) -> list[Centerline]:
        return [self.centerlines[cid] for cid in self.route]

    def route_offset(self, cid: str) -> float:
        return self._route_offset[cid]

    def route_arc_reachable(self, s0: float, duration: float) -> float:
        """Arc length reachable from route position s0 within duration when
        driving at each centerline's speed limit, capped by the route end."""
        s = min(max(s0, 0.0), self.route_length)
        remaining = duration
        for cid in self.route:
            cl = self.centerlines[cid]
            start = self._route_offset[cid]
            end = start + cl.length
            if s >= end or remaining <= 0.0:
                continue
            gap = end - max(s, start)
            t_needed = gap / cl.speed_limit
            if t_needed >= remaining:
                s = max(s, start) + cl.speed_limit * remaining
                remaining = 0.0
            else:
                s = end
                remaining -= t_needed
        return s - min(max(s0, 0.0), self.route_length)


@dataclass(frozen=True)
class CenterlineProjection:
    """Result of projecting a pose onto the closest candidate centerline."""

    theta: float
    distance: float
    arc_length: float
    centerline_id: str
    speed_limit: float
    lane_width: float
    blocked: bool

    @property
    def on_lane(self) -> bool:
        """Inside the lane corridor of an unblocked centerline."""
        return not self.blocked and self.distance <= self.lane_width / 2.0


def project_to_centerline(
    pose: EgoState, map_model: MapModel, route_only: bool = False
) -> CenterlineProjection:
    """Closest-point projection across the candidate centerlines.

    With route_only the candidates are the route centerlines and the arc
    length accumulates in route order; otherwise every centerline is a
    candidate and the arc length is local to the matched polyline.
    """
    if route_only:
        candidates = map_model.route_centerlines()
    else:
        candidates = list(map_model.centerlines.values())
    if not candidates:
        raise ConfigError("no candidate centerlines to project onto")
    best = None
    for cl in candidates:
        dist, s_local, seg_heading = cl.project(pose.x, pose.y)
        if best is None or dist < best[0]:
            s = s_local + (map_model.route_offset(cl.id) if route_only else 0.0)
            best = (dist, s, seg_heading, cl)
    dist, s, seg_heading, cl = best
    return CenterlineProjection(
        theta=abs(wrap_angle(pose.heading - seg_heading)),
        distance=dist,
        arc_length=s,
        centerline_id=cl.id,
        speed_limit=cl.speed_limit,
        lane_width=cl.lane_width,
        blocked=cl.blocked,
    )


def footprint_in_drivable(box: OrientedBox, map_model: MapModel) -> bool:
    """True iff all four box corners lie in the union of drivable polygons."""
    for cx, cy in box.corners():
        if not any(point_in_polygon(cx, cy, poly) for poly in map_model.drivable_area):
            return False
    return True


def interpolate_pose(poses: Sequence[Pose], t: float, dt: float = TRACK_DT) -> Pose:
    """Sample a 0.1 s pose sequence at time t.

    Linear interpolation between bracketing samples, headings on the shortest
    arc; times beyond the last sample hold the final pose.
    """
    if t <= 0.0:
        return poses[0]
    k = t / dt
    i = int(math.floor(k))
    frac = k - i
    if frac < 1e-9:
        frac = 0.0
    elif frac > 1.0 - 1e-9:
        i += 1
        frac = 0.0
    if i >= len(poses) - 1:
        return poses[-1]
    if frac == 0.0:
        return poses[i]
    x1, y1, h1 = poses[i]
    x2, y2, h2 = poses[i + 1]
    return (
        x1 + (x2 - x1) * frac,
        y1 + (y2 - y1) * frac,
        wrap_angle(h1 + wrap_angle(h2 - h1) * frac),
    )


@dataclass(frozen=True)
class AgentTrack:
    """A traffic participant's footprint and its replayed trajectory,
    sampled every 0.1 s from t = 0."""

    id: str
    kind: AgentKind
    length: float
    width: float
    trajectory: tuple[Pose, ...]

    def __post_init__(self) -> None:
        if not self.trajectory:
            raise MalformedInputError(f"agent {self.id!r} has an empty trajectory")

    def pose_at(self, t: float) -> Pose:
        return agent_pose_at(self, t)

    def box_at(self, t: float) -> OrientedBox:
        x, y, h = agent_pose_at(self, t)
        return OrientedBox(x, y, h, self.length, self.width)


def agent_pose_at(track: AgentTrack, t: float) -> Pose:
    """Track pose at time t >= 0 (hold-last beyond the final sample)."""
    return interpolate_pose(track.trajectory, t)


@dataclass(frozen=True)
class WorldSnapshot:
    """Root context of one search: the world at a single instant.

    Agents are carried as full tracks; their poses at the snapshot time are
    derived through agent_pose_at, which keeps the snapshot trivially
    consistent with the tracks.
    """

    time: float
    ego: EgoState
    agents: tuple[AgentTrack, ...]
    statics: tuple[OrientedBox, ...]
    map: MapModel

    def __post_init__(self) -> None:
        if self.time < 0.0:
            raise MalformedInputError(f"snapshot time must be >= 0, got {self.time}")

    def agent_poses(self) -> dict[str, Pose]:
        return {a.id: a.pose_at(self.time) for a in self.agents}
