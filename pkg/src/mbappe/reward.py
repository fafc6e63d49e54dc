"""Per-node driving reward with an explainable per-component breakdown.

One reward is computed per tree node (one 1 s action hold): route progress
normalized by the speed limit, a single most-severe collision penalty over
the node's 0.1 s sub-steps, route and drivable-area membership at the end
state, and two centering terms against the closest route centerline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import MalformedInputError
from .kinematics import EgoState, VehicleParams
from .predictor import POSE_DT, PredictionSet
from .world import (
    AgentKind,
    CenterlineProjection,
    WorldSnapshot,
    footprint_in_drivable,
    ego_footprint,
    obb_overlap_raw,
    project_to_centerline,
)

HALF_PI = math.pi / 2.0


@dataclass(frozen=True)
class RewardConfig:
    collision_vehicle_pedestrian: float = -5.0
    collision_object: float = -2.0
    off_route: float = -0.5
    off_drivable: float = -1.0
    heading_weight: float = 0.5
    lateral_weight: float = 0.5
    lateral_cap: float = 5.0

    def __post_init__(self) -> None:
        for name in ("collision_vehicle_pedestrian", "collision_object", "off_route", "off_drivable"):
            if getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be <= 0")
        if self.heading_weight <= 0.0 or self.lateral_weight <= 0.0 or self.lateral_cap <= 0.0:
            raise ValueError("weights and the lateral cap must be > 0")


@dataclass(frozen=True)
class RewardBreakdown:
    """The six reward components and their exact sum.

    collision_kind records which class of overlap (if any) produced the
    collision penalty; vehicle/pedestrian contact marks the node terminal.
    """

    progress: float
    collision: float
    route: float
    drivable: float
    heading_center: float
    lateral_center: float
    total: float
    collision_kind: AgentKind | None = None

    def to_dict(self) -> dict:
        return {
            "progress": self.progress,
            "collision": self.collision,
            "route": self.route,
            "drivable": self.drivable,
            "heading_center": self.heading_center,
            "lateral_center": self.lateral_center,
            "total": self.total,
            "collision_kind": self.collision_kind.value if self.collision_kind else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RewardBreakdown":
        kind = d.get("collision_kind")
        return cls(
            progress=d["progress"],
            collision=d["collision"],
            route=d["route"],
            drivable=d["drivable"],
            heading_center=d["heading_center"],
            lateral_center=d["lateral_center"],
            total=d["total"],
            collision_kind=AgentKind(kind) if kind else None,
        )


def _assemble(
    progress: float,
    collision_kind: AgentKind | None,
    on_route: bool,
    on_drivable: bool,
    theta: float,
    lateral: float,
    cfg: RewardConfig,
) -> RewardBreakdown:
    if collision_kind is None:
        collision = 0.0
    elif collision_kind.severe:
        collision = cfg.collision_vehicle_pedestrian
    else:
        collision = cfg.collision_object
    route = 0.0 if on_route else cfg.off_route
    drivable = 0.0 if on_drivable else cfg.off_drivable
    heading_center = -cfg.heading_weight * math.sin(min(theta, HALF_PI))
    lateral_center = -cfg.lateral_weight * min(lateral, cfg.lateral_cap)
    total = progress + collision + route + drivable + heading_center + lateral_center
    return RewardBreakdown(
        progress=progress,
        collision=collision,
        route=route,
        drivable=drivable,
        heading_center=heading_center,
        lateral_center=lateral_center,
        total=total,
        collision_kind=collision_kind,
    )


class NodeEvaluator:
    """Evaluates node rewards against one snapshot and one prediction set.

    Agent and static poses are tabulated once per search at every 0.1 s
    offset so the per-node collision scan is a cheap distance prefilter
    followed by the separating-axis test only for nearby pairs.
    """

    def __init__(
        self,
        snapshot: WorldSnapshot,
        predictions: PredictionSet,
        cfg: RewardConfig,
        params: VehicleParams,
        sub_dt: float = POSE_DT,
    ):
        self.snapshot = snapshot
        self.predictions = predictions
        self.cfg = cfg
        self.params = params
        self.sub_dt = sub_dt
        self._map = snapshot.map
        self._ego_hl = params.length / 2.0
        self._ego_hw = params.width / 2.0
        self._ego_off = params.center_offset
        ego_rad = math.hypot(params.length, params.width) / 2.0

        # agent tables: per agent, per 0.1 s offset, (x, y, cos, sin)
        self._agents = []
        for track in snapshot.agents:
            poses = predictions.agent_futures[track.id]
            table = [(x, y, math.cos(h), math.sin(h)) for x, y, h in poses]
            rad = ego_rad + math.hypot(track.length, track.width) / 2.0
            self._agents.append(
                (table, track.length / 2.0, track.width / 2.0, rad * rad, track.kind)
            )
        self._statics = [
            (
                b.x,
                b.y,
                math.cos(b.heading),
                math.sin(b.heading),
                b.length / 2.0,
                b.width / 2.0,
                (ego_rad + math.hypot(b.length, b.width) / 2.0) ** 2,
            )
            for b in snapshot.statics
        ]

    def project(self, state: EgoState) -> CenterlineProjection:
        return project_to_centerline(state, self._map, route_only=True)

    def _collision_scan(self, substeps: Sequence[EgoState], node_time: float) -> AgentKind | None:
        n = len(substeps)
        hl, hw, off = self._ego_hl, self._ego_hw, self._ego_off
        worst: AgentKind | None = None
        for i, st in enumerate(substeps):
            t = node_time - (n - 1 - i) * self.sub_dt
            j = int(round(t / POSE_DT))
            ch = math.cos(st.heading)
            sh = math.sin(st.heading)
            cx = st.x + ch * off
            cy = st.y + sh * off
            for table, ahl, ahw, rad2, kind in self._agents:
                if worst is not None and not kind.severe:
                    continue
                ax, ay, ac, asn = table[j] if j < len(table) else table[-1]
                dx = ax - cx
                dy = ay - cy
                if dx * dx + dy * dy >= rad2:
                    continue
                if obb_overlap_raw(cx, cy, ch, sh, hl, hw, ax, ay, ac, asn, ahl, ahw):
                    if kind.severe:
                        return kind
                    worst = AgentKind.OBJECT
            if worst is None:
                for bx, by, bc, bs, bhl, bhw, rad2 in self._statics:
                    dx = bx - cx
                    dy = by - cy
                    if dx * dx + dy * dy >= rad2:
                        continue
                    if obb_overlap_raw(cx, cy, ch, sh, hl, hw, bx, by, bc, bs, bhl, bhw):
                        worst = AgentKind.OBJECT
                        break
        return worst

    def evaluate(
        self,
        parent_projection: CenterlineProjection,
        substeps: Sequence[EgoState],
        node_time: float,
    ) -> tuple[RewardBreakdown, CenterlineProjection]:
        """Breakdown for one node plus the end-state projection (cached by
        the caller so the child's own expansion reuses it)."""
        end = substeps[-1]
        proj = self.project(end)
        node_duration = len(substeps) * self.sub_dt
        advance = proj.arc_length - parent_projection.arc_length
        progress = min(max(advance / (proj.speed_limit * node_duration), 0.0), 1.0)
        collision_kind = self._collision_scan(substeps, node_time)
        on_drivable = footprint_in_drivable(ego_footprint(end, self.params), self._map)
        breakdown = _assemble(
            progress,
            collision_kind,
            proj.on_lane,
            on_drivable,
            proj.theta,
            proj.distance,
            self.cfg,
        )
        return breakdown, proj


def evaluate_node(
    parent: EgoState,
    substeps: Sequence[EgoState],
    node_time: float,
    snapshot: WorldSnapshot,
    predictions: PredictionSet,
    cfg: RewardConfig,
    params: VehicleParams,
    sub_dt: float = POSE_DT,
    times: Sequence[float] | None = None,
) -> RewardBreakdown:
    """Reward for one node transition from `parent` through `substeps`.

    The sub-step states are implicitly sub_dt apart ending at node_time;
    when an explicit `times` sequence is supplied it is validated against
    that contract (states alone carry no timestamps).
    """
    if not substeps:
        raise MalformedInputError("substeps must be non-empty")
    if times is not None:
        if len(times) != len(substeps):
            raise MalformedInputError("times and substeps must have equal length")
        if abs(times[-1] - node_time) > 1e-9:
            raise MalformedInputError("substeps must end at node_time")
        for k in range(1, len(times)):
            if abs((times[k] - times[k - 1]) - sub_dt) > 1e-9:
                raise MalformedInputError("substeps must be uniformly spaced")
    evaluator = NodeEvaluator(snapshot, predictions, cfg, params, sub_dt)
    breakdown, _ = evaluator.evaluate(evaluator.project(parent), substeps, node_time)
    return breakdown
