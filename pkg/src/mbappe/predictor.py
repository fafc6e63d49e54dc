"""Pluggable stand-ins for the learned trajectory predictor.

Three implementations produce the learned world features (agent futures plus
an ego prior trajectory): constant-velocity extrapolation, a scripted oracle
that copies the ground-truth tracks, and a file-backed lookup of precomputed
trajectories.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

from .errors import MalformedInputError, PredictionUnavailableError
from .kinematics import Action, ActionGrid, VehicleParams, trajectory_to_actions
from .world import Pose, WorldSnapshot, agent_pose_at, interpolate_pose

POSE_DT = 0.1

EGO_ID = "ego"


def horizon_steps(horizon: float) -> int:
    if horizon <= 0.0:
        raise MalformedInputError(f"horizon must be positive, got {horizon}")
    return int(math.ceil(horizon / POSE_DT - 1e-9))


@dataclass(frozen=True)
class PredictionSet:
    """Predicted futures sampled every 0.1 s from the snapshot instant.

    Index k of every pose list corresponds to a time offset of k * 0.1 s, so
    index 0 is the pose at the snapshot itself. All lists share the same
    length ceil(horizon / 0.1) and every snapshot agent id is present.
    """

    horizon: float
    ego_prior: tuple[Pose, ...]
    agent_futures: dict[str, tuple[Pose, ...]]

    def __post_init__(self) -> None:
        n = horizon_steps(self.horizon)
        if len(self.ego_prior) != n:
            raise MalformedInputError(
                f"ego prior has {len(self.ego_prior)} poses, expected {n}"
            )
        for aid, poses in self.agent_futures.items():
            if len(poses) != n:
                raise MalformedInputError(
                    f"agent {aid!r} future has {len(poses)} poses, expected {n}"
                )

    def agent_pose(self, agent_id: str, offset: float) -> Pose:
        """Pose of an agent at a time offset from the snapshot."""
        return interpolate_pose(self.agent_futures[agent_id], offset)


def _extrapolate(pose: Pose, speed: float, n: int) -> tuple[Pose, ...]:
    x, y, heading = pose
    c, s = math.cos(heading), math.sin(heading)
    return tuple(
        (x + speed * k * POSE_DT * c, y + speed * k * POSE_DT * s, heading)
        for k in range(n)
    )


class ConstantVelocityPredictor:
    """Extrapolates every agent (and the ego prior) along its current heading
    at its current speed. Agent speed comes from the last two track samples
    at or before the snapshot; an agent with a single sample is stationary."""

    def predict(self, snapshot: WorldSnapshot, horizon: float) -> PredictionSet:
        n = horizon_steps(horizon)
        futures = {}
        for track in snapshot.agents:
            pose = agent_pose_at(track, snapshot.time)
            if len(track.trajectory) < 2 or snapshot.time < POSE_DT:
                speed = 0.0
            else:
                prev = agent_pose_at(track, snapshot.time - POSE_DT)
                speed = math.hypot(pose[0] - prev[0], pose[1] - prev[1]) / POSE_DT
            futures[track.id] = _extrapolate(pose, speed, n)
        ego = snapshot.ego
        ego_prior = _extrapolate((ego.x, ego.y, ego.heading), ego.v, n)
        return PredictionSet(horizon=horizon, ego_prior=ego_prior, agent_futures=futures)


class ScriptedPredictor:
    """Oracle predictor: agent futures are the scenario tracks themselves.

    The scenario defines no future for the ego (it is closed-loop), so the
    ego prior falls back to constant-velocity extrapolation.
    """

    def predict(self, snapshot: WorldSnapshot, horizon: float) -> PredictionSet:
        n = horizon_steps(horizon)
        futures = {
            track.id: tuple(
                agent_pose_at(track, snapshot.time + k * POSE_DT) for k in range(n)
            )
            for track in snapshot.agents
        }
        ego = snapshot.ego
        ego_prior = _extrapolate((ego.x, ego.y, ego.heading), ego.v, n)
        return PredictionSet(horizon=horizon, ego_prior=ego_prior, agent_futures=futures)


class FilePredictor:
    """Looks up precomputed trajectories keyed by (scenario id, time, agent id).

    The file is a JSON document:
        {"predictions": [{"scenario_id": ..., "t": ..., "agent_id": ...,
                          "poses": [[x, y, heading], ...]}, ...]}
    with poses at 0.1 s spacing starting at the query time. The ego prior is
    stored under the agent id "ego".
    """

    def __init__(self, path: str, scenario_id: str):
        if not os.path.exists(path):
            raise MalformedInputError(f"prediction file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        self.scenario_id = scenario_id
        self._table: dict[tuple[str, str, str], tuple[Pose, ...]] = {}
        for rec in doc.get("predictions", []):
            key = (str(rec["scenario_id"]), f"{float(rec['t']):.1f}", str(rec["agent_id"]))
            self._table[key] = tuple((p[0], p[1], p[2]) for p in rec["poses"])

    def _lookup(self, t: float, agent_id: str, n: int) -> tuple[Pose, ...]:
        key = (self.scenario_id, f"{t:.1f}", agent_id)
        poses = self._table.get(key)
        if poses is None:
            raise PredictionUnavailableError(
                f"no prediction for key (scenario={key[0]!r}, t={key[1]}, agent={key[2]!r})"
            )
        if len(poses) < n:
            raise PredictionUnavailableError(
                f"prediction for key (scenario={key[0]!r}, t={key[1]}, agent={key[2]!r}) "
                f"covers {len(poses)} steps, need {n}"
            )
        return poses[:n]

    def predict(self, snapshot: WorldSnapshot, horizon: float) -> PredictionSet:
        n = horizon_steps(horizon)
        futures = {
            track.id: self._lookup(snapshot.time, track.id, n) for track in snapshot.agents
        }
        ego_prior = self._lookup(snapshot.time, EGO_ID, n)
        return PredictionSet(horizon=horizon, ego_prior=ego_prior, agent_futures=futures)


def predict(snapshot: WorldSnapshot, horizon: float, predictor) -> PredictionSet:
    """Convenience dispatch so call sites don't care which stub they hold."""
    return predictor.predict(snapshot, horizon)


def ego_prior_actions(
    prediction: PredictionSet,
    params: VehicleParams,
    grid: ActionGrid | None = None,
    node_duration: float = 1.0,
    sub_dt: float = POSE_DT,
) -> list[Action]:
    """One grid action per tree depth, derived from the ego prior trajectory.

    The fine-grained actions recovered by trajectory_to_actions are averaged
    over each complete node interval and snapped to the grid; a prior shorter
    than one node interval yields an empty list.
    """
    if grid is None:
        grid = ActionGrid()
    fine = trajectory_to_actions(prediction.ego_prior, sub_dt, params, grid)
    per_node = int(round(node_duration / sub_dt))
    out = []
    for d in range(len(fine) // per_node):
        chunk = fine[d * per_node : (d + 1) * per_node]
        mean_a = sum(c.a for c in chunk) / per_node
        mean_delta = sum(c.delta for c in chunk) / per_node
        i, j = grid.snap(Action(mean_a, mean_delta))
        out.append(grid.action_at(i, j))
    return out
