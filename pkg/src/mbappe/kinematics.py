"""Kinematic bicycle model, the discrete action grid, and action inversion.

The vehicle state is referenced to the rear axle. Integration is explicit
Euler at a fixed sub-step (0.1 s by default): the position update uses the
pre-update velocity and heading, the heading rate is v * tan(delta) / L,
and velocity is clamped at zero (no reverse).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import MalformedInputError

TWO_PI = 2.0 * math.pi

SUB_DT = 0.1

GRID_SIZE = 13
CENTER_INDEX = 6
ACCEL_STEP = 0.5
STEER_STEP = math.pi / 24.0

# Steering inversion atan(L * psi_dot / v) is singular at v = 0; below this
# speed the recovered steering angle is forced to zero.
MIN_STEER_SPEED = 0.1


def wrap_angle(angle: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    r = math.fmod(angle + math.pi, TWO_PI)
    if r <= 0.0:
        r += TWO_PI
    return r - math.pi


@dataclass(frozen=True)
class EgoState:
    """Rear-axle pose and forward speed of the controlled vehicle.

    The heading is normalized to (-pi, pi] on construction; a negative
    velocity is rejected (the model has no reverse gear).
    """

    x: float
    y: float
    heading: float
    v: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", wrap_angle(self.heading))
        if self.v < 0.0:
            raise ValueError(f"velocity must be non-negative, got {self.v}")


@dataclass(frozen=True)
class Action:
    """Control input: acceleration a (m/s^2) and front-wheel steering delta (rad).

    Values are not validated here; grid operations clamp out-of-range inputs.
    """

    a: float
    delta: float


@dataclass(frozen=True)
class VehicleParams:
    """Vehicle geometry. The footprint center sits length/2 - rear_overhang
    ahead of the rear axle along the heading."""

    wheelbase: float = 3.089
    length: float = 5.0
    width: float = 2.0
    rear_overhang: float = 1.0

    def __post_init__(self) -> None:
        if min(self.wheelbase, self.length, self.width, self.rear_overhang) <= 0.0:
            raise ValueError("vehicle dimensions must be strictly positive")
        if self.wheelbase >= self.length:
            raise ValueError("wheelbase must be smaller than the vehicle length")

    @property
    def center_offset(self) -> float:
        return self.length / 2.0 - self.rear_overhang


def _grid_axis(step: float) -> tuple[float, ...]:
    # (i - 6) * step keeps index 6 exactly 0 and values[i] == -values[12 - i].
    return tuple((i - CENTER_INDEX) * step for i in range(GRID_SIZE))


@dataclass(frozen=True)
class ActionGrid:
    """The 13 x 13 discrete control space: accelerations over [-3, 3] m/s^2
    and steering angles over [-pi/4, pi/4] rad, both symmetric about zero."""

    accel_values: tuple[float, ...] = _grid_axis(ACCEL_STEP)
    steer_values: tuple[float, ...] = _grid_axis(STEER_STEP)

    def action_at(self, i: int, j: int) -> Action:
        return Action(self.accel_values[i], self.steer_values[j])

    def snap(self, action: Action) -> tuple[int, int]:
        return snap_to_grid(action, self)

    def clamp(self, action: Action) -> Action:
        """Clamp both components to the grid's value range."""
        a = min(max(action.a, self.accel_values[0]), self.accel_values[-1])
        d = min(max(action.delta, self.steer_values[0]), self.steer_values[-1])
        return Action(a, d)

    def all_actions(self) -> list[Action]:
        """All 169 grid actions, ordered by (accel index, steer index)."""
        return [
            Action(a, d) for a in self.accel_values for d in self.steer_values
        ]


def _snap_axis(value: float, values: tuple[float, ...], step: float) -> int:
    if value <= values[0]:
        return 0
    if value >= values[-1]:
        return len(values) - 1
    i0 = int(math.floor((value - values[0]) / step))
    i0 = min(max(i0, 0), len(values) - 2)
    d0 = value - values[i0]
    d1 = values[i0 + 1] - value
    if d0 < d1:
        return i0
    if d1 < d0:
        return i0 + 1
    # exact tie: round toward the zero action at the center index
    return i0 if abs(i0 - CENTER_INDEX) <= abs(i0 + 1 - CENTER_INDEX) else i0 + 1


def snap_to_grid(action: Action, grid: ActionGrid) -> tuple[int, int]:
    """Indices of the nearest grid values; out-of-range inputs clamp to the
    boundary and exact half-step ties round toward the zero action."""
    i = _snap_axis(action.a, grid.accel_values, ACCEL_STEP)
    j = _snap_axis(action.delta, grid.steer_values, STEER_STEP)
    return i, j


def integrate(state: EgoState, action: Action, dt: float, params: VehicleParams) -> EgoState:
    """One explicit-Euler step of the kinematic bicycle model.

    x' = x + v cos(psi) dt        (pre-update v, psi)
    y' = y + v sin(psi) dt
    psi' = wrap(psi + v tan(delta) / L dt)
    v' = max(0, v + a dt)
    """
    if dt <= 0.0:
        raise MalformedInputError(f"dt must be positive, got {dt}")
    v = state.v
    x = state.x + v * math.cos(state.heading) * dt
    y = state.y + v * math.sin(state.heading) * dt
    heading = wrap_angle(state.heading + v * math.tan(action.delta) / params.wheelbase * dt)
    return EgoState(x, y, heading, max(0.0, v + action.a * dt))


def rollout(
    state: EgoState,
    action: Action,
    n_sub: int,
    dt: float,
    params: VehicleParams,
) -> list[EgoState]:
    """Hold one action fixed for n_sub integration sub-steps.

    Returns the n_sub successive states (the input state is not included);
    the last element equals the n_sub-fold composition of integrate.
    """
    if n_sub < 1:
        raise MalformedInputError(f"n_sub must be >= 1, got {n_sub}")
    out = []
    s = state
    for _ in range(n_sub):
        s = integrate(s, action, dt, params)
        out.append(s)
    return out


def trajectory_to_actions(
    poses: Sequence[tuple[float, float, float]],
    dt: float,
    params: VehicleParams,
    grid: ActionGrid | None = None,
) -> list[Action]:
    """Recover per-step actions from a uniformly sampled (x, y, heading) path.

    Finite differences: v_k from consecutive displacements, a_k from
    consecutive speeds, and delta_k = atan(L * psi_dot_k / v_k) with the
    steering forced to zero below MIN_STEER_SPEED. Each recovered action is
    clamped to the grid's value range. A path of m poses yields m - 2 actions.
    """
    if len(poses) < 3:
        raise MalformedInputError(f"need at least 3 poses, got {len(poses)}")
    if grid is None:
        grid = ActionGrid()
    speeds = []
    for k in range(len(poses) - 1):
        dx = poses[k + 1][0] - poses[k][0]
        dy = poses[k + 1][1] - poses[k][1]
        speeds.append(math.hypot(dx, dy) / dt)
    actions = []
    for k in range(len(poses) - 2):
        a = (speeds[k + 1] - speeds[k]) / dt
        if speeds[k] < MIN_STEER_SPEED:
            delta = 0.0
        else:
            psi_dot = wrap_angle(poses[k + 1][2] - poses[k][2]) / dt
            delta = math.atan(params.wheelbase * psi_dot / speeds[k])
        actions.append(grid.clamp(Action(a, delta)))
    return actions
