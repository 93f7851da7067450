"""Vehicle state and the three 4WIS motion models.

Ackermann mode follows x' = v cos(th), y' = v sin(th), th' = 2 v tan(d) / L_w.
Diagonal (crab) mode translates along th + d with the heading frozen.
Zero-turn mode rotates in place at the constant yaw rate.
"""
from __future__ import annotations

import math
from enum import IntEnum
from typing import NamedTuple

import numpy as np

from .geometry import VehicleParams, normalize_angle


class MotionMode(IntEnum):
    ACKERMANN = 1
    DIAGONAL = 2
    ZERO_TURN = 3


class VehicleState(NamedTuple):
    x: float
    y: float
    v: float = 0.0
    theta: float = 0.0
    delta: float = 0.0

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)

    def with_pose(self, x: float, y: float, theta: float) -> "VehicleState":
        return VehicleState(x, y, self.v, float(normalize_angle(theta)), self.delta)


def ackermann_yaw_rate(v, delta, wheelbase: float):
    """Heading rate of the Ackermann mode; isolated so the factor 2 is easy to audit."""
    return 2.0 * v * np.tan(delta) / wheelbase


def ackermann_curvature(delta, wheelbase: float):
    return ackermann_yaw_rate(1.0, delta, wheelbase)


class Action(NamedTuple):
    """One motion primitive.

    ``amount`` is the arc length (Ackermann), chord length (Diagonal) or the
    heading change in radians (ZeroTurn). ``direction`` is +1 forward / -1
    reverse and is ignored for zero-turn actions.
    """
    mode: MotionMode
    amount: float
    direction: int = 1
    delta: float = 0.0


def ackermann_arc(pose, delta: float, s, wheelbase: float) -> np.ndarray:
    """Closed-form Ackermann motion over signed arc length ``s`` (scalar or array).

    Returns an (n, 3) array of poses.
    """
    x0, y0, th0 = pose
    s = np.atleast_1d(np.asarray(s, dtype=float))
    k = float(ackermann_curvature(delta, wheelbase))
    if abs(k) < 1e-12:
        x = x0 + s * math.cos(th0)
        y = y0 + s * math.sin(th0)
        th = np.full_like(s, th0)
    else:
        th = th0 + k * s
        x = x0 + (np.sin(th) - math.sin(th0)) / k
        y = y0 - (np.cos(th) - math.cos(th0)) / k
    return np.stack([x, y, th], axis=1)


def diagonal_line(pose, delta: float, s) -> np.ndarray:
    x0, y0, th0 = pose
    s = np.atleast_1d(np.asarray(s, dtype=float))
    d = th0 + delta
    return np.stack([x0 + s * math.cos(d), y0 + s * math.sin(d), np.full_like(s, th0)], axis=1)


def zero_turn(pose, dtheta) -> np.ndarray:
    x0, y0, th0 = pose
    dtheta = np.atleast_1d(np.asarray(dtheta, dtype=float))
    return np.stack([np.full_like(dtheta, x0), np.full_like(dtheta, y0), th0 + dtheta], axis=1)


def simulate_action(state: VehicleState, action: Action, params: VehicleParams,
                    n_samples: int = 2) -> np.ndarray:
    """Poses swept by ``action`` from ``state``, (n_samples, 3), unwrapped heading."""
    frac = np.linspace(0.0, 1.0, max(2, n_samples))
    pose = (state.x, state.y, state.theta)
    if action.mode == MotionMode.ACKERMANN:
        return ackermann_arc(pose, action.delta, action.direction * action.amount * frac, params.wheelbase)
    if action.mode == MotionMode.DIAGONAL:
        return diagonal_line(pose, action.delta, action.direction * action.amount * frac)
    return zero_turn(pose, action.amount * frac)


def apply_action(state: VehicleState, action: Action, params: VehicleParams,
                 speed: float = 1.0) -> VehicleState:
    """Child state reached by one primitive; v is the signed nominal speed."""
    end = simulate_action(state, action, params, 2)[-1]
    if action.mode == MotionMode.ZERO_TURN:
        return VehicleState(float(end[0]), float(end[1]), 0.0, float(normalize_angle(end[2])), 0.0)
    return VehicleState(float(end[0]), float(end[1]), float(action.direction * speed),
                        float(normalize_angle(end[2])), float(action.delta))


def action_duration(action: Action, params: VehicleParams, speed: float = 1.0) -> float:
    if action.mode == MotionMode.ZERO_TURN:
        return abs(action.amount) / params.yaw_rate
    return abs(action.amount) / speed


def ode_rhs(mode: MotionMode, s: np.ndarray, u: np.ndarray, params: VehicleParams,
            yaw_rate: float | None = None) -> np.ndarray:
    """Right-hand side of the active motion model for state (x, y, v, th, d)
    and controls (a, omega_delta)."""
    x, y, v, th, d = s
    a, wd = u
    if mode == MotionMode.ACKERMANN:
        return np.array([v * math.cos(th), v * math.sin(th), a,
                         ackermann_yaw_rate(v, d, params.wheelbase), wd])
    if mode == MotionMode.DIAGONAL:
        return np.array([v * math.cos(th + d), v * math.sin(th + d), a, 0.0, 0.0])
    w = params.yaw_rate if yaw_rate is None else yaw_rate
    return np.array([0.0, 0.0, 0.0, w, 0.0])
