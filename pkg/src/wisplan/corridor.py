"""Adaptive driving corridors, pedestrian forecasting and the probabilistic
risk field used to shrink corridors around dynamic obstacles."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.spatial import ConvexHull

from .geometry import ConvexPolygon, VehicleParams, footprint_corners
from .scenario import ObstacleKind, PedestrianTrack, Scenario

DIRECTIONS = ("up", "right", "down", "left")


class CorridorError(RuntimeError):
    """Corridor seed point lies inside an obstacle."""


class DegenerateCovarianceError(ValueError):
    pass


@dataclass(frozen=True)
class DrivingCorridor:
    cx: float
    cy: float
    l_up: float = 0.0
    l_down: float = 0.0
    l_left: float = 0.0
    l_right: float = 0.0

    def __post_init__(self):
        for d in DIRECTIONS:
            if getattr(self, f"l_{d}") < 0:
                raise ValueError(f"l_{d} must be non-negative")

    @property
    def center(self) -> tuple[float, float]:
        return (self.cx, self.cy)

    @property
    def up(self) -> float:
        return self.cy + self.l_up

    @property
    def down(self) -> float:
        return self.cy - self.l_down

    @property
    def right(self) -> float:
        return self.cx + self.l_right

    @property
    def left(self) -> float:
        return self.cx - self.l_left

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(left, down, right, up)."""
        return (self.left, self.down, self.right, self.up)

    @property
    def area(self) -> float:
        return (self.l_left + self.l_right) * (self.l_up + self.l_down)

    def contains(self, x: float, y: float, tol: float = 0.0) -> bool:
        return (self.left - tol <= x <= self.right + tol) and (self.down - tol <= y <= self.up + tol)

    def length(self, direction: str) -> float:
        return getattr(self, f"l_{direction}")


# --- box / convex polygon tests ------------------------------------------------

class _Convex:
    """Vertex list plus outward edge normals, prepared for repeated box tests."""
    __slots__ = ("v", "normals", "extent", "bbox")

    def __init__(self, verts):
        v = np.asarray(verts, dtype=float)
        e = np.roll(v, -1, axis=0) - v
        n = np.stack([e[:, 1], -e[:, 0]], axis=1)
        self.v = [tuple(p) for p in v.tolist()]
        self.normals = [tuple(q) for q in n.tolist()]
        self.extent = [max(px * nx + py * ny for px, py in self.v) for nx, ny in self.normals]
        self.bbox = (float(v[:, 0].min()), float(v[:, 1].min()), float(v[:, 0].max()), float(v[:, 1].max()))


def box_hits(xl: float, yd: float, xr: float, yu: float, poly: _Convex) -> bool:
    """Closed axis-aligned box versus convex polygon (touching counts)."""
    bx0, by0, bx1, by1 = poly.bbox
    if xr < bx0 or xl > bx1 or yu < by0 or yd > by1:
        return False
    for (nx, ny), ext in zip(poly.normals, poly.extent):
        # smallest projection of the box on this outward normal
        m = (xl if nx >= 0 else xr) * nx + (yd if ny >= 0 else yu) * ny
        if m > ext:
            return False
    return True


def configuration_obstacles(polys: Sequence[ConvexPolygon], heading: float | None,
                            params: VehicleParams, margin: float = 0.0) -> list[_Convex]:
    """Obstacles grown by the body at ``heading`` so that boxes constrain the
    reference point. ``heading=None`` grows by a square of half-size ``margin``;
    a ``(lo, hi)`` pair grows by the body swept over that heading interval."""
    out = []
    if heading is None:
        sq = np.array([[-margin, -margin], [margin, -margin], [margin, margin], [-margin, margin]])
    else:
        fp = footprint_corners(_heading_samples(heading), params).reshape(-1, 2)
        fp = np.concatenate([fp + np.array([dx, dy]) for dx in (-margin, margin) for dy in (-margin, margin)]) \
            if margin > 0 else fp
        sq = -fp
    for p in polys:
        pts = (p.vertices[:, None, :] + sq[None, :, :]).reshape(-1, 2)
        if margin == 0.0 and heading is None:
            out.append(_Convex(p.vertices))
            continue
        hull = ConvexHull(pts)
        out.append(_Convex(pts[hull.vertices]))
    return out


def _heading_samples(heading, step: float = 0.05) -> np.ndarray:
    """Zero-position poses covering a heading or a (lo, hi) heading interval."""
    if np.ndim(heading) == 0:
        return np.array([[0.0, 0.0, float(heading)]])
    lo, hi = map(float, heading)
    th = np.linspace(lo, hi, max(2, int(math.ceil((hi - lo) / step)) + 1))
    return np.stack([np.zeros_like(th), np.zeros_like(th), th], axis=1)


def _reference_limits(workspace, heading, params: VehicleParams, margin: float):
    """Bounds on the reference point that keep the body inside the workspace."""
    xmin, ymin, xmax, ymax = workspace
    if heading is None:
        return (xmin + margin, ymin + margin, xmax - margin, ymax - margin)
    fp = footprint_corners(_heading_samples(heading), params).reshape(-1, 2)
    return (xmin - fp[:, 0].min() + margin, ymin - fp[:, 1].min() + margin,
            xmax - fp[:, 0].max() - margin, ymax - fp[:, 1].max() - margin)


def expand_corridor(p, obstacles: Sequence[_Convex], limits, initial_step: float = 0.5,
                    max_step: float = 4.0, min_step: float = 0.05, max_failures: int = 3,
                    max_length: float = 20.0) -> DrivingCorridor:
    """Grow an axis-aligned box around ``p`` in the four directions.

    Each direction starts with ``initial_step``; successful moves double the
    step until the first collision, after which collisions halve it. A
    direction stops after ``max_failures`` collisions or when the step falls
    below ``min_step``. ``limits`` bounds the box (left, down, right, up).
    """
    x, y = float(p[0]), float(p[1])
    lx0, ly0, lx1, ly1 = limits
    if not (lx0 - 1e-12 <= x <= lx1 + 1e-12 and ly0 - 1e-12 <= y <= ly1 + 1e-12):
        raise CorridorError(f"corridor seed ({x:.3f}, {y:.3f}) is outside the admissible region")
    if any(box_hits(x, y, x, y, o) for o in obstacles):
        raise CorridorError(f"corridor seed ({x:.3f}, {y:.3f}) is inside an obstacle")
    near = obstacles
    lengths = {d: 0.0 for d in DIRECTIONS}
    step = {d: initial_step for d in DIRECTIONS}
    fails = {d: 0 for d in DIRECTIONS}
    active = {d: True for d in DIRECTIONS}
    cap = {"up": min(max_length, ly1 - y), "down": min(max_length, y - ly0),
           "right": min(max_length, lx1 - x), "left": min(max_length, x - lx0)}
    for d in DIRECTIONS:
        cap[d] = max(0.0, cap[d])
        if cap[d] <= 0.0:
            active[d] = False

    def box(ls):
        return (x - ls["left"], y - ls["down"], x + ls["right"], y + ls["up"])

    while any(active.values()):
        for d in DIRECTIONS:
            if not active[d]:
                continue
            trial = dict(lengths)
            trial[d] = min(cap[d], lengths[d] + step[d])
            xl, yd, xr, yu = box(trial)
            # only the newly added strip needs testing
            if d == "up":
                strip = (xl, y + lengths["up"], xr, yu)
            elif d == "down":
                strip = (xl, yd, xr, y - lengths["down"])
            elif d == "right":
                strip = (x + lengths["right"], yd, xr, yu)
            else:
                strip = (xl, yd, x - lengths["left"], yu)
            if any(box_hits(*strip, o) for o in near):
                fails[d] += 1
                step[d] *= 0.5
                if fails[d] >= max_failures or step[d] < min_step:
                    active[d] = False
            else:
                lengths[d] = trial[d]
                if lengths[d] >= cap[d] - 1e-12:
                    active[d] = False
                elif fails[d] == 0:
                    step[d] = min(max_step, 2.0 * step[d])
    return DrivingCorridor(x, y, l_up=lengths["up"], l_down=lengths["down"],
                           l_left=lengths["left"], l_right=lengths["right"])


def corridor_for_point(p, scenario: Scenario, params: VehicleParams, heading=None,
                       margin: float = 0.0, initial_step: float = 0.5, max_length: float = 20.0,
                       kinds=(ObstacleKind.NON_TRAVERSABLE,), exclude=()) -> DrivingCorridor:
    """Corridor for the reference point; ``exclude`` lists obstacle indices to ignore."""
    polys = [o.shape for i, o in enumerate(scenario.statics) if o.kind in kinds and i not in exclude]
    obs = configuration_obstacles(polys, heading, params, margin)
    limits = _reference_limits(scenario.workspace, heading, params, margin)
    return expand_corridor(p, obs, limits, initial_step=initial_step, max_length=max_length)


def corridor_constraints(c: DrivingCorridor) -> tuple[tuple[float, float], tuple[float, float]]:
    """Box constraints ((x_lo, x_hi), (y_lo, y_hi)) on the sample position."""
    return (c.left, c.right), (c.down, c.up)


# --- pedestrians and the risk field ------------------------------------------------

@dataclass(frozen=True)
class RiskFieldParams:
    alpha: float = 1.0
    beta: float = 0.05
    d_s: float = 3.0
    eps_threshold: float = 0.05
    dl: float = 0.25
    M: int = 9

    def __post_init__(self):
        if self.alpha <= 0 or self.d_s <= 0 or self.dl <= 0:
            raise ValueError("alpha, d_s and dl must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.M < 2:
            raise ValueError("M must be at least 2")


RISK_CAP = 1e9


def predict_pedestrian(track: PedestrianTrack, k: int, dt: float) -> tuple[float, float]:
    """Mean position after ``k`` steps of the constant-acceleration model."""
    if k < 0:
        raise ValueError("k must be non-negative")
    t = k * dt
    return (track.x0 + track.vx * t + 0.5 * track.ax * t * t,
            track.y0 + track.vy * t + 0.5 * track.ay * t * t)


def pedestrian_velocity(track: PedestrianTrack, k: int, dt: float) -> tuple[float, float]:
    t = k * dt
    return (track.vx + track.ax * t, track.vy + track.ay * t)


def position_variance(track: PedestrianTrack, k: int, dt: float) -> np.ndarray:
    """Diagonal position covariance after ``k`` steps."""
    if k < 0:
        raise ValueError("k must be non-negative")
    vx = track.sigma_x2
    vy = track.sigma_y2
    dt2, dt4 = dt * dt, dt ** 4
    for i in range(1, k + 1):
        sax, say = track.accel_variance(i)
        vx += dt2 * (track.sigma_vx2 + sax * dt2) + sax * dt4 / 4.0
        vy += dt2 * (track.sigma_vy2 + say * dt2) + say * dt4 / 4.0
    return np.diag([vx, vy])


@dataclass(frozen=True)
class PedestrianForecast:
    means: np.ndarray          # (K+1, 2)
    variances: np.ndarray      # (K+1, 2) diagonal entries
    velocities: np.ndarray     # (K+1, 2)


def forecast(track: PedestrianTrack, horizon: int, dt: float) -> PedestrianForecast:
    k = np.arange(horizon + 1)
    t = k * dt
    means = np.stack([track.x0 + track.vx * t + 0.5 * track.ax * t * t,
                      track.y0 + track.vy * t + 0.5 * track.ay * t * t], axis=1)
    vel = np.stack([track.vx + track.ax * t, track.vy + track.ay * t], axis=1)
    dt2, dt4 = dt * dt, dt ** 4
    sax = np.array([track.accel_variance(i)[0] for i in range(1, horizon + 1)])
    say = np.array([track.accel_variance(i)[1] for i in range(1, horizon + 1)])
    inc_x = dt2 * (track.sigma_vx2 + sax * dt2) + sax * dt4 / 4.0
    inc_y = dt2 * (track.sigma_vy2 + say * dt2) + say * dt4 / 4.0
    var = np.stack([track.sigma_x2 + np.concatenate([[0.0], np.cumsum(inc_x)]),
                    track.sigma_y2 + np.concatenate([[0.0], np.cumsum(inc_y)])], axis=1)
    return PedestrianForecast(means, var, vel)


def mahalanobis(vehicle, ped_mean, D) -> float:
    D = np.asarray(D, dtype=float)
    if D.shape == (2,):
        D = np.diag(D)
    if abs(np.linalg.det(D)) < 1e-300 or np.any(np.diag(D) <= 0):
        raise DegenerateCovarianceError("covariance must be positive definite")
    r = np.asarray(vehicle, dtype=float) - np.asarray(ped_mean, dtype=float)
    return float(math.sqrt(r @ np.linalg.solve(D, r)))


def relative_speed(vehicle_pos, vehicle_vel, ped_pos, ped_vel) -> float:
    """Closing speed of the vehicle toward the pedestrian, floored at zero."""
    r = np.asarray(ped_pos, dtype=float) - np.asarray(vehicle_pos, dtype=float)
    n = float(np.hypot(*r))
    if n == 0.0:
        return 0.0
    dv = np.asarray(vehicle_vel, dtype=float) - np.asarray(ped_vel, dtype=float)
    return max(0.0, float(dv @ r) / n)


def risk_magnitude(d_m, params: RiskFieldParams, v_rel=0.0):
    """Scalar risk for Mahalanobis distance(s) ``d_m``; zero beyond ``d_s``."""
    d_m = np.asarray(d_m, dtype=float)
    with np.errstate(divide="ignore"):
        inv = np.where(d_m > 0, 1.0 / np.where(d_m > 0, d_m, 1.0), np.inf)
    u = params.alpha * (inv - 1.0 / params.d_s) ** 2 * np.exp(-params.beta * np.asarray(v_rel, dtype=float))
    u = np.where(d_m <= params.d_s, u, 0.0)
    u = np.where(d_m == 0, RISK_CAP, np.minimum(u, RISK_CAP))
    return u if u.ndim else float(u)


def risk_value(vehicle, peds: Sequence[PedestrianTrack], k: int, dt: float,
               params: RiskFieldParams, vehicle_velocity=(0.0, 0.0)) -> float:
    """Maximum risk over pedestrians at forecast step ``k`` for one position."""
    best = 0.0
    for p in peds:
        mean = predict_pedestrian(p, k, dt)
        D = position_variance(p, k, dt)
        dm = mahalanobis(vehicle, mean, D)
        vr = relative_speed(vehicle, vehicle_velocity, mean, pedestrian_velocity(p, k, dt))
        best = max(best, float(risk_magnitude(dm, params, vr)))
    return best


def risk_at_points(pts: np.ndarray, forecasts: Sequence[PedestrianForecast], k: int,
                   params: RiskFieldParams, vehicle_velocity=(0.0, 0.0)) -> np.ndarray:
    """Vectorised max-over-pedestrians risk for an (n, 2) array of positions."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    out = np.zeros(len(pts))
    vv = np.asarray(vehicle_velocity, dtype=float)
    for f in forecasts:
        kk = min(k, len(f.means) - 1)
        r = pts - f.means[kk]
        dm = np.sqrt(r[:, 0] ** 2 / f.variances[kk, 0] + r[:, 1] ** 2 / f.variances[kk, 1])
        n = np.hypot(r[:, 0], r[:, 1])
        dv = vv - f.velocities[kk]
        # r points from pedestrian to vehicle, so closing speed is -dv.r/|r|
        with np.errstate(invalid="ignore", divide="ignore"):
            vr = np.where(n > 0, np.maximum(0.0, -(r @ dv) / np.where(n > 0, n, 1.0)), 0.0)
        out = np.maximum(out, risk_magnitude(dm, params, vr))
    return out


def edge_samples(c: DrivingCorridor, direction: str, M: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, M)
    if direction == "up":
        return np.stack([c.left + t * (c.right - c.left), np.full(M, c.up)], axis=1)
    if direction == "down":
        return np.stack([c.left + t * (c.right - c.left), np.full(M, c.down)], axis=1)
    if direction == "right":
        return np.stack([np.full(M, c.right), c.down + t * (c.up - c.down)], axis=1)
    return np.stack([np.full(M, c.left), c.down + t * (c.up - c.down)], axis=1)


def shrink_corridor(c: DrivingCorridor, forecasts: Sequence[PedestrianForecast], k: int,
                    params: RiskFieldParams, vehicle_velocity=(0.0, 0.0)) -> DrivingCorridor:
    """Pull each boundary in by ``dl`` while any of its ``M`` samples is riskier
    than the threshold. Lengths floor at zero."""
    if not forecasts:
        return c
    cur = c
    changed = True
    while changed:
        changed = False
        for d in DIRECTIONS:
            while cur.length(d) > 0.0:
                risk = risk_at_points(edge_samples(cur, d, params.M), forecasts, k, params, vehicle_velocity)
                if risk.max() <= params.eps_threshold:
                    break
                cur = replace(cur, **{f"l_{d}": max(0.0, cur.length(d) - params.dl)})
                changed = True
    return cur


def corridor_is_safe(c: DrivingCorridor, forecasts, k, params: RiskFieldParams, vehicle_velocity=(0.0, 0.0)) -> bool:
    pts = np.concatenate([edge_samples(c, d, params.M) for d in DIRECTIONS])
    return bool(risk_at_points(pts, forecasts, k, params, vehicle_velocity).max() <= params.eps_threshold)


def safe_subcorridor(c: DrivingCorridor, forecasts: Sequence[PedestrianForecast], k: int,
                     params: RiskFieldParams, vehicle_velocity=(0.0, 0.0), n: int = 15) -> DrivingCorridor | None:
    """Safe box inside ``c`` for a seed that sits in the risk zone.

    Candidate seeds on an ``n`` x ``n`` lattice over ``c`` are tried nearest
    first; each spans the part of ``c`` it sees and is then shrunk. Returns
    None when no candidate yields a safe corridor.
    """
    xs, ys = np.meshgrid(np.linspace(c.left, c.right, n), np.linspace(c.down, c.up, n))
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    risk = risk_at_points(pts, forecasts, k, params, vehicle_velocity)
    order = np.argsort(np.hypot(pts[:, 0] - c.cx, pts[:, 1] - c.cy), kind="stable")
    for i in order:
        if risk[i] > params.eps_threshold:
            continue
        x, y = float(pts[i, 0]), float(pts[i, 1])
        sub = DrivingCorridor(x, y, max(0.0, c.up - y), max(0.0, y - c.down),
                              max(0.0, x - c.left), max(0.0, c.right - x))
        sub = shrink_corridor(sub, forecasts, k, params, vehicle_velocity)
        if corridor_is_safe(sub, forecasts, k, params, vehicle_velocity):
            return sub
    return None


def risk_series(xy: np.ndarray, forecasts: Sequence[PedestrianForecast], params: RiskFieldParams,
                velocities: np.ndarray | None = None) -> np.ndarray:
    """Per-pedestrian risk U^{p,n}(k) along a trajectory, shape (N_p, K)."""
    xy = np.asarray(xy, dtype=float)
    out = np.zeros((len(forecasts), len(xy)))
    for n, f in enumerate(forecasts):
        for k in range(len(xy)):
            vv = (0.0, 0.0) if velocities is None else velocities[k]
            out[n, k] = risk_at_points(xy[k:k + 1], [f], k, params, vv)[0]
    return out


def cumulative_risk_potential(xy: np.ndarray, forecasts: Sequence[PedestrianForecast],
                              params: RiskFieldParams, velocities: np.ndarray | None = None) -> float:
    """Sum over pedestrians of max-normalised risk over steps 1..N_f."""
    if not forecasts:
        return 0.0
    U = risk_series(xy, forecasts, params, velocities)[:, 1:]
    total = 0.0
    for row in U:
        m = row.max()
        if m > 0:
            total += float((row / m).sum())
    return total
