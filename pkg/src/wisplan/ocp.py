"""Direct transcription of the trajectory OCP over a mode-annotated coarse path.

Decision vector layout: states (N+1, 5) as (x, y, v, theta, delta), controls
(N, 2) as (a, omega_delta), zero-turn yaw rates (N,), then t_f. Corridor
boxes, heading trust regions, control bounds, boundary states and drive-over
speed limits are simple bounds; kinematic defects are handled by an
augmented Lagrangian with an L-BFGS-B inner solver.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .corridor import (CorridorError, DrivingCorridor, RiskFieldParams, corridor_for_point,
                       corridor_is_safe, forecast, safe_subcorridor, shrink_corridor)
from .geometry import VehicleParams, normalize_angle
from .kinematics import MotionMode
from .planner import CROSS, DRIVE_OVER, CoarsePath
from .scenario import ObstacleKind, Scenario
from .world import World

log = logging.getLogger(__name__)

N_SAMPLES = 200
V_LB, V_UB = 0.5, 2.0
A_MAX, OMEGA_DELTA_MAX, V_MAX = 1.5, 0.5, 3.0
WARM_SPEED, WARM_ACCEL = 1.0, 0.5
HEADING_TRUST = (0.25, 0.12, 0.06, 0.03, 0.0)
CROSS_TRUST = 0.05
MIN_RUN_INTERVALS = 3

ACK, DIAG, ZT = int(MotionMode.ACKERMANN), int(MotionMode.DIAGONAL), int(MotionMode.ZERO_TURN)


class OptimizationFailure(RuntimeError):
    """No feasible iterate was found; carries the final violation norms."""

    def __init__(self, msg, defect: float = math.nan, bound: float = math.nan):
        super().__init__(msg)
        self.defect = defect
        self.bound = bound


@dataclass(frozen=True)
class SolverConfig:
    max_outer: int = 40
    penalty_growth: float = 10.0
    constraint_tol: float = 1e-6
    gradient_tol: float = 1e-10
    inner_max_iter: int = 400
    initial_penalty: float = 1000.0
    max_penalty: float = 1e9

    def __post_init__(self):
        if self.constraint_tol <= 0 or self.gradient_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.penalty_growth <= 1 or self.max_outer < 1 or self.inner_max_iter < 1:
            raise ValueError("invalid solver budget")


@dataclass(frozen=True)
class ModeSchedule:
    """Per-interval mode plus the switch bookkeeping.

    ``delta_free[k]`` drops the steering defect of interval k (entering a new
    mode while stopped, or any zero-turn interval). ``diag_next[k]`` makes a
    diagonal interval use the steering angle of its later sample.
    """
    modes: np.ndarray
    delta_free: np.ndarray
    diag_next: np.ndarray
    stops: np.ndarray             # sample indices where v is pinned to zero

    @classmethod
    def uniform(cls, mode: MotionMode, n: int) -> "ModeSchedule":
        return schedule_from_runs([(int(mode), n, None)])

    @property
    def n(self) -> int:
        return len(self.modes)

    def sample_modes(self) -> np.ndarray:
        m = np.empty(self.n + 1, dtype=int)
        m[:-1] = self.modes
        m[-1] = self.modes[-1]
        return m


def schedule_from_runs(runs) -> ModeSchedule:
    """``runs`` is a list of (mode, n_intervals, segment key); consecutive runs
    with equal keys share a segment, and segment starts are full stops."""
    modes, seg_ids = [], []
    seg = -1
    prev = object()
    for mode, n, key in runs:
        k = (mode, key)
        if k != prev:
            seg += 1
            prev = k
        modes += [mode] * n
        seg_ids += [seg] * n
    modes = np.array(modes, dtype=int)
    seg_ids = np.array(seg_ids)
    N = len(modes)
    first = np.ones(N, dtype=bool)
    first[1:] = seg_ids[1:] != seg_ids[:-1]
    last = np.ones(N, dtype=bool)
    last[:-1] = seg_ids[1:] != seg_ids[:-1]
    delta_free = (modes == ZT) | ((modes == DIAG) & (first | last)) | ((modes == ACK) & first & (seg_ids > 0))
    diag_next = (modes == DIAG) & ~last
    stops = [0, N] + [k for k in range(1, N) if first[k]]
    stops += [k for k in range(N + 1) if (k < N and modes[k] == ZT) or (k > 0 and modes[k - 1] == ZT)]
    return ModeSchedule(modes, delta_free, diag_next, np.array(sorted(set(stops)), dtype=int))


@dataclass
class Trajectory:
    states: np.ndarray            # (N+1, 5): x, y, v, theta, delta
    controls: np.ndarray          # (N, 2): a, omega_delta
    t_f: float
    schedule: ModeSchedule
    yaw_rates: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        if self.yaw_rates is None:
            self.yaw_rates = np.zeros(len(self.controls))
        if not self.t_f > 0:
            raise ValueError("t_f must be positive")
        if self.states.shape != (len(self.controls) + 1, 5) or self.schedule.n != len(self.controls):
            raise ValueError("trajectory arrays are inconsistent")

    @property
    def n(self) -> int:
        return len(self.controls)

    @property
    def dt(self) -> float:
        return self.t_f / self.n

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.dt

    @property
    def modes(self) -> np.ndarray:
        return self.schedule.sample_modes()

    def velocities(self) -> np.ndarray:
        """World-frame velocity vectors of the reference point."""
        x, y, v, th, d = self.states.T
        ang = np.where(self.modes == DIAG, th + d, th)
        return np.stack([v * np.cos(ang), v * np.sin(ang)], axis=1) * (self.modes != ZT)[:, None]

    def rows(self):
        a = np.append(self.controls[:, 0], self.controls[-1, 0])
        w = np.append(self.controls[:, 1], self.controls[-1, 1])
        for t, s, ak, wk, m in zip(self.times, self.states, a, w, self.modes):
            yield (float(t), float(s[0]), float(s[1]), float(s[3]), float(s[2]), float(s[4]),
                   float(ak), float(wk), int(m))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "x", "y", "theta", "v", "delta", "a", "omega_delta", "mode"])
            for r in self.rows():
                wr.writerow([f"{r[0]:.6f}"] + [f"{q:.9f}" for q in r[1:8]] + [r[8]])


@dataclass
class DriveOverInterval:
    obstacle: int
    bbox: tuple
    samples: tuple                # (first, last) sample index on the warm start


@dataclass
class OcpProblem:
    warm: Trajectory
    lam1: float
    lam2: float
    corridors: list               # post-shrink, one per sample
    raw_corridors: list           # pre-shrink
    heading_trust: np.ndarray
    drive_over: list
    s0: np.ndarray
    sf: np.ndarray
    params: VehicleParams
    directions: np.ndarray        # sign of the warm-start speed per sample (0 when stopped)
    v_lb: float = V_LB
    v_ub: float = V_UB

    def __post_init__(self):
        if self.lam1 < 0 or self.lam2 < 0:
            raise ValueError("cost weights must be non-negative")
        if len(self.corridors) != self.warm.n + 1:
            raise ValueError("need one corridor per sample")

    @property
    def n(self) -> int:
        return self.warm.n


# --- cost and defects -----------------------------------------------------------

def cost(traj: Trajectory, lam1: float = 0.5, lam2: float = 0.5) -> float:
    """lam1 t_f + lam2 dt sum(a^2 + omega^2 + trapezoid of delta^2)."""
    return _cost(traj.states, traj.controls, traj.t_f, lam1, lam2)[0]


def _cost(X, U, T, lam1, lam2, grad=False):
    N = len(U)
    h = T / N
    d2 = X[:, 4] ** 2
    Q = float(np.sum(U ** 2) + 0.5 * (d2[:-1] + d2[1:]).sum())
    J = lam1 * T + lam2 * h * Q
    if not grad:
        return J, None
    gX = np.zeros_like(X)
    w = np.full(N + 1, 1.0)
    w[0] = w[-1] = 0.5
    gX[:, 4] = lam2 * h * 2.0 * w * X[:, 4]
    gU = lam2 * h * 2.0 * U
    gT = lam1 + lam2 * Q / N
    return J, (gX, gU, gT)


def _sinc(u):
    small = np.abs(u) < 1e-4
    us = np.where(small, 1.0, u)
    S = np.where(small, 1.0 - u * u / 6.0, np.sin(us) / us)
    dS = np.where(small, -u / 3.0, (us * np.cos(us) - np.sin(us)) / (us * us))
    return S, dS


def _defects(X, U, R, T, sched: ModeSchedule, wheelbase: float, jac: bool = False):
    """Residuals (N, 5) and, optionally, local Jacobians (N, 5, 14) over
    (s_k, s_k+1, a_k, omega_k, r_k, t_f)."""
    N = len(U)
    h = T / N
    x0, y0, v0, th0, d0 = X[:-1].T
    x1, y1, v1, th1, d1 = X[1:].T
    a, w = U.T
    m = sched.modes
    A, D, Z = m == ACK, m == DIAG, m == ZT
    vb = 0.5 * (v0 + v1)
    tb = 0.5 * (th0 + th1)
    u = 0.5 * (th1 - th0)
    S, dS = _sinc(u)
    cA, sA = np.cos(tb), np.sin(tb)
    nxt = sched.diag_next
    phi = np.where(nxt, th1 + d1, th0 + d0)
    cD, sD = np.cos(phi), np.sin(phi)
    px = np.where(A, vb * cA * S, np.where(D, vb * cD, 0.0))
    py = np.where(A, vb * sA * S, np.where(D, vb * sD, 0.0))
    t0, t1 = np.tan(d0), np.tan(d1)
    psi0, psi1 = 2.0 * v0 * t0 / wheelbase, 2.0 * v1 * t1 / wheelbase
    thr = np.where(A, 0.5 * (psi0 + psi1), np.where(Z, R, 0.0))
    keep = ~sched.delta_free
    C = np.empty((N, 5))
    C[:, 0] = x1 - x0 - h * px
    C[:, 1] = y1 - y0 - h * py
    C[:, 2] = v1 - v0 - h * a
    C[:, 3] = th1 - th0 - h * thr
    C[:, 4] = np.where(keep, d1 - d0 - h * w, 0.0)
    if not jac:
        return C, None
    J = np.zeros((N, 5, 14))
    fA, fD = A.astype(float), D.astype(float)
    # x row
    J[:, 0, 0], J[:, 0, 5] = -1.0, 1.0
    dxv = -h * 0.5 * (fA * cA * S + fD * cD)
    J[:, 0, 2] = J[:, 0, 7] = dxv
    J[:, 0, 3] = -h * vb * fA * (-sA * 0.5 * S - cA * dS * 0.5)
    J[:, 0, 8] = -h * vb * fA * (-sA * 0.5 * S + cA * dS * 0.5)
    gphi_x = h * vb * sD * fD
    # y row
    J[:, 1, 1], J[:, 1, 6] = -1.0, 1.0
    dyv = -h * 0.5 * (fA * sA * S + fD * sD)
    J[:, 1, 2] = J[:, 1, 7] = dyv
    J[:, 1, 3] = -h * vb * fA * (cA * 0.5 * S - sA * dS * 0.5)
    J[:, 1, 8] = -h * vb * fA * (cA * 0.5 * S + sA * dS * 0.5)
    gphi_y = -h * vb * cD * fD
    for row, g in ((0, gphi_x), (1, gphi_y)):
        J[:, row, 8] += np.where(nxt, g, 0.0)
        J[:, row, 9] += np.where(nxt, g, 0.0)
        J[:, row, 3] += np.where(nxt, 0.0, g)
        J[:, row, 4] += np.where(nxt, 0.0, g)
    J[:, 0, 13] = -px / N
    J[:, 1, 13] = -py / N
    # v row
    J[:, 2, 2], J[:, 2, 7], J[:, 2, 10], J[:, 2, 13] = -1.0, 1.0, -h, -a / N
    # theta row
    J[:, 3, 3], J[:, 3, 8] = -1.0, 1.0
    J[:, 3, 2] = -h * 0.5 * fA * 2.0 * t0 / wheelbase
    J[:, 3, 7] = -h * 0.5 * fA * 2.0 * t1 / wheelbase
    J[:, 3, 4] = -h * 0.5 * fA * 2.0 * v0 * (1.0 + t0 * t0) / wheelbase
    J[:, 3, 9] = -h * 0.5 * fA * 2.0 * v1 * (1.0 + t1 * t1) / wheelbase
    J[:, 3, 12] = -h * Z
    J[:, 3, 13] = -thr / N
    # delta row
    kf = keep.astype(float)
    J[:, 4, 4], J[:, 4, 9], J[:, 4, 11], J[:, 4, 13] = -kf, kf, -h * kf, -w / N * kf
    return C, J


def kinematic_defects(traj: Trajectory, params: VehicleParams = VehicleParams()) -> np.ndarray:
    """Collocation residuals (N, 5) of the scheduled motion models; dropped
    switch rows are zero."""
    return _defects(traj.states, traj.controls, traj.yaw_rates, traj.t_f, traj.schedule, params.wheelbase)[0]


def drive_over_penalty(traj: Trajectory, intervals, v_lb: float = V_LB, v_ub: float = V_UB,
                       directions: np.ndarray | None = None) -> np.ndarray:
    """chi(x, y) * max(0, max(v - v_ub, v_lb - v)) per sample.

    ``v`` is the speed along the direction of travel (``directions`` gives the
    sign per sample; defaults to the sign of v itself).
    """
    x, y, v = traj.states[:, 0], traj.states[:, 1], traj.states[:, 2]
    chi = chi_area(x, y, intervals)
    sgn = np.sign(v) if directions is None else np.where(directions == 0, 1.0, directions)
    sp = sgn * v
    return chi * np.maximum(0.0, np.maximum(sp - v_ub, v_lb - sp))


def chi_area(x, y, intervals) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(x.shape)
    for iv in intervals:
        x0, y0, x1, y1 = iv.bbox
        out = np.maximum(out, ((x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)).astype(float))
    return out


# --- warm start -----------------------------------------------------------------

def _runs(coarse: CoarsePath):
    """Split the path into runs of constant (mode, direction[, delta]);
    each run starts and ends at rest."""
    runs = []
    for p in coarse.pieces:
        if p.mode == MotionMode.ZERO_TURN:
            key = (ZT, int(np.sign(p.amount)), None)
        elif p.mode == MotionMode.DIAGONAL:
            key = (DIAG, p.direction, round(p.delta, 12))
        else:
            key = (ACK, p.direction, None)
        if runs and runs[-1][0] == key:
            runs[-1][1].append(p)
        else:
            runs.append((key, [p]))
    return runs


def _run_duration(key, pieces, params: VehicleParams) -> float:
    if key[0] == ZT:
        return sum(abs(p.amount) for p in pieces) / params.yaw_rate
    L = sum(abs(p.amount) for p in pieces)
    if L >= WARM_SPEED ** 2 / WARM_ACCEL:
        return L / WARM_SPEED + WARM_SPEED / WARM_ACCEL
    return 2.0 * math.sqrt(L / WARM_ACCEL)


def _allocate(durations, N: int) -> list[int]:
    R = len(durations)
    if MIN_RUN_INTERVALS * R > N:
        raise CorridorError(f"coarse path has {R} motion runs, too many for {N} intervals")
    spare = N - MIN_RUN_INTERVALS * R
    w = np.asarray(durations, dtype=float)
    share = spare * w / w.sum() if w.sum() > 0 else np.full(R, spare / R)
    n = np.floor(share).astype(int)
    order = np.argsort(-(share - n), kind="stable")
    n[order[:spare - n.sum()]] += 1
    return [int(k) + MIN_RUN_INTERVALS for k in n]


def _trapezoid_profile(L: float, tau: float, t: np.ndarray):
    """Arc length and speed of a rest-to-rest trapezoid over duration tau."""
    a = WARM_ACCEL
    disc = max(0.0, a * a * tau * tau - 4.0 * a * L)
    vc = 0.5 * (a * tau - math.sqrt(disc))
    t1 = vc / a if a > 0 else 0.0
    s = np.where(t < t1, 0.5 * a * t * t,
                 np.where(t <= tau - t1, 0.5 * a * t1 * t1 + vc * (t - t1),
                          L - 0.5 * a * np.maximum(tau - t, 0.0) ** 2))
    v = np.where(t < t1, a * t, np.where(t <= tau - t1, vc, a * np.maximum(tau - t, 0.0)))
    return np.clip(s, 0.0, L), v


def warm_start(coarse: CoarsePath, s: Scenario, params: VehicleParams, n: int = N_SAMPLES) -> Trajectory:
    """Resample the coarse path on a uniform time grid with rest-to-rest
    trapezoidal speed profiles per run."""
    if not coarse.pieces:
        raise ValueError("coarse path is empty")
    runs = _runs(coarse)
    durs = [_run_duration(k, ps, params) for k, ps in runs]
    counts = _allocate(durs, n)
    dt = max(d / c for d, c in zip(durs, counts))
    dt = max(dt, 1e-3)
    X = np.zeros((n + 1, 5))
    R = np.zeros(n)
    sched_runs = []
    j = 0
    for (key, pieces), cnt in zip(runs, counts):
        mode, direction, dkey = key
        tau = cnt * dt
        t = np.arange(cnt + 1) * dt
        if mode == ZT:
            lens = np.array([abs(p.amount) for p in pieces])
            total = lens.sum()
            sarc = total * t / tau
            R[j:j + cnt] = direction * total / tau
            v = np.zeros(cnt + 1)
        else:
            lens = np.array([abs(p.amount) for p in pieces])
            total = lens.sum()
            sarc, v = _trapezoid_profile(total, tau, t)
            v = direction * v
        cum = np.concatenate([[0.0], np.cumsum(lens)])
        idx = np.clip(np.searchsorted(cum, sarc, side="right") - 1, 0, len(pieces) - 1)
        for q, (sq, iq) in enumerate(zip(sarc, idx)):
            p = pieces[iq]
            frac = 0.0 if lens[iq] == 0 else (sq - cum[iq]) / lens[iq]
            pose = p.poses_at(np.array([min(max(frac, 0.0), 1.0)]), params)[0]
            X[j + q, 0], X[j + q, 1], X[j + q, 3] = pose
            X[j + q, 2] = v[q]
            X[j + q, 4] = 0.0 if mode == ZT else p.delta
        seg_key = dkey if mode == DIAG else None
        sched_runs.append((mode, cnt, seg_key))
        j += cnt
    X[:, 3] = np.unwrap(X[:, 3])
    sched = schedule_from_runs(sched_runs)
    X[sched.stops, 2] = 0.0
    X[0, 4], X[-1, 4] = s.init.delta, s.goal.delta
    X[0, 2], X[-1, 2] = s.init.v, s.goal.v
    U = np.zeros((n, 2))
    U[:, 0] = np.clip(np.diff(X[:, 2]) / dt, -A_MAX, A_MAX)
    U[:, 1] = np.where(sched.modes == ACK, np.clip(np.diff(X[:, 4]) / dt, -OMEGA_DELTA_MAX, OMEGA_DELTA_MAX), 0.0)
    return Trajectory(X, U, n * dt, sched, R)


# --- problem construction -----------------------------------------------------------

def build_problem(coarse: CoarsePath, s: Scenario, params: VehicleParams = VehicleParams(),
                  risk_params: RiskFieldParams | None = RiskFieldParams(), lam1: float = 0.5,
                  lam2: float = 0.5, n: int = N_SAMPLES, risk_corridor: bool = True) -> OcpProblem:
    """Warm start, per-sample corridors (expanded, then shrunk around
    pedestrian forecasts) and drive-over intervals."""
    warm = warm_start(coarse, s, params, n)
    decisions = coarse.decisions()
    decided = set(decisions)
    world = World(s, params)
    forecasts = [forecast(p, n, warm.dt) for p in s.pedestrians] if (risk_corridor and risk_params) else []
    vel = warm.velocities()
    crossed = [i for i, d in decisions.items() if d == CROSS]
    raw, shrunk, trust = [], [], np.zeros(n + 1)
    for j, st in enumerate(warm.states):
        p = (st[0], st[1])
        c = None
        pinned = bool(crossed) and bool(set(world.overlapped(np.array([[st[0], st[1], st[3]]]))) & set(crossed))
        tr_options = (0.0,) if pinned else HEADING_TRUST
        for tr in tr_options:
            heading = float(st[3]) if tr == 0.0 else (st[3] - tr, st[3] + tr)
            try:
                # pinned boxes are tiny, so start the expansion fine enough to resolve them
                c = corridor_for_point(p, s, params, heading=heading, margin=0.01 if tr > 0 else 0.0,
                                       initial_step=0.25 * CROSS_TRUST if pinned else 0.5,
                                       kinds=tuple(ObstacleKind), exclude=decided)
                trust[j] = tr
                break
            except CorridorError:
                continue
        if c is None:
            raise CorridorError(f"corridor seed at sample {j} lies inside an obstacle")
        if pinned:
            c = DrivingCorridor(c.cx, c.cy, min(c.l_up, CROSS_TRUST), min(c.l_down, CROSS_TRUST),
                                min(c.l_left, CROSS_TRUST), min(c.l_right, CROSS_TRUST))
        raw.append(c)
        if forecasts:
            c2 = shrink_corridor(c, forecasts, j, risk_params, vel[j])
            if not corridor_is_safe(c2, forecasts, j, risk_params, vel[j]):
                # the warm sample is inside the risk zone: move the box off it
                c2 = safe_subcorridor(c, forecasts, j, risk_params, vel[j]) if 0 < j < n else None
                if c2 is None:
                    raise CorridorError(f"no safe corridor around sample {j} (pedestrian risk zone)")
            shrunk.append(c2)
        else:
            shrunk.append(c)
    drive = []
    x, y = warm.states[:, 0], warm.states[:, 1]
    for i, d in sorted(decisions.items()):
        if d != DRIVE_OVER:
            continue
        bbox = s.statics[i].shape.bbox
        inside = np.nonzero((x >= bbox[0]) & (x <= bbox[2]) & (y >= bbox[1]) & (y <= bbox[3]))[0]
        span = (int(inside[0]), int(inside[-1])) if len(inside) else (-1, -1)
        drive.append(DriveOverInterval(i, tuple(bbox), span))
    directions = np.sign(warm.states[:, 2])
    # stopped samples inherit the direction of the neighbouring motion
    for j in range(n + 1):
        if directions[j] == 0:
            nb = directions[j + 1] if j < n else 0
            directions[j] = nb if nb != 0 else (directions[j - 1] if j > 0 else 0)
    s0 = np.array([s.init.x, s.init.y, s.init.v, s.init.theta, s.init.delta])
    sf = np.array([s.goal.x, s.goal.y, s.goal.v, s.goal.theta, s.goal.delta])
    sf[3] = warm.states[-1, 3] + float(normalize_angle(sf[3] - warm.states[-1, 3]))
    return OcpProblem(warm, lam1, lam2, shrunk, raw, trust, drive, s0, sf, params, directions)


# --- solver ------------------------------------------------------------------------

class _Layout:
    def __init__(self, n: int):
        self.n = n
        self.nx = 5 * (n + 1)
        self.nz = self.nx + 3 * n + 1
        k = np.arange(n)
        idx = np.empty((n, 14), dtype=int)
        idx[:, :5] = 5 * k[:, None] + np.arange(5)
        idx[:, 5:10] = 5 * (k[:, None] + 1) + np.arange(5)
        idx[:, 10] = self.nx + 2 * k
        idx[:, 11] = self.nx + 2 * k + 1
        idx[:, 12] = self.nx + 2 * n + k
        idx[:, 13] = self.nz - 1
        self.local = idx

    def pack(self, X, U, R, T) -> np.ndarray:
        return np.concatenate([X.ravel(), U.ravel(), R, [T]])

    def unpack(self, z):
        n = self.n
        X = z[:self.nx].reshape(n + 1, 5)
        U = z[self.nx:self.nx + 2 * n].reshape(n, 2)
        R = z[self.nx + 2 * n:self.nx + 3 * n]
        return X, U, R, z[-1]


def augmented_lagrangian(z, lay: _Layout, p: OcpProblem, lam: np.ndarray, mu: float, grad: bool = True):
    """Value (and gradient) of J + lam.c + mu/2 |c|^2."""
    X, U, R, T = lay.unpack(z)
    J, gJ = _cost(X, U, T, p.lam1, p.lam2, grad)
    C, Jc = _defects(X, U, R, T, p.warm.schedule, p.params.wheelbase, grad)
    val = J + float(np.sum(lam * C)) + 0.5 * mu * float(np.sum(C * C))
    if not grad:
        return val
    g = lay.pack(gJ[0], gJ[1], np.zeros(lay.n), gJ[2])
    wgt = lam + mu * C
    contrib = Jc * wgt[:, :, None]
    g += np.bincount(np.broadcast_to(lay.local[:, None, :], contrib.shape).ravel(),
                     weights=contrib.ravel(), minlength=lay.nz)
    return val, g


def _bounds(p: OcpProblem, drive_samples: set):
    n = p.n
    sched = p.warm.schedule
    W = p.warm.states
    lo = np.full((n + 1, 5), -np.inf)
    hi = np.full((n + 1, 5), np.inf)
    for j, c in enumerate(p.corridors):
        lo[j, 0], hi[j, 0] = c.left, c.right
        lo[j, 1], hi[j, 1] = c.down, c.up
    lo[:, 2], hi[:, 2] = -V_MAX, V_MAX
    lo[:, 3], hi[:, 3] = W[:, 3] - p.heading_trust, W[:, 3] + p.heading_trust
    lo[:, 4], hi[:, 4] = -p.params.max_steer, p.params.max_steer
    m = sched.modes
    # two neighbouring samples with the same fixed heading bracket a straight Ackermann step
    fixed = np.asarray(p.heading_trust) == 0.0
    straight = fixed[:-1] & fixed[1:] & (np.abs(np.diff(W[:, 3])) < 1e-12) & (m == ACK)
    for k in np.nonzero(straight)[0]:
        lo[k:k + 2, 4] = 0.0
        hi[k:k + 2, 4] = 0.0
    for j in drive_samples:
        d = p.directions[j] if p.directions[j] != 0 else 1.0
        lo[j, 2], hi[j, 2] = (p.v_lb, p.v_ub) if d > 0 else (-p.v_ub, -p.v_lb)
    lo[sched.stops, 2] = 0.0
    hi[sched.stops, 2] = 0.0
    lo[0], hi[0] = p.s0, p.s0
    lo[-1], hi[-1] = p.sf, p.sf
    ulo = np.zeros((n, 2))
    uhi = np.zeros((n, 2))
    ulo[:, 0] = np.where(m == ZT, 0.0, -A_MAX)
    uhi[:, 0] = np.where(m == ZT, 0.0, A_MAX)
    ulo[:, 1] = np.where(m == ACK, -OMEGA_DELTA_MAX, 0.0)
    uhi[:, 1] = np.where(m == ACK, OMEGA_DELTA_MAX, 0.0)
    rw = p.params.yaw_rate
    rlo = np.where(m == ZT, -rw, 0.0)
    rhi = np.where(m == ZT, rw, 0.0)
    lay = _Layout(n)
    L = lay.pack(lo, ulo, rlo, 1e-3)
    H = lay.pack(hi, uhi, rhi, np.inf)
    return list(zip(L, np.where(np.isinf(H), None, H))), L, H


@dataclass
class SolveResult:
    trajectory: Trajectory
    cost: float
    warm_cost: float
    max_defect: float
    boundary_error: float
    log: list = field(default_factory=list)


def _drive_set(X, p: OcpProblem) -> set:
    chi = chi_area(X[:, 0], X[:, 1], p.drive_over)
    return set(np.nonzero(chi > 0)[0].tolist())


def solve(p: OcpProblem, cfg: SolverConfig = SolverConfig()) -> SolveResult:
    """Augmented-Lagrangian outer loop with L-BFGS-B inner solves."""
    lay = _Layout(p.n)
    w = p.warm
    for j, st in ((0, p.s0), (p.n, p.sf)):
        if not p.corridors[j].contains(st[0], st[1], tol=1e-9):
            raise OptimizationFailure(f"boundary state at sample {j} lies outside its corridor")
    z = lay.pack(w.states, w.controls, w.yaw_rates, w.t_f)
    active = _drive_set(w.states, p)
    stops = set(p.warm.schedule.stops.tolist())
    if active & stops:
        raise OptimizationFailure("a full stop is scheduled inside a drive-over area")
    bnds, L, H = _bounds(p, active)
    z = np.clip(z, L, H)
    lam = np.zeros((p.n, 5))
    mu = cfg.initial_penalty
    warm_cost = cost(w, p.lam1, p.lam2)
    history = []
    best = None
    prev_viol = math.inf
    schedule = w.schedule

    def feasible_report(zc):
        X, U, R, T = lay.unpack(zc)
        C = _defects(X, U, R, T, schedule, p.params.wheelbase)[0]
        viol = float(np.abs(C).max())
        traj = Trajectory(X.copy(), U.copy(), float(T), schedule, R.copy())
        dviol = float(drive_over_penalty(traj, p.drive_over, p.v_lb, p.v_ub, p.directions).max(initial=0.0))
        return traj, viol, dviol

    traj0, v0, d0 = feasible_report(z)
    if v0 < cfg.constraint_tol and d0 <= 1e-9:
        best = (cost(traj0, p.lam1, p.lam2), traj0, v0)
    for outer in range(cfg.max_outer):
        res = minimize(augmented_lagrangian, z, args=(lay, p, lam, mu), jac=True, method="L-BFGS-B",
                       bounds=bnds, options={"maxiter": cfg.inner_max_iter, "ftol": 1e-15,
                                             "gtol": cfg.gradient_tol, "maxcor": 20})
        z = res.x
        X, U, R, T = lay.unpack(z)
        C = _defects(X, U, R, T, schedule, p.params.wheelbase)[0]
        viol = float(np.abs(C).max())
        traj, _, dviol = feasible_report(z)
        J = cost(traj, p.lam1, p.lam2)
        history.append({"outer": outer, "merit": float(res.fun), "cost": J, "defect_inf": viol,
                        "drive_over_inf": dviol, "penalty": mu, "inner_iters": int(res.nit)})
        log.debug("outer %d: J=%.6f defect=%.3e mu=%.1e", outer, J, viol, mu)
        new_active = _drive_set(X, p)
        if not new_active <= active:
            if new_active & stops:
                raise OptimizationFailure("trajectory enters a drive-over area at a full stop", viol, dviol)
            active |= new_active
            bnds, L, H = _bounds(p, active)
            z = np.clip(z, L, H)
            continue
        if viol < cfg.constraint_tol and dviol <= 1e-9:
            if best is None or J < best[0]:
                best = (J, traj, viol)
            break
        lam = lam + mu * C
        if viol > 0.25 * prev_viol:
            mu = min(cfg.max_penalty, mu * cfg.penalty_growth)
        prev_viol = viol
    if best is None:
        raise OptimizationFailure(f"no feasible iterate after {cfg.max_outer} outer iterations "
                                  f"(defect {viol:.3e})", viol, dviol)
    J, traj, viol = best
    bnd = float(max(np.abs(traj.states[0] - p.s0).max(), np.abs(traj.states[-1] - p.sf).max()))
    return SolveResult(traj, J, warm_cost, viol, bnd, history)


def write_solver_log(result: SolveResult, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["outer", "merit", "cost", "defect_inf", "drive_over_inf", "penalty", "inner_iters"])
        for h in result.log:
            wr.writerow([h["outer"], f"{h['merit']:.9g}", f"{h['cost']:.9g}", f"{h['defect_inf']:.3e}",
                         f"{h['drive_over_inf']:.3e}", f"{h['penalty']:.3g}", h["inner_iters"]])


def write_corridor_debug(p: OcpProblem, path) -> None:
    """Per-sample corridor bounds before and after risk shrinking."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["sample", "left", "down", "right", "up", "left_s", "down_s", "right_s", "up_s"])
        for j, (a, b) in enumerate(zip(p.raw_corridors, p.corridors)):
            wr.writerow([j] + [f"{q:.6f}" for q in a.bounds + b.bounds])
