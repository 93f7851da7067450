import math

import numpy as np
import pytest

from wisplan.corridor import DrivingCorridor, _reference_limits
from wisplan.geometry import VehicleParams, box_polygon
from wisplan.kinematics import MotionMode, VehicleState
from wisplan.ocp import (N_SAMPLES, DriveOverInterval, ModeSchedule, OcpProblem, OptimizationFailure, Trajectory,
                         _defects, _Layout, augmented_lagrangian, build_problem, chi_area, cost, drive_over_penalty,
                         kinematic_defects, schedule_from_runs, solve, write_solver_log)
from wisplan.planner import initial_path
from wisplan.scenario import ObstacleAttribute, ObstacleKind, Scenario, StaticObstacle

P = VehicleParams()
WS = (0.0, 0.0, 40.0, 40.0)
AK, DG, ZT = int(MotionMode.ACKERMANN), int(MotionMode.DIAGONAL), int(MotionMode.ZERO_TURN)


def scene(statics=(), init=(10, 20, 0), goal=(30, 20, 0)):
    return Scenario(WS, tuple(statics), (), VehicleState(init[0], init[1], 0, init[2], 0),
                    VehicleState(goal[0], goal[1], 0, goal[2], 0))


def no_stop_schedule(mode, n):
    m = np.full(n, mode)
    return ModeSchedule(m, m == ZT, np.zeros(n, dtype=bool), np.array([], dtype=int))


@pytest.fixture(scope="module")
def straight():
    s = scene()
    return s, build_problem(initial_path(s, policy="easy"), s, P)


def test_sample_count(straight):
    _, p = straight
    assert N_SAMPLES == 200
    assert p.warm.states.shape == (201, 5) and len(p.corridors) == 201


def test_free_corridors_reach_limits(straight):
    _, p = straight
    for j, c in enumerate(p.raw_corridors):
        th, tr = p.warm.states[j, 3], p.heading_trust[j]
        lim = _reference_limits(WS, (th - tr, th + tr) if tr > 0 else th, P, 0.01 if tr > 0 else 0.0)
        want = (max(lim[0], c.cx - 20), max(lim[1], c.cy - 20), min(lim[2], c.cx + 20), min(lim[3], c.cy + 20))
        assert c.bounds == pytest.approx(want, abs=1e-9)


def test_one_drive_over_interval():
    s = scene([StaticObstacle(box_polygon(19, 17, 20, 23), ObstacleAttribute(ObstacleKind.DRIVE_OVER, 0.05))])
    p = build_problem(initial_path(s, policy="easy"), s, P)
    assert len(p.drive_over) == 1 and p.drive_over[0].obstacle == 0


# --- cost -------------------------------------------------------------------

def test_cost_zero_controls():
    sched = ModeSchedule.uniform(MotionMode.ACKERMANN, 10)
    t = Trajectory(np.zeros((11, 5)), np.zeros((10, 2)), 10.0, sched)
    assert cost(t, 0.5, 0.5) == 5.0
    assert cost(t, 0.0, 0.0) == 0.0


def test_cost_fine_quadrature():
    N, T = 200, 12.0
    h = T / N
    ts = np.arange(N + 1) * h
    X = np.zeros((N + 1, 5))
    X[:, 4] = 0.3 * np.sin(ts / 2)
    U = np.stack([np.cos(ts[:-1] + h / 2), 0.15 * np.cos(ts[:-1] / 2 + h / 4)], 1)
    got = cost(Trajectory(X, U, T, ModeSchedule.uniform(MotionMode.ACKERMANN, N)), 0.5, 0.5)
    tf = np.linspace(0, T, 10 * N + 1)
    f = np.cos(tf) ** 2 + (0.3 * np.sin(tf / 2)) ** 2 + (0.15 * np.cos(tf / 2)) ** 2
    want = 0.5 * T + 0.5 * np.trapezoid(f, tf)
    assert abs(got - want) <= 0.01 * want


# --- defects ------------------------------------------------------------------

def test_exact_arc_residual():
    N, T, d, th0 = 100, 8.0, 0.3, 0.2
    k = 2 * math.tan(d) / P.wheelbase
    t = np.linspace(0, T, N + 1)
    th = th0 + k * t
    X = np.stack([(np.sin(th) - math.sin(th0)) / k, -(np.cos(th) - math.cos(th0)) / k, np.ones(N + 1), th,
                  np.full(N + 1, d)], 1)
    tr = Trajectory(X, np.zeros((N, 2)), T, ModeSchedule.uniform(MotionMode.ACKERMANN, N))
    assert np.abs(kinematic_defects(tr, P)).max() < 1e-8


def test_zero_turn_drift_detected():
    N = 20
    X = np.zeros((N + 1, 5))
    X[:, 0], X[:, 1] = 5.0, 6.0
    X[:, 3] = np.linspace(0, 1.0, N + 1)
    sched = ModeSchedule.uniform(MotionMode.ZERO_TURN, N)
    R = np.full(N, 0.5)
    tr = Trajectory(X, np.zeros((N, 2)), 2.0, sched, R)
    assert np.abs(kinematic_defects(tr, P)).max() < 1e-12
    X[7, 0] += 0.1
    C = kinematic_defects(Trajectory(X, np.zeros((N, 2)), 2.0, sched, R), P)
    bad = np.argwhere(np.abs(C) > 1e-12)
    assert {tuple(b) for b in bad} == {(6, 0), (7, 0)}


def test_defect_jacobian_fd():
    rng = np.random.default_rng(0)
    sched = schedule_from_runs([(AK, 4, None), (DG, 4, 1), (ZT, 3, None), (AK, 4, None)])
    n = sched.n
    X = rng.normal(size=(n + 1, 5)) * [3, 3, 1, 1, 0.3]
    U = rng.normal(size=(n, 2))
    R = rng.normal(size=n) * 0.3
    T = 7.0
    C, J = _defects(X, U, R, T, sched, P.wheelbase, jac=True)
    lay = _Layout(n)
    z = lay.pack(X, U, R, T)
    eps = 1e-6
    worst = 0.0
    for k in range(n):
        for col in range(14):
            i = lay.local[k, col]
            zp, zm = z.copy(), z.copy()
            zp[i] += eps
            zm[i] -= eps
            fd = (_defects(*lay.unpack(zp), sched, P.wheelbase)[0][k] -
                  _defects(*lay.unpack(zm), sched, P.wheelbase)[0][k]) / (2 * eps)
            err = np.abs(fd - J[k, :, col]) / np.maximum(1e-6, np.maximum(np.abs(fd), np.abs(J[k, :, col])))
            worst = max(worst, float(err.max()))
    assert worst < 1e-5


# --- drive-over ----------------------------------------------------------------

def _drive_traj(v):
    X = np.zeros((3, 5))
    X[:, 0] = [0.0, 5.0, 10.0]
    X[:, 2] = v
    return Trajectory(X, np.zeros((2, 2)), 2.0, ModeSchedule.uniform(MotionMode.ACKERMANN, 2))


def test_drive_over_penalty_examples():
    iv = [DriveOverInterval(0, (4.0, -1.0, 6.0, 1.0), (1, 1))]
    assert drive_over_penalty(_drive_traj([9.0, 1.0, 9.0]), iv)[[0, 2]].tolist() == [0.0, 0.0]
    assert drive_over_penalty(_drive_traj([1.0, 1.5, 1.0]), iv)[1] == 0.0
    assert drive_over_penalty(_drive_traj([1.0, 2.5, 1.0]), iv)[1] == pytest.approx(0.5)
    assert chi_area([5.0, 0.0], [0.0, 0.0], iv).tolist() == [1.0, 0.0]


# --- solver -----------------------------------------------------------------------

def _fixed_point_problem():
    N, T = 40, 10.0
    X = np.zeros((N + 1, 5))
    X[:, 0] = np.linspace(10, 20, N + 1)
    X[:, 1] = 20.0
    X[:, 2] = 1.0
    warm = Trajectory(X, np.zeros((N, 2)), T, no_stop_schedule(AK, N))
    cor = [DrivingCorridor(x, 20.0, 2, 2, 2, 2) for x in X[:, 0]]
    return OcpProblem(warm, 0.0, 0.5, cor, cor, np.zeros(N + 1), [], X[0].copy(), X[-1].copy(), P,
                      np.ones(N + 1))


def test_solve_fixed_point():
    p = _fixed_point_problem()
    r = solve(p)
    assert r.cost <= r.warm_cost + 1e-9
    assert np.abs(r.trajectory.states - p.warm.states).max() < 1e-6
    assert abs(r.trajectory.t_f - p.warm.t_f) < 1e-6


def test_solve_boundary_outside_zero_box():
    p = _fixed_point_problem()
    p.corridors[-1] = DrivingCorridor(25.0, 25.0)
    with pytest.raises(OptimizationFailure):
        solve(p)


def test_solve_empty_map(straight):
    _, p = straight
    r = solve(p)
    assert r.cost <= r.warm_cost
    assert r.max_defect < 1e-4 and r.boundary_error < 1e-4
    X = r.trajectory.states
    for j, c in enumerate(p.corridors):
        assert c.left - 1e-6 <= X[j, 0] <= c.right + 1e-6 and c.down - 1e-6 <= X[j, 1] <= c.up + 1e-6


def test_solve_curved_path():
    s = scene(init=(8, 8, 0.3), goal=(28, 25, 2.0))
    p = build_problem(initial_path(s, policy="easy"), s, P)
    r = solve(p)
    assert r.cost <= r.warm_cost and r.max_defect < 1e-4 and r.boundary_error < 1e-4
    merits = [h["merit"] for h in r.log]
    assert merits


def test_drive_over_speeds_respected():
    s = scene([StaticObstacle(box_polygon(19, 17, 20, 23), ObstacleAttribute(ObstacleKind.DRIVE_OVER, 0.05))])
    p = build_problem(initial_path(s, policy="easy"), s, P)
    r = solve(p)
    X = r.trajectory.states
    chi = chi_area(X[:, 0], X[:, 1], p.drive_over)
    assert chi.any()
    v = X[chi > 0, 2] * np.where(p.directions[chi > 0] == 0, 1, p.directions[chi > 0])
    assert np.all((v >= 0.5 - 1e-4) & (v <= 2.0 + 1e-4))


def test_lagrangian_gradient_fd(straight):
    _, p = straight
    rng = np.random.default_rng(1)
    lay = _Layout(p.n)
    w = p.warm
    z = lay.pack(w.states, w.controls, w.yaw_rates, w.t_f) + rng.normal(scale=1e-2, size=lay.nz)
    lam = rng.normal(size=(p.n, 5))
    _, g = augmented_lagrangian(z, lay, p, lam, 10.0)
    worst = 0.0
    for i in rng.choice(lay.nz, 50, replace=False):
        h = 1e-6
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        fd = (augmented_lagrangian(zp, lay, p, lam, 10.0, grad=False) -
              augmented_lagrangian(zm, lay, p, lam, 10.0, grad=False)) / (2 * h)
        worst = max(worst, abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-6))
    assert worst < 1e-4


def test_exports(straight, tmp_path):
    _, p = straight
    r = solve(p)
    r.trajectory.to_csv(tmp_path / "t.csv")
    write_solver_log(r, tmp_path / "log.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,x,y,theta,v,delta,a,omega_delta,mode" and len(lines) == 202
    assert (tmp_path / "log.csv").read_text().startswith("outer,merit")


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 5)), np.zeros((2, 2)), 0.0, ModeSchedule.uniform(MotionMode.ACKERMANN, 2))
