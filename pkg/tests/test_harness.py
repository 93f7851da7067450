import math

import numpy as np
import pytest

from wisplan.geometry import VehicleParams
from wisplan.harness import (EvaluationReport, RunConfig, RunResult, evaluate_batch, jerk_metrics, path_metrics,
                             render_svg, run_pipeline)
from wisplan.kinematics import MotionMode, VehicleState
from wisplan.ocp import ModeSchedule, Trajectory, solve, build_problem
from wisplan.planner import CoarsePath, Piece
from wisplan.scenario import PedestrianTrack, Scenario, generate_scenario

P = VehicleParams()
WS = (0.0, 0.0, 40.0, 40.0)


def traj_with(a, dt=1.0, states=None):
    n = len(a)
    X = np.zeros((n + 1, 5)) if states is None else states
    U = np.stack([np.asarray(a, dtype=float), np.zeros(n)], 1)
    return Trajectory(X, U, dt * n, ModeSchedule.uniform(MotionMode.ACKERMANN, n))


def test_jerk_constant():
    assert jerk_metrics(traj_with([0.7] * 6)) == (0.0, 0.0)


def test_jerk_alternating():
    assert jerk_metrics(traj_with([1, -1, 1, -1, 1])) == (2.0, 2.0)


def test_jerk_literal_oracle():
    rng = np.random.default_rng(0)
    a = rng.normal(size=30)
    t = traj_with(a, dt=0.2)
    diffs = [abs(a[k + 1] - a[k]) / 0.2 for k in range(len(a) - 1)]
    mx, av = jerk_metrics(t)
    assert mx == pytest.approx(max(diffs), rel=1e-12) and av == pytest.approx(sum(diffs) / len(diffs), rel=1e-12)


def test_jerk_needs_two_samples():
    with pytest.raises(ValueError):
        jerk_metrics(traj_with([1.0]))


def test_path_stationary():
    assert path_metrics(traj_with([0.0] * 4, dt=2.5)) == (0.0, 10.0)


def test_path_straight():
    X = np.zeros((101, 5))
    X[:, 0] = np.linspace(0, 10, 101)
    L, T = path_metrics(traj_with([0.0] * 100, dt=0.1, states=X))
    assert L == pytest.approx(10.0, rel=0.01) and T == pytest.approx(10.0, rel=0.01)


def test_path_zero_turn_only():
    s = Scenario(WS, (), (), VehicleState(20, 20, 0, 0, 0), VehicleState(20, 20, 0, math.pi / 2, 0))
    coarse = CoarsePath([Piece(MotionMode.ZERO_TURN, (20.0, 20.0, 0.0), 0.0, math.pi / 2)])
    r = solve(build_problem(coarse, s, P, risk_corridor=False))
    L, T = path_metrics(r.trajectory)
    assert L == pytest.approx(0.0, abs=1e-6)
    assert T == pytest.approx((math.pi / 2) / P.yaw_rate, rel=1e-4)


def test_run_config_policy():
    assert RunConfig().policy() is None
    assert RunConfig(guided_points=False).policy() == "easy"
    assert RunConfig(classifier="force-hard").policy() == "hard"
    with pytest.raises(ValueError):
        RunConfig(classifier="maybe")


def test_empty_batch_reports_na():
    rep = evaluate_batch([])
    assert rep.success_rate is None
    assert "# success_rate,n/a" in rep.to_text()


def test_single_solvable_batch():
    s = Scenario(WS, (), (), VehicleState(8, 8, 0, 0.3, 0), VehicleState(28, 25, 0, 2.0, 0))
    rep = evaluate_batch([s], RunConfig(classifier="force-easy"))
    assert rep.success_rate == 1.0
    r = rep.rows[0]
    assert r.length > 0 and r.traversal > 0 and r.comp_time > 0 and math.isnan(r.crp)


def test_aggregates_recomputed():
    rows = [RunResult(1, True, length=10.0, traversal=12.0, comp_time=1.0, max_jerk=1.0, avg_jerk=0.5, crp=2.0),
            RunResult(2, False, failure="corridor-failure"),
            RunResult(3, True, length=14.0, traversal=20.0, comp_time=3.0, max_jerk=2.0, avg_jerk=0.7)]
    rep = EvaluationReport(rows)
    assert rep.success_rate == pytest.approx(2 / 3)
    assert rep.mean("length") == 12.0 and rep.mean("comp_time") == 2.0
    assert rep.mean("crp") == 2.0
    assert rep.failures()["corridor-failure"] == 1
    text = rep.to_text()
    assert text.splitlines()[0].startswith("seed,success,failure")
    assert "# mean_path_length_m,12.000000" in text


def test_pipeline_with_pedestrian():
    ped = PedestrianTrack(20.0, 26.0, 0.0, -0.3)
    s = Scenario(WS, (), (ped,), VehicleState(8, 20, 0, 0, 0), VehicleState(32, 20, 0, 0, 0))
    r = run_pipeline(s, RunConfig(classifier="force-easy"))
    assert r.success
    assert r.crp >= 0 and r.min_ped_dist > 0


def test_render_scene_only():
    svg = render_svg(generate_scenario(3, 5))
    assert svg.startswith("<svg") and 'id="obstacles"' in svg and 'id="endpoints"' in svg
    assert 'id="trajectory"' not in svg


def test_render_full_stack_deterministic():
    s = generate_scenario(2, 5)
    r = run_pipeline(s, RunConfig(classifier="force-hard"), keep=True)
    if not r.success:
        pytest.skip("fixture scene did not solve")
    a = render_svg(s, r.solution.trajectory, r.problem.corridors, r.coarse)
    b = render_svg(s, r.solution.trajectory, r.problem.corridors, r.coarse)
    assert a == b
    for layer in ("obstacles", "corridors", "coarse-path", "trajectory", "endpoints", "legend"):
        assert f'id="{layer}"' in a


def test_render_unwritable(tmp_path):
    from wisplan.harness import save_svg
    with pytest.raises(OSError):
        save_svg("<svg/>", tmp_path / "missing" / "x.svg")
