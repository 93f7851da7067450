import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from wisplan import reeds_shepp as rs
from wisplan.geometry import VehicleParams, box_polygon, footprint_corners, rects_overlap_polygon, wheel_positions_array
from wisplan.kinematics import Action, MotionMode, VehicleState
from wisplan.planner import (CoarsePath, CostWeights, PlannerConfig, SearchNode, expand, f_crossable,
                             fourwis_hybrid_astar, heuristic, improved_hybrid_astar, initial_path, mode_switch_cost,
                             node_cost, obstacle_handling, planning_grid, step_cost, total_cost, traj_connect)
from wisplan.planner import Piece, SearchStats
from wisplan.scenario import ObstacleAttribute, ObstacleKind, Scenario, StaticObstacle
from wisplan.world import CROSS, DRIVE_OVER, World

P = VehicleParams()
W = CostWeights()
WS = (0.0, 0.0, 40.0, 40.0)
AK, DG, ZT = MotionMode.ACKERMANN, MotionMode.DIAGONAL, MotionMode.ZERO_TURN


def ob(x0, y0, x1, y1, kind=ObstacleKind.NON_TRAVERSABLE, h=1.0):
    return StaticObstacle(box_polygon(x0, y0, x1, y1), ObstacleAttribute(kind, h))


def scene(statics=(), init=(10, 20, 0), goal=(30, 20, 0)):
    return Scenario(WS, tuple(statics), (), VehicleState(init[0], init[1], 0, init[2], 0),
                    VehicleState(goal[0], goal[1], 0, goal[2], 0))


def node(mode=AK, v=0.0, th=0.0, d=0.0, x=0.0, y=0.0):
    return SearchNode(VehicleState(x, y, v, th, d), mode)


def sweep_hits_nontraversable(path: CoarsePath, s: Scenario, n=1000):
    polys = [o.shape for o in s.statics if o.kind == ObstacleKind.NON_TRAVERSABLE]
    for piece in path.pieces:
        corners = footprint_corners(piece.poses_at(np.linspace(0, 1, n), P), P)
        if any(rects_overlap_polygon(corners, q).any() for q in polys):
            return True
    return False


# --- expansion --------------------------------------------------------------

def test_expand_straight():
    c = expand(node(x=1.0, y=2.0), Action(AK, 1.0, 1, 0.0), P)
    assert (c.state.x, c.state.y, c.state.theta) == pytest.approx((2.0, 2.0, 0.0))
    assert c.state.v == 1.0 and c.mode == AK


def test_expand_zero_turn():
    c = expand(node(x=3.0, y=4.0, th=0.1), Action(ZT, math.pi / 2), P)
    assert (c.state.x, c.state.y) == (3.0, 4.0)
    assert c.state.theta == pytest.approx(0.1 + math.pi / 2)


def euler_arc(th0, delta, L, h=1e-4, midpoint=True):
    """Fixed-step Euler integration of the Ackermann model; ``midpoint`` uses the
    modified (midpoint) Euler step, otherwise plain forward Euler."""
    k = 2 * math.tan(delta) / P.wheelbase
    x, y, th = 0.0, 0.0, th0
    for _ in range(int(round(L / h))):
        tm = th + 0.5 * h * k if midpoint else th
        x, y, th = x + h * math.cos(tm), y + h * math.sin(tm), th + h * k
    return x, y, th


def test_expand_ackermann_matches_fine_euler():
    c = expand(node(th=0.4), Action(AK, 1.0, 1, 0.3), P)
    x, y, th = euler_arc(0.4, 0.3, 1.0)
    assert math.hypot(c.state.x - x, c.state.y - y) < 1e-5
    assert abs(c.state.theta - th) < 1e-6


def test_forward_euler_gap_is_its_own_error():
    # plain forward Euler is a left Riemann sum: its error is h/2 times the change of the heading vector
    c = expand(node(th=0.4), Action(AK, 1.0, 1, 0.55), P)
    x, y, _ = euler_arc(0.4, 0.55, 1.0, midpoint=False)
    bound = 0.5e-4 * 2 * math.sin(0.5 * abs(c.state.theta - 0.4))
    assert abs(math.hypot(c.state.x - x, c.state.y - y) - bound) < 1e-8


@pytest.mark.parametrize("act", [Action(AK, 1.0, -1, -0.55), Action(DG, 1.0, 1, math.pi / 4),
                                 Action(DG, 1.0, -1, -math.pi / 2)])
def test_expand_matches_ode(act):
    c = expand(node(th=-0.7), act, P)
    sgn = act.direction

    def rhs(t, s):
        if act.mode == AK:
            return [sgn * math.cos(s[2]), sgn * math.sin(s[2]), sgn * 2 * math.tan(act.delta) / P.wheelbase]
        return [sgn * math.cos(s[2] + act.delta), sgn * math.sin(s[2] + act.delta), 0.0]

    sol = solve_ivp(rhs, (0, act.amount), [0.0, 0.0, -0.7], method="DOP853", rtol=1e-12, atol=1e-13)
    assert math.hypot(c.state.x - sol.y[0, -1], c.state.y - sol.y[1, -1]) < 1e-5
    assert abs(c.state.theta - sol.y[2, -1]) < 1e-6


# --- costs ------------------------------------------------------------------

def test_node_cost_examples():
    assert node_cost(node(v=1.0, d=0.2), node(v=-1.0, d=0.2), W) == 2.0
    assert node_cost(node(v=1.0, d=0.1), node(v=1.0, d=0.1), W) == 0.0
    assert node_cost(node(ZT, th=0.0), node(ZT, th=0.5), W) == pytest.approx(0.25)


def test_mode_switch_cost_examples():
    assert mode_switch_cost(node(AK, d=0.2), node(ZT, th=0.5), W) == pytest.approx(0.14)
    assert mode_switch_cost(node(AK), node(DG), W) == 0.0
    assert mode_switch_cost(node(ZT), node(AK, d=0.4), W) == pytest.approx(0.28)
    with pytest.raises(ValueError):
        mode_switch_cost(node(AK), node(AK), W)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([AK, DG, ZT]), st.sampled_from([AK, DG, ZT]), st.floats(-2, 2), st.floats(-2, 2),
       st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(-4, 4), st.floats(-4, 4))
def test_costs_nonnegative(m1, m2, v1, v2, d1, d2, t1, t2):
    a, b = node(m1, v1, t1, d1), node(m2, v2, t2, d2)
    assert node_cost(a, b, W) >= 0
    if m1 != m2:
        assert mode_switch_cost(a, b, W) >= 0


def test_total_cost_same_mode():
    n = node(v=1.0)
    n.g = 3.5
    assert total_cost(n, 0.0) == 3.5


def test_mode_change_not_cheaper():
    root = node()
    same = expand(root, Action(AK, 1.0, 1, 0.0), P)
    other = expand(root, Action(DG, 1.0, 1, 0.0), P)
    same.g = step_cost(root, same, W)
    other.g = step_cost(root, other, W)
    assert total_cost(other, 1.0) >= total_cost(same, 1.0)


def test_total_cost_ledger_three_expansions():
    root = node()
    a = expand(root, Action(AK, 1.0, 1, 0.275), P)
    a.g = root.g + step_cost(root, a, W)
    b = expand(a, Action(ZT, math.pi / 8), P)
    b.g = a.g + step_cost(a, b, W)
    c = expand(b, Action(AK, 1.0, -1, 0.0), P)
    c.g = b.g + step_cost(b, c, W)
    # hand-summed ledger
    la = 1.0 + (1.0 * 1.0 + 0.275 * 0.5)                        # length, |dv| w_ra + |dd| w_ta
    lb = 0.0 + (math.pi / 8) * 0.5 + (0.2 * 0.275 + 0.2 * math.pi / 8)   # G zero-turn + I
    lc = 1.0 + (1.0 * 1.0 + 0.0) + (0.2 + 0.0)                  # v 0 -> -1, I_recover w_r3
    assert total_cost(c, 2.0) == pytest.approx(la + lb + lc + 2.0, abs=1e-12)


# --- heuristic --------------------------------------------------------------

def test_heuristic_at_goal_zero():
    assert heuristic((5.0, 5.0, 0.3), (5.0, 5.0, 0.3)) == pytest.approx(0.0, abs=1e-9)


def test_heuristic_collinear():
    assert heuristic((5.0, 5.0, 0.0), (12.0, 5.0, 0.0)) == pytest.approx(7.0)


def test_heuristic_walled_map_not_below_euclid():
    s = scene([ob(19, 5, 21, 35)])
    grid = planning_grid(s, PlannerConfig())
    h = heuristic((10.0, 20.0, 0.0), (30.0, 20.0, 0.0), grid)
    assert h >= 20.0
    # the wall forces a detour, so the grid term dominates
    assert h > heuristic((10.0, 20.0, 0.0), (30.0, 20.0, 0.0))


# --- connection -------------------------------------------------------------

def test_connect_same_pose():
    w = World(scene(), P)
    c = traj_connect((4.0, 4.0, 1.0), (4.0, 4.0, 1.0), w)
    assert c is not None and c.length == 0.0


def test_connect_aligned_straight():
    w = World(scene(), P)
    c = traj_connect((5.0, 5.0, 0.0), (12.0, 5.0, 0.0), w)
    assert c.length == pytest.approx(7.0)


def test_connect_rs_no_longer_than_brute_force():
    rng = np.random.default_rng(3)
    r = P.min_turn_radius
    for _ in range(20):
        a = (0.0, 0.0, 0.0)
        b = (rng.uniform(-6, 6), rng.uniform(-6, 6), rng.uniform(-math.pi, math.pi))
        best = rs.shortest_path(a, b, r).length
        for _, lens in rs.all_word_lengths(a, b, r):
            if np.all(np.isfinite(lens)):
                assert best <= float(np.sum(np.abs(lens))) + 1e-9


def test_connect_blocked_by_wall():
    w = World(scene([ob(14, 15, 15, 25)]), P)
    assert traj_connect((10.0, 20.0, 0.0), (20.0, 20.0, 0.0), w) is None


# --- crossability -----------------------------------------------------------

def _straight_poses(n=500):
    return np.stack([np.linspace(10, 20, n), np.full(n, 20.0), np.zeros(n)], 1)


def test_f_crossable_too_tall():
    o = ob(14, 19.9, 15, 20.1, ObstacleKind.CROSSABLE, P.ground_clearance)
    assert not f_crossable(_straight_poses(), o, P)


def test_f_crossable_far_obstacle():
    lo = ob(30, 30, 31, 31, ObstacleKind.CROSSABLE, 0.05)
    hi = ob(30, 30, 31, 31, ObstacleKind.CROSSABLE, 0.5)
    assert f_crossable(_straight_poses(), lo, P) and not f_crossable(_straight_poses(), hi, P)


def test_f_crossable_between_tracks():
    o = ob(14, 19.8, 15, 20.2, ObstacleKind.CROSSABLE, 0.05)
    poses = _straight_poses()
    assert f_crossable(poses, o, P)
    # independent sweep oracle: wheel discs of half the tire width never touch the box
    w = wheel_positions_array(poses, P).reshape(-1, 2)
    dx = np.maximum(np.maximum(14 - w[:, 0], w[:, 0] - 15), 0)
    dy = np.maximum(np.maximum(19.8 - w[:, 1], w[:, 1] - 20.2), 0)
    assert np.all(np.hypot(dx, dy) > 0.5 * P.tire_width)


def test_f_crossable_under_wheel():
    o = ob(14, 20.3, 15, 20.7, ObstacleKind.CROSSABLE, 0.05)
    assert not f_crossable(_straight_poses(), o, P)


# --- obstacle handling ------------------------------------------------------

def _piece():
    return Piece(AK, (10.0, 20.0, 0.0), 0.0, 10.0)


def test_handling_no_overlap():
    r = obstacle_handling(_piece(), World(scene(), P))
    assert r.ok and r.decisions == {}


def test_handling_nontraversable_fails():
    assert not obstacle_handling(_piece(), World(scene([ob(14, 19, 15, 21)]), P)).ok


def test_handling_wide_drive_over():
    r = obstacle_handling(_piece(), World(scene([ob(14, 18, 15, 22, ObstacleKind.DRIVE_OVER, 0.05)]), P))
    assert r.ok and r.decisions == {0: DRIVE_OVER}


def test_handling_narrow_crossable():
    r = obstacle_handling(_piece(), World(scene([ob(14, 19.8, 15, 20.2, ObstacleKind.CROSSABLE, 0.05)]), P))
    assert r.ok and r.decisions == {0: CROSS}


def test_handling_toggles():
    s = scene([ob(14, 18, 15, 22, ObstacleKind.DRIVE_OVER, 0.05)])
    assert not obstacle_handling(_piece(), World(s, P, drive_over=False)).ok
    s = scene([ob(14, 19.8, 15, 20.2, ObstacleKind.CROSSABLE, 0.05)])
    assert not obstacle_handling(_piece(), World(s, P, crossable=False)).ok


def test_zero_turn_over_obstacle_rejected():
    s = scene([ob(9.8, 19.8, 10.2, 20.2, ObstacleKind.CROSSABLE, 0.05)])
    assert not obstacle_handling(Piece(ZT, (10.0, 20.0, 0.0), 0.0, 0.5), World(s, P)).ok


# --- searches ---------------------------------------------------------------

def test_improved_direct_shortcut():
    s = scene()
    Q = [(10.0, 20.0, 0.0), (20.0, 20.0, 0.0), (30.0, 20.0, 0.0)]
    stats = SearchStats()
    seg, m = improved_hybrid_astar(0, Q[0], Q, s, stats=stats)
    assert m == 1 and seg.length == pytest.approx(10.0)
    assert stats.iterations == 0


def test_improved_skips_to_later_key_point():
    # a narrow lane: turning round to face q1 is impossible, q2 lies straight ahead
    s = scene([ob(0, 17.5, 40, 18.5), ob(0, 21.5, 40, 22.5)], init=(10, 20, 0), goal=(25, 20, 0))
    Q = [(10.0, 20.0, 0.0), (14.0, 20.0, math.pi), (25.0, 20.0, 0.0)]
    stats = SearchStats()
    seg, m = improved_hybrid_astar(0, Q[0], Q, s, stats=stats)
    assert m == 2 and stats.iterations == 1
    assert seg.end(P) == pytest.approx(Q[2], abs=1e-6)


def test_improved_walled_start_fails():
    s = scene([ob(5, 15, 15, 16), ob(5, 24, 15, 25), ob(5, 16, 6, 24), ob(14, 16, 15, 24)], init=(10, 20, 0))
    Q = [(10.0, 20.0, 0.0), (30.0, 20.0, 0.0)]
    stats = SearchStats()
    assert improved_hybrid_astar(0, Q[0], Q, s, stats=stats) is None
    assert stats.iterations <= 30


def test_fourwis_empty_map():
    s = scene(init=(8, 8, 0.3), goal=(28, 25, 2.0))
    path = fourwis_hybrid_astar(s.init, s.goal, s)
    lb = rs.shortest_path(s.init.pose, s.goal.pose, P.min_turn_radius).length
    assert path is not None and path.length <= 1.05 * lb
    assert path.end(P) == pytest.approx(s.goal.pose, abs=1e-6)


def test_fourwis_enclosed_goal_hits_cap():
    s = scene([ob(25, 15, 35, 16), ob(25, 24, 35, 25), ob(25, 16, 26, 24), ob(34, 16, 35, 24)])
    stats = SearchStats()
    assert fourwis_hybrid_astar(s.init, s.goal, s, stats=stats) is None
    assert stats.iterations == 150


def test_fourwis_same_pose():
    s = scene(goal=(10, 20, 0))
    assert fourwis_hybrid_astar(s.init, s.goal, s).length == 0.0


def test_initial_path_force_easy_is_direct():
    s = scene(init=(8, 8, 0.3), goal=(28, 25, 2.0))
    a = initial_path(s, policy="easy")
    b = fourwis_hybrid_astar(s.init, s.goal, s)
    assert a.pieces == b.pieces


def test_initial_path_force_hard_endpoints():
    s = scene(init=(8, 8, 0.3), goal=(28, 25, 2.0))
    path = initial_path(s, policy="hard")
    assert path.start() == pytest.approx(s.init.pose, abs=1e-6)
    assert path.end(P) == pytest.approx(s.goal.pose, abs=1e-6)


def test_initial_path_needs_policy_or_model():
    with pytest.raises(ValueError):
        initial_path(scene())


def _pocket():
    walls = [ob(14, 4, 15, 26), ob(15, 25, 30, 26), ob(15, 4, 30, 5)]
    return scene(walls, init=(8, 15, math.pi / 2), goal=(22, 15, math.pi))


def test_hard_branch_solves_pocket_where_direct_fails():
    s = _pocket()
    assert initial_path(s, policy="easy") is None
    path = initial_path(s, policy="hard")
    assert path is not None
    assert not sweep_hits_nontraversable(path, s)


def _mixed_scene():
    return scene([ob(16, 19.8, 17, 20.2, ObstacleKind.CROSSABLE, 0.05), ob(22, 14, 23, 26, ObstacleKind.DRIVE_OVER, 0.05),
                  ob(5, 26, 35, 27)], init=(8, 20, 0), goal=(32, 20, 0))


def test_path_decisions_recheck():
    s = _mixed_scene()
    path = initial_path(s, policy="easy")
    assert path is not None and not sweep_hits_nontraversable(path, s)
    dec = path.decisions()
    assert dec
    for piece in path.pieces:
        for i, d in piece.decisions:
            o = s.statics[i]
            if d == CROSS:
                assert f_crossable(piece.sample(0.02, P), o, P)
            else:
                assert d == DRIVE_OVER and o.kind == ObstacleKind.DRIVE_OVER


def test_search_deterministic():
    s = _pocket()
    a = initial_path(s, policy="hard")
    b = initial_path(s, policy="hard")
    assert a.pieces == b.pieces


def test_coarse_path_export(tmp_path):
    s = _mixed_scene()
    path = initial_path(s, policy="easy")
    path.to_csv(tmp_path / "c.csv", s, P)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "t_index,x,y,theta,v,delta,mode,decision"
    assert {ln.split(",")[-1] for ln in lines[1:]} >= {"none"}
    assert any(ln.endswith(("cross", "drive-over")) for ln in lines[1:])


def test_config_params_round_trip():
    cfg = PlannerConfig().set_params(crossable=False, max_iter_direct=10)
    assert cfg.get_params()["crossable"] is False and cfg.max_iter_direct == 10
