import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wisplan.corridor import (DIRECTIONS, CorridorError, DegenerateCovarianceError, DrivingCorridor, RiskFieldParams,
                              _Convex, corridor_constraints, corridor_for_point, cumulative_risk_potential,
                              edge_samples, expand_corridor, forecast, mahalanobis, position_variance,
                              predict_pedestrian, risk_magnitude, risk_value, shrink_corridor)
from wisplan.geometry import VehicleParams, box_polygon, points_in_polygon
from wisplan.kinematics import VehicleState
from wisplan.scenario import PedestrianTrack, Scenario

P = VehicleParams()
WS = (0.0, 0.0, 40.0, 40.0)
OPEN = (0.0, 0.0, 40.0, 40.0)


def ped(x, y, vx=0.0, vy=0.0, ax=0.0, ay=0.0, **kw):
    return PedestrianTrack(x, y, vx, vy, ax, ay, **kw)


# --- corridor expansion -----------------------------------------------------

def test_empty_map_reaches_workspace():
    s = Scenario(WS, (), (), VehicleState(5, 5), VehicleState(30, 30))
    c = corridor_for_point((20.0, 20.0), s, P)
    assert c.bounds == (0.0, 0.0, 40.0, 40.0)


def test_wall_above_schedule():
    wall = _Convex(box_polygon(10, 21.3, 30, 22).vertices)
    c = expand_corridor((20.0, 20.0), [wall], OPEN, initial_step=0.5)
    assert 1.25 <= c.l_up < 1.3
    # ray-cast oracle: distance to the wall straight up
    assert c.up < 21.3


def test_seed_inside_obstacle():
    wall = _Convex(box_polygon(19, 19, 21, 21).vertices)
    with pytest.raises(CorridorError):
        expand_corridor((20.0, 20.0), [wall], OPEN)


@pytest.mark.parametrize("seed", range(5))
def test_boxes_clear_of_obstacles(seed):
    rng = np.random.default_rng(seed)
    polys = [box_polygon(x, y, x + w, y + h) for x, y, w, h in
             zip(rng.uniform(0, 35, 8), rng.uniform(0, 35, 8), rng.uniform(1, 5, 8), rng.uniform(1, 5, 8))]
    obs = [_Convex(p.vertices) for p in polys]
    done = 0
    while done < 10:
        p = rng.uniform(0, 40, 2)
        if any(points_in_polygon(p[None, :], q).any() for q in polys):
            continue
        c = expand_corridor(p, obs, OPEN)
        pts = np.stack([rng.uniform(c.left, c.right, 1000), rng.uniform(c.down, c.up, 1000)], 1)
        # strict interior sampling: boundary contact is allowed
        for q in polys:
            assert not points_in_polygon(pts, q, tol=-1e-9).any()
        assert c.contains(*p)
        done += 1


def test_corridor_lengths_nonnegative():
    with pytest.raises(ValueError):
        DrivingCorridor(0, 0, l_up=-0.1)


def test_constraints_unit_box():
    c = DrivingCorridor(0.0, 0.0, 0.5, 0.5, 0.5, 0.5)
    assert corridor_constraints(c) == ((-0.5, 0.5), (-0.5, 0.5))


def test_constraints_zero_box():
    c = DrivingCorridor(3.0, 4.0)
    assert corridor_constraints(c) == ((3.0, 3.0), (4.0, 4.0))


def test_constraints_arithmetic():
    c = DrivingCorridor(3.0, 4.0, l_up=1.5, l_down=0.25, l_left=2.0, l_right=0.75)
    (xl, xr), (yd, yu) = corridor_constraints(c)
    assert (xl, xr, yd, yu) == (3.0 - 2.0, 3.0 + 0.75, 4.0 - 0.25, 4.0 + 1.5)


# --- pedestrian prediction ----------------------------------------------------

def test_predict_linear():
    assert predict_pedestrian(ped(2.0, 1.0, 1.0, 0.0), 3, 1.0) == (5.0, 1.0)


def test_predict_k_zero():
    assert predict_pedestrian(ped(2.0, 1.0, 1.0, 0.5, 0.3, 0.1), 0, 0.2) == (2.0, 1.0)


def test_predict_matches_recurrence():
    t = ped(0.0, 0.0, 1.0, 0.0, 0.2, 0.0)
    x, v = np.zeros(2), np.array([1.0, 0.0])
    a, dt = np.array([0.2, 0.0]), 0.5
    for _ in range(4):
        x, v = x + v * dt + 0.5 * a * dt * dt, v + a * dt
    assert np.allclose(predict_pedestrian(t, 4, dt), x, rtol=0, atol=1e-12)


def test_variance_k_zero():
    t = ped(0, 0, sigma_x2=0.3, sigma_y2=0.2)
    assert np.array_equal(position_variance(t, 0, 0.2), np.diag([0.3, 0.2]))


def test_variance_all_zero():
    t = ped(0, 0, sigma_x2=0, sigma_y2=0, sigma_vx2=0, sigma_vy2=0, sigma_ax2=(0,), sigma_ay2=(0,))
    for k in range(6):
        assert not position_variance(t, k, 0.2).any()


def test_variance_summation_oracle():
    sx, svx, sax, dt, k = 0.1, 0.05, 0.02, 0.2, 5
    t = ped(0, 0, sigma_x2=sx ** 2, sigma_y2=sx ** 2, sigma_vx2=svx ** 2, sigma_vy2=svx ** 2,
            sigma_ax2=(sax ** 2,), sigma_ay2=(sax ** 2,))
    want = sx ** 2
    for _ in range(1, k + 1):
        want += dt ** 2 * (svx ** 2 + sax ** 2 * dt ** 2) + sax ** 2 * dt ** 4 / 4
    D = position_variance(t, k, dt)
    assert D[0, 0] == pytest.approx(want, rel=1e-14) and D[1, 1] == pytest.approx(want, rel=1e-14)
    f = forecast(t, k, dt)
    assert f.variances[k, 0] == pytest.approx(want, rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.lists(st.floats(0, 1), min_size=1, max_size=5), st.floats(0.01, 1))
def test_variance_monotone(s0, sv, sa, dt):
    t = ped(0, 0, sigma_x2=s0, sigma_y2=s0, sigma_vx2=sv, sigma_vy2=sv, sigma_ax2=tuple(sa), sigma_ay2=tuple(sa))
    v = [position_variance(t, k, dt)[0, 0] for k in range(8)]
    assert all(b >= a for a, b in zip(v, v[1:]))


# --- Mahalanobis and risk -----------------------------------------------------

def test_mahalanobis_examples():
    assert mahalanobis((3.0, 4.0), (0.0, 0.0), np.eye(2)) == pytest.approx(5.0)
    assert mahalanobis((1.0, 1.0), (1.0, 1.0), np.eye(2)) == 0.0
    assert mahalanobis((2.0, 0.0), (0.0, 0.0), np.diag([4.0, 1.0])) == pytest.approx(1.0)
    with pytest.raises(DegenerateCovarianceError):
        mahalanobis((1.0, 0.0), (0.0, 0.0), np.diag([1.0, 0.0]))


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 3), st.floats(0.1, 3), st.floats(0.01, 100))
def test_mahalanobis_scaling(x, y, a, b, c):
    D = np.diag([a, b])
    assert mahalanobis((x, y), (0, 0), c * D) == pytest.approx(mahalanobis((x, y), (0, 0), D) / math.sqrt(c),
                                                               rel=1e-12, abs=1e-12)


def test_risk_examples():
    rp = RiskFieldParams(alpha=1.0, beta=0.0, d_s=2.0)
    assert risk_magnitude(2.5, rp) == 0.0
    assert risk_magnitude(2.0, rp) == 0.0
    assert risk_magnitude(1.0, rp) == pytest.approx(0.25)
    assert risk_magnitude(0.0, rp) == 1e9


def test_risk_monotone_in_distance():
    d = np.linspace(0.01, 3.0, 300)
    u = risk_magnitude(d, RiskFieldParams())
    assert np.all(np.diff(u) <= 0)


def test_risk_value_max_over_pedestrians():
    rp = RiskFieldParams(beta=0.0)
    near, far = ped(1.0, 0.0), ped(2.0, 0.0)
    u = risk_value((0.0, 0.0), [far, near], 0, 0.1, rp)
    assert u == risk_value((0.0, 0.0), [near], 0, 0.1, rp) > risk_value((0.0, 0.0), [far], 0, 0.1, rp)


def test_params_validated():
    with pytest.raises(ValueError):
        RiskFieldParams(alpha=0)
    with pytest.raises(ValueError):
        RiskFieldParams(M=1)


# --- shrinking -------------------------------------------------------------

BOX = DrivingCorridor(20.0, 20.0, 3.0, 3.0, 3.0, 3.0)


def test_shrink_no_pedestrians():
    assert shrink_corridor(BOX, [], 0, RiskFieldParams()) == BOX


def test_shrink_saturates():
    rp = RiskFieldParams(alpha=1e6)
    # wide spread so the whole box lies within the safety distance
    c = shrink_corridor(BOX, [forecast(ped(20.0, 20.0, sigma_x2=25.0, sigma_y2=25.0), 5, 0.1)], 0, rp)
    assert all(c.length(d) == 0.0 for d in DIRECTIONS)


def test_shrink_only_upper_edge():
    rp = RiskFieldParams()
    t = ped(20.0, 23.6, sigma_x2=0.5, sigma_y2=0.5)
    c = shrink_corridor(BOX, [forecast(t, 3, 0.1)], 0, rp)
    assert c.l_up < BOX.l_up
    assert (c.l_down, c.l_left, c.l_right) == (BOX.l_down, BOX.l_left, BOX.l_right)
    # re-evaluate every boundary sample through the scalar risk path
    for d in DIRECTIONS:
        for q in edge_samples(c, d, rp.M):
            assert risk_value(q, [t], 0, 0.1, rp) <= rp.eps_threshold


def test_shrink_idempotent():
    rp = RiskFieldParams()
    f = [forecast(ped(23.0, 24.0), 3, 0.1)]
    c = shrink_corridor(BOX, f, 0, rp)
    assert shrink_corridor(c, f, 0, rp) == c


# --- cumulative risk potential --------------------------------------------------

def test_crp_no_pedestrians():
    assert cumulative_risk_potential(np.zeros((10, 2)), [], RiskFieldParams()) == 0.0


def test_crp_single_step():
    t = ped(0.0, 0.0, sigma_x2=0.5, sigma_y2=0.5, sigma_vx2=0, sigma_vy2=0, sigma_ax2=(0,), sigma_ay2=(0,))
    xy = np.full((8, 2), 30.0)
    xy[3] = (1.0, 0.0)
    assert cumulative_risk_potential(xy, [forecast(t, 7, 0.1)], RiskFieldParams()) == 1.0


def test_crp_double_sum_oracle():
    rp = RiskFieldParams()
    dt = 0.1
    peds = [ped(2.0, 0.0, -0.5, 0.2), ped(5.0, 1.0, 0.0, -0.8, 0.1, 0.0)]
    xy = np.stack([np.linspace(0, 6, 21), np.zeros(21)], 1)
    got = cumulative_risk_potential(xy, [forecast(p, 20, dt) for p in peds], rp)
    want = 0.0
    for p in peds:
        U = [risk_value(xy[k], [p], k, dt, rp) for k in range(1, 21)]
        m = max(U)
        if m > 0:
            want += sum(u / m for u in U)
    assert got == pytest.approx(want, rel=1e-12)
