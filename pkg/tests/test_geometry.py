import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from wisplan.geometry import (ConvexPolygon, VehicleParams, box_polygon, clothoid_intersection, clothoid_point,
                              default_curve_length, is_visible, normalize_angle, points_in_polygon,
                              segment_intersects_polygon, vehicle_footprint, wheel_positions)

P = VehicleParams()
UNIT = box_polygon(-0.5, -0.5, 0.5, 0.5)
coord = st.floats(-10, 10, allow_nan=False)


def test_polygon_rejects_nonconvex():
    with pytest.raises(ValueError):
        ConvexPolygon([(0, 0), (2, 0), (1, 0.2), (2, 2), (0, 2)])
    with pytest.raises(ValueError):
        ConvexPolygon([(0, 0), (1, 1)])


def test_polygon_orientation_normalised():
    p = ConvexPolygon([(0, 0), (0, 1), (1, 1), (1, 0)])
    assert p.area == pytest.approx(1.0)


def test_degenerate_segment_inside_square():
    assert segment_intersects_polygon((0, 0), (0, 0), UNIT)


def test_segment_above_square():
    assert not segment_intersects_polygon((-2, 5), (2, 5), UNIT)


def test_segment_through_square_matches_sampling():
    sq = ConvexPolygon([(-1, -1), (1, -1), (1, 1), (-1, 1)])
    a, b = np.array([-2.0, 0.0]), np.array([2.0, 0.0])
    t = np.linspace(0, 1, 1000)[:, None]
    oracle = bool(points_in_polygon(a + t * (b - a), sq).any())
    assert segment_intersects_polygon(a, b, sq) == oracle is True


def test_grazing_counts_as_hit():
    sq = box_polygon(0, 0, 1, 1)
    assert segment_intersects_polygon((-1, 1), (2, 1), sq)


def test_visibility_examples():
    assert is_visible((0, 0), (5, 0), [])
    assert is_visible((3, 3), (3, 3), [UNIT])
    blocker = ConvexPolygon([(1, -1), (2, -1), (2, 1), (1, 1)])
    assert not is_visible((0, 0), (4, 0), [blocker])


@settings(max_examples=200, deadline=None)
@given(coord, coord, coord, coord, st.floats(-3, 3), st.floats(-3, 3), st.floats(0.5, 3))
def test_visibility_symmetric_and_sound(ax, ay, bx, by, cx, cy, half):
    obs = [box_polygon(cx - half, cy - half, cx + half, cy + half)]
    v = is_visible((ax, ay), (bx, by), obs)
    assert v == is_visible((bx, by), (ax, ay), obs)
    if v:
        t = np.linspace(0, 1, 1000)[:, None]
        pts = np.array([ax, ay]) + t * (np.array([bx, by]) - np.array([ax, ay]))
        # sampled points carry rounding error, so only the interior shrunk by 1e-9 is checked
        inner = box_polygon(cx - half + 1e-9, cy - half + 1e-9, cx + half - 1e-9, cy + half - 1e-9)
        assert not points_in_polygon(pts, inner).any()


def test_clothoid_zero_length():
    assert clothoid_point((1.0, 2.0, 0.3), 3.0, 0.0) == (1.0, 2.0)


def test_clothoid_straight_limit():
    p = clothoid_point((0.0, 0.0, 0.0), 1e12, 2.0)
    assert p.x == pytest.approx(2.0, abs=1e-9)
    assert p.y == pytest.approx(0.0, abs=1e-9)


def test_clothoid_matches_ode():
    r, l = 5.0, 2.0
    lc = default_curve_length(r)
    sol = solve_ivp(lambda s, y: [math.cos(s * s / (2 * r * lc)), math.sin(s * s / (2 * r * lc))],
                    (0, l), [0.0, 0.0], method="DOP853", rtol=1e-12, atol=1e-13)
    p = clothoid_point((0.0, 0.0, 0.0), r, l)
    assert math.hypot(p.x - sol.y[0, -1], p.y - sol.y[1, -1]) < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 10), st.floats(0.0, 1.0), st.floats(-math.pi, math.pi))
def test_clothoid_chord_not_longer_than_arc(r, frac, th):
    l = frac * default_curve_length(r)
    p = clothoid_point((0.0, 0.0, th), r, l)
    assert math.hypot(p.x, p.y) <= l + 1e-9


def test_clothoid_intersection_symmetric():
    res = clothoid_intersection((-1.0, 0.0, math.pi / 2), (1.0, 0.0, math.pi / 2), 3.0)
    assert res is not None
    assert abs(res[0].x) < 1e-6


def test_clothoid_intersection_coincident():
    res = clothoid_intersection((1.0, 1.0, 0.0), (1.0, 1.0, 2.0), 3.0)
    assert res[0] == (1.0, 1.0) and res[1] == 0.0 and res[2] == 0.0


def _curve(pose, r, turn, n):
    lc = default_curve_length(r)
    s = np.linspace(0, lc, n)
    th = pose[2] + turn * s * s / (2 * r * lc)
    ds = s[1] - s[0]
    x = pose[0] + np.concatenate([[0], np.cumsum(0.5 * (np.cos(th[1:]) + np.cos(th[:-1])) * ds)])
    y = pose[1] + np.concatenate([[0], np.cumsum(0.5 * (np.sin(th[1:]) + np.sin(th[:-1])) * ds)])
    return np.stack([x, y], 1)


def _sweep(p1, p2, r, turns):
    best = (np.inf, None)
    for t1, t2 in turns:
        c1, c2 = _curve(p1, r, t1, 500), _curve(p2, r, t2, 500)
        d = np.linalg.norm(c1[:, None, :] - c2[None, :, :], axis=2)
        i, j = np.unravel_index(np.argmin(d), d.shape)
        if d[i, j] < best[0]:
            best = (d[i, j], 0.5 * (c1[i] + c2[j]))
    return best


def test_clothoid_intersection_grid_sweep():
    p1, p2, r = (-1.0, 0.0, math.pi / 2), (1.0, 0.0, math.pi / 2), 3.0
    pt, _, _, t1, t2 = clothoid_intersection(p1, p2, r)
    gap, near = _sweep(p1, p2, r, [(t1, t2)])
    assert gap < 2e-2
    assert math.hypot(pt.x - near[0], pt.y - near[1]) < 2e-2


def test_clothoid_no_crossing_returns_none():
    # with curvature ramping to 1/R_min over (pi/2) R_min each curve turns pi/4 only, and these two never meet
    p1, p2, r = (0.0, 0.0, 0.0), (4.0, 2.0, math.pi), 3.0
    assert clothoid_intersection(p1, p2, r) is None
    gap, _ = _sweep(p1, p2, r, [(a, b) for a in (1, -1) for b in (1, -1)])
    assert gap > 1e-3


def test_footprint_axis_aligned():
    v = vehicle_footprint((0.0, 0.0, 0.0), P).vertices
    assert v[:, 0].min() == pytest.approx(-(P.wheelbase / 2 + P.rear_overhang))
    assert v[:, 0].max() == pytest.approx(P.wheelbase / 2 + P.front_overhang)
    assert v[:, 1].min() == pytest.approx(-0.48)
    assert v[:, 1].max() == pytest.approx(0.48)


def test_footprint_rotation_pi_reflects():
    a = vehicle_footprint((0.0, 0.0, 0.0), P).vertices
    b = vehicle_footprint((0.0, 0.0, math.pi), P).vertices
    assert sorted(map(tuple, np.round(-a, 9))) == sorted(map(tuple, np.round(b, 9)))


def test_footprint_quarter_turn():
    a = vehicle_footprint((0.0, 0.0, 0.0), P).vertices
    b = vehicle_footprint((0.0, 0.0, math.pi / 2), P).vertices
    rot = a @ np.array([[0, 1], [-1, 0]])
    assert sorted(map(tuple, np.round(rot, 9))) == sorted(map(tuple, np.round(b, 9)))


@settings(max_examples=100, deadline=None)
@given(coord, coord, st.floats(-10, 10))
def test_footprint_area_invariant(x, y, th):
    area = (P.wheelbase + P.front_overhang + P.rear_overhang) * P.width
    assert vehicle_footprint((x, y, th), P).area == pytest.approx(area, rel=1e-12)


def test_wheels_axis_aligned():
    w = wheel_positions((0.0, 0.0, 0.0), P)
    got = sorted((round(p.x, 12), round(p.y, 12)) for p in w)
    h, t = P.wheelbase / 2, P.width / 2
    assert got == sorted([(-h, -t), (h, -t), (h, t), (-h, t)])


def test_wheels_translate():
    a = wheel_positions((0.0, 0.0, 0.4), P)
    b = wheel_positions((2.0, -3.0, 0.4), P)
    for p, q in zip(a, b):
        assert q.x - p.x == pytest.approx(2.0) and q.y - p.y == pytest.approx(-3.0)


def test_wheels_rotation_oracle():
    th = math.pi / 4
    R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    w0 = np.array(wheel_positions((0.0, 0.0, 0.0), P))
    w = np.array(wheel_positions((0.0, 0.0, th), P))
    assert np.allclose(w, w0 @ R.T, atol=1e-12)


@pytest.mark.parametrize("a", [0.0, math.pi, -math.pi, 3 * math.pi, 7.0, -7.0])
def test_normalize_angle_range(a):
    w = normalize_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-12)
    assert normalize_angle(np.array([a]))[0] == pytest.approx(w)
