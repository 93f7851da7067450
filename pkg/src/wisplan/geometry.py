"""Planar primitives shared by the planners: convex polygons, visibility,
clothoids and the vehicle body."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq


class Point2(NamedTuple):
    x: float
    y: float


class Pose(NamedTuple):
    x: float
    y: float
    theta: float


def normalize_angle(a):
    """Wrap an angle (or array of angles) into (-pi, pi]."""
    if isinstance(a, (float, int)):
        w = math.fmod(a + math.pi, 2.0 * math.pi)
        if w < 0:
            w += 2.0 * math.pi
        w -= math.pi
        return math.pi if w <= -math.pi + 1e-12 else w
    w = np.mod(np.asarray(a, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    w = np.where(w <= -math.pi, w + 2.0 * math.pi, w)
    w = np.where(np.isclose(w, -math.pi, atol=1e-12), math.pi, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


class ConvexPolygon:
    """Closed, strictly convex polygon with counterclockwise vertices."""

    __slots__ = ("vertices", "_bbox")

    def __init__(self, vertices):
        v = np.array(vertices, dtype=float).reshape(-1, 2)
        if len(v) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("polygon vertices must be finite")
        if polygon_signed_area(v) < 0:
            v = v[::-1]
        if not _strictly_convex_ccw(v):
            raise ValueError("polygon is not strictly convex")
        v.setflags(write=False)
        self.vertices = v
        self._bbox = (v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max())

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return self._bbox

    @property
    def area(self) -> float:
        return polygon_signed_area(self.vertices)

    @property
    def centroid(self) -> Point2:
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        cross = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        a = cross.sum() / 2.0
        cx = ((v[:, 0] + w[:, 0]) * cross).sum() / (6.0 * a)
        cy = ((v[:, 1] + w[:, 1]) * cross).sum() / (6.0 * a)
        return Point2(float(cx), float(cy))

    def contains(self, p) -> bool:
        return bool(points_in_polygon(np.asarray(p, dtype=float).reshape(1, 2), self)[0])

    def __eq__(self, other):
        return isinstance(other, ConvexPolygon) and np.array_equal(self.vertices, other.vertices)

    def __hash__(self):
        return hash(self.vertices.tobytes())

    def __repr__(self):
        return f"ConvexPolygon({self.vertices.tolist()!r})"


def polygon_signed_area(v: np.ndarray) -> float:
    w = np.roll(v, -1, axis=0)
    return float(0.5 * np.sum(v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]))


def _strictly_convex_ccw(v: np.ndarray) -> bool:
    e = np.roll(v, -1, axis=0) - v
    if np.any(np.hypot(e[:, 0], e[:, 1]) <= 1e-12):
        return False
    f = np.roll(e, -1, axis=0)
    cross = e[:, 0] * f[:, 1] - e[:, 1] * f[:, 0]
    if not np.all(cross > 1e-12):
        return False
    # total turning of exactly one revolution rules out star-shaped windings
    turn = np.arctan2(cross, np.sum(e * f, axis=1)).sum()
    return abs(turn - 2.0 * math.pi) < 1e-6


def box_polygon(xmin: float, ymin: float, xmax: float, ymax: float) -> ConvexPolygon:
    return ConvexPolygon([(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)])


def points_in_polygon(pts: np.ndarray, poly: ConvexPolygon, tol: float = 0.0) -> np.ndarray:
    """Closed point-in-convex-polygon test for an (n, 2) array."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    v = poly.vertices
    e = np.roll(v, -1, axis=0) - v
    rel = pts[:, None, :] - v[None, :, :]
    cross = e[None, :, 0] * rel[:, :, 1] - e[None, :, 1] * rel[:, :, 0]
    return np.all(cross >= -tol * np.hypot(e[:, 0], e[:, 1])[None, :], axis=1)


def _orient(a, b, c) -> float:
    """Orientation determinant with an exact sign: near-degenerate cases
    (inside the floating-point error bound) are recomputed in rationals."""
    left = (b[0] - a[0]) * (c[1] - a[1])
    right = (b[1] - a[1]) * (c[0] - a[0])
    det = left - right
    if abs(det) > 3.4e-16 * (abs(left) + abs(right)) + 1e-290:
        return det
    F = Fraction
    ex = (F(b[0]) - F(a[0])) * (F(c[1]) - F(a[1])) - (F(b[1]) - F(a[1])) * (F(c[0]) - F(a[0]))
    return float((ex > 0) - (ex < 0))


def _contains_exact(poly: "ConvexPolygon", p) -> bool:
    v = poly.vertices
    n = len(v)
    return all(_orient(v[i], v[(i + 1) % n], p) >= 0 for i in range(n))


def _on_segment(a, b, p) -> bool:
    return (min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= p[1] <= max(a[1], b[1]))


def segments_intersect(a, b, c, d) -> bool:
    """Closed segment intersection, collinear overlap included."""
    d1 = _orient(c, d, a)
    d2 = _orient(c, d, b)
    d3 = _orient(a, b, c)
    d4 = _orient(a, b, d)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    if d1 == 0 and _on_segment(c, d, a):
        return True
    if d2 == 0 and _on_segment(c, d, b):
        return True
    if d3 == 0 and _on_segment(a, b, c):
        return True
    if d4 == 0 and _on_segment(a, b, d):
        return True
    return False


def segment_intersects_polygon(a, b, poly: ConvexPolygon) -> bool:
    """True iff the closed segment [a, b] meets the closed polygon region."""
    a = (float(a[0]), float(a[1]))
    b = (float(b[0]), float(b[1]))
    xmin, ymin, xmax, ymax = poly.bbox
    if (max(a[0], b[0]) < xmin or min(a[0], b[0]) > xmax
            or max(a[1], b[1]) < ymin or min(a[1], b[1]) > ymax):
        return False
    if _contains_exact(poly, a) or _contains_exact(poly, b):
        return True
    v = poly.vertices
    n = len(v)
    for i in range(n):
        if segments_intersect(a, b, v[i], v[(i + 1) % n]):
            return True
    return False


def is_visible(pa, pb, obstacles: Sequence[ConvexPolygon]) -> bool:
    """Whether the straight segment between two points avoids every obstacle."""
    return not any(segment_intersects_polygon(pa, pb, o) for o in obstacles)


# --- clothoids -------------------------------------------------------------

def default_curve_length(r_min: float) -> float:
    return 0.5 * math.pi * r_min


def _clothoid_heading(s: float, sharpness: float) -> float:
    return 0.5 * sharpness * s * s


def clothoid_point(start, r_min: float, l: float, l_curve: float | None = None,
                   turn: int = 1) -> Point2:
    """Position on a clothoid whose curvature grows linearly from zero to
    ``1/r_min`` over ``l_curve``, evaluated at arc length ``l``.

    ``turn`` selects left (+1) or right (-1) bending.
    """
    if l < 0:
        raise ValueError("arc length must be non-negative")
    if r_min <= 0:
        raise ValueError("r_min must be positive")
    if l_curve is None:
        l_curve = default_curve_length(r_min)
    x0, y0, th0 = float(start[0]), float(start[1]), float(start[2])
    if l == 0.0:
        return Point2(x0, y0)
    k = turn / (r_min * l_curve)
    cx = quad(lambda s: math.cos(th0 + _clothoid_heading(s, k)), 0.0, l, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    cy = quad(lambda s: math.sin(th0 + _clothoid_heading(s, k)), 0.0, l, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    return Point2(x0 + cx, y0 + cy)


def clothoid_heading(start, r_min: float, l: float, l_curve: float | None = None, turn: int = 1) -> float:
    if l_curve is None:
        l_curve = default_curve_length(r_min)
    return float(normalize_angle(start[2] + turn * l * l / (2.0 * r_min * l_curve)))


def _clothoid_polyline(start, r_min, l_curve, turn, n):
    s = np.linspace(0.0, l_curve, n)
    k = turn / (r_min * l_curve)
    th = start[2] + 0.5 * k * s * s
    ds = s[1] - s[0]
    c, sn = np.cos(th), np.sin(th)
    x = start[0] + np.concatenate([[0.0], np.cumsum(0.5 * (c[1:] + c[:-1]) * ds)])
    y = start[1] + np.concatenate([[0.0], np.cumsum(0.5 * (sn[1:] + sn[:-1]) * ds)])
    return s, x, y


def clothoid_intersection(pose1, pose2, r_min: float, l_curve: float | None = None,
                          region: tuple[float, float, float, float] | None = None):
    """Meeting point of two clothoids started at ``pose1`` and ``pose2``.

    Both bending directions are tried for each curve; the crossing with the
    smallest combined arc length wins. Crossings are bracketed on a polyline
    and then refined by bisection on the signed distance of curve 1 to the
    tangent line of curve 2. Returns ``(point, l1, l2, turn1, turn2)`` or None.
    """
    if l_curve is None:
        l_curve = default_curve_length(r_min)
    p1 = np.array(pose1[:2], dtype=float)
    p2 = np.array(pose2[:2], dtype=float)
    if np.hypot(*(p1 - p2)) < 1e-12:
        return Point2(float(p1[0]), float(p1[1])), 0.0, 0.0, 1, 1
    best = None
    n = 600
    for t1 in (1, -1):
        s1, x1, y1 = _clothoid_polyline(pose1, r_min, l_curve, t1, n)
        for t2 in (1, -1):
            s2, x2, y2 = _clothoid_polyline(pose2, r_min, l_curve, t2, n)
            for i, j in _polyline_crossings(x1, y1, x2, y2):
                sol = _refine_crossing(pose1, pose2, r_min, l_curve, t1, t2,
                                       (s1[i], s1[i + 1]), (s2[j], s2[j + 1]))
                if sol is None:
                    continue
                pt, l1, l2 = sol
                if region is not None:
                    xmin, ymin, xmax, ymax = region
                    if not (xmin - 1e-9 <= pt.x <= xmax + 1e-9 and ymin - 1e-9 <= pt.y <= ymax + 1e-9):
                        continue
                if best is None or l1 + l2 < best[1] + best[2]:
                    best = (pt, l1, l2, t1, t2)
    return best


def _polyline_crossings(x1, y1, x2, y2):
    a0 = np.stack([x1[:-1], y1[:-1]], 1)
    a1 = np.stack([x1[1:], y1[1:]], 1)
    b0 = np.stack([x2[:-1], y2[:-1]], 1)
    b1 = np.stack([x2[1:], y2[1:]], 1)
    # coarse bounding-box prefilter over all segment pairs
    amin = np.minimum(a0, a1)
    amax = np.maximum(a0, a1)
    bmin = np.minimum(b0, b1)
    bmax = np.maximum(b0, b1)
    ov = ((amin[:, None, 0] <= bmax[None, :, 0]) & (bmin[None, :, 0] <= amax[:, None, 0])
          & (amin[:, None, 1] <= bmax[None, :, 1]) & (bmin[None, :, 1] <= amax[:, None, 1]))
    out = []
    for i, j in zip(*np.nonzero(ov)):
        if segments_intersect(a0[i], a1[i], b0[j], b1[j]):
            out.append((int(i), int(j)))
    return out


def _refine_crossing(pose1, pose2, r_min, l_curve, t1, t2, br1, br2):
    """Bisection on both arc lengths of a bracketed polyline crossing."""
    def c1(l):
        return np.array(clothoid_point(pose1, r_min, l, l_curve, t1))

    def c2(l):
        return np.array(clothoid_point(pose2, r_min, l, l_curve, t2))

    lo2, hi2 = br2
    l1 = 0.5 * (br1[0] + br1[1])
    l2 = 0.5 * (lo2 + hi2)
    for _ in range(4):
        # l1 <- zero of signed distance from curve 1 to the chord of curve 2 near l2
        q = c2(l2)
        h = clothoid_heading(pose2, r_min, l2, l_curve, t2)
        nrm = np.array([-math.sin(h), math.cos(h)])

        def f1(l, q=q, nrm=nrm):
            return float(np.dot(c1(l) - q, nrm))

        lo, hi = br1
        lo, hi = max(0.0, lo - 0.02 * l_curve), min(l_curve, hi + 0.02 * l_curve)
        if f1(lo) * f1(hi) > 0:
            return None
        l1 = brentq(f1, lo, hi, xtol=1e-13)
        p = c1(l1)
        h1 = clothoid_heading(pose1, r_min, l1, l_curve, t1)
        nrm1 = np.array([-math.sin(h1), math.cos(h1)])

        def f2(l, p=p, nrm1=nrm1):
            return float(np.dot(c2(l) - p, nrm1))

        lo, hi = max(0.0, br2[0] - 0.02 * l_curve), min(l_curve, br2[1] + 0.02 * l_curve)
        if f2(lo) * f2(hi) > 0:
            return None
        l2 = brentq(f2, lo, hi, xtol=1e-13)
    p1 = c1(l1)
    p2 = c2(l2)
    if np.hypot(*(p1 - p2)) > 1e-7:
        return None
    m = 0.5 * (p1 + p2)
    return Point2(float(m[0]), float(m[1])), float(l1), float(l2)


# --- vehicle body -----------------------------------------------------------

@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.8
    front_overhang: float = 0.929
    rear_overhang: float = 1.942
    width: float = 0.96
    ground_clearance: float = 0.18
    max_steer: float = 0.55
    yaw_rate: float = 0.5
    tire_width: float = 0.1

    def __post_init__(self):
        for name in ("wheelbase", "front_overhang", "rear_overhang", "width", "max_steer", "yaw_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.ground_clearance < 0:
            raise ValueError("ground_clearance must be non-negative")

    @property
    def length(self) -> float:
        return self.wheelbase + self.front_overhang + self.rear_overhang

    @property
    def track(self) -> float:
        return self.width

    @property
    def min_turn_radius(self) -> float:
        # Ackermann yaw rate is 2 v tan(delta) / L_w, hence the factor 2
        return self.wheelbase / (2.0 * math.tan(self.max_steer))

    @property
    def body_extent(self) -> tuple[float, float, float, float]:
        """(rear, front, right, left) offsets from the reference point."""
        half = 0.5 * self.wheelbase
        return (-(half + self.rear_overhang), half + self.front_overhang, -0.5 * self.width, 0.5 * self.width)

    @property
    def circumradius(self) -> float:
        rear, front, right, left = self.body_extent
        return math.hypot(max(-rear, front), left)


def footprint_corners(poses: np.ndarray, params: VehicleParams) -> np.ndarray:
    """Body rectangle corners for an (n, 3) array of poses -> (n, 4, 2), CCW."""
    poses = np.asarray(poses, dtype=float).reshape(-1, 3)
    rear, front, right, left = params.body_extent
    local = np.array([[rear, right], [front, right], [front, left], [rear, left]])
    c, s = np.cos(poses[:, 2]), np.sin(poses[:, 2])
    x = poses[:, None, 0] + c[:, None] * local[None, :, 0] - s[:, None] * local[None, :, 1]
    y = poses[:, None, 1] + s[:, None] * local[None, :, 0] + c[:, None] * local[None, :, 1]
    return np.stack([x, y], axis=-1)


def vehicle_footprint(state, params: VehicleParams) -> ConvexPolygon:
    pose = np.array([state[0], state[1], _heading_of(state)])
    return ConvexPolygon(footprint_corners(pose, params)[0])


def _heading_of(state) -> float:
    if hasattr(state, "theta"):
        return float(state.theta)
    return float(state[2])


def wheel_positions_array(poses: np.ndarray, params: VehicleParams) -> np.ndarray:
    """Wheel contact points for (n, 3) poses -> (n, 4, 2).

    Order: rear-right, front-right, front-left, rear-left.
    """
    poses = np.asarray(poses, dtype=float).reshape(-1, 3)
    h = 0.5 * params.wheelbase
    t = 0.5 * params.track
    local = np.array([[-h, -t], [h, -t], [h, t], [-h, t]])
    c, s = np.cos(poses[:, 2]), np.sin(poses[:, 2])
    x = poses[:, None, 0] + c[:, None] * local[None, :, 0] - s[:, None] * local[None, :, 1]
    y = poses[:, None, 1] + s[:, None] * local[None, :, 0] + c[:, None] * local[None, :, 1]
    return np.stack([x, y], axis=-1)


def wheel_positions(state, params: VehicleParams) -> list[Point2]:
    pose = np.array([state[0], state[1], _heading_of(state)])
    return [Point2(float(p[0]), float(p[1])) for p in wheel_positions_array(pose, params)[0]]


# --- batched polygon overlap --------------------------------------------------

def rects_overlap_polygon(corners: np.ndarray, poly: ConvexPolygon) -> np.ndarray:
    """Closed separating-axis test of (n, 4, 2) rectangles against one polygon."""
    corners = np.asarray(corners, dtype=float)
    n = len(corners)
    if n == 0:
        return np.zeros(0, dtype=bool)
    v = poly.vertices
    xmin, ymin, xmax, ymax = poly.bbox
    hit = ((corners[:, :, 0].max(1) >= xmin) & (corners[:, :, 0].min(1) <= xmax)
           & (corners[:, :, 1].max(1) >= ymin) & (corners[:, :, 1].min(1) <= ymax))
    idx = np.nonzero(hit)[0]
    if len(idx) == 0:
        return hit
    c = corners[idx]
    e = np.roll(v, -1, axis=0) - v
    axes_p = np.stack([e[:, 1], -e[:, 0]], axis=1)          # outward normals, (m, 2)
    pc = np.einsum("nkd,md->nkm", c, axes_p)                 # (n', 4, m)
    pv = v @ axes_p.T                                         # (m_v, m)
    sep = (pc.min(1) > pv.max(0)[None, :]) | (pc.max(1) < pv.min(0)[None, :])
    ok = ~np.any(sep, axis=1)
    ax_r = np.stack([c[:, 1] - c[:, 0], c[:, 3] - c[:, 0]], axis=1)  # (n', 2, 2)
    rc = np.einsum("nkd,nad->nka", c, ax_r)
    rv = np.einsum("kd,nad->nka", v, ax_r)
    sep_r = (rc.min(1) > rv.max(1)) | (rc.max(1) < rv.min(1))
    ok &= ~np.any(sep_r, axis=1)
    hit[idx] = ok
    return hit


def discs_overlap_polygon(centers: np.ndarray, radius: float, poly: ConvexPolygon) -> np.ndarray:
    """Closed disc/polygon overlap for (n, 2) centers."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    return point_polygon_distance(centers, poly) <= radius


def point_polygon_distance(pts: np.ndarray, poly: ConvexPolygon) -> np.ndarray:
    """Euclidean distance from points to a closed polygon (zero inside)."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    v = poly.vertices
    w = np.roll(v, -1, axis=0)
    e = w - v
    rel = pts[:, None, :] - v[None, :, :]
    t = np.clip(np.einsum("nmd,md->nm", rel, e) / np.einsum("md,md->m", e, e)[None, :], 0.0, 1.0)
    proj = v[None, :, :] + t[:, :, None] * e[None, :, :]
    d = np.hypot(pts[:, None, 0] - proj[:, :, 0], pts[:, None, 1] - proj[:, :, 1]).min(axis=1)
    inside = points_in_polygon(pts, poly)
    return np.where(inside, 0.0, d)
