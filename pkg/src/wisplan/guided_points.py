"""Guided points: grid A*, farthest-visible reduction, local rectangles,
gear-shift point and orientation assignment."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .corridor import CorridorError, DrivingCorridor, configuration_obstacles, expand_corridor
from .geometry import (ConvexPolygon, Point2, VehicleParams, clothoid_heading, clothoid_intersection,
                       is_visible, normalize_angle)
from .grid import OccupancyGrid, astar_nodes, occupancy_grid
from .scenario import ObstacleKind, Scenario, pose_is_free

log = logging.getLogger(__name__)

# local rectangles stay local: each direction grows at most this far
RECT_MAX_LENGTH = 5.0


class GuidedPoint(NamedTuple):
    x: float
    y: float
    theta: float


@dataclass
class KeyPointSet:
    """Q = (Xs, g_1 .. g_N, Xf) as poses; ``gear_shift_index`` indexes Q."""
    points: list
    gear_shift_index: int | None = None

    def __len__(self):
        return len(self.points)

    def poses(self) -> list[tuple[float, float, float]]:
        return [(float(p[0]), float(p[1]), float(p[2])) for p in self.points]

    @property
    def guided(self) -> list:
        return self.points[1:-1]

    def to_dict(self) -> dict:
        return {"format": "wisplan-keypoints/1",
                "points": [{"x": p[0], "y": p[1], "theta": p[2]} for p in self.poses()],
                "gear_shift_index": self.gear_shift_index}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "KeyPointSet":
        with open(path) as fh:
            d = json.load(fh)
        return cls([(float(p["x"]), float(p["y"]), float(p["theta"])) for p in d["points"]],
                   d.get("gear_shift_index"))


def blocking_polygons(s: Scenario) -> list[ConvexPolygon]:
    return [o.shape for o in s.statics if o.kind == ObstacleKind.NON_TRAVERSABLE]


def astar_grid(s: Scenario, resolution: float = 0.5, params: VehicleParams = VehicleParams(),
               grid: OccupancyGrid | None = None) -> list[Point2]:
    """Shortest 8-connected grid path from the initial to the goal position.

    Cells touching a NonTraversable obstacle grown by half the vehicle width
    are blocked. The start and goal nodes are always treated as free since
    their poses are known to be collision-free.
    """
    grid = grid or occupancy_grid(s.workspace, blocking_polygons(s), resolution, 0.5 * params.width)
    a = grid.node_of(s.init.x, s.init.y)
    b = grid.node_of(s.goal.x, s.goal.y)
    blocked = grid.blocked.copy()
    blocked[a[1], a[0]] = False
    blocked[b[1], b[0]] = False
    nodes = astar_nodes(OccupancyGrid(grid.origin, grid.resolution, blocked), a, b)
    return [grid.center(i, j) for i, j in nodes]


def consecutive_farthest_visible(P: Sequence, obstacles: Sequence[ConvexPolygon]) -> list[Point2]:
    """Greedy chain of farthest visible waypoints along P.

    From the current element, later waypoints are scanned in order; the scan
    stops at the first one that is not visible and its predecessor joins the
    set. The final waypoint joins once it is visible.
    """
    P = [Point2(float(p[0]), float(p[1])) for p in P]
    N = len(P)
    if N < 2:
        raise ValueError("path needs at least two waypoints")
    V = [P[0]]
    k = 0
    while k < N - 1:
        pf = P[k]
        for j in range(k + 1, N):
            if not is_visible(pf, P[j], obstacles):
                # adjacency keeps progress even when the next point is hidden
                nxt = max(j - 1, k + 1)
                V.append(P[nxt])
                k = nxt
                break
            if j == N - 1:
                V.append(P[j])
                k = j
                break
    return V


def needs_gear_shift(alpha1: float, alpha2: float) -> bool:
    # tolerance absorbs cos(pi/2) != 0 in floating point
    return math.cos(alpha1) * math.cos(alpha2) <= 1e-12


def _angle_between(heading: float, direction: float) -> float:
    return abs(float(normalize_angle(heading - direction)))


def path_angles(s: Scenario, V: Sequence[Point2]) -> tuple[float, float]:
    """alpha1/alpha2 against the first and last segments of the reduced set."""
    if len(V) < 2:
        return 0.0, 0.0
    d1 = math.atan2(V[1].y - V[0].y, V[1].x - V[0].x)
    d2 = math.atan2(V[-1].y - V[-2].y, V[-1].x - V[-2].x)
    return _angle_between(s.init.theta, d1), _angle_between(s.goal.theta, d2)


def local_rectangles(V: Sequence, s: Scenario, params: VehicleParams = VehicleParams(),
                     initial_step: float = 0.5, max_length: float = RECT_MAX_LENGTH) -> list[DrivingCorridor]:
    """Adaptive box around each point; boxes keep half the vehicle width clear."""
    margin = 0.5 * params.width
    obs = configuration_obstacles(blocking_polygons(s), None, params, margin)
    xmin, ymin, xmax, ymax = s.workspace
    limits = (xmin + margin, ymin + margin, xmax - margin, ymax - margin)
    out = []
    for v in V:
        x = min(max(float(v[0]), limits[0]), limits[2])
        y = min(max(float(v[1]), limits[1]), limits[3])
        try:
            out.append(expand_corridor((x, y), obs, limits, initial_step=initial_step, max_length=max_length))
        except CorridorError:
            # seed within the clearance margin: a degenerate box at the point
            out.append(DrivingCorridor(x, y, 0.0, 0.0, 0.0, 0.0))
    return out


def _box_path_crossings(box: DrivingCorridor, P: Sequence) -> tuple[int, Point2, int, Point2] | None:
    """Entry and exit of the polyline P through the box.

    Returns (segment index, point) for the first entry and the last exit; the
    path endpoints stand in when they lie inside.
    """
    xl, yd, xr, yu = box.left, box.down, box.right, box.up

    def inside(p):
        return xl <= p[0] <= xr and yd <= p[1] <= yu

    def clip(a, b):
        # Liang-Barsky parameters of segment a->b inside the box
        t0, t1 = 0.0, 1.0
        dx, dy = b[0] - a[0], b[1] - a[1]
        for pp, q in ((-dx, a[0] - xl), (dx, xr - a[0]), (-dy, a[1] - yd), (dy, yu - a[1])):
            if pp == 0:
                if q < 0:
                    return None
            else:
                t = q / pp
                if pp < 0:
                    t0 = max(t0, t)
                else:
                    t1 = min(t1, t)
        return (t0, t1) if t0 <= t1 else None

    entry = exit_ = None
    for i in range(len(P) - 1):
        a, b = P[i], P[i + 1]
        c = clip(a, b)
        if c is None:
            continue
        pa = Point2(a[0] + c[0] * (b[0] - a[0]), a[1] + c[0] * (b[1] - a[1]))
        pb = Point2(a[0] + c[1] * (b[0] - a[0]), a[1] + c[1] * (b[1] - a[1]))
        if entry is None:
            entry = (i, pa)
        exit_ = (i, pb)
    if entry is None:
        return None
    if inside(P[0]):
        entry = (0, Point2(float(P[0][0]), float(P[0][1])))
    if inside(P[-1]):
        exit_ = (len(P) - 2, Point2(float(P[-1][0]), float(P[-1][1])))
    return entry[0], entry[1], exit_[0], exit_[1]


def _segment_heading(P, i) -> float:
    a, b = P[i], P[min(i + 1, len(P) - 1)]
    if a[0] == b[0] and a[1] == b[1]:
        return 0.0
    return math.atan2(b[1] - a[1], b[0] - a[0])


def gear_shift_point(D_max: DrivingCorridor, P: Sequence, params: VehicleParams = VehicleParams(),
                     reverse_first: bool = False) -> tuple[GuidedPoint, bool]:
    """Gear-shifting pose inside the largest rectangle.

    Clothoids start at the path's entry into and exit from the rectangle,
    heading along and against the path respectively. Returns the pose and a
    flag that is False when the rectangle-center fallback was used.
    """
    cr = _box_path_crossings(D_max, P)
    cx = 0.5 * (D_max.left + D_max.right)
    cy = 0.5 * (D_max.down + D_max.up)
    if cr is None or math.hypot(cr[1].x - cr[3].x, cr[1].y - cr[3].y) < 1e-9:
        log.info("gear shift: path meets the rectangle fewer than twice, using its center")
        th = _segment_heading(P, 0) if cr is None else _segment_heading(P, cr[0])
        return GuidedPoint(cx, cy, float(normalize_angle(th + (math.pi if reverse_first else 0.0)))), False
    i1, p1, i2, p2 = cr
    th1 = _segment_heading(P, i1)
    th2 = _segment_heading(P, i2) + math.pi
    pose1 = (p1.x, p1.y, th1)
    pose2 = (p2.x, p2.y, th2)
    sol = clothoid_intersection(pose1, pose2, params.min_turn_radius,
                                region=(D_max.left, D_max.down, D_max.right, D_max.up))
    if sol is None:
        log.info("gear shift: clothoids do not meet inside the rectangle, using its center")
        return GuidedPoint(cx, cy, float(normalize_angle(th1 + (math.pi if reverse_first else 0.0)))), False
    pt, l1, _, t1, _ = sol
    th = clothoid_heading(pose1, params.min_turn_radius, l1, turn=t1)
    if reverse_first:
        th += math.pi
    return GuidedPoint(pt.x, pt.y, float(normalize_angle(th))), True


def orientation_case(alpha1: float, alpha2: float) -> int:
    c1, c2 = math.cos(alpha1), math.cos(alpha2)
    if c1 > 0 and c2 > 0:
        return 1
    if c1 < 0 and c2 < 0:
        return 2
    if c1 >= 0:
        return 3
    return 4


def assign_orientations(points: Sequence, alpha1: float, alpha2: float, gear_index: int | None = None,
                        final=None) -> list[GuidedPoint]:
    """Headings of the guided points from the four entry/exit cases.

    ``points`` are ordered along the path and include the gear-shifting point
    at ``gear_index`` when there is one; ``final`` stands in for g_{N+1}.
    """
    pts = [(float(p[0]), float(p[1])) for p in points]
    if final is not None:
        pts_next = pts[1:] + [(float(final[0]), float(final[1]))]
    else:
        pts_next = pts[1:] + [None]
    case = orientation_case(alpha1, alpha2)
    out = []
    prev = 0.0
    for i, (p, q) in enumerate(zip(pts, pts_next)):
        if case == 1:
            fwd = True
        elif case == 2:
            fwd = False
        else:
            first_leg = gear_index is None or i <= gear_index
            fwd = first_leg if case == 3 else not first_leg
        if q is None or (q[0] == p[0] and q[1] == p[1]):
            th = prev
        elif fwd:
            th = math.atan2(q[1] - p[1], q[0] - p[0])
        else:
            th = math.atan2(p[1] - q[1], p[0] - q[0])
        prev = th
        out.append(GuidedPoint(p[0], p[1], float(normalize_angle(th))))
    return out


def _snap_free(g: GuidedPoint, box: DrivingCorridor | None, s: Scenario, params: VehicleParams,
               resolution: float) -> GuidedPoint | None:
    if pose_is_free((g.x, g.y, 0.0, g.theta), s.statics, s.workspace, params):
        return g
    if box is None:
        return None
    xs = np.arange(math.ceil(box.left / resolution), math.floor(box.right / resolution) + 1) * resolution
    ys = np.arange(math.ceil(box.down / resolution), math.floor(box.up / resolution) + 1) * resolution
    if len(xs) == 0 or len(ys) == 0:
        return None
    X, Y = np.meshgrid(xs, ys)
    cand = np.stack([X.ravel(), Y.ravel()], 1)
    order = np.lexsort((cand[:, 0], cand[:, 1], np.hypot(cand[:, 0] - g.x, cand[:, 1] - g.y)))
    for c in cand[order]:
        if pose_is_free((c[0], c[1], 0.0, g.theta), s.statics, s.workspace, params):
            return GuidedPoint(float(c[0]), float(c[1]), g.theta)
    return None


def _arc_position(P: Sequence, p) -> float:
    """Arc-length coordinate of the path point nearest to p."""
    best, s_best, s = math.inf, 0.0, 0.0
    for i in range(len(P) - 1):
        a = np.array(P[i], dtype=float)
        b = np.array(P[i + 1], dtype=float)
        e = b - a
        L = float(np.hypot(*e))
        t = 0.0 if L == 0 else float(np.clip(np.dot(np.array(p[:2]) - a, e) / (L * L), 0.0, 1.0))
        d = float(np.hypot(*(a + t * e - np.array(p[:2]))))
        if d < best:
            best, s_best = d, s + t * L
        s += L
    return s_best


def generate_guided_points(s: Scenario, resolution: float = 0.5,
                           params: VehicleParams = VehicleParams()) -> KeyPointSet:
    """A* path -> farthest visible set -> rectangles -> gear shift -> headings -> Q."""
    P = astar_grid(s, resolution, params)
    Xs = (s.init.x, s.init.y, s.init.theta)
    Xf = (s.goal.x, s.goal.y, s.goal.theta)
    if len(P) < 2:
        return KeyPointSet([Xs, Xf])
    V = consecutive_farthest_visible(P, blocking_polygons(s))
    a1, a2 = path_angles(s, V)
    D = local_rectangles(V, s, params)
    interior = list(range(1, len(V) - 1))
    centers = [(0.5 * (D[k].left + D[k].right), 0.5 * (D[k].down + D[k].up)) for k in interior]
    boxes = [D[k] for k in interior]
    gear_index = None
    pg = None
    if needs_gear_shift(a1, a2):
        areas = [d.area for d in D]
        dmax = D[int(np.argmax(areas))]
        case = orientation_case(a1, a2)
        pg, _ = gear_shift_point(dmax, P, params, reverse_first=(case == 4))
        # place p_g among the centers by its position along the A* path
        sg = _arc_position(P, pg)
        pos = [_arc_position(P, c) for c in centers]
        gear_index = int(np.searchsorted(np.array(pos), sg, side="right"))
        centers.insert(gear_index, (pg.x, pg.y))
        boxes.insert(gear_index, dmax)
    G = assign_orientations(centers, a1, a2, gear_index, final=Xf[:2])
    if gear_index is not None:
        G[gear_index] = pg
    out = [Xs]
    gear_q = None
    for k, (g, box) in enumerate(zip(G, boxes)):
        snapped = _snap_free(g, box, s, params, resolution)
        if snapped is None:
            log.info("guided point %d has no free pose in its rectangle, dropped", k)
            continue
        if k == gear_index:
            gear_q = len(out)
        out.append(tuple(snapped))
    out.append(Xf)
    return KeyPointSet(out, gear_q)
