"""Swept-body collision checks and the attribute-aware obstacle hierarchy."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt

from .geometry import VehicleParams, point_polygon_distance, wheel_positions_array
from .kinematics import MotionMode
from .scenario import ObstacleKind, Scenario, StaticObstacle

CROSS = "cross"
DRIVE_OVER = "drive-over"
NONE = "none"

# body sampling: corners move at most BODY_STEP between samples, so a margin of
# half that keeps the continuous sweep inside the sampled, grown rectangles
BODY_STEP = 0.1
BODY_MARGIN = 0.05
WHEEL_STEP = 0.02

# signed-distance prescreen: raster resolution, lookup tolerance, cover discs
SDF_RES = 0.1
SDF_TOL = 0.15
N_DISCS = 10


def body_corners(poses: np.ndarray, params: VehicleParams, margin: float = 0.0) -> np.ndarray:
    poses = np.asarray(poses, dtype=float).reshape(-1, 3)
    rear, front, right, left = params.body_extent
    local = np.array([[rear - margin, right - margin], [front + margin, right - margin],
                      [front + margin, left + margin], [rear - margin, left + margin]])
    c, s = np.cos(poses[:, 2]), np.sin(poses[:, 2])
    x = poses[:, None, 0] + c[:, None] * local[None, :, 0] - s[:, None] * local[None, :, 1]
    y = poses[:, None, 1] + s[:, None] * local[None, :, 0] + c[:, None] * local[None, :, 1]
    return np.stack([x, y], axis=-1)


class _Prepared:
    def __init__(self, idx: int, obstacle: StaticObstacle):
        self.index = idx
        self.obstacle = obstacle
        self.kind = obstacle.kind
        self.height = obstacle.height
        v = obstacle.shape.vertices
        self.vertices = v
        e = np.roll(v, -1, axis=0) - v
        self.normals = np.stack([e[:, 1], -e[:, 0]], axis=1)
        self.pv = v @ self.normals.T
        self.pmin, self.pmax = self.pv.min(0), self.pv.max(0)
        self.bbox = obstacle.shape.bbox
        c = v.mean(axis=0)
        self.center = c
        self.radius = float(np.max(np.hypot(*(v - c).T)))

    def rects_overlap(self, corners: np.ndarray) -> np.ndarray:
        """Closed SAT for (n, 4, 2) rectangles."""
        pc = np.einsum("nkd,md->nkm", corners, self.normals)
        sep = (pc.min(1) > self.pmax[None]) | (pc.max(1) < self.pmin[None])
        ok = ~np.any(sep, axis=1)
        ax = np.stack([corners[:, 1] - corners[:, 0], corners[:, 3] - corners[:, 0]], axis=1)
        rc = np.einsum("nkd,nad->nka", corners, ax)
        rv = np.einsum("kd,nad->nka", self.vertices, ax)
        ok &= ~np.any((rc.min(1) > rv.max(1)) | (rc.max(1) < rv.min(1)), axis=1)
        return ok


@dataclass
class HandlingResult:
    ok: bool
    decisions: dict = field(default_factory=dict)
    reason: str = ""


class World:
    """Prepared obstacle set of one scenario with the handling toggles."""

    def __init__(self, scenario: Scenario, params: VehicleParams, crossable: bool = True,
                 drive_over: bool = True):
        self.scenario = scenario
        self.params = params
        self.crossable = crossable
        self.drive_over = drive_over
        self.workspace = scenario.workspace
        self.obstacles = [_Prepared(i, o) for i, o in enumerate(scenario.statics)]
        self._reach = params.circumradius + BODY_MARGIN
        rear, front, right, left = params.body_extent
        L = front - rear + 2 * BODY_MARGIN
        seg = L / N_DISCS
        self._disc_x = rear - BODY_MARGIN + seg * (np.arange(N_DISCS) + 0.5)
        self._disc_r = math.hypot(0.5 * seg, 0.5 * (left - right) + BODY_MARGIN)
        self._sdf = {}

    def _field(self, group: str):
        """Signed distance rasters to the NonTraversable ('nt') or other ('tr') obstacles."""
        if group in self._sdf:
            return self._sdf[group]
        xmin, ymin, xmax, ymax = self.workspace
        nx = int(math.ceil((xmax - xmin) / SDF_RES))
        ny = int(math.ceil((ymax - ymin) / SDF_RES))
        mask = np.zeros((ny, nx), dtype=bool)
        want_nt = group == "nt"
        any_ob = False
        for ob in self.obstacles:
            if (ob.kind == ObstacleKind.NON_TRAVERSABLE) != want_nt:
                continue
            any_ob = True
            x0, y0, x1, y1 = ob.bbox
            i0 = max(0, int((x0 - xmin) / SDF_RES) - 1)
            i1 = min(nx, int((x1 - xmin) / SDF_RES) + 2)
            j0 = max(0, int((y0 - ymin) / SDF_RES) - 1)
            j1 = min(ny, int((y1 - ymin) / SDF_RES) + 2)
            xs = xmin + (np.arange(i0, i1) + 0.5) * SDF_RES
            ys = ymin + (np.arange(j0, j1) + 0.5) * SDF_RES
            X, Y = np.meshgrid(xs, ys)
            pts = np.stack([X.ravel(), Y.ravel()], 1)
            inside = np.all(pts @ ob.normals.T <= ob.pmax[None, :] + 1e-12, axis=1)
            mask[j0:j1, i0:i1] |= inside.reshape(len(ys), len(xs))
        if not any_ob:
            self._sdf[group] = None
            return None
        out = distance_transform_edt(~mask) * SDF_RES
        if mask.any():
            out = out - distance_transform_edt(mask) * SDF_RES
        self._sdf[group] = out
        return out

    def _screen(self, poses: np.ndarray, group: str):
        """(definitely colliding, ambiguous) masks from the disc cover."""
        f = self._field(group)
        n = len(poses)
        if f is None:
            return np.zeros(n, dtype=bool), np.zeros(n, dtype=bool)
        c, s_ = np.cos(poses[:, 2]), np.sin(poses[:, 2])
        px = poses[:, None, 0] + c[:, None] * self._disc_x[None, :]
        py = poses[:, None, 1] + s_[:, None] * self._disc_x[None, :]
        xmin, ymin = self.workspace[0], self.workspace[1]
        ny, nx = f.shape
        i = np.clip(((px - xmin) / SDF_RES).astype(int), 0, nx - 1)
        j = np.clip(((py - ymin) / SDF_RES).astype(int), 0, ny - 1)
        d = f[j, i]
        coll = np.any(d < -SDF_TOL, axis=1)
        free = np.all(d > self._disc_r + SDF_TOL, axis=1)
        return coll, ~(coll | free)

    def _candidates(self, poses: np.ndarray):
        """Obstacles near the swept poses and the mask of poses near each."""
        out = []
        if not self.obstacles:
            return out
        xy = poses[:, :2]
        lo, hi = xy.min(0) - self._reach, xy.max(0) + self._reach
        for ob in self.obstacles:
            x0, y0, x1, y1 = ob.bbox
            if x1 < lo[0] or x0 > hi[0] or y1 < lo[1] or y0 > hi[1]:
                continue
            d2 = (xy[:, 0] - ob.center[0]) ** 2 + (xy[:, 1] - ob.center[1]) ** 2
            near = d2 <= (ob.radius + self._reach) ** 2
            if np.any(near):
                out.append((ob, near))
        return out

    def inside_workspace(self, corners: np.ndarray) -> bool:
        xmin, ymin, xmax, ymax = self.workspace
        return bool(corners[..., 0].min() >= xmin and corners[..., 0].max() <= xmax
                    and corners[..., 1].min() >= ymin and corners[..., 1].max() <= ymax)

    def overlapped(self, poses: np.ndarray, kinds=None, first_only: bool = False) -> list[int]:
        """Indices of obstacles touched by the grown body at any of ``poses``."""
        poses = np.asarray(poses, dtype=float).reshape(-1, 3)
        hits = []
        corners = None
        for ob, near in self._candidates(poses):
            if kinds is not None and ob.kind not in kinds:
                continue
            if corners is None:
                corners = body_corners(poses, self.params, BODY_MARGIN)
            if np.any(ob.rects_overlap(corners[near])):
                hits.append(ob.index)
                if first_only:
                    break
        return hits

    def collision_free(self, poses: np.ndarray) -> bool:
        """Body clear of every NonTraversable obstacle and inside the workspace."""
        poses = np.asarray(poses, dtype=float).reshape(-1, 3)
        if not self.inside_workspace(body_corners(poses, self.params, BODY_MARGIN)):
            return False
        return not self.overlapped(poses, kinds=(ObstacleKind.NON_TRAVERSABLE,), first_only=True)

    def handle(self, poses: np.ndarray, mode: MotionMode, wheel_poses_fn) -> HandlingResult:
        """Hierarchical handling of every obstacle under one swept motion.

        ``wheel_poses_fn`` lazily returns densely sampled poses for the wheel
        test, which is only needed when something is overlapped.
        """
        res = self.handle_many([np.asarray(poses, dtype=float).reshape(-1, 3)], [mode], [wheel_poses_fn])
        return HandlingResult(res.ok, res.decisions[0] if res.ok else {}, res.reason)

    def handle_many(self, pose_list, modes, wheel_fns) -> "HandlingResult":
        """Handle a chain of motions at once; ``decisions`` is a list of dicts
        (one per motion). Non-traversable contacts are tested first so that
        failing chains exit early."""
        counts = [len(p) for p in pose_list]
        poses = np.concatenate(pose_list)
        owner = np.repeat(np.arange(len(pose_list)), counts)
        xmin, ymin, xmax, ymax = self.workspace
        r = self._reach
        edge = ((poses[:, 0] < xmin + r) | (poses[:, 0] > xmax - r)
                | (poses[:, 1] < ymin + r) | (poses[:, 1] > ymax - r))
        if np.any(edge) and not self.inside_workspace(body_corners(poses[edge], self.params, BODY_MARGIN)):
            return HandlingResult(False, reason="workspace")
        coll, amb_nt = self._screen(poses, "nt")
        if np.any(coll):
            return HandlingResult(False, reason="non-traversable")
        # for traversable kinds a definite overlap still needs its decision
        coll_tr, amb_tr = self._screen(poses, "tr")
        amb_tr |= coll_tr
        if not np.any(amb_nt) and not np.any(amb_tr):
            return HandlingResult(True, [{} for _ in pose_list])
        cands = []
        for ob, near in self._candidates(poses):
            mask = amb_nt if ob.kind == ObstacleKind.NON_TRAVERSABLE else amb_tr
            near = near & mask
            if np.any(near):
                cands.append((ob, near))
        if not cands:
            return HandlingResult(True, [{} for _ in pose_list])
        cands.sort(key=lambda c: c[0].kind != ObstacleKind.NON_TRAVERSABLE)
        decisions = [{} for _ in pose_list]
        wheel_cache = {}
        for ob, near in cands:
            idx = np.nonzero(near)[0]
            hit = ob.rects_overlap(body_corners(poses[idx], self.params, BODY_MARGIN))
            if not np.any(hit):
                continue
            if ob.kind == ObstacleKind.NON_TRAVERSABLE:
                return HandlingResult(False, reason="non-traversable")
            for k in np.unique(owner[idx[hit]]):
                k = int(k)
                if modes[k] == MotionMode.ZERO_TURN:
                    return HandlingResult(False, reason="zero-turn over obstacle")
                if self.crossable and f_height(ob.obstacle, self.params):
                    if k not in wheel_cache:
                        wheel_cache[k] = wheel_fns[k]()
                    if f_wheel(wheel_cache[k], ob.obstacle, self.params):
                        decisions[k][ob.index] = CROSS
                        continue
                if ob.kind == ObstacleKind.DRIVE_OVER and self.drive_over:
                    decisions[k][ob.index] = DRIVE_OVER
                    continue
                return HandlingResult(False, reason=f"{ob.kind.value} not passable")
        return HandlingResult(True, decisions)


def wheel_radius(params: VehicleParams) -> float:
    # half the tire width plus half the wheel sampling step
    return 0.5 * params.tire_width + 0.5 * WHEEL_STEP


def f_height(obstacle: StaticObstacle, params: VehicleParams) -> bool:
    return obstacle.height < params.ground_clearance


def f_wheel(poses: np.ndarray, obstacle: StaticObstacle, params: VehicleParams) -> bool:
    """True when the wheel tracks along ``poses`` keep clear of the obstacle."""
    w = wheel_positions_array(np.asarray(poses, dtype=float).reshape(-1, 3), params).reshape(-1, 2)
    r = wheel_radius(params)
    x0, y0, x1, y1 = obstacle.shape.bbox
    near = (w[:, 0] >= x0 - r) & (w[:, 0] <= x1 + r) & (w[:, 1] >= y0 - r) & (w[:, 1] <= y1 + r)
    if not np.any(near):
        return True
    w = w[near]
    c = obstacle.shape.vertices.mean(axis=0)
    rad = float(np.max(np.hypot(*(obstacle.shape.vertices - c).T)))
    w = w[np.hypot(w[:, 0] - c[0], w[:, 1] - c[1]) <= rad + r]
    if len(w) == 0:
        return True
    return not bool(np.any(point_polygon_distance(w, obstacle.shape) <= r))


def f_crossable(poses: np.ndarray, obstacle: StaticObstacle, params: VehicleParams) -> bool:
    """Height below the ground clearance and no wheel track over the obstacle."""
    return f_height(obstacle, params) and f_wheel(poses, obstacle, params)


def samples_for(displacement: float, step: float) -> int:
    return max(1, int(math.ceil(displacement / step)))
