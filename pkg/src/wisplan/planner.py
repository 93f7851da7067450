"""4WIS hybrid A*: mode-aware expansion, costs, obstacle handling and the
direct and guided search variants that produce the coarse path."""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from . import reeds_shepp as rs
from .geometry import VehicleParams, normalize_angle
from .grid import OccupancyGrid, distance_field, occupancy_grid
from .kinematics import (Action, MotionMode, VehicleState, ackermann_arc, ackermann_curvature,
                         diagonal_line, zero_turn)
from .scenario import ObstacleKind, Scenario
from .world import (BODY_STEP, CROSS, DRIVE_OVER, NONE, WHEEL_STEP, HandlingResult,
                    World, f_crossable, samples_for)

__all__ = [
    "CostWeights", "PlannerConfig", "Piece", "CoarsePath", "SearchNode", "motion_primitives",
    "expand", "node_cost", "mode_switch_cost", "total_cost", "Heuristic", "heuristic",
    "traj_connect", "obstacle_handling", "improved_hybrid_astar", "fourwis_hybrid_astar",
    "initial_path", "f_crossable",
]

# grid paths are at most this factor longer than the Euclidean shortest path
OCTILE_STRETCH = 1.0824


@dataclass(frozen=True)
class CostWeights:
    w_ra: float = 1.0
    w_ta: float = 0.5
    w_rd: float = 1.0
    w_td: float = 0.5
    w_oz: float = 0.5
    w_r1: float = 0.2
    w_r2: float = 0.2
    w_r3: float = 0.2

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")


@dataclass(frozen=True)
class PlannerConfig:
    weights: CostWeights = CostWeights()
    params: VehicleParams = VehicleParams()
    max_iter_guided: int = 30
    max_iter_direct: int = 150
    step_length: float = 1.0
    speed: float = 1.0
    xy_resolution: float = 0.5
    theta_resolution: float = math.pi / 18
    grid_resolution: float = 0.5
    crossable: bool = True
    drive_over: bool = True
    modes: tuple = (MotionMode.ACKERMANN, MotionMode.DIAGONAL, MotionMode.ZERO_TURN)
    use_grid_heuristic: bool = True

    def get_params(self, deep: bool = False) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def set_params(self, **kw) -> "PlannerConfig":
        d = self.get_params()
        d.update(kw)
        return PlannerConfig(**d)


# --- path pieces ------------------------------------------------------------

@dataclass(frozen=True)
class Piece:
    """One constant-mode, constant-input motion.

    ``amount`` is the signed arc length (Ackermann), signed chord length
    (Diagonal) or signed heading change (ZeroTurn).
    """
    mode: MotionMode
    start: tuple
    delta: float
    amount: float
    decisions: tuple = ()

    @property
    def direction(self) -> int:
        if self.mode == MotionMode.ZERO_TURN or self.amount == 0:
            return 0
        return 1 if self.amount > 0 else -1

    @property
    def translation(self) -> float:
        return 0.0 if self.mode == MotionMode.ZERO_TURN else abs(self.amount)

    def corner_travel(self, params: VehicleParams) -> float:
        rc = params.circumradius
        if self.mode == MotionMode.ACKERMANN:
            return abs(self.amount) * (1.0 + abs(float(ackermann_curvature(self.delta, params.wheelbase))) * rc)
        if self.mode == MotionMode.DIAGONAL:
            return abs(self.amount)
        return abs(self.amount) * rc

    def poses_at(self, frac, params: VehicleParams) -> np.ndarray:
        frac = np.asarray(frac, dtype=float)
        if self.mode == MotionMode.ACKERMANN:
            return ackermann_arc(self.start, self.delta, self.amount * frac, params.wheelbase)
        if self.mode == MotionMode.DIAGONAL:
            return diagonal_line(self.start, self.delta, self.amount * frac)
        return zero_turn(self.start, self.amount * frac)

    def sample(self, step: float, params: VehicleParams) -> np.ndarray:
        """Poses with corners moving at most ``step`` between samples (ends included)."""
        n = samples_for(self.corner_travel(params), step)
        return self.poses_at(np.linspace(0.0, 1.0, n + 1), params)

    def end(self, params: VehicleParams) -> tuple:
        p = self.poses_at(np.array([1.0]), params)[0]
        return (float(p[0]), float(p[1]), float(p[2]))

    def with_decisions(self, decisions: dict) -> "Piece":
        return Piece(self.mode, self.start, self.delta, self.amount, tuple(sorted(decisions.items())))


def obstacle_handling(piece: Piece, world: World) -> HandlingResult:
    """Hierarchical handling (cross, else drive over, else fail) for one piece."""
    poses = piece.sample(BODY_STEP, world.params)
    return world.handle(poses, piece.mode, lambda: piece.sample(WHEEL_STEP, world.params))


@dataclass
class CoarsePath:
    pieces: list = field(default_factory=list)

    def __len__(self):
        return len(self.pieces)

    @property
    def length(self) -> float:
        return float(sum(p.translation for p in self.pieces))

    def start(self) -> tuple | None:
        return self.pieces[0].start if self.pieces else None

    def end(self, params: VehicleParams) -> tuple | None:
        return self.pieces[-1].end(params) if self.pieces else None

    def extend(self, other: "CoarsePath", params: VehicleParams, tol: float = 1e-6) -> "CoarsePath":
        """Concatenate with an exact pose-continuity check."""
        if self.pieces and other.pieces:
            a = self.end(params)
            b = other.start()
            gap = math.hypot(a[0] - b[0], a[1] - b[1])
            dth = abs(float(normalize_angle(a[2] - b[2])))
            if gap > tol or dth > tol:
                raise AssertionError(f"path segments are not continuous (gap {gap:.3g} m, {dth:.3g} rad)")
        return CoarsePath(self.pieces + other.pieces)

    def decisions(self) -> dict:
        out = {}
        for p in self.pieces:
            for i, d in p.decisions:
                if out.get(i) != DRIVE_OVER:
                    out[i] = d
        return out

    def sample(self, step: float, params: VehicleParams):
        """(poses[n, 3], piece index[n]); piece boundaries are shared samples
        listed once, attributed to the later piece."""
        poses, idx = [], []
        for k, p in enumerate(self.pieces):
            ps = p.sample(step, params)
            if k > 0:
                ps = ps[1:]
            poses.append(ps)
            idx.append(np.full(len(ps), k))
        if not poses:
            return np.zeros((0, 3)), np.zeros(0, dtype=int)
        poses = np.concatenate(poses)
        idx = np.concatenate(idx)
        if len(idx) > 0 and len(self.pieces[0].sample(step, params)) > 0:
            idx[0] = 0
        return poses, idx

    def rows(self, scenario: Scenario, params: VehicleParams, step: float = 0.25, speed: float = 1.0):
        """Export rows (t-index, x, y, theta, v, delta, mode, decision)."""
        world = World(scenario, params)
        poses, idx = self.sample(step, params)
        out = []
        for t, (pose, k) in enumerate(zip(poses, idx)):
            p = self.pieces[k]
            dec = NONE
            if p.decisions:
                hit = set(world.overlapped(pose[None, :]))
                marks = [d for i, d in p.decisions if i in hit]
                if DRIVE_OVER in marks:
                    dec = DRIVE_OVER
                elif CROSS in marks:
                    dec = CROSS
            out.append((t, float(pose[0]), float(pose[1]), float(normalize_angle(pose[2])),
                        float(p.direction * speed), float(p.delta if p.mode != MotionMode.ZERO_TURN else 0.0),
                        int(p.mode), dec))
        return out

    def to_csv(self, path, scenario: Scenario, params: VehicleParams, step: float = 0.25) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_index", "x", "y", "theta", "v", "delta", "mode", "decision"])
            for r in self.rows(scenario, params, step):
                w.writerow([r[0], f"{r[1]:.6f}", f"{r[2]:.6f}", f"{r[3]:.6f}", f"{r[4]:.3f}",
                            f"{r[5]:.6f}", r[6], r[7]])


# --- search nodes and expansion ---------------------------------------------

@dataclass(eq=False)
class SearchNode:
    state: VehicleState
    mode: MotionMode
    parent: "SearchNode | None" = None
    g: float = 0.0
    piece: Piece | None = None
    action: Action | None = None

    def backtrack(self) -> CoarsePath:
        pieces = []
        n = self
        while n is not None and n.piece is not None:
            pieces.append(n.piece)
            n = n.parent
        return CoarsePath(pieces[::-1])


def motion_primitives(cfg: PlannerConfig = PlannerConfig()) -> list[Action]:
    dm = cfg.params.max_steer
    acts = []
    if MotionMode.ACKERMANN in cfg.modes:
        for d in (1, -1):
            for st in (-dm, -0.5 * dm, 0.0, 0.5 * dm, dm):
                acts.append(Action(MotionMode.ACKERMANN, cfg.step_length, d, st))
    if MotionMode.DIAGONAL in cfg.modes:
        for d in (1, -1):
            for st in (-0.5 * math.pi, -0.25 * math.pi, 0.25 * math.pi, 0.5 * math.pi):
                acts.append(Action(MotionMode.DIAGONAL, cfg.step_length, d, st))
    if MotionMode.ZERO_TURN in cfg.modes:
        for dth in (-0.25 * math.pi, -0.125 * math.pi, 0.125 * math.pi, 0.25 * math.pi):
            acts.append(Action(MotionMode.ZERO_TURN, dth, 1, 0.0))
    return acts


def action_piece(state: VehicleState, action: Action) -> Piece:
    start = (state.x, state.y, state.theta)
    if action.mode == MotionMode.ZERO_TURN:
        return Piece(MotionMode.ZERO_TURN, start, 0.0, float(action.amount))
    return Piece(action.mode, start, float(action.delta), float(action.direction * action.amount))


def expand(parent: SearchNode, action: Action, params: VehicleParams = VehicleParams(),
           speed: float = 1.0) -> SearchNode:
    """Child node reached by ``action`` (closed-form motion); g is left to the caller."""
    piece = action_piece(parent.state, action)
    x, y, th = piece.end(params)
    if action.mode == MotionMode.ZERO_TURN:
        st = VehicleState(x, y, 0.0, float(normalize_angle(th)), 0.0)
    else:
        st = VehicleState(x, y, float(action.direction * speed), float(normalize_angle(th)), float(action.delta))
    return SearchNode(st, action.mode, parent, parent.g, piece, action)


def _dtheta(a: float, b: float) -> float:
    return abs(float(normalize_angle(a - b)))


def node_cost(n_p: SearchNode, n_c: SearchNode, w: CostWeights = CostWeights()) -> float:
    """Reversing/steering-change penalty of the child's mode."""
    p, c = n_p.state, n_c.state
    if n_c.mode == MotionMode.ACKERMANN:
        return abs(p.v - c.v) * w.w_ra + abs(p.delta - c.delta) * w.w_ta
    if n_c.mode == MotionMode.DIAGONAL:
        return abs(p.v - c.v) * w.w_rd + abs(p.delta - c.delta) * w.w_td
    return _dtheta(p.theta, c.theta) * w.w_oz


def mode_switch_cost(n_p: SearchNode, n_c: SearchNode, w: CostWeights = CostWeights()) -> float:
    """Wheel-reset plus mode-entry penalty, only defined across a mode change."""
    if n_p.mode == n_c.mode:
        raise ValueError("mode_switch_cost requires different parent and child modes")
    p, c = n_p.state, n_c.state
    rec = {MotionMode.ACKERMANN: w.w_r1 * abs(p.delta),
           MotionMode.DIAGONAL: w.w_r2 * abs(p.delta),
           MotionMode.ZERO_TURN: w.w_r3}[n_p.mode]
    chg = {MotionMode.ACKERMANN: w.w_r1 * abs(c.delta),
           MotionMode.DIAGONAL: w.w_r2 * abs(c.delta),
           MotionMode.ZERO_TURN: w.w_r3 * _dtheta(p.theta, c.theta)}[n_c.mode]
    return rec + chg


def step_cost(n_p: SearchNode, n_c: SearchNode, w: CostWeights) -> float:
    """Cost-to-come increment: travelled length plus the node and switching penalties."""
    c = (n_c.piece.translation if n_c.piece is not None else 0.0) + node_cost(n_p, n_c, w)
    if n_p.mode != n_c.mode:
        c += mode_switch_cost(n_p, n_c, w)
    return c


def total_cost(n_c: SearchNode, h: float) -> float:
    """F = accumulated cost-to-come (penalties and switching included) + H."""
    return n_c.g + h


# --- heuristic --------------------------------------------------------------

class Heuristic:
    """max(Reeds-Shepp length ignoring obstacles, scaled grid distance)."""

    def __init__(self, goal, params: VehicleParams, grid: OccupancyGrid | None = None):
        self.goal = np.asarray(goal, dtype=float)[:3]
        self.radius = params.min_turn_radius
        self.grid = grid
        self.field = None
        if grid is not None:
            self.field = distance_field(grid, grid.node_of(self.goal[0], self.goal[1]))
            self.slack = grid.resolution * math.sqrt(2.0)

    def grid_term(self, xy: np.ndarray) -> np.ndarray:
        if self.field is None:
            return np.zeros(len(xy))
        g = self.grid
        ny, nx = self.field.shape
        i = np.clip(np.rint((xy[:, 0] - g.origin[0]) / g.resolution).astype(int), 0, nx - 1)
        j = np.clip(np.rint((xy[:, 1] - g.origin[1]) / g.resolution).astype(int), 0, ny - 1)
        d = self.field[j, i]
        d = np.where(np.isfinite(d), d, 0.0)
        return np.maximum(0.0, d / OCTILE_STRETCH - self.slack)

    def __call__(self, poses, rs_lengths: np.ndarray | None = None) -> np.ndarray:
        poses = np.atleast_2d(np.asarray(poses, dtype=float))[:, :3]
        if rs_lengths is None:
            rs_lengths = rs.shortest_length(poses, self.goal[None, :], self.radius)
        return np.maximum(rs_lengths, self.grid_term(poses[:, :2]))


def heuristic(n, goal, grid: OccupancyGrid | None = None, params: VehicleParams = VehicleParams()) -> float:
    pose = (n.state.x, n.state.y, n.state.theta) if isinstance(n, SearchNode) else tuple(n)[:3]
    return float(Heuristic(goal, params, grid)(np.array([pose]))[0])


def planning_grid(s: Scenario, cfg: PlannerConfig) -> OccupancyGrid:
    polys = [o.shape for o in s.statics if o.kind == ObstacleKind.NON_TRAVERSABLE]
    return occupancy_grid(s.workspace, polys, cfg.grid_resolution, 0.5 * cfg.params.width)


# --- connection -------------------------------------------------------------

def _same_pose(a, b, tol=1e-9) -> bool:
    return abs(a[0] - b[0]) <= tol and abs(a[1] - b[1]) <= tol and _dtheta(a[2], b[2]) <= tol


def straight_piece(a, b) -> Piece | None:
    """Straight (Ackermann or crab) motion when both headings agree."""
    if _dtheta(a[2], b[2]) > 1e-9:
        return None
    dx, dy = b[0] - a[0], b[1] - a[1]
    d = math.hypot(dx, dy)
    if d == 0:
        return None
    rel = float(normalize_angle(math.atan2(dy, dx) - a[2]))
    amount = d
    if abs(rel) > 0.5 * math.pi + 1e-12:
        rel = float(normalize_angle(rel + math.pi))
        amount = -d
    if abs(rel) < 1e-9:
        return Piece(MotionMode.ACKERMANN, tuple(a[:3]), 0.0, amount)
    return Piece(MotionMode.DIAGONAL, tuple(a[:3]), rel, amount)


def rs_pieces(path: rs.RSPath, params: VehicleParams) -> list[Piece]:
    out = []
    for letter, l, p0 in path.segments():
        delta = {"L": params.max_steer, "R": -params.max_steer, "S": 0.0}[letter]
        out.append(Piece(MotionMode.ACKERMANN, p0, delta, float(l)))
    return out


def _handle_all(pieces: list[Piece], world: World) -> list[Piece] | None:
    if not pieces:
        return []
    prm = world.params
    r = world.handle_many([p.sample(BODY_STEP, prm) for p in pieces], [p.mode for p in pieces],
                          [lambda p=p: p.sample(WHEEL_STEP, prm) for p in pieces])
    if not r.ok:
        return None
    return [p.with_decisions(d) if d else p for p, d in zip(pieces, r.decisions)]


def traj_connect(a, b, world: World, params: VehicleParams | None = None,
                 word=None) -> CoarsePath | None:
    """Collision-checked connection from pose ``a`` to pose ``b``.

    A straight segment is tried first when the headings agree, then the
    shortest Reeds-Shepp curve. ``word`` optionally supplies a precomputed
    (type, lengths) pair for the Reeds-Shepp attempt.
    """
    params = params or world.params
    a = tuple(float(v) for v in a[:3])
    b = tuple(float(v) for v in b[:3])
    if _same_pose(a, b):
        return CoarsePath([])
    sp = straight_piece(a, b)
    if sp is not None:
        got = _handle_all([sp], world)
        if got is not None:
            return CoarsePath(got)
    if word is None:
        path = rs.shortest_path(a, b, params.min_turn_radius)
    else:
        tid, lengths = word
        path = rs.path_from_word(a, tid, lengths, params.min_turn_radius) if tid >= 0 else None
    if path is None:
        return None
    got = _handle_all(rs_pieces(path, params), world)
    if got is None:
        return None
    # snap the final pose numerically onto the target
    return CoarsePath(got)


# --- search -----------------------------------------------------------------

@dataclass
class SearchStats:
    iterations: int = 0
    expanded: int = 0
    generated: int = 0
    connections_tried: int = 0


class _Search:
    def __init__(self, s: Scenario, cfg: PlannerConfig, world: World | None = None,
                 grid: OccupancyGrid | None = None):
        self.s = s
        self.cfg = cfg
        self.params = cfg.params
        self.world = world or World(s, cfg.params, cfg.crossable, cfg.drive_over)
        self.grid = grid if grid is not None else (planning_grid(s, cfg) if cfg.use_grid_heuristic else None)
        self.actions = motion_primitives(cfg)
        self.stats = SearchStats()

    def key(self, st: VehicleState, mode: MotionMode):
        r = self.cfg.xy_resolution
        k = int(round(float(normalize_angle(st.theta)) / self.cfg.theta_resolution))
        n = int(round(2 * math.pi / self.cfg.theta_resolution))
        return (int(round(st.x / r)), int(round(st.y / r)), k % n, int(mode))

    def run(self, start: VehicleState, targets: Sequence[tuple[int, tuple]], h_goal, max_iter: int):
        """Best-first expansion; ``targets`` are (index, pose) connection goals
        in the order they are tried. Returns (CoarsePath, index) or None."""
        H = Heuristic(h_goal, self.params, self.grid)
        root = SearchNode(start, MotionMode.ACKERMANN, None, 0.0)
        tposes = np.array([t[1][:3] for t in targets], dtype=float)
        goal_col = next((ti for ti, (_, tp) in enumerate(targets)
                         if np.allclose(tp[:3], np.asarray(h_goal, dtype=float)[:3])), None)
        heap = [(0.0, 0.0, 0, root)]
        counter = 1
        closed = set()
        j = 0
        w = self.cfg.weights
        while heap and j < max_iter:
            _, _, _, n_p = heapq.heappop(heap)
            kp = self.key(n_p.state, n_p.mode)
            if kp in closed:
                continue
            closed.add(kp)
            j += 1
            self.stats.iterations = j
            # children are pushed and connected one at a time in primitive order;
            # Reeds-Shepp words for every raw child are batched up front
            kids = [expand(n_p, a, self.params, self.cfg.speed) for a in self.actions]
            kposes = np.array([[c.state.x, c.state.y, c.state.theta] for c in kids])
            nt = len(tposes)
            LL, TT, LN = rs.shortest_words(np.repeat(kposes, nt, axis=0), np.tile(tposes, (len(kids), 1)),
                                           self.params.min_turn_radius)
            LL = LL.reshape(len(kids), nt)
            TT = TT.reshape(len(kids), nt)
            LN = LN.reshape(len(kids), nt, 5)
            for ci, n_c in enumerate(kids):
                if self.key(n_c.state, n_c.mode) in closed:
                    continue
                res = obstacle_handling(n_c.piece, self.world)
                if not res.ok:
                    continue
                if res.decisions:
                    n_c.piece = n_c.piece.with_decisions(res.decisions)
                n_c.g = n_p.g + step_cost(n_p, n_c, w)
                self.stats.generated += 1
                cpose = kposes[ci:ci + 1]
                L, tid, lens = LL[ci], TT[ci], LN[ci]
                h_rs = L[goal_col:goal_col + 1] if goal_col is not None else None
                F = total_cost(n_c, float(H(cpose, h_rs)[0]))
                heapq.heappush(heap, (F, n_c.g, counter, n_c))
                counter += 1
                for ti, (m, tp) in enumerate(targets):
                    if not np.isfinite(L[ti]):
                        continue
                    self.stats.connections_tried += 1
                    con = traj_connect(cpose[0], tp, self.world, self.params, word=(int(tid[ti]), lens[ti]))
                    if con is not None:
                        return n_c.backtrack().extend(con, self.params), m
        return None


def fourwis_hybrid_astar(Xs: VehicleState, Xf: VehicleState, s: Scenario, cfg: PlannerConfig = PlannerConfig(),
                         world: World | None = None, grid: OccupancyGrid | None = None,
                         stats: SearchStats | None = None) -> CoarsePath | None:
    """Direct search from Xs to Xf bounded by ``cfg.max_iter_direct`` expansions."""
    a, b = (Xs.x, Xs.y, Xs.theta), (Xf.x, Xf.y, Xf.theta)
    if _same_pose(a, b):
        return CoarsePath([])
    world = world or World(s, cfg.params, cfg.crossable, cfg.drive_over)
    direct = traj_connect(a, b, world, cfg.params)
    if direct is not None:
        return direct
    srch = _Search(s, cfg, world, grid)
    out = srch.run(Xs, [(1, b)], b, cfg.max_iter_direct)
    if stats is not None:
        stats.__dict__.update(srch.stats.__dict__)
    return None if out is None else out[0]


def improved_hybrid_astar(i: int, q_i, Q: Sequence, s: Scenario, cfg: PlannerConfig = PlannerConfig(),
                          world: World | None = None, grid: OccupancyGrid | None = None,
                          stats: SearchStats | None = None):
    """Guided search from key point ``q_i`` (0-based index ``i`` into ``Q``).

    Returns (CoarsePath, m) where ``m`` is the index of the reached key point,
    or None after ``cfg.max_iter_guided`` expansions.
    """
    world = world or World(s, cfg.params, cfg.crossable, cfg.drive_over)
    qi = tuple(float(v) for v in q_i[:3])
    nxt = tuple(float(v) for v in Q[i + 1][:3])
    direct = traj_connect(qi, nxt, world, cfg.params)
    if direct is not None:
        return direct, i + 1
    targets = [(m, tuple(float(v) for v in Q[m][:3])) for m in range(len(Q) - 1, i, -1)]
    srch = _Search(s, cfg, world, grid)
    start = VehicleState(qi[0], qi[1], 0.0, qi[2], 0.0)
    out = srch.run(start, targets, nxt, cfg.max_iter_guided)
    if stats is not None:
        stats.__dict__.update(srch.stats.__dict__)
    return out


@dataclass
class PlanInfo:
    branch: str = ""
    key_points: object = None
    reached: list = field(default_factory=list)
    failure: str = ""


def initial_path(s: Scenario, model=None, cfg: PlannerConfig = PlannerConfig(), policy: str | None = None,
                 info: PlanInfo | None = None, guide_resolution: float = 0.5) -> CoarsePath | None:
    """Classify the scene, then plan with guided points (hard) or directly (easy).

    ``policy`` may force "hard" or "easy"; otherwise ``model.predict_scenario``
    decides.
    """
    from .guided_points import generate_guided_points
    from .grid import SearchFailure

    info = info if info is not None else PlanInfo()
    if policy is None:
        if model is None:
            raise ValueError("either a classifier model or a policy override is required")
        policy = "hard" if model.predict_scenario(s) else "easy"
    if policy not in ("hard", "easy"):
        raise ValueError(f"unknown policy {policy!r}")
    info.branch = policy
    world = World(s, cfg.params, cfg.crossable, cfg.drive_over)
    grid = planning_grid(s, cfg) if cfg.use_grid_heuristic else None
    if policy == "easy":
        out = fourwis_hybrid_astar(s.init, s.goal, s, cfg, world, grid)
        if out is None:
            info.failure = "search-failure"
        return out
    try:
        kp = generate_guided_points(s, guide_resolution, cfg.params)
    except SearchFailure:
        info.failure = "guide-failure"
        return None
    info.key_points = kp
    Q = kp.poses()
    path = CoarsePath([])
    i = 0
    while i < len(Q) - 1:
        got = improved_hybrid_astar(i, Q[i], Q, s, cfg, world, grid)
        if got is None:
            info.failure = "search-failure"
            return None
        seg, m = got
        path = path.extend(seg, cfg.params, tol=1e-5)
        info.reached.append(m)
        i = m
    return path
