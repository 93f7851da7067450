"""Pipeline runner, evaluation metrics, batch reports and SVG rendering."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corridor import CorridorError, RiskFieldParams, cumulative_risk_potential, forecast
from .geometry import VehicleParams, footprint_corners
from .kinematics import MotionMode
from .ocp import OptimizationFailure, SolverConfig, SolveResult, Trajectory, build_problem, solve
from .planner import CoarsePath, PlanInfo, PlannerConfig, initial_path
from .scenario import ObstacleKind, Scenario

log = logging.getLogger(__name__)

FAILURE_KINDS = ("search-failure", "corridor-failure", "solver-infeasible")


# --- metrics ----------------------------------------------------------------------

def jerk_metrics(traj: Trajectory) -> tuple[float, float]:
    """(max, mean) of |a(k+1) - a(k)| / dt over consecutive controls."""
    a = np.asarray(traj.controls[:, 0], dtype=float)
    if len(a) < 2:
        raise ValueError("need at least two control samples")
    j = np.abs(np.diff(a)) / traj.dt
    return float(j.max()), float(j.sum() / (len(a) - 1))


def path_metrics(traj: Trajectory) -> tuple[float, float]:
    """(sum of consecutive Euclidean distances, t_f)."""
    xy = traj.states[:, :2]
    return float(np.hypot(*np.diff(xy, axis=0).T).sum()), float(traj.t_f)


def pedestrian_forecasts(s: Scenario, traj: Trajectory):
    return [forecast(p, traj.n, traj.dt) for p in s.pedestrians]


def crp(s: Scenario, traj: Trajectory, params: RiskFieldParams = RiskFieldParams()) -> float:
    """Cumulative risk potential of a trajectory against the scene pedestrians."""
    return cumulative_risk_potential(traj.states[:, :2], pedestrian_forecasts(s, traj), params,
                                     traj.velocities())


def min_pedestrian_distance(s: Scenario, traj: Trajectory) -> float:
    """Smallest distance between the reference point and a pedestrian mean at equal times."""
    best = math.inf
    for f in pedestrian_forecasts(s, traj):
        d = np.hypot(*(traj.states[:, :2] - f.means).T)
        best = min(best, float(d.min()))
    return best


# --- pipeline ---------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    guided_points: bool = True
    classifier: str = "on"           # "on", "force-hard" or "force-easy"
    crossable: bool = True
    drive_over: bool = True
    risk_corridor: bool = True
    density: str = "medium"
    seeds: tuple = ()
    model_path: str | None = None

    def __post_init__(self):
        if self.classifier not in ("on", "force-hard", "force-easy"):
            raise ValueError(f"unknown classifier setting {self.classifier!r}")

    def policy(self) -> str | None:
        if not self.guided_points or self.classifier == "force-easy":
            return "easy"
        if self.classifier == "force-hard":
            return "hard"
        return None


@dataclass
class RunResult:
    seed: int
    success: bool
    failure: str | None = None
    branch: str | None = None
    coarse: CoarsePath | None = None
    solution: SolveResult | None = None
    problem: object = None
    comp_time: float = math.nan
    length: float = math.nan
    traversal: float = math.nan
    max_jerk: float = math.nan
    avg_jerk: float = math.nan
    crp: float = math.nan
    min_ped_dist: float = math.nan

    def row(self) -> list:
        return [self.seed, int(self.success), self.failure or "", self.branch or "", self.length, self.traversal,
                self.comp_time, self.max_jerk, self.avg_jerk, self.crp, self.min_ped_dist]


_MODEL_CACHE: dict = {}


def _model(cfg: RunConfig):
    from .classifier import SceneClassifier, default_model_path

    path = cfg.model_path or str(default_model_path())
    if path not in _MODEL_CACHE:
        _MODEL_CACHE[path] = SceneClassifier.load(path)
    return _MODEL_CACHE[path]


def planner_config(cfg: RunConfig, params: VehicleParams = VehicleParams()) -> PlannerConfig:
    return PlannerConfig(params=params, crossable=cfg.crossable, drive_over=cfg.drive_over)


def run_pipeline(s: Scenario, cfg: RunConfig = RunConfig(), params: VehicleParams = VehicleParams(),
                 solver: SolverConfig = SolverConfig(), keep: bool = False) -> RunResult:
    """Classify, plan, build corridors and optimize one scene.

    Computation time covers planning and optimization only.
    """
    pcfg = planner_config(cfg, params)
    policy = cfg.policy()
    model = _model(cfg) if policy is None else None
    info = PlanInfo()
    res = RunResult(seed=s.seed, success=False)
    t0 = time.perf_counter()
    coarse = initial_path(s, model=model, cfg=pcfg, policy=policy, info=info)
    res.branch = info.branch
    if coarse is None:
        res.failure = "search-failure"
        res.comp_time = time.perf_counter() - t0
        return res
    if keep:
        res.coarse = coarse
    if not coarse.pieces:
        res.failure = "search-failure"
        res.comp_time = time.perf_counter() - t0
        return res
    try:
        prob = build_problem(coarse, s, params, RiskFieldParams(), risk_corridor=cfg.risk_corridor)
    except CorridorError as e:
        log.info("scene %d: %s", s.seed, e)
        res.failure = "corridor-failure"
        res.comp_time = time.perf_counter() - t0
        return res
    try:
        sol = solve(prob, solver)
    except OptimizationFailure as e:
        log.info("scene %d: %s", s.seed, e)
        res.failure = "solver-infeasible"
        res.comp_time = time.perf_counter() - t0
        return res
    res.comp_time = time.perf_counter() - t0
    traj = sol.trajectory
    res.success = True
    res.length, res.traversal = path_metrics(traj)
    res.max_jerk, res.avg_jerk = jerk_metrics(traj)
    if s.pedestrians:
        res.crp = crp(s, traj)
        res.min_ped_dist = min_pedestrian_distance(s, traj)
    if keep:
        res.solution = sol
        res.problem = prob
    return res


# --- batches and reports -------------------------------------------------------------

REPORT_HEADER = ["seed", "success", "failure", "branch", "path_length_m", "traversal_time_s",
                 "computation_time_s", "max_jerk", "avg_jerk", "crp", "min_ped_dist_m"]
_METRICS = ("length", "traversal", "comp_time", "max_jerk", "avg_jerk", "crp", "min_ped_dist")


@dataclass
class EvaluationReport:
    rows: list = field(default_factory=list)

    @property
    def total(self) -> int:
        return len(self.rows)

    @property
    def successes(self) -> list:
        return [r for r in self.rows if r.success]

    @property
    def success_rate(self) -> float | None:
        return None if not self.rows else len(self.successes) / len(self.rows)

    def mean(self, metric: str) -> float:
        vals = [getattr(r, metric) for r in self.successes]
        vals = [v for v in vals if not math.isnan(v)]
        return float(np.mean(vals)) if vals else math.nan

    def failures(self) -> dict:
        out = {k: 0 for k in FAILURE_KINDS}
        for r in self.rows:
            if not r.success:
                out[r.failure] = out.get(r.failure, 0) + 1
        return out

    def to_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r.row()])
        rate = self.success_rate
        buf.write("# aggregate\n")
        buf.write(f"# scenarios,{self.total}\n")
        buf.write(f"# success_rate,{'n/a' if rate is None else f'{rate:.6f}'}\n")
        for m, name in zip(_METRICS, REPORT_HEADER[4:]):
            buf.write(f"# mean_{name},{_fmt(self.mean(m))}\n")
        for k, v in self.failures().items():
            buf.write(f"# {k},{v}\n")
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return v


def _run_one(args):
    s, cfg = args
    r = run_pipeline(s, cfg)
    return r


def evaluate_batch(scenarios: Sequence[Scenario], cfg: RunConfig = RunConfig(), workers: int = 1) -> EvaluationReport:
    """Run the pipeline on every scene; failures are recorded, never raised."""
    jobs = [(s, cfg) for s in scenarios]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_run_one, jobs))
    else:
        rows = [_run_one(j) for j in jobs]
    return EvaluationReport(rows)


# --- rendering ----------------------------------------------------------------------

_OBSTACLE_FILL = {ObstacleKind.NON_TRAVERSABLE: "#303030", ObstacleKind.CROSSABLE: "#e08a2c",
                  ObstacleKind.DRIVE_OVER: "#c9b27c"}
_MODE_COLOR = {int(MotionMode.ACKERMANN): "#1f5fbf", int(MotionMode.DIAGONAL): "#2a9d4b",
               int(MotionMode.ZERO_TURN): "#c2185b"}


def render_svg(s: Scenario, traj: Trajectory | None = None, corridors=None, path: CoarsePath | None = None,
               params: VehicleParams = VehicleParams(), scale: float = 20.0, corridor_every: int = 10) -> str:
    """Layered SVG of the scene and any subset of corridors, coarse path and trajectory."""
    xmin, ymin, xmax, ymax = s.workspace
    W, H = (xmax - xmin) * scale, (ymax - ymin) * scale

    def P(x, y):
        return f"{(x - xmin) * scale:.2f},{(ymax - y) * scale:.2f}"

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" height="{H:.0f}" '
           f'viewBox="0 0 {W:.0f} {H:.0f}">',
           f'<rect x="0" y="0" width="{W:.0f}" height="{H:.0f}" fill="white" stroke="black"/>']
    layers = []
    out.append('<g id="obstacles">')
    for i, o in enumerate(s.statics):
        pts = " ".join(P(x, y) for x, y in o.shape.vertices)
        out.append(f'<polygon points="{pts}" fill="{_OBSTACLE_FILL[o.kind]}" data-kind="{o.kind.value}" '
                   f'data-index="{i}"/>')
    out.append("</g>")
    layers.append(("obstacles", "#303030"))
    if s.pedestrians:
        out.append('<g id="pedestrians" fill="none" stroke="#8e44ad">')
        n = traj.n if traj is not None else 200
        dt = traj.dt if traj is not None else 0.1
        for p in s.pedestrians:
            f = forecast(p, n, dt)
            for k in range(0, n + 1, max(1, n // 10)):
                mx, my = f.means[k]
                rx, ry = math.sqrt(f.variances[k, 0]) * scale, math.sqrt(f.variances[k, 1]) * scale
                out.append(f'<ellipse cx="{(mx - xmin) * scale:.2f}" cy="{(ymax - my) * scale:.2f}" '
                           f'rx="{rx:.2f}" ry="{ry:.2f}" stroke-opacity="0.5"/>')
        out.append("</g>")
        layers.append(("pedestrian 1-sigma", "#8e44ad"))
    if corridors:
        out.append('<g id="corridors" fill="none" stroke="#5dade2" stroke-width="1">')
        for j, c in enumerate(corridors):
            if j % corridor_every and j != len(corridors) - 1:
                continue
            out.append(f'<rect x="{(c.left - xmin) * scale:.2f}" y="{(ymax - c.up) * scale:.2f}" '
                       f'width="{(c.right - c.left) * scale:.2f}" height="{(c.up - c.down) * scale:.2f}"/>')
        out.append("</g>")
        layers.append(("corridors", "#5dade2"))
    if path is not None and path.pieces:
        poses, _ = path.sample(0.25, params)
        out.append('<g id="coarse-path"><polyline fill="none" stroke="#7f8c8d" stroke-dasharray="6,4" '
                   f'stroke-width="2" points="{" ".join(P(x, y) for x, y, _ in poses)}"/></g>')
        layers.append(("coarse path", "#7f8c8d"))
    if traj is not None:
        out.append('<g id="trajectory" fill="none" stroke-width="3">')
        m = traj.schedule.modes
        start = 0
        for k in range(1, len(m) + 1):
            if k == len(m) or m[k] != m[start]:
                pts = " ".join(P(x, y) for x, y in traj.states[start:k + 1, :2])
                out.append(f'<polyline stroke="{_MODE_COLOR[int(m[start])]}" points="{pts}"/>')
                start = k
        out.append("</g>")
        layers += [("Ackermann", _MODE_COLOR[1]), ("diagonal", _MODE_COLOR[2]), ("zero-turn", _MODE_COLOR[3])]
    out.append('<g id="endpoints">')
    for st, color in ((s.init, "#ff00ff"), (s.goal, "#00c000")):
        fp = footprint_corners(np.array([st.pose]), params)[0]
        out.append(f'<polygon points="{" ".join(P(x, y) for x, y in fp)}" fill="{color}" fill-opacity="0.6"/>')
    out.append("</g>")
    layers += [("start", "#ff00ff"), ("goal", "#00c000")]
    out.append('<g id="legend" font-family="sans-serif" font-size="12">')
    for i, (name, color) in enumerate(layers):
        y = 16 + 16 * i
        out.append(f'<rect x="8" y="{y - 10}" width="12" height="12" fill="{color}"/>'
                   f'<text x="26" y="{y}">{name}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def save_svg(text: str, path) -> None:
    with open(path, "w") as fh:
        fh.write(text)
