"""Scenario synthesis, obstacle attributes, scene rasterization and file I/O."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from .geometry import (ConvexPolygon, VehicleParams, footprint_corners, points_in_polygon,
                       rects_overlap_polygon)
from .kinematics import VehicleState

WORKSPACE_SIZE = 40.0
DEFAULT_PARAMS = VehicleParams()

MAGENTA = (255, 0, 255)
GREEN = (0, 255, 0)
BLACK = (0, 0, 0)
WHITE = (255, 255, 255)


class ObstacleKind(str, Enum):
    NON_TRAVERSABLE = "non_traversable"
    CROSSABLE = "crossable"
    DRIVE_OVER = "drive_over"


@dataclass(frozen=True)
class ObstacleAttribute:
    kind: ObstacleKind
    height: float

    def __post_init__(self):
        if not (self.height >= 0 and math.isfinite(self.height)):
            raise ValueError("obstacle height must be a finite non-negative number")


@dataclass(frozen=True)
class StaticObstacle:
    shape: ConvexPolygon
    attribute: ObstacleAttribute

    @property
    def kind(self) -> ObstacleKind:
        return self.attribute.kind

    @property
    def height(self) -> float:
        return self.attribute.height


@dataclass(frozen=True)
class PedestrianTrack:
    """Constant-acceleration pedestrian with Gaussian motion noise.

    ``sigma_ax2``/``sigma_ay2`` hold per-step acceleration variances; a track
    shorter than the forecast horizon repeats its last entry.
    """
    x0: float
    y0: float
    vx: float
    vy: float
    ax: float = 0.0
    ay: float = 0.0
    sigma_x2: float = 0.5
    sigma_y2: float = 0.5
    sigma_vx2: float = 0.1
    sigma_vy2: float = 0.1
    sigma_ax2: tuple[float, ...] = (0.05,)
    sigma_ay2: tuple[float, ...] = (0.05,)

    def __post_init__(self):
        for name in ("sigma_x2", "sigma_y2", "sigma_vx2", "sigma_vy2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("sigma_ax2", "sigma_ay2"):
            seq = tuple(float(s) for s in getattr(self, name))
            if not seq or min(seq) < 0:
                raise ValueError(f"{name} must be a non-empty sequence of non-negative variances")
            object.__setattr__(self, name, seq)

    def accel_variance(self, i: int) -> tuple[float, float]:
        ax = self.sigma_ax2[min(i - 1, len(self.sigma_ax2) - 1)]
        ay = self.sigma_ay2[min(i - 1, len(self.sigma_ay2) - 1)]
        return ax, ay


@dataclass(frozen=True)
class Scenario:
    workspace: tuple[float, float, float, float]
    statics: tuple[StaticObstacle, ...]
    pedestrians: tuple[PedestrianTrack, ...]
    init: VehicleState
    goal: VehicleState
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "statics", tuple(self.statics))
        object.__setattr__(self, "pedestrians", tuple(self.pedestrians))
        object.__setattr__(self, "workspace", tuple(float(w) for w in self.workspace))
        object.__setattr__(self, "init", VehicleState(*map(float, self.init)))
        object.__setattr__(self, "goal", VehicleState(*map(float, self.goal)))

    def obstacles_of(self, *kinds: ObstacleKind) -> list[StaticObstacle]:
        return [o for o in self.statics if o.kind in kinds]

    @property
    def blocking(self) -> list[ConvexPolygon]:
        return [o.shape for o in self.statics if o.kind == ObstacleKind.NON_TRAVERSABLE]

    def replace(self, **kw) -> "Scenario":
        d = dict(workspace=self.workspace, statics=self.statics, pedestrians=self.pedestrians,
                 init=self.init, goal=self.goal, seed=self.seed)
        d.update(kw)
        return Scenario(**d)


class ScenarioGenerationError(RuntimeError):
    pass


class ScenarioParseError(ValueError):
    pass


# --- generation ---------------------------------------------------------------

def random_convex_polygon(rng: np.random.Generator, n_vertices: int, area: float,
                          center: tuple[float, float]) -> ConvexPolygon:
    for _ in range(1000):
        ang = np.sort(rng.uniform(0.0, 2.0 * math.pi, n_vertices))
        rad = rng.uniform(0.6, 1.0, n_vertices)
        # mild elongation keeps shapes varied without slivers
        stretch = rng.uniform(1.0, 2.0)
        pts = np.stack([stretch * rad * np.cos(ang), rad * np.sin(ang) / stretch], axis=1)
        try:
            hull = ConvexHull(pts)
        except Exception:
            continue
        if len(hull.vertices) != n_vertices:
            continue
        v = pts[hull.vertices]
        try:
            poly = ConvexPolygon(v)
        except ValueError:
            continue
        # reject near-degenerate corners
        e = np.roll(poly.vertices, -1, axis=0) - poly.vertices
        if np.min(np.hypot(e[:, 0], e[:, 1])) < 0.08:
            continue
        scale = math.sqrt(area / poly.area)
        c = poly.centroid
        rot = rng.uniform(-math.pi, math.pi)
        R = np.array([[math.cos(rot), -math.sin(rot)], [math.sin(rot), math.cos(rot)]])
        v = ((poly.vertices - np.array(c)) * scale) @ R.T + np.asarray(center)
        return ConvexPolygon(v)
    raise ScenarioGenerationError("could not draw a convex polygon")


def _random_attribute(rng: np.random.Generator, h_v: float, mix=(0.5, 0.25, 0.25)) -> ObstacleAttribute:
    u = rng.uniform()
    if u < mix[0]:
        return ObstacleAttribute(ObstacleKind.NON_TRAVERSABLE, float(rng.uniform(0.5, 2.0)))
    if u < mix[0] + mix[1]:
        return ObstacleAttribute(ObstacleKind.CROSSABLE, float(rng.uniform(0.0, 0.8 * h_v)))
    return ObstacleAttribute(ObstacleKind.DRIVE_OVER, float(rng.uniform(0.0, 0.5 * h_v)))


def pose_is_free(state, statics, workspace, params: VehicleParams,
                 kinds=(ObstacleKind.NON_TRAVERSABLE,)) -> bool:
    corners = footprint_corners(np.array([[state[0], state[1], state[3] if len(state) > 3 else state[2]]]), params)
    xmin, ymin, xmax, ymax = workspace
    if (corners[..., 0].min() < xmin or corners[..., 0].max() > xmax
            or corners[..., 1].min() < ymin or corners[..., 1].max() > ymax):
        return False
    for o in statics:
        if o.kind in kinds and rects_overlap_polygon(corners, o.shape)[0]:
            return False
    return True


def _in_drive_over_box(state, statics) -> bool:
    for o in statics:
        if o.kind == ObstacleKind.DRIVE_OVER:
            x0, y0, x1, y1 = o.shape.bbox
            if x0 <= state[0] <= x1 and y0 <= state[1] <= y1:
                return True
    return False


def random_pedestrian(rng: np.random.Generator, workspace) -> PedestrianTrack:
    xmin, ymin, xmax, ymax = workspace
    speed = rng.uniform(0.5, 1.5)
    heading = rng.uniform(-math.pi, math.pi)
    return PedestrianTrack(
        x0=float(rng.uniform(xmin, xmax)), y0=float(rng.uniform(ymin, ymax)),
        vx=float(speed * math.cos(heading)), vy=float(speed * math.sin(heading)),
        ax=float(rng.uniform(-0.2, 0.2)), ay=float(rng.uniform(-0.2, 0.2)))


def generate_scenario(seed: int, n_obstacles: int, params: VehicleParams = DEFAULT_PARAMS,
                      attribute_mix=(0.5, 0.25, 0.25), n_pedestrians: int | None = None,
                      max_rejections: int = 10_000) -> Scenario:
    """Random 40 m x 40 m scene with convex obstacles of 4-7 vertices and
    5-50 m^2 area, plus uniformly drawn initial and goal poses.

    Deterministic in ``seed``. ``n_pedestrians=None`` draws 0-2 pedestrians.
    """
    if n_obstacles < 0:
        raise ValueError("n_obstacles must be non-negative")
    rng = np.random.default_rng(seed)
    ws = (0.0, 0.0, WORKSPACE_SIZE, WORKSPACE_SIZE)
    statics = []
    for _ in range(n_obstacles):
        nv = int(rng.integers(4, 8))
        area = float(rng.uniform(5.0, 50.0))
        for _ in range(max_rejections):
            c = (float(rng.uniform(ws[0], ws[2])), float(rng.uniform(ws[1], ws[3])))
            poly = random_convex_polygon(rng, nv, area, c)
            x0, y0, x1, y1 = poly.bbox
            if x0 >= ws[0] and y0 >= ws[1] and x1 <= ws[2] and y1 <= ws[3]:
                break
        else:
            raise ScenarioGenerationError("could not place an obstacle inside the workspace")
        statics.append(StaticObstacle(poly, _random_attribute(rng, params.ground_clearance, attribute_mix)))

    def sample_state():
        for _ in range(max_rejections):
            s = VehicleState(float(rng.uniform(ws[0], ws[2])), float(rng.uniform(ws[1], ws[3])), 0.0,
                             float(rng.uniform(-math.pi, math.pi)), 0.0)
            # stricter than required: clear of every obstacle and of drive-over boxes
            if (pose_is_free(s, statics, ws, params, kinds=tuple(ObstacleKind))
                    and not _in_drive_over_box(s, statics)):
                return s
        raise ScenarioGenerationError("free-space sampling failed after 10,000 rejections")

    init = sample_state()
    goal = sample_state()
    n_ped = int(rng.integers(0, 3)) if n_pedestrians is None else n_pedestrians
    peds = tuple(random_pedestrian(rng, ws) for _ in range(n_ped))
    return Scenario(ws, tuple(statics), peds, init, goal, seed)


DENSITY = {"low": 5, "medium": 7, "high": 9}


# --- rasterization --------------------------------------------------------------

@dataclass(frozen=True)
class SceneImage:
    pixels: np.ndarray                    # (H, W, 3) uint8, row 0 at the top of the workspace
    tallies: dict = field(default_factory=dict, compare=False)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, SceneImage) and np.array_equal(self.pixels, other.pixels)


def pixel_centers(workspace, W: int, H: int) -> np.ndarray:
    xmin, ymin, xmax, ymax = workspace
    xs = xmin + (np.arange(W) + 0.5) * (xmax - xmin) / W
    ys = ymax - (np.arange(H) + 0.5) * (ymax - ymin) / H
    X, Y = np.meshgrid(xs, ys)
    return np.stack([X.ravel(), Y.ravel()], axis=1)


def rasterize_scene(s: Scenario, W: int = 224, H: int = 224,
                    params: VehicleParams = DEFAULT_PARAMS) -> SceneImage:
    if W <= 0 or H <= 0:
        raise ValueError("image size must be positive")
    pts = pixel_centers(s.workspace, W, H)
    img = np.full((H * W, 3), 255, dtype=np.uint8)

    def fill(poly, color):
        # only pixels inside the bounding box need the full test
        lo, hi = poly.vertices.min(axis=0), poly.vertices.max(axis=0)
        idx = np.flatnonzero(np.all((pts >= lo) & (pts <= hi), axis=1))
        img[idx[points_in_polygon(pts[idx], poly)]] = color

    for o in s.statics:
        fill(o.shape, BLACK)
    for state, color in ((s.init, MAGENTA), (s.goal, GREEN)):
        fill(ConvexPolygon(footprint_corners(np.array([state.pose]), params)[0]), color)
    img = img.reshape(H, W, 3)
    tallies = {
        "init": int(np.all(img == MAGENTA, axis=-1).sum()),
        "goal": int(np.all(img == GREEN, axis=-1).sum()),
        "obs": int(np.all(img == BLACK, axis=-1).sum()),
        "free": int(np.all(img == WHITE, axis=-1).sum()),
    }
    return SceneImage(img, tallies)


def save_ppm(img: SceneImage, path) -> None:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(img.pixels, dtype=np.uint8).tobytes())


def load_ppm(path) -> SceneImage:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    pos += 1
    if tokens[0] != "P6" or tokens[3] != "255":
        raise ValueError("only 8-bit binary P6 images are supported")
    w, h = int(tokens[1]), int(tokens[2])
    px = np.frombuffer(data[pos:pos + w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()
    return SceneImage(px)


# --- persistence -------------------------------------------------------------------

def _state_to_dict(s: VehicleState) -> dict:
    return {"x": s.x, "y": s.y, "v": s.v, "theta": s.theta, "delta": s.delta}


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "format": "wisplan-scenario/1",
        "seed": s.seed,
        "workspace": list(s.workspace),
        "obstacles": [
            {"vertices": o.shape.vertices.tolist(), "kind": o.kind.value, "height": o.height}
            for o in s.statics
        ],
        "pedestrians": [
            {"x0": p.x0, "y0": p.y0, "vx": p.vx, "vy": p.vy, "ax": p.ax, "ay": p.ay,
             "sigma_x2": p.sigma_x2, "sigma_y2": p.sigma_y2, "sigma_vx2": p.sigma_vx2,
             "sigma_vy2": p.sigma_vy2, "sigma_ax2": list(p.sigma_ax2), "sigma_ay2": list(p.sigma_ay2)}
            for p in s.pedestrians
        ],
        "init": _state_to_dict(s.init),
        "goal": _state_to_dict(s.goal),
    }


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2) + "\n")


def _num(d: dict, key: str, where: str, default=None, nonneg=False) -> float:
    if key not in d:
        if default is not None:
            return default
        raise ScenarioParseError(f"{where}.{key}: missing field")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ScenarioParseError(f"{where}.{key}: expected a finite number, got {v!r}")
    if nonneg and v < 0:
        raise ScenarioParseError(f"{where}.{key}: must be non-negative, got {v!r}")
    return float(v)


def _state_from(d, where: str) -> VehicleState:
    if not isinstance(d, dict):
        raise ScenarioParseError(f"{where}: expected an object")
    return VehicleState(_num(d, "x", where), _num(d, "y", where), _num(d, "v", where, 0.0),
                        _num(d, "theta", where), _num(d, "delta", where, 0.0))


def scenario_from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ScenarioParseError("document: expected an object at top level")
    ws = d.get("workspace", [0.0, 0.0, WORKSPACE_SIZE, WORKSPACE_SIZE])
    if not (isinstance(ws, list) and len(ws) == 4):
        raise ScenarioParseError("workspace: expected [xmin, ymin, xmax, ymax]")
    ws_t = tuple(_num({"v": w}, "v", f"workspace[{i}]") for i, w in enumerate(ws))
    if not (ws_t[2] > ws_t[0] and ws_t[3] > ws_t[1]):
        raise ScenarioParseError("workspace: max bounds must exceed min bounds")
    statics = []
    for i, o in enumerate(d.get("obstacles", [])):
        where = f"obstacles[{i}]"
        if not isinstance(o, dict):
            raise ScenarioParseError(f"{where}: expected an object")
        try:
            kind = ObstacleKind(o.get("kind", "non_traversable"))
        except ValueError:
            raise ScenarioParseError(f"{where}.kind: unknown obstacle kind {o.get('kind')!r}") from None
        height = _num(o, "height", where, nonneg=True)
        verts = o.get("vertices")
        if not isinstance(verts, list):
            raise ScenarioParseError(f"{where}.vertices: expected a list of [x, y] pairs")
        try:
            poly = ConvexPolygon(verts)
        except (ValueError, TypeError) as exc:
            raise ScenarioParseError(f"{where}.vertices: {exc}") from None
        statics.append(StaticObstacle(poly, ObstacleAttribute(kind, height)))
    peds = []
    for i, p in enumerate(d.get("pedestrians", [])):
        where = f"pedestrians[{i}]"
        if not isinstance(p, dict):
            raise ScenarioParseError(f"{where}: expected an object")
        kw = {k: _num(p, k, where) for k in ("x0", "y0", "vx", "vy")}
        kw["ax"] = _num(p, "ax", where, 0.0)
        kw["ay"] = _num(p, "ay", where, 0.0)
        for k in ("sigma_x2", "sigma_y2", "sigma_vx2", "sigma_vy2"):
            if k in p:
                kw[k] = _num(p, k, where, nonneg=True)
        for k in ("sigma_ax2", "sigma_ay2"):
            if k in p:
                seq = p[k] if isinstance(p[k], list) else [p[k]]
                kw[k] = tuple(_num({"v": s}, "v", f"{where}.{k}[{j}]", nonneg=True) for j, s in enumerate(seq))
        peds.append(PedestrianTrack(**kw))
    for key in ("init", "goal"):
        if key not in d:
            raise ScenarioParseError(f"{key}: missing field")
    seed = d.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ScenarioParseError(f"seed: expected an integer, got {seed!r}")
    return Scenario(ws_t, tuple(statics), tuple(peds), _state_from(d["init"], "init"),
                    _state_from(d["goal"], "goal"), seed)


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(d)
