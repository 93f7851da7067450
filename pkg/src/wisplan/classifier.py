"""Scene-complexity classifier: semantic masks, pixel ratios, a pooled-raster
image encoder, state and ratio MLPs, a fusion head and BCE + alignment loss.

Everything is plain numpy with hand-written backpropagation; the estimator
wrapper follows the scikit-learn fit/predict protocol.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .geometry import VehicleParams
from .scenario import (BLACK, GREEN, MAGENTA, Scenario, SceneImage, rasterize_scene, scenario_from_dict,
                       scenario_to_dict)

log = logging.getLogger(__name__)

POOL = 24
IMG_DIM = 512
STATE_DIM = 56
RATIO_DIM = 16
HIDDEN = 64
STATE_IN = 6
EPS = 1e-7
D_IN = IMG_DIM + 2 * STATE_DIM + 3 * RATIO_DIM
RAW_DIM = POOL * POOL + 3 + 2 * STATE_IN + 6


class MaskSet(NamedTuple):
    init_mask: np.ndarray
    goal_mask: np.ndarray
    obs_mask: np.ndarray


def _color_mask(px: np.ndarray, color) -> np.ndarray:
    return np.all(px == np.asarray(color, dtype=px.dtype), axis=-1)


def compute_masks(img: SceneImage) -> MaskSet:
    """Indicator grids for the magenta start, green goal and black obstacle pixels."""
    px = img.pixels
    return MaskSet(_color_mask(px, MAGENTA), _color_mask(px, GREEN), _color_mask(px, BLACK))


def pixel_ratios(m: MaskSet) -> tuple[float, float, float]:
    total = m.init_mask.size
    return (m.init_mask.sum() / total, m.goal_mask.sum() / total, m.obs_mask.sum() / total)


def region_colors(img: SceneImage, m: MaskSet) -> tuple[np.ndarray, np.ndarray]:
    """Mean RGB (scaled to [0, 1]) inside the start and goal regions; zero if empty."""
    px = img.pixels.astype(float) / 255.0
    out = []
    for mask in (m.init_mask, m.goal_mask):
        n = mask.sum()
        out.append(px[mask].sum(axis=0) / n if n else np.zeros(3))
    return out[0], out[1]


def _pool_edges(n: int, k: int) -> list[tuple[int, int]]:
    # adaptive pooling bins: [floor(i n / k), ceil((i + 1) n / k))
    return [(i * n // k, -(-(i + 1) * n // k)) for i in range(k)]


def pooled_gray(img: SceneImage, size: int = POOL) -> np.ndarray:
    """Grayscale in [0, 1] average-pooled to ``size`` x ``size`` (adaptive bins)."""
    g = img.pixels.astype(float).mean(axis=-1) / 255.0
    H, W = g.shape
    S = np.zeros((H + 1, W + 1))
    S[1:, 1:] = g.cumsum(0).cumsum(1)
    out = np.empty((size, size))
    for i, (r0, r1) in enumerate(_pool_edges(H, size)):
        for j, (c0, c1) in enumerate(_pool_edges(W, size)):
            tot = S[r1, c1] - S[r0, c1] - S[r1, c0] + S[r0, c0]
            out[i, j] = tot / ((r1 - r0) * (c1 - c0))
    return out


def image_projection(seed: int = 0, dim: int = IMG_DIM) -> tuple[np.ndarray, np.ndarray]:
    """Fixed affine projection of the pooled raster; stands in for a pretrained backbone."""
    rng = np.random.default_rng(seed)
    n = POOL * POOL
    W = rng.normal(0.0, 1.0 / math.sqrt(n), size=(dim, n))
    b = np.zeros(dim)
    return W, b


_PROJ: dict = {}


def image_features(img: SceneImage, seed: int = 0) -> np.ndarray:
    if seed not in _PROJ:
        _PROJ[seed] = image_projection(seed)
    W, b = _PROJ[seed]
    return W @ pooled_gray(img).ravel() + b


def state_vector(st, workspace) -> np.ndarray:
    xmin, ymin, xmax, ymax = workspace
    return np.array([(st.x - xmin) / (xmax - xmin), (st.y - ymin) / (ymax - ymin),
                     math.cos(st.theta), math.sin(st.theta), st.v, st.delta])


def raw_inputs(s: Scenario, img: SceneImage | None = None, params: VehicleParams = VehicleParams()) -> np.ndarray:
    """Model-independent inputs of one scene: pooled raster, ratios, both
    states and both region colors, flattened to ``RAW_DIM`` values."""
    img = img if img is not None else rasterize_scene(s, params=params)
    m = compute_masks(img)
    ci, cg = region_colors(img, m)
    return np.concatenate([pooled_gray(img).ravel(), pixel_ratios(m), state_vector(s.init, s.workspace),
                           state_vector(s.goal, s.workspace), ci, cg])


def _split(Xraw: np.ndarray):
    n = POOL * POOL
    pooled = Xraw[:, :n]
    r = Xraw[:, n:n + 3]
    xs = Xraw[:, n + 3:n + 3 + STATE_IN]
    xf = Xraw[:, n + 3 + STATE_IN:n + 3 + 2 * STATE_IN]
    ci = Xraw[:, -6:-3]
    cg = Xraw[:, -3:]
    return pooled, r, xs, xf, ci, cg


# --- model ------------------------------------------------------------------------

_LAYERS = {
    # name: (fan_in, fan_out)
    "ratio_init_1": (1, RATIO_DIM), "ratio_init_2": (RATIO_DIM, RATIO_DIM),
    "ratio_goal_1": (1, RATIO_DIM), "ratio_goal_2": (RATIO_DIM, RATIO_DIM),
    "ratio_obs_1": (1, RATIO_DIM), "ratio_obs_2": (RATIO_DIM, RATIO_DIM),
    "state_init_1": (STATE_IN, STATE_DIM), "state_init_2": (STATE_DIM, STATE_DIM),
    "state_goal_1": (STATE_IN, STATE_DIM), "state_goal_2": (STATE_DIM, STATE_DIM),
    "color_init": (3, STATE_DIM), "color_goal": (3, STATE_DIM),
    "head_1": (D_IN, HIDDEN), "head_2": (HIDDEN, 1),
}


class MlpModel:
    """Weights ``W[name]`` (fan_in, fan_out) and biases ``b[name]``."""

    def __init__(self, W: dict, b: dict, proj_seed: int = 0):
        self.W = {k: np.asarray(v, dtype=float) for k, v in W.items()}
        self.b = {k: np.asarray(v, dtype=float) for k, v in b.items()}
        self.proj_seed = proj_seed
        for k, (fi, fo) in _LAYERS.items():
            if self.W[k].shape != (fi, fo) or self.b[k].shape != (fo,):
                raise ValueError(f"layer {k} has shape {self.W[k].shape}, expected {(fi, fo)}")

    @classmethod
    def init(cls, seed: int = 0, zero: bool = False, proj_seed: int = 0) -> "MlpModel":
        rng = np.random.default_rng(seed)
        W, b = {}, {}
        for k, (fi, fo) in _LAYERS.items():
            lim = 1.0 / math.sqrt(fi)
            W[k] = np.zeros((fi, fo)) if zero else rng.uniform(-lim, lim, size=(fi, fo))
            b[k] = np.zeros(fo) if zero else rng.uniform(-lim, lim, size=fo)
        return cls(W, b, proj_seed)

    def copy(self) -> "MlpModel":
        return MlpModel({k: v.copy() for k, v in self.W.items()}, {k: v.copy() for k, v in self.b.items()},
                        self.proj_seed)

    def params(self):
        for k in _LAYERS:
            yield ("W", k), self.W[k]
            yield ("b", k), self.b[k]

    def to_dict(self) -> dict:
        return {"format": "wisplan-mlp/1", "proj_seed": self.proj_seed,
                "layers": {k: {"shape": list(self.W[k].shape), "W": self.W[k].tolist(), "b": self.b[k].tolist()}
                           for k in _LAYERS}}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        if d.get("format") != "wisplan-mlp/1":
            raise ValueError("not a classifier checkpoint")
        L = d["layers"]
        return cls({k: L[k]["W"] for k in _LAYERS}, {k: L[k]["b"] for k in _LAYERS}, int(d.get("proj_seed", 0)))


class Outputs(NamedTuple):
    y_hat: np.ndarray
    color_init: np.ndarray
    color_goal: np.ndarray
    state_init: np.ndarray
    state_goal: np.ndarray
    cache: dict


def _relu(z):
    return np.maximum(z, 0.0)


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _mlp2(model, name, x, cache):
    z1 = x @ model.W[name + "_1"] + model.b[name + "_1"]
    h = _relu(z1)
    out = h @ model.W[name + "_2"] + model.b[name + "_2"]
    cache[name] = (x, z1, h)
    return out


def forward_raw(model: MlpModel, Xraw: np.ndarray) -> Outputs:
    """Batch forward pass on ``raw_inputs`` rows."""
    Xraw = np.atleast_2d(np.asarray(Xraw, dtype=float))
    if Xraw.shape[1] != RAW_DIM:
        raise ValueError(f"expected {RAW_DIM} raw inputs, got {Xraw.shape[1]}")
    pooled, r, xs, xf, ci, cg = _split(Xraw)
    if model.proj_seed not in _PROJ:
        _PROJ[model.proj_seed] = image_projection(model.proj_seed)
    P, pb = _PROJ[model.proj_seed]
    cache = {}
    f_img = pooled @ P.T + pb
    fs_i = _mlp2(model, "state_init", xs, cache)
    fs_g = _mlp2(model, "state_goal", xf, cache)
    fr = [_mlp2(model, f"ratio_{n}", r[:, i:i + 1], cache) for i, n in enumerate(("init", "goal", "obs"))]
    Fc = np.concatenate([f_img, fs_i, fs_g] + fr, axis=1)
    z1 = Fc @ model.W["head_1"] + model.b["head_1"]
    h = _relu(z1)
    z2 = (h @ model.W["head_2"] + model.b["head_2"])[:, 0]
    y = _sigmoid(z2)
    fc_i = ci @ model.W["color_init"] + model.b["color_init"]
    fc_g = cg @ model.W["color_goal"] + model.b["color_goal"]
    cache.update(Fc=Fc, z1=z1, h=h, ci=ci, cg=cg)
    return Outputs(y, fc_i, fc_g, fs_i, fs_g, cache)


def forward(model: MlpModel, img: SceneImage, Xs, Xf, workspace=(0.0, 0.0, 40.0, 40.0)) -> Outputs:
    m = compute_masks(img)
    ci, cg = region_colors(img, m)
    raw = np.concatenate([pooled_gray(img).ravel(), pixel_ratios(m), state_vector(Xs, workspace),
                          state_vector(Xf, workspace), ci, cg])
    return forward_raw(model, raw[None, :])


@dataclass(frozen=True)
class TrainConfig:
    lambda_ce: float = 0.1
    lambda_align: float = 0.1
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.lambda_ce < 0 or self.lambda_align < 0:
            raise ValueError("loss weights must be non-negative")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("invalid optimiser settings")


def loss(out: Outputs, Y, cfg: TrainConfig = TrainConfig()) -> float:
    """Mean over the batch of lambda_CE * BCE + lambda_align * (|dc_init| + |dc_goal|)."""
    Y = np.asarray(Y, dtype=float).reshape(-1)
    y = np.clip(out.y_hat, EPS, 1.0 - EPS)
    ce = -(Y * np.log(y) + (1.0 - Y) * np.log(1.0 - y))
    al = (np.linalg.norm(out.color_init - out.state_init, axis=1)
          + np.linalg.norm(out.color_goal - out.state_goal, axis=1))
    return float(np.mean(cfg.lambda_ce * ce + cfg.lambda_align * al))


def _back_mlp2(model, name, g_out, cache, grads):
    x, z1, h = cache[name]
    grads[("W", name + "_2")] += h.T @ g_out
    grads[("b", name + "_2")] += g_out.sum(0)
    gz1 = (g_out @ model.W[name + "_2"].T) * (z1 > 0)
    grads[("W", name + "_1")] += x.T @ gz1
    grads[("b", name + "_1")] += gz1.sum(0)


def loss_and_grad(model: MlpModel, Xraw: np.ndarray, Y, cfg: TrainConfig = TrainConfig()):
    out = forward_raw(model, Xraw)
    c = out.cache
    Y = np.asarray(Y, dtype=float).reshape(-1)
    n = len(Y)
    L = loss(out, Y, cfg)
    grads = {key: np.zeros_like(p) for key, p in model.params()}
    y = out.y_hat
    clipped = (y < EPS) | (y > 1.0 - EPS)
    gz2 = np.where(clipped, 0.0, cfg.lambda_ce * (y - Y)) / n
    grads[("W", "head_2")] += c["h"].T @ gz2[:, None]
    grads[("b", "head_2")] += np.array([gz2.sum()])
    gz1 = (gz2[:, None] @ model.W["head_2"].T) * (c["z1"] > 0)
    grads[("W", "head_1")] += c["Fc"].T @ gz1
    grads[("b", "head_1")] += gz1.sum(0)
    gFc = gz1 @ model.W["head_1"].T
    o = IMG_DIM
    g_si = gFc[:, o:o + STATE_DIM].copy()
    g_sg = gFc[:, o + STATE_DIM:o + 2 * STATE_DIM].copy()
    o += 2 * STATE_DIM
    for i, nme in enumerate(("init", "goal", "obs")):
        _back_mlp2(model, f"ratio_{nme}", gFc[:, o + i * RATIO_DIM:o + (i + 1) * RATIO_DIM], c, grads)
    # alignment terms
    for fc, fs, g_s, cname, x in ((out.color_init, out.state_init, g_si, "color_init", c["ci"]),
                                  (out.color_goal, out.state_goal, g_sg, "color_goal", c["cg"])):
        d = fc - fs
        nrm = np.linalg.norm(d, axis=1, keepdims=True)
        u = np.where(nrm > 0, d / np.where(nrm > 0, nrm, 1.0), 0.0) * cfg.lambda_align / n
        grads[("W", cname)] += x.T @ u
        grads[("b", cname)] += u.sum(0)
        g_s -= u
    _back_mlp2(model, "state_init", g_si, c, grads)
    _back_mlp2(model, "state_goal", g_sg, c, grads)
    return L, grads


class Adam:
    def __init__(self, model: MlpModel, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(p) for k, p in model.params()}
        self.v = {k: np.zeros_like(p) for k, p in model.params()}
        self.t = 0

    def step(self, model: MlpModel, grads: dict) -> None:
        c = self.cfg
        self.t += 1
        for key, p in model.params():
            g = grads[key]
            self.m[key] = c.beta1 * self.m[key] + (1 - c.beta1) * g
            self.v[key] = c.beta2 * self.v[key] + (1 - c.beta2) * g * g
            mh = self.m[key] / (1 - c.beta1 ** self.t)
            vh = self.v[key] / (1 - c.beta2 ** self.t)
            p -= c.learning_rate * mh / (np.sqrt(vh) + c.adam_eps)


def split_indices(n: int, seed: int = 0, ratios=(8, 1, 1)):
    """Shuffled 8:1:1 train/validation/test index split."""
    rng = np.random.default_rng(seed)
    idx = rng.permutation(n)
    tot = sum(ratios)
    n_val = max(1, int(round(n * ratios[1] / tot)))
    n_test = max(1, int(round(n * ratios[2] / tot)))
    n_tr = n - n_val - n_test
    if n_tr < 1:
        raise ValueError("dataset too small for an 8:1:1 split")
    return idx[:n_tr], idx[n_tr:n_tr + n_val], idx[n_tr + n_val:]


@dataclass
class TrainHistory:
    train_loss: list
    val_loss: list
    val_acc: list
    best_epoch: int


def accuracy(model: MlpModel, Xraw, Y) -> float:
    y = forward_raw(model, Xraw).y_hat
    return float(np.mean((y > 0.5) == (np.asarray(Y) > 0.5)))


def train(Xraw: np.ndarray, Y, cfg: TrainConfig = TrainConfig(), val=None) -> tuple[MlpModel, TrainHistory]:
    """Mini-batch Adam; returns the checkpoint with the best validation accuracy.

    ``train_loss`` holds the mean training loss at the end of each epoch.
    """
    Xraw = np.asarray(Xraw, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if len(Y) == 0:
        raise ValueError("empty training split")
    rng = np.random.default_rng(cfg.seed)
    model = MlpModel.init(cfg.seed)
    opt = Adam(model, cfg)
    hist = TrainHistory([], [], [], 0)
    best = (-1.0, model.copy())
    for ep in range(cfg.epochs):
        order = rng.permutation(len(Y))
        for s0 in range(0, len(Y), cfg.batch_size):
            b = order[s0:s0 + cfg.batch_size]
            _, g = loss_and_grad(model, Xraw[b], Y[b], cfg)
            opt.step(model, g)
        hist.train_loss.append(loss(forward_raw(model, Xraw), Y, cfg))
        if val is not None and len(val[1]):
            hist.val_loss.append(loss(forward_raw(model, val[0]), val[1], cfg))
            acc = accuracy(model, val[0], val[1])
            hist.val_acc.append(acc)
            if acc > best[0]:
                best = (acc, model.copy())
                hist.best_epoch = ep
    if val is None or not len(val[1]):
        return model, hist
    return best[1], hist


# --- labeling and datasets ---------------------------------------------------------

@dataclass
class LabeledScene:
    scenario: Scenario
    label: int                  # 1 = hard
    t_direct: float
    t_guided: float
    ok_direct: bool
    ok_guided: bool


def label_scenario(s: Scenario, cfg=None) -> LabeledScene | None:
    """Run the planner with and without guided points; easy iff the direct run
    succeeds in strictly less wall time. Both failing drops the scene."""
    from .planner import PlannerConfig, initial_path

    cfg = cfg or PlannerConfig()
    t = time.perf_counter()
    ok_d = initial_path(s, cfg=cfg, policy="easy") is not None
    t_d = time.perf_counter() - t
    t = time.perf_counter()
    ok_g = initial_path(s, cfg=cfg, policy="hard") is not None
    t_g = time.perf_counter() - t
    if not ok_d and not ok_g:
        log.info("scenario %d dropped: both planner runs failed", s.seed)
        return None
    easy = ok_d and (not ok_g or t_d < t_g)
    return LabeledScene(s, 0 if easy else 1, t_d, t_g, ok_d, ok_g)


def label_dataset(scenarios: Sequence[Scenario], cfg=None, workers: int = 1) -> list[LabeledScene]:
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            out = list(ex.map(label_scenario, scenarios, [cfg] * len(scenarios)))
    else:
        out = [label_scenario(s, cfg) for s in scenarios]
    return [o for o in out if o is not None]


def save_dataset(items: Sequence[LabeledScene], path) -> None:
    d = {"format": "wisplan-dataset/1",
         "items": [{"scenario": scenario_to_dict(it.scenario), "label": it.label, "t_direct": it.t_direct,
                    "t_guided": it.t_guided, "ok_direct": it.ok_direct, "ok_guided": it.ok_guided}
                   for it in items]}
    Path(path).write_text(json.dumps(d))


def load_dataset(path) -> list[LabeledScene]:
    d = json.loads(Path(path).read_text())
    if d.get("format") != "wisplan-dataset/1":
        raise ValueError("not a dataset file")
    return [LabeledScene(scenario_from_dict(it["scenario"]), int(it["label"]), float(it["t_direct"]),
                         float(it["t_guided"]), bool(it["ok_direct"]), bool(it["ok_guided"])) for it in d["items"]]


# --- estimator ------------------------------------------------------------------------

class SceneClassifier(ClassifierMixin, BaseEstimator):
    """scikit-learn style wrapper; ``X`` rows are ``raw_inputs`` vectors."""

    def __init__(self, lambda_ce=0.1, lambda_align=0.1, learning_rate=1e-4, batch_size=32, epochs=100,
                 seed=0):
        self.lambda_ce = lambda_ce
        self.lambda_align = lambda_align
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed

    def _cfg(self) -> TrainConfig:
        return TrainConfig(self.lambda_ce, self.lambda_align, self.learning_rate, self.batch_size,
                           self.epochs, self.seed)

    def fit(self, X, y, X_val=None, y_val=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=int)
        val = None if X_val is None else (np.asarray(X_val, dtype=float), np.asarray(y_val, dtype=int))
        self.model_, self.history_ = train(X, y, self._cfg(), val)
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X) -> np.ndarray:
        p = forward_raw(self.model_, np.asarray(X, dtype=float)).y_hat
        return np.stack([1.0 - p, p], axis=1)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)

    def predict_scenario(self, s: Scenario) -> bool:
        """True when the scene is classified as a hard planning task."""
        return bool(self.predict(raw_inputs(s)[None, :])[0])

    def save(self, path) -> None:
        d = {"config": asdict(self._cfg()), "model": self.model_.to_dict()}
        Path(path).write_text(json.dumps(d))

    @classmethod
    def load(cls, path) -> "SceneClassifier":
        d = json.loads(Path(path).read_text())
        cfg = d.get("config", {})
        est = cls(**{k: cfg[k] for k in ("lambda_ce", "lambda_align", "learning_rate", "batch_size", "epochs", "seed")
                     if k in cfg})
        est.model_ = MlpModel.from_dict(d["model"])
        est.classes_ = np.array([0, 1])
        return est


def default_model_path() -> Path:
    return Path(__file__).with_name("data") / "classifier.json"


def load_default() -> SceneClassifier:
    return SceneClassifier.load(default_model_path())
