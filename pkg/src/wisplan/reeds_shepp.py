"""Shortest Reeds-Shepp curves, vectorised over query poses.

Words are evaluated in a frame where the start is the origin with zero
heading and the turning radius is one; the 48 candidate words come from the
nine base formulas combined with time-flip, reflection and backwards
transforms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ZERO = 1e-9
PI = math.pi
HALF_PI = 0.5 * math.pi

# letter per segment; 'N' pads unused slots
WORD_TYPES = (
    "LRLNN", "RLRNN", "LRLRN", "RLRLN", "LRSLN", "RLSRN", "LSRLN", "RSLRN", "LRSRN",
    "RLSLN", "RSRLN", "LSLRN", "LSRNN", "RSLNN", "LSLNN", "RSRNN", "LRSLR", "RLSRL",
)
CURVATURE = {"L": 1.0, "R": -1.0, "S": 0.0, "N": 0.0}


def mod2pi(x):
    v = np.fmod(x, 2.0 * PI)
    v = np.where(v < -PI, v + 2.0 * PI, v)
    v = np.where(v > PI, v - 2.0 * PI, v)
    return v


def _polar(x, y):
    return np.hypot(x, y), np.arctan2(y, x)


def _tau_omega(u, v, xi, eta, phi):
    delta = mod2pi(u - v)
    A = np.sin(u) - np.sin(delta)
    B = np.cos(u) - np.cos(delta) - 1.0
    t1 = np.arctan2(eta * A - xi * B, xi * A + eta * B)
    t2 = 2.0 * (np.cos(delta) - np.cos(v) - np.cos(u)) + 3.0
    tau = np.where(t2 < 0, mod2pi(t1 + PI), mod2pi(t1))
    omega = mod2pi(tau - u + v - phi)
    return tau, omega


def _LpSpLp(x, y, phi):
    u, t = _polar(x - np.sin(phi), y - 1.0 + np.cos(phi))
    v = mod2pi(phi - t)
    ok = (t >= -ZERO) & (v >= -ZERO)
    return ok, t, u, v


def _LpSpRp(x, y, phi):
    u1, t1 = _polar(x + np.sin(phi), y - 1.0 - np.cos(phi))
    u1 = u1 * u1
    okr = u1 >= 4.0
    u = np.sqrt(np.where(okr, u1 - 4.0, 0.0))
    theta = np.arctan2(2.0, u)
    t = mod2pi(t1 + theta)
    v = mod2pi(t - phi)
    return okr & (t >= -ZERO) & (v >= -ZERO), t, u, v


def _LpRmL(x, y, phi):
    xi = x - np.sin(phi)
    eta = y - 1.0 + np.cos(phi)
    u1, theta = _polar(xi, eta)
    okr = u1 <= 4.0
    u = -2.0 * np.arcsin(np.clip(0.25 * u1, -1.0, 1.0))
    t = mod2pi(theta + 0.5 * u + PI)
    v = mod2pi(phi - t + u)
    return okr & (t >= -ZERO) & (u <= ZERO), t, u, v


def _LpRupLumRm(x, y, phi):
    xi = x + np.sin(phi)
    eta = y - 1.0 - np.cos(phi)
    rho = 0.25 * (2.0 + np.sqrt(xi * xi + eta * eta))
    okr = rho <= 1.0
    u = np.arccos(np.clip(rho, -1.0, 1.0))
    t, v = _tau_omega(u, -u, xi, eta, phi)
    return okr & (t >= -ZERO) & (v <= ZERO), t, u, v


def _LpRumLumRp(x, y, phi):
    xi = x + np.sin(phi)
    eta = y - 1.0 - np.cos(phi)
    rho = (20.0 - xi * xi - eta * eta) / 16.0
    okr = (rho >= 0.0) & (rho <= 1.0)
    u = -np.arccos(np.clip(rho, -1.0, 1.0))
    okr &= u >= -HALF_PI
    t, v = _tau_omega(u, u, xi, eta, phi)
    return okr & (t >= -ZERO) & (v >= -ZERO), t, u, v


def _LpRmSmLm(x, y, phi):
    xi = x - np.sin(phi)
    eta = y - 1.0 + np.cos(phi)
    rho, theta = _polar(xi, eta)
    okr = rho >= 2.0
    r = np.sqrt(np.where(okr, rho * rho - 4.0, 0.0))
    u = 2.0 - r
    t = mod2pi(theta + np.arctan2(r, -2.0))
    v = mod2pi(phi - HALF_PI - t)
    return okr & (t >= -ZERO) & (u <= ZERO) & (v <= ZERO), t, u, v


def _LpRmSmRm(x, y, phi):
    xi = x + np.sin(phi)
    eta = y - 1.0 - np.cos(phi)
    rho, theta = _polar(-eta, xi)
    okr = rho >= 2.0
    t = theta
    u = 2.0 - rho
    v = mod2pi(t + HALF_PI - phi)
    return okr & (t >= -ZERO) & (u <= ZERO) & (v <= ZERO), t, u, v


def _LpRmSLmRp(x, y, phi):
    xi = x + np.sin(phi)
    eta = y - 1.0 - np.cos(phi)
    rho, theta = _polar(xi, eta)
    okr = rho >= 2.0
    u = 4.0 - np.sqrt(np.where(okr, rho * rho - 4.0, 0.0))
    okr &= u <= ZERO
    t = mod2pi(np.arctan2((4.0 - u) * xi - 2.0 * eta, -2.0 * xi + (u - 4.0) * eta))
    v = mod2pi(t - phi)
    return okr & (t >= -ZERO) & (v >= -ZERO), t, u, v


def _candidates(x, y, phi):
    """Yield (type_index, ok, lengths[n, 5]) for every word variant."""
    n = len(x)
    z = np.zeros(n)

    def pack(*segs):
        segs = list(segs) + [z] * (5 - len(segs))
        return np.stack([np.broadcast_to(s, (n,)) for s in segs], axis=1)

    xb = x * np.cos(phi) + y * np.sin(phi)
    yb = x * np.sin(phi) - y * np.cos(phi)
    hp = np.full(n, HALF_PI)

    # CSC
    for f, ta, tb in ((_LpSpLp, 14, 15), (_LpSpRp, 12, 13)):
        ok, t, u, v = f(x, y, phi)
        yield ta, ok, pack(t, u, v)
        ok, t, u, v = f(-x, y, -phi)
        yield ta, ok, pack(-t, -u, -v)
        ok, t, u, v = f(x, -y, -phi)
        yield tb, ok, pack(t, u, v)
        ok, t, u, v = f(-x, -y, phi)
        yield tb, ok, pack(-t, -u, -v)
    # CCC
    ok, t, u, v = _LpRmL(x, y, phi)
    yield 0, ok, pack(t, u, v)
    ok, t, u, v = _LpRmL(-x, y, -phi)
    yield 0, ok, pack(-t, -u, -v)
    ok, t, u, v = _LpRmL(x, -y, -phi)
    yield 1, ok, pack(t, u, v)
    ok, t, u, v = _LpRmL(-x, -y, phi)
    yield 1, ok, pack(-t, -u, -v)
    ok, t, u, v = _LpRmL(xb, yb, phi)
    yield 0, ok, pack(v, u, t)
    ok, t, u, v = _LpRmL(-xb, yb, -phi)
    yield 0, ok, pack(-v, -u, -t)
    ok, t, u, v = _LpRmL(xb, -yb, -phi)
    yield 1, ok, pack(v, u, t)
    ok, t, u, v = _LpRmL(-xb, -yb, phi)
    yield 1, ok, pack(-v, -u, -t)
    # CCCC
    ok, t, u, v = _LpRupLumRm(x, y, phi)
    yield 2, ok, pack(t, u, -u, v)
    ok, t, u, v = _LpRupLumRm(-x, y, -phi)
    yield 2, ok, pack(-t, -u, u, -v)
    ok, t, u, v = _LpRupLumRm(x, -y, -phi)
    yield 3, ok, pack(t, u, -u, v)
    ok, t, u, v = _LpRupLumRm(-x, -y, phi)
    yield 3, ok, pack(-t, -u, u, -v)
    ok, t, u, v = _LpRumLumRp(x, y, phi)
    yield 2, ok, pack(t, u, u, v)
    ok, t, u, v = _LpRumLumRp(-x, y, -phi)
    yield 2, ok, pack(-t, -u, -u, -v)
    ok, t, u, v = _LpRumLumRp(x, -y, -phi)
    yield 3, ok, pack(t, u, u, v)
    ok, t, u, v = _LpRumLumRp(-x, -y, phi)
    yield 3, ok, pack(-t, -u, -u, -v)
    # CCSC
    for f, ta, tb in ((_LpRmSmLm, 4, 5), (_LpRmSmRm, 8, 9)):
        ok, t, u, v = f(x, y, phi)
        yield ta, ok, pack(t, -hp, u, v)
        ok, t, u, v = f(-x, y, -phi)
        yield ta, ok, pack(-t, hp, -u, -v)
        ok, t, u, v = f(x, -y, -phi)
        yield tb, ok, pack(t, -hp, u, v)
        ok, t, u, v = f(-x, -y, phi)
        yield tb, ok, pack(-t, hp, -u, -v)
    for f, ta, tb in ((_LpRmSmLm, 6, 7), (_LpRmSmRm, 10, 11)):
        ok, t, u, v = f(xb, yb, phi)
        yield ta, ok, pack(v, u, -hp, t)
        ok, t, u, v = f(-xb, yb, -phi)
        yield ta, ok, pack(-v, -u, hp, -t)
        ok, t, u, v = f(xb, -yb, -phi)
        yield tb, ok, pack(v, u, -hp, t)
        ok, t, u, v = f(-xb, -yb, phi)
        yield tb, ok, pack(-v, -u, hp, -t)
    # CCSCC
    ok, t, u, v = _LpRmSLmRp(x, y, phi)
    yield 16, ok, pack(t, -hp, u, -hp, v)
    ok, t, u, v = _LpRmSLmRp(-x, y, -phi)
    yield 16, ok, pack(-t, hp, -u, hp, -v)
    ok, t, u, v = _LpRmSLmRp(x, -y, -phi)
    yield 17, ok, pack(t, -hp, u, -hp, v)
    ok, t, u, v = _LpRmSLmRp(-x, -y, phi)
    yield 17, ok, pack(-t, hp, -u, hp, -v)


@dataclass(frozen=True)
class RSPath:
    """Reeds-Shepp path in world units.

    ``lengths`` are signed arc lengths (negative = reverse) and ``letters`` the
    matching segment kinds; zero-length segments are dropped.
    """
    start: tuple[float, float, float]
    letters: tuple[str, ...]
    lengths: tuple[float, ...]
    radius: float

    @property
    def length(self) -> float:
        return float(sum(abs(l) for l in self.lengths))

    def segments(self):
        """Yield (letter, signed length, start pose) for every segment."""
        x, y, th = self.start
        for c, l in zip(self.letters, self.lengths):
            yield c, l, (x, y, th)
            x, y, th = _advance(x, y, th, c, l, self.radius)

    @property
    def end(self) -> tuple[float, float, float]:
        x, y, th = self.start
        for c, l in zip(self.letters, self.lengths):
            x, y, th = _advance(x, y, th, c, l, self.radius)
        return (x, y, th)

    def sample(self, step: float = 0.1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Poses along the path -> (poses[n, 3], direction[n], letter index[n]).

        Heading is unwrapped; each segment end is included.
        """
        poses = [np.array([self.start])]
        dirs = [np.array([1.0 if not self.lengths else math.copysign(1.0, self.lengths[0])])]
        seg_ids = [np.array([0])]
        for i, (c, l, p0) in enumerate(self.segments()):
            n = max(1, int(math.ceil(abs(l) / step)))
            s = np.linspace(0.0, l, n + 1)[1:]
            k = CURVATURE[c] / self.radius
            poses.append(_arc_poses(p0, k, s))
            dirs.append(np.full(n, math.copysign(1.0, l)))
            seg_ids.append(np.full(n, i))
        return np.concatenate(poses), np.concatenate(dirs), np.concatenate(seg_ids)


def _advance(x, y, th, c, l, radius):
    k = CURVATURE[c] / radius
    p = _arc_poses((x, y, th), k, np.array([l]))[0]
    return (float(p[0]), float(p[1]), float(p[2]))


def _arc_poses(p0, k, s):
    x0, y0, th0 = p0
    s = np.asarray(s, dtype=float)
    if k == 0.0:
        return np.stack([x0 + s * math.cos(th0), y0 + s * math.sin(th0), np.full_like(s, th0)], axis=1)
    th = th0 + k * s
    return np.stack([x0 + (np.sin(th) - math.sin(th0)) / k, y0 - (np.cos(th) - math.cos(th0)) / k, th], axis=1)


def _normalized_goal(starts: np.ndarray, goals: np.ndarray, radius: float):
    dx = goals[:, 0] - starts[:, 0]
    dy = goals[:, 1] - starts[:, 1]
    c, s = np.cos(starts[:, 2]), np.sin(starts[:, 2])
    x = (c * dx + s * dy) / radius
    y = (-s * dx + c * dy) / radius
    phi = goals[:, 2] - starts[:, 2]
    return x, y, phi


def shortest_words(starts, goals, radius: float):
    """Vectorised search: returns (total_length[n], type[n], lengths[n, 5]) in world units.

    Queries with no admissible word get ``inf`` length.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    goals = np.atleast_2d(np.asarray(goals, dtype=float))
    if len(starts) == 1 and len(goals) > 1:
        starts = np.repeat(starts, len(goals), axis=0)
    if len(goals) == 1 and len(starts) > 1:
        goals = np.repeat(goals, len(starts), axis=0)
    x, y, phi = _normalized_goal(starts, goals, radius)
    n = len(x)
    best_L = np.full(n, np.inf)
    best_t = np.full(n, -1, dtype=int)
    best_len = np.zeros((n, 5))
    for tid, ok, lengths in _candidates(x, y, phi):
        L = np.abs(lengths).sum(axis=1)
        better = ok & (L < best_L - 1e-12)
        if np.any(better):
            best_L = np.where(better, L, best_L)
            best_t = np.where(better, tid, best_t)
            best_len[better] = lengths[better]
    return best_L * radius, best_t, best_len * radius


def all_word_lengths(start, goal, radius: float) -> list[tuple[str, np.ndarray]]:
    """Every admissible candidate word for one query (used by tests)."""
    x, y, phi = _normalized_goal(np.atleast_2d(start), np.atleast_2d(goal), radius)
    out = []
    for tid, ok, lengths in _candidates(x, y, phi):
        if ok[0]:
            out.append((WORD_TYPES[tid], lengths[0] * radius))
    return out


def path_from_word(start, tid: int, lengths, radius: float) -> RSPath:
    letters, ls = [], []
    for c, l in zip(WORD_TYPES[tid], lengths):
        if c == "N" or abs(l) < 1e-12:
            continue
        letters.append(c)
        ls.append(float(l))
    return RSPath(tuple(float(v) for v in start), tuple(letters), tuple(ls), radius)


def shortest_path(start, goal, radius: float) -> RSPath | None:
    L, tid, lengths = shortest_words(np.array([start]), np.array([goal]), radius)
    if not np.isfinite(L[0]):
        return None
    return path_from_word(start, int(tid[0]), lengths[0], radius)


def shortest_length(starts, goals, radius: float) -> np.ndarray:
    return shortest_words(starts, goals, radius)[0]
