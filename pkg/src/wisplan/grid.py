"""Occupancy lattice, grid A* and Dijkstra distance fields."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import ConvexHull

from .geometry import ConvexPolygon, Point2, point_polygon_distance

SQRT2 = math.sqrt(2.0)
_NEIGHBOURS = [(-1, -1, SQRT2), (-1, 0, 1.0), (-1, 1, SQRT2), (0, -1, 1.0),
               (0, 1, 1.0), (1, -1, SQRT2), (1, 0, 1.0), (1, 1, SQRT2)]


class SearchFailure(RuntimeError):
    """Raised when a grid search cannot reach its goal."""


@dataclass
class OccupancyGrid:
    """Lattice of nodes at ``origin + (i, j) * resolution`` (i along x).

    ``blocked[j, i]`` is true when the square cell around node (i, j) touches
    an inflated obstacle.
    """
    origin: tuple[float, float]
    resolution: float
    blocked: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.blocked.shape

    def node_of(self, x: float, y: float) -> tuple[int, int]:
        ny, nx = self.blocked.shape
        i = int(round((x - self.origin[0]) / self.resolution))
        j = int(round((y - self.origin[1]) / self.resolution))
        return min(max(i, 0), nx - 1), min(max(j, 0), ny - 1)

    def center(self, i: int, j: int) -> Point2:
        return Point2(self.origin[0] + i * self.resolution, self.origin[1] + j * self.resolution)

    def centers(self) -> np.ndarray:
        ny, nx = self.blocked.shape
        xs = self.origin[0] + np.arange(nx) * self.resolution
        ys = self.origin[1] + np.arange(ny) * self.resolution
        X, Y = np.meshgrid(xs, ys)
        return np.stack([X, Y], axis=-1)

    def is_free(self, i: int, j: int) -> bool:
        ny, nx = self.blocked.shape
        return 0 <= i < nx and 0 <= j < ny and not self.blocked[j, i]


def occupancy_grid(workspace, polygons, resolution: float = 0.5, inflation: float = 0.48) -> OccupancyGrid:
    """Mark nodes whose cell overlaps a polygon grown by ``inflation``.

    A square cell overlaps the grown polygon iff its center lies within
    ``inflation`` of the polygon grown by the cell square.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    xmin, ymin, xmax, ymax = workspace
    nx = int(round((xmax - xmin) / resolution)) + 1
    ny = int(round((ymax - ymin) / resolution)) + 1
    g = OccupancyGrid((xmin, ymin), resolution, np.zeros((ny, nx), dtype=bool))
    pts = g.centers().reshape(-1, 2)
    h = 0.5 * resolution
    sq = np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
    flat = g.blocked.reshape(-1)
    for poly in polygons:
        v = (poly.vertices[:, None, :] + sq[None]).reshape(-1, 2)
        grown = ConvexPolygon(v[ConvexHull(v).vertices])
        x0, y0, x1, y1 = grown.bbox
        near = ((pts[:, 0] >= x0 - inflation) & (pts[:, 0] <= x1 + inflation)
                & (pts[:, 1] >= y0 - inflation) & (pts[:, 1] <= y1 + inflation))
        idx = np.nonzero(near)[0]
        if len(idx):
            flat[idx] |= point_polygon_distance(pts[idx], grown) <= inflation
    return g


def astar_nodes(grid: OccupancyGrid, start: tuple[int, int], goal: tuple[int, int]) -> list[tuple[int, int]]:
    """8-connected A* with the octile heuristic; deterministic tie-breaking."""
    if not grid.is_free(*start) or not grid.is_free(*goal):
        raise SearchFailure("start or goal node is blocked")
    gx, gy = goal

    def h(i, j):
        dx, dy = abs(i - gx), abs(j - gy)
        return (dx + dy) + (SQRT2 - 2.0) * min(dx, dy)

    g_cost = {start: 0.0}
    parent = {start: None}
    heap = [(h(*start), 0.0, 0, start)]
    counter = 1
    closed = set()
    while heap:
        _, g, _, node = heapq.heappop(heap)
        if node in closed:
            continue
        if node == goal:
            path = []
            while node is not None:
                path.append(node)
                node = parent[node]
            return path[::-1]
        closed.add(node)
        i, j = node
        for di, dj, c in _NEIGHBOURS:
            nb = (i + di, j + dj)
            if nb in closed or not grid.is_free(*nb):
                continue
            ng = g + c
            if ng < g_cost.get(nb, math.inf) - 1e-12:
                g_cost[nb] = ng
                parent[nb] = node
                heapq.heappush(heap, (ng + h(*nb), ng, counter, nb))
                counter += 1
    raise SearchFailure("goal unreachable on the occupancy grid")


def _graph(grid: OccupancyGrid):
    ny, nx = grid.blocked.shape
    free = ~grid.blocked
    ids = np.arange(nx * ny).reshape(ny, nx)
    rows, cols, w = [], [], []
    for di, dj, c in _NEIGHBOURS:
        a = free[max(0, -dj):ny - max(0, dj), max(0, -di):nx - max(0, di)]
        b = free[max(0, dj):ny - max(0, -dj) or None, max(0, di):nx - max(0, -di) or None]
        ok = a & b
        src = ids[max(0, -dj):ny - max(0, dj), max(0, -di):nx - max(0, di)][ok]
        dst = ids[max(0, dj):ny - max(0, -dj) or None, max(0, di):nx - max(0, -di) or None][ok]
        rows.append(src)
        cols.append(dst)
        w.append(np.full(len(src), c))
    rows, cols, w = np.concatenate(rows), np.concatenate(cols), np.concatenate(w)
    return coo_matrix((w, (rows, cols)), shape=(nx * ny, nx * ny)).tocsr()


def distance_field(grid: OccupancyGrid, goal: tuple[int, int]) -> np.ndarray:
    """Grid path length (in node steps, times resolution) from every node to ``goal``.

    Unreachable nodes get ``inf``.
    """
    ny, nx = grid.blocked.shape
    if not grid.is_free(*goal):
        return np.full((ny, nx), np.inf)
    d = dijkstra(_graph(grid), directed=False, indices=goal[1] * nx + goal[0])
    return d.reshape(ny, nx) * grid.resolution
