"""Goal generation and roadmap path planning.

Frontier goals greedily maximize clearance with mutual suppression; revisit
goals ring k-means clusters of occupied cells. Paths come from one Dijkstra
pass over the 8-connected free-space grid, which returns optimal grid paths
for every goal at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import binary_dilation
from scipy.sparse.csgraph import dijkstra as cs_dijkstra

from .geometry import Point2, Pose2

FRONTIER = "frontier"
REVISIT = "revisit"


@dataclass(frozen=True)
class GoalConfig:
    position: Point2
    kind: str
    index: int
    heading_hint: float = 0.0


@dataclass
class CandidatePath:
    goal: GoalConfig
    cells: np.ndarray            # (n, 2) grid cells from start to goal
    waypoints: list              # [Pose2] headed along the path
    length: float
    utility: float = None
    terms: dict = field(default_factory=dict)


def box_mask(grid, bbox) -> np.ndarray:
    """Boolean mask of grid cells whose centers lie inside the bounding box."""
    xmin, ymin, xmax, ymax = bbox
    xs = grid.origin[0] + (np.arange(grid.nx) + 0.5) * grid.resolution
    ys = grid.origin[1] + (np.arange(grid.ny) + 0.5) * grid.resolution
    inx = (xs >= xmin) & (xs <= xmax)
    iny = (ys >= ymin) & (ys <= ymax)
    return iny[:, None] & inx[None, :]


def detect_frontiers(grid, bbox) -> np.ndarray:
    """Free cells 8-adjacent to unknown workspace cells.

    Both the free cell and the unknown cell must lie inside the bounding
    box: space beyond the workspace is not explorable and must not hold
    the mission open. Returns an (n, 2) array of (ix, iy) indices.
    """
    inside = box_mask(grid, bbox)
    free = grid.free_mask()
    unknown = (grid.ticks == 0) & inside
    near_unknown = binary_dilation(unknown, structure=np.ones((3, 3), dtype=bool))
    frontier = free & near_unknown & inside
    iy, ix = np.nonzero(frontier)
    return np.stack([ix, iy], axis=1)


def frontier_goals(frontiers: np.ndarray, clearance_map: np.ndarray, grid,
                   n_goals: int, separation: float) -> list:
    """Pick up to n_goals frontier cells by repeated clearance argmax.

    After each pick every frontier within `separation` is suppressed, so the
    returned goals are pairwise more than `separation` apart.
    """
    goals = []
    if len(frontiers) == 0:
        return goals
    cells = frontiers.astype(float)
    centers = grid.center_of(frontiers[:, 0], frontiers[:, 1])
    clear = clearance_map[frontiers[:, 1], frontiers[:, 0]]
    alive = np.ones(len(frontiers), dtype=bool)
    while len(goals) < n_goals and alive.any():
        masked = np.where(alive, clear, -np.inf)
        best = int(np.argmax(masked))
        pos = centers[best]
        goals.append(
            GoalConfig(position=Point2(pos[0], pos[1]), kind=FRONTIER, index=len(goals))
        )
        d = np.hypot(centers[:, 0] - pos[0], centers[:, 1] - pos[1])
        alive &= d > separation
    return goals


def _kmeans(points: np.ndarray, k: int, iters: int = 25) -> tuple:
    """Deterministic Lloyd iterations seeded from evenly spaced members."""
    order = np.lexsort((points[:, 1], points[:, 0]))
    pts = points[order]
    idx = np.linspace(0, len(pts) - 1, k).astype(int)
    centers = pts[idx].astype(float)
    labels = np.zeros(len(pts), dtype=int)
    for _ in range(iters):
        d = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d, axis=1)
        for j in range(k):
            members = pts[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    counts = np.array([(labels == j).sum() for j in range(k)])
    return centers, counts


def revisit_goals(occupied: np.ndarray, clearance_map: np.ndarray, grid, bbox,
                  n_goals: int, radius: float, separation: float,
                  k_max: int = 8, cells_per_cluster: int = 200,
                  circle_step: float = math.radians(1.0)) -> list:
    """Goals on circles around occupied-cell clusters, largest cluster first.

    Each cluster contributes the circle point of maximum clearance; goals
    closer than `separation` to an already chosen one are skipped.
    """
    if len(occupied) == 0:
        return []
    centers_xy = grid.center_of(occupied[:, 0], occupied[:, 1])
    k = min(k_max, max(1, math.ceil(len(occupied) / cells_per_cluster)))
    k = min(k, len(occupied))
    centers, counts = _kmeans(centers_xy, k)
    order = np.argsort(-counts, kind="stable")
    xmin, ymin, xmax, ymax = bbox
    angles = np.arange(0.0, 2 * math.pi, circle_step)
    goals = []
    for j in order:
        if len(goals) >= n_goals:
            break
        cx, cy = centers[j]
        px = cx + radius * np.cos(angles)
        py = cy + radius * np.sin(angles)
        inside = (px >= xmin) & (px <= xmax) & (py >= ymin) & (py <= ymax)
        if not inside.any():
            continue
        ix, iy = grid.index_of(np.stack([px[inside], py[inside]], axis=1))
        ok = grid.in_bounds(ix, iy)
        ix, iy = ix[ok], iy[ok]
        if len(ix) == 0:
            continue
        free = grid.ticks[iy, ix] < 0
        if not free.any():
            continue
        ix, iy = ix[free], iy[free]
        clear = clearance_map[iy, ix]
        best = int(np.argmax(clear))
        pos = grid.center_of(ix[best], iy[best])
        dmin = min(
            (math.hypot(g.position.x - pos[0], g.position.y - pos[1]) for g in goals),
            default=math.inf,
        )
        if dmin < separation:
            continue
        heading = math.atan2(cy - pos[1], cx - pos[0])
        goals.append(
            GoalConfig(
                position=Point2(pos[0], pos[1]),
                kind=REVISIT,
                index=len(goals),
                heading_hint=heading,
            )
        )
    return goals


class Roadmap:
    """8-connected grid roadmap over the bounding box.

    Edges through inflated occupied cells are pruned; unknown space is
    traversable. Blocking is re-derived from the current grid on every
    update because loop-closure corrections relocate obstacles, and stale
    blocks would fence off reachable space.
    """

    def __init__(self, grid, bbox, inflate_cells: int = 1):
        self.grid = grid
        self.bbox = bbox
        self.inflate = inflate_cells
        self.inside = box_mask(grid, bbox)
        self.blocked = ~self.inside
        self.update(grid)

    def update(self, grid):
        if self.inflate < 0:
            # non-colliding obstacles (point landmarks): box confinement only
            self.blocked = ~self.inside
            return
        occ = grid.occupied_mask()
        if self.inflate > 0:
            size = 2 * self.inflate + 1
            occ = binary_dilation(occ, structure=np.ones((size, size), dtype=bool))
        self.blocked = occ | ~self.inside

    def passable(self) -> np.ndarray:
        return ~self.blocked

    def nearest_passable(self, cell, max_radius_cells: int = 8):
        ix, iy = int(cell[0]), int(cell[1])
        if 0 <= ix < self.grid.nx and 0 <= iy < self.grid.ny and not self.blocked[iy, ix]:
            return ix, iy
        best = None
        best_d = None
        for r in range(1, max_radius_cells + 1):
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    if max(abs(dx), abs(dy)) != r:
                        continue
                    x, y = ix + dx, iy + dy
                    if 0 <= x < self.grid.nx and 0 <= y < self.grid.ny and not self.blocked[y, x]:
                        d = dx * dx + dy * dy
                        if best is None or d < best_d:
                            best, best_d = (x, y), d
            if best is not None:
                return best
        return None


def _grid_adjacency(passable: np.ndarray, resolution: float):
    ny, nx = passable.shape
    n = ny * nx
    idx = np.arange(n).reshape(ny, nx)
    rows, cols, w = [], [], []
    # orthogonal moves
    for dy, dx in ((0, 1), (1, 0)):
        a = passable[: ny - dy, : nx - dx] & passable[dy:, dx:]
        r = idx[: ny - dy, : nx - dx][a]
        c = idx[dy:, dx:][a]
        rows.append(r)
        cols.append(c)
        w.append(np.full(len(r), resolution))
    # diagonal moves require both orthogonal neighbors free (no corner cutting)
    for dy, dx in ((1, 1), (1, -1)):
        if dx == 1:
            a = (
                passable[: ny - 1, : nx - 1]
                & passable[1:, 1:]
                & passable[: ny - 1, 1:]
                & passable[1:, : nx - 1]
            )
            r = idx[: ny - 1, : nx - 1][a]
            c = idx[1:, 1:][a]
        else:
            a = (
                passable[: ny - 1, 1:]
                & passable[1:, : nx - 1]
                & passable[: ny - 1, : nx - 1]
                & passable[1:, 1:]
            )
            r = idx[: ny - 1, 1:][a]
            c = idx[1:, : nx - 1][a]
        rows.append(r)
        cols.append(c)
        w.append(np.full(len(r), resolution * math.sqrt(2.0)))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    w = np.concatenate(w)
    return sp.csr_matrix((w, (rows, cols)), shape=(n, n))


def plan_paths(roadmap: Roadmap, start_xy, goals: list) -> dict:
    """Optimal grid paths from the start to every reachable goal.

    One Dijkstra pass serves all goals; unreachable goals are omitted.
    Returns {goal: CandidatePath}.
    """
    grid = roadmap.grid
    passable = roadmap.passable()
    six, siy = grid.index_of(np.asarray(start_xy, dtype=float))
    # the pose estimate can drift outside the box; plan from the nearest
    # passable cell even when that is several meters away
    start = roadmap.nearest_passable((int(six), int(siy)), max_radius_cells=40)
    if start is None:
        return {}
    adj = _grid_adjacency(passable, grid.resolution)
    n = grid.ny * grid.nx
    s = start[1] * grid.nx + start[0]
    dist, pred = cs_dijkstra(
        adj, directed=False, indices=s, return_predecessors=True
    )
    out = {}
    for goal in goals:
        gix, giy = grid.index_of(np.array([goal.position.x, goal.position.y]))
        gcell = roadmap.nearest_passable((int(gix), int(giy)), max_radius_cells=4)
        if gcell is None:
            continue
        gi = gcell[1] * grid.nx + gcell[0]
        if not np.isfinite(dist[gi]):
            continue
        chain = []
        cur = gi
        while cur != s and cur >= 0:
            chain.append(cur)
            cur = pred[cur]
        if cur != s:
            continue
        chain.append(s)
        chain.reverse()
        cells = np.array([(c % grid.nx, c // grid.nx) for c in chain], dtype=int)
        centers = grid.center_of(cells[:, 0], cells[:, 1])
        waypoints = []
        for i in range(len(centers)):
            if i + 1 < len(centers):
                h = math.atan2(
                    centers[i + 1][1] - centers[i][1], centers[i + 1][0] - centers[i][0]
                )
            elif waypoints:
                h = waypoints[-1].theta
            else:
                h = goal.heading_hint
            waypoints.append(Pose2(centers[i][0], centers[i][1], h))
        out[goal] = CandidatePath(
            goal=goal, cells=cells, waypoints=waypoints, length=float(dist[gi])
        )
    return out


def resample_path_poses(path: CandidatePath, spacing: float) -> list:
    """Poses along the path at the given arc-length spacing (goal included)."""
    pts = np.array([[w.x, w.y] for w in path.waypoints])
    if len(pts) == 1:
        return [path.waypoints[0]]
    seg = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = list(np.arange(spacing, cum[-1], spacing)) + [cum[-1]]
    poses = []
    for t in targets:
        i = int(np.searchsorted(cum, t, side="right") - 1)
        i = min(i, len(seg) - 1)
        frac = (t - cum[i]) / seg[i] if seg[i] > 0 else 0.0
        x = pts[i, 0] + frac * (pts[i + 1, 0] - pts[i, 0])
        y = pts[i, 1] + frac * (pts[i + 1, 1] - pts[i, 1])
        h = math.atan2(pts[i + 1, 1] - pts[i, 1], pts[i + 1, 0] - pts[i, 0])
        poses.append(Pose2(x, y, h))
    return poses
