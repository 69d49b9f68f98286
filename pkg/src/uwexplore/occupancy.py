"""Submap-based occupancy mapping on a fixed-point log-odds grid.

Log-odds are quantized to integer ticks so that submap addition and removal
commute exactly: the grid after any sequence of pose updates is bit-identical
to a from-scratch merge. No clamping is applied anywhere; a cell's value is
always the exact sum of its submap contributions and 0 means unknown
(p = 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt

from .geometry import Pose2, between, wrap_angle

LOG_SCALE = float(1 << 20)      # log-odds ticks per unit

UNKNOWN_BYTE = 127
FREE_BYTE = 0
OCCUPIED_BYTE = 255


def to_ticks(logodds: float) -> int:
    return int(round(logodds * LOG_SCALE))


def from_ticks(ticks) -> np.ndarray:
    return np.asarray(ticks, dtype=float) / LOG_SCALE


@dataclass
class MappingConfig:
    resolution: float = 0.2
    hit_logodds: float = math.log(0.7 / 0.3)
    free_logodds: float = math.log(0.7 / 0.3)   # magnitude of the free decrement
    smooth_sigma_cells: float = 1.0
    update_translation: float = 0.05            # pose-change thresholds for re-anchoring
    update_rotation: float = math.radians(0.5)
    opaque_hits: bool = True                    # hits block free space behind them


@dataclass
class Submap:
    """One frame's inverse-sensor-model contribution, in its anchor frame."""

    anchor: str
    cells: np.ndarray           # (n, 2) local cell indices (ix, iy)
    values: np.ndarray          # (n,) int64 log-odds ticks
    pose: Pose2 = None          # anchor pose at last application
    applied: tuple = None       # (flat global indices, values) last applied

    def local_centers(self, resolution: float) -> np.ndarray:
        return (self.cells.astype(float) + 0.5) * resolution


class OccupancyGrid:
    """Global grid; value = sum of applied submap ticks, 0 = unknown."""

    def __init__(self, origin, shape, resolution: float = 0.2):
        self.origin = (float(origin[0]), float(origin[1]))
        self.resolution = float(resolution)
        self.ny, self.nx = int(shape[0]), int(shape[1])
        self.ticks = np.zeros((self.ny, self.nx), dtype=np.int64)

    def index_of(self, xy: np.ndarray) -> tuple:
        xy = np.asarray(xy, dtype=float)
        ix = np.floor((xy[..., 0] - self.origin[0]) / self.resolution).astype(np.int64)
        iy = np.floor((xy[..., 1] - self.origin[1]) / self.resolution).astype(np.int64)
        return ix, iy

    def center_of(self, ix, iy) -> np.ndarray:
        x = self.origin[0] + (np.asarray(ix, float) + 0.5) * self.resolution
        y = self.origin[1] + (np.asarray(iy, float) + 0.5) * self.resolution
        return np.stack([x, y], axis=-1)

    def in_bounds(self, ix, iy):
        return (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)

    def log_odds(self) -> np.ndarray:
        return from_ticks(self.ticks)

    def probability(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.log_odds()))

    def occupied_mask(self) -> np.ndarray:
        return self.ticks > 0

    def free_mask(self) -> np.ndarray:
        return self.ticks < 0

    def known_mask(self) -> np.ndarray:
        return self.ticks != 0

    def copy(self) -> "OccupancyGrid":
        g = OccupancyGrid(self.origin, (self.ny, self.nx), self.resolution)
        g.ticks = self.ticks.copy()
        return g

    def _placement(self, submap: Submap, pose: Pose2):
        centers = submap.local_centers(self.resolution)
        world = centers @ pose.rotation().T + pose.translation()
        ix, iy = self.index_of(world)
        ok = self.in_bounds(ix, iy)
        flat = iy[ok] * self.nx + ix[ok]
        return flat, submap.values[ok]

    def apply_submap(self, submap: Submap, pose: Pose2):
        flat, vals = self._placement(submap, pose)
        np.add.at(self.ticks.ravel(), flat, vals)
        submap.pose = pose
        submap.applied = (flat, vals)

    def remove_submap(self, submap: Submap):
        if submap.applied is None:
            return
        flat, vals = submap.applied
        np.subtract.at(self.ticks.ravel(), flat, vals)
        submap.applied = None


def build_submap(features: np.ndarray, sensor_cfg, cfg: MappingConfig, anchor: str = "") -> Submap:
    """Rasterize one frame of sensor-frame feature points into a submap.

    Per bearing bin: cells strictly before the first hit are decremented,
    every hit cell is incremented (weight shaped by a Gaussian of the
    distances to nearby hits so clustered returns reinforce each other),
    and cells between or behind hits stay unknown. A bin without hits is
    free out to max range.
    """
    res = cfg.resolution
    features = np.asarray(features, dtype=float).reshape(-1, 2)
    half_ap = sensor_cfg.aperture / 2.0
    n_beams = sensor_cfg.beams
    bin_w = sensor_cfg.aperture / n_beams

    if len(features):
        rng = np.hypot(features[:, 0], features[:, 1])
        brg = np.arctan2(features[:, 1], features[:, 0])
        keep = (rng >= max(sensor_cfg.min_range, 1e-9)) & (rng <= sensor_cfg.max_range) & (
            np.abs(brg) <= half_ap
        )
        features = features[keep]
        rng, brg = rng[keep], brg[keep]
    else:
        rng = brg = np.zeros(0)

    first_hit = np.full(n_beams, np.inf)
    if len(features):
        bins = np.clip(((brg + half_ap) / bin_w).astype(int), 0, n_beams - 1)
        if cfg.opaque_hits:
            np.minimum.at(first_hit, bins, rng)

    # candidate cells: the full field-of-view window, centre-sampled
    n = int(math.ceil(sensor_cfg.max_range / res)) + 1
    ax = np.arange(-n, n + 1)
    cx, cy = np.meshgrid(ax, ax, indexing="ij")
    cx, cy = cx.ravel(), cy.ravel()
    px = (cx + 0.5) * res
    py = (cy + 0.5) * res
    cr = np.hypot(px, py)
    cb = np.arctan2(py, px)
    inside = (cr <= sensor_cfg.max_range) & (cr >= sensor_cfg.min_range) & (np.abs(cb) <= half_ap)
    cbin = np.clip(((cb + half_ap) / bin_w).astype(int), 0, n_beams - 1)
    free = inside & (cr < first_hit[cbin])
    free_cells = np.stack([cx[free], cy[free]], axis=1).astype(np.int64)

    if len(features) and cfg.opaque_hits:
        hit_cells = np.stack(
            [np.floor(features[:, 0] / res), np.floor(features[:, 1] / res)], axis=1
        ).astype(np.int64)
        occ_cells, inv = np.unique(hit_cells, axis=0, return_inverse=True)
        centers = (occ_cells + 0.5) * res
        sigma = max(cfg.smooth_sigma_cells, 1e-9) * res
        d2 = ((features[None, :, :] - centers[:, None, :]) ** 2).sum(axis=2)
        kern = np.exp(-d2 / (2.0 * sigma * sigma))
        own = inv[None, :] == np.arange(len(occ_cells))[:, None]
        weights = 1.0 + np.where(own, 0.0, kern).sum(axis=1)
        occ_vals = np.round(cfg.hit_logodds * weights * LOG_SCALE).astype(np.int64)
    elif len(features):
        # pass-through point targets: paint a one-cell-radius smoothed patch
        # around each hit so jittering returns reinforce the same cells
        hit_cells = np.stack(
            [np.floor(features[:, 0] / res), np.floor(features[:, 1] / res)], axis=1
        ).astype(np.int64)
        offs = np.array([(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)], dtype=np.int64)
        patch = (hit_cells[:, None, :] + offs[None, :, :]).reshape(-1, 2)
        centers = (patch + 0.5) * res
        pts = np.repeat(features, len(offs), axis=0)
        sigma = max(cfg.smooth_sigma_cells, 1e-9) * res
        w = np.exp(-((pts - centers) ** 2).sum(axis=1) / (2.0 * sigma * sigma))
        occ_cells, inv = np.unique(patch, axis=0, return_inverse=True)
        weights = np.zeros(len(occ_cells))
        np.maximum.at(weights, inv, w)
        occ_vals = np.round(cfg.hit_logodds * weights * LOG_SCALE).astype(np.int64)
        keep = occ_vals > 0
        occ_cells, occ_vals = occ_cells[keep], occ_vals[keep]
    else:
        occ_cells = np.zeros((0, 2), dtype=np.int64)
        occ_vals = np.zeros(0, dtype=np.int64)

    # occupied classification wins over free
    if len(occ_cells) and len(free_cells):
        stride = np.int64(4 * (n + 2))
        enc_free = free_cells[:, 0] * stride + free_cells[:, 1]
        enc_occ = occ_cells[:, 0] * stride + occ_cells[:, 1]
        free_cells = free_cells[~np.isin(enc_free, enc_occ)]

    keys = np.concatenate([free_cells, occ_cells], axis=0)
    vals = np.concatenate(
        [np.full(len(free_cells), -to_ticks(cfg.free_logodds), dtype=np.int64), occ_vals]
    )
    order = np.lexsort((keys[:, 1], keys[:, 0])) if len(keys) else np.zeros(0, dtype=int)
    return Submap(anchor=anchor, cells=keys[order], values=vals[order])


def merge_submaps(submaps, poses: dict, origin, shape, resolution: float = 0.2) -> OccupancyGrid:
    """From-scratch merge: grid log-odds is the exact sum over submaps."""
    grid = OccupancyGrid(origin, shape, resolution)
    for sm in submaps:
        grid.apply_submap(sm, poses[sm.anchor])
    return grid


def update_submap_pose(grid: OccupancyGrid, submap: Submap, old_pose: Pose2, new_pose: Pose2, cfg: MappingConfig) -> bool:
    """Re-anchor one submap; no-op when the pose change is below thresholds.

    Returns True when the grid was modified. The result is bit-identical to
    re-merging every submap from scratch at the new pose.
    """
    d = between(old_pose, new_pose)
    if math.hypot(d.x, d.y) <= cfg.update_translation and abs(d.theta) <= cfg.update_rotation:
        return False
    grid.remove_submap(submap)
    grid.apply_submap(submap, new_pose)
    return True


def clearance(grid: OccupancyGrid) -> np.ndarray:
    """Exact Euclidean distance (meters) to the nearest occupied cell.

    Occupied cells carry 0; a map without occupied cells is +inf everywhere.
    """
    occ = grid.occupied_mask()
    if not occ.any():
        return np.full_like(grid.ticks, np.inf, dtype=float)
    dist = distance_transform_edt(~occ) * grid.resolution
    return dist


def export_greymap(grid: OccupancyGrid) -> bytes:
    """PGM (P5) export: 0 = free, 127 = unknown, 255 = occupied, row-major."""
    header = "P5\n# origin %r %r resolution %r\n%d %d\n255\n" % (
        grid.origin[0],
        grid.origin[1],
        grid.resolution,
        grid.nx,
        grid.ny,
    )
    data = np.full((grid.ny, grid.nx), UNKNOWN_BYTE, dtype=np.uint8)
    data[grid.free_mask()] = FREE_BYTE
    data[grid.occupied_mask()] = OCCUPIED_BYTE
    return header.encode("ascii") + data.tobytes()


def load_greymap(blob: bytes):
    """Parse an exported greymap; returns (origin, resolution, byte array)."""
    lines = blob.split(b"\n", 4)
    if lines[0] != b"P5":
        raise ValueError("not a P5 greymap")
    meta = lines[1].decode("ascii").split()
    origin = (float(meta[2]), float(meta[3]))
    resolution = float(meta[5])
    nx, ny = (int(v) for v in lines[2].split())
    if lines[3] != b"255":
        raise ValueError("unexpected maxval")
    data = np.frombuffer(lines[4], dtype=np.uint8, count=nx * ny).reshape(ny, nx)
    return origin, resolution, data
