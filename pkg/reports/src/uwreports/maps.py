"""Occupancy-map figures with trajectory, loop-closure and goal overlays."""

from __future__ import annotations

import os
import warnings

import numpy as np
from PIL import Image, ImageDraw

from .io import EpisodeLogData

FREE_SHADE = 245
UNKNOWN_SHADE = 170
OCCUPIED_SHADE = 30

TRAJ_COLOR = (214, 39, 40)
CLOSURE_COLOR = (31, 119, 180)
FRONTIER_GOAL_COLOR = (148, 103, 189)
REVISIT_GOAL_COLOR = (44, 160, 44)


def render_map(greymap, log: EpisodeLogData = None, out_path: str = None, scale: int = 3):
    """Draw the occupancy raster plus overlays; returns the PIL image.

    Pixel dimensions are exactly (grid width x scale, grid height x scale).
    Missing overlay layers are warnings, not failures.
    """
    origin, resolution, cells = greymap
    ny, nx = cells.shape
    shades = np.full_like(cells, UNKNOWN_SHADE)
    shades[cells == 0] = FREE_SHADE
    shades[cells == 255] = OCCUPIED_SHADE
    base = Image.fromarray(shades, mode="L").convert("RGB")
    img = base.resize((nx * scale, ny * scale), resample=Image.NEAREST)
    # flip vertically so +y points up in the figure
    img = img.transpose(Image.FLIP_TOP_BOTTOM)
    draw = ImageDraw.Draw(img)

    def to_px(x, y):
        px = (x - origin[0]) / resolution * scale
        py = img.height - (y - origin[1]) / resolution * scale
        return (px, py)

    if log is None:
        warnings.warn("no episode log provided; rendering the raster only")
    else:
        if log.poses:
            pts = [to_px(x, y) for _, (x, y, _) in sorted(log.poses.items())]
            if len(pts) >= 2:
                draw.line(pts, fill=TRAJ_COLOR, width=max(scale // 2, 1))
        else:
            warnings.warn("episode log has no pose history")
        for i, j in log.closures:
            if i in log.poses and j in log.poses:
                a = to_px(log.poses[i][0], log.poses[i][1])
                b = to_px(log.poses[j][0], log.poses[j][1])
                draw.line([a, b], fill=CLOSURE_COLOR, width=max(scale // 3, 1))
        r = max(scale, 2)
        for x, y, kind in log.goals:
            cx, cy = to_px(x, y)
            color = FRONTIER_GOAL_COLOR if kind == "frontier" else REVISIT_GOAL_COLOR
            draw.ellipse([cx - r, cy - r, cx + r, cy + r], outline=color, width=1)

    if out_path:
        os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
        img.save(out_path, format="PNG")
    return img
