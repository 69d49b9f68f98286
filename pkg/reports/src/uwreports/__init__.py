"""Figure generation for exploration benchmark artifacts."""

from .curves import compute_curves, render_curves
from .maps import render_map

__all__ = ["compute_curves", "render_curves", "render_map"]
