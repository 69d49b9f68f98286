"""Simulation worlds: landmark fields or structure polylines, plus file I/O.

World files are versioned, human-readable text. Landmark layouts are fixed
in the file and never resampled at runtime, so every trial sees the same
environment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

from .geometry import Point2, Pose2

LANDMARK_MODE = "landmark"
STRUCTURE_MODE = "structure"


@dataclass
class Structure:
    points: list                 # [(x, y)] polyline vertices
    pass_through: bool = False   # sonar sees targets behind the first hit


@dataclass
class World:
    mode: str
    bbox: tuple                  # (xmin, ymin, xmax, ymax)
    starts: list = field(default_factory=list)      # [Pose2]
    landmarks: list = field(default_factory=list)   # [Point2]
    structures: list = field(default_factory=list)  # [Structure]
    name: str = ""

    def __post_init__(self):
        if self.mode not in (LANDMARK_MODE, STRUCTURE_MODE):
            raise ValueError("unknown world mode %r" % self.mode)
        xmin, ymin, xmax, ymax = self.bbox
        if not (xmin < xmax and ymin < ymax):
            raise ValueError("degenerate bounding box")
        for s in self.starts:
            if not (xmin <= s.x <= xmax and ymin <= s.y <= ymax):
                raise ValueError("start pose outside the bounding box")

    @property
    def perimeter(self) -> float:
        xmin, ymin, xmax, ymax = self.bbox
        return 2.0 * ((xmax - xmin) + (ymax - ymin))

    @property
    def diagonal(self) -> float:
        xmin, ymin, xmax, ymax = self.bbox
        return math.hypot(xmax - xmin, ymax - ymin)


def dump_world(world: World) -> str:
    lines = ["# exploration world", "version 1", "name %s" % (world.name or "unnamed")]
    lines.append("mode %s" % world.mode)
    lines.append("bbox %r %r %r %r" % tuple(float(v) for v in world.bbox))
    for s in world.starts:
        lines.append("start %r %r %r" % (s.x, s.y, s.theta))
    for lm in world.landmarks:
        lines.append("landmark %r %r" % (lm.x, lm.y))
    for st in world.structures:
        flag = "pass" if st.pass_through else "opaque"
        coords = " ".join("%r %r" % (float(x), float(y)) for x, y in st.points)
        lines.append("structure %s %s" % (flag, coords))
    return "\n".join(lines) + "\n"


def parse_world(text: str) -> World:
    mode = None
    bbox = None
    name = ""
    starts, landmarks, structures = [], [], []
    version = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        tag = tok[0]
        if tag == "version":
            version = int(tok[1])
            if version != 1:
                raise ValueError("unsupported world file version %d" % version)
        elif tag == "name":
            name = " ".join(tok[1:])
        elif tag == "mode":
            mode = tok[1]
        elif tag == "bbox":
            bbox = tuple(float(v) for v in tok[1:5])
        elif tag == "start":
            starts.append(Pose2(float(tok[1]), float(tok[2]), float(tok[3])))
        elif tag == "landmark":
            landmarks.append(Point2(float(tok[1]), float(tok[2])))
        elif tag == "structure":
            flag = tok[1]
            vals = [float(v) for v in tok[2:]]
            pts = list(zip(vals[0::2], vals[1::2]))
            structures.append(Structure(points=pts, pass_through=(flag == "pass")))
        else:
            raise ValueError("unknown world record %r" % tag)
    if version is None:
        raise ValueError("world file missing version")
    if mode is None or bbox is None:
        raise ValueError("world file missing mode or bbox")
    return World(
        mode=mode, bbox=bbox, starts=starts, landmarks=landmarks,
        structures=structures, name=name,
    )


def load_world(path: str) -> World:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_world(fh.read())


def bundled_world(name: str) -> World:
    """Load one of the shipped worlds ('landmarks40' or 'marina')."""
    data = resources.files("uwexplore").joinpath("worlds/%s.world" % name).read_text()
    return parse_world(data)
