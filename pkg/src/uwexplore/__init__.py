"""2D autonomous-exploration workbench.

Pose-graph SLAM with fast covariance recovery, split-covariance-intersection
virtual maps, sonar-style perception, and a four-policy exploration
benchmark harness.
"""

from .geometry import Gaussian, Point2, Pose2, RangeBearing

__all__ = ["Gaussian", "Point2", "Pose2", "RangeBearing"]
__version__ = "0.1.0"
