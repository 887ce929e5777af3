"""Real-time multi-query RRT* planner with assisting distance metrics."""

from .env import (
    DegenerateEllipseError,
    Environment,
    MapFormatError,
    Rect,
    SamplingExhaustedError,
    sample_free,
    sample_rewire_ellipse,
    sample_sphere,
)

__all__ = [
    "DegenerateEllipseError",
    "Environment",
    "MapFormatError",
    "Rect",
    "SamplingExhaustedError",
    "sample_free",
    "sample_rewire_ellipse",
    "sample_sphere",
]
