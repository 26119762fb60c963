"""Periodic orbits of a charged (N+1)-body system with Platonic symmetry."""

__version__ = "0.1.0"

from .symmetry import (
    PolyhedralGroup,
    RotationElement,
    TwistSpec,
    build_group,
    collision_axes,
    element_about_axis,
    min_distance_to_gamma,
    twist_matrix,
)

__all__ = [
    "PolyhedralGroup",
    "RotationElement",
    "TwistSpec",
    "build_group",
    "collision_axes",
    "element_about_axis",
    "min_distance_to_gamma",
    "twist_matrix",
    "__version__",
]
