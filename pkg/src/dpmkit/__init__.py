"""Toolkit for dynamic point-map quadruples: synthesis, solvers, losses, IO."""

from .errors import (
    ArchiveError,
    DegenerateGeometryError,
    DegenerateInputError,
    DpmError,
    EmptyTargetError,
    InsufficientDataError,
    InsufficientStaticStructureError,
    SceneSpecError,
    UnsupportedVersionError,
)
from .geometry import (
    CameraModel,
    DepthMap,
    PixelGrid,
    PointMap,
    RigidTransform,
    axis_angle_rotation,
    pixel_grid,
    project,
    se3_apply,
    se3_compose,
    se3_inverse,
    unproject,
)

__version__ = "0.1.0"
