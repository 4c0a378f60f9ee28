"""Pinhole camera algebra and rigid-motion primitives.

Conventions used everywhere in this package:

* Camera frame: x right, y down, z forward (points in front have z > 0).
* Pixel (i, j) covers the unit square [i, i+1) x [j, j+1) and its
  continuous coordinates are the centre (i + 0.5, j + 0.5).
* Flat grids are row-major: flat index k maps to pixel (k % W, k // W).
* Rigid transforms act as p -> s * R @ p + t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_ROTATION_TOL = 1e-9


def _as_matrix3(value) -> np.ndarray:
    m = np.asarray(value, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"expected 3x3 matrix, got shape {m.shape}")
    return m


def _as_vector3(value) -> np.ndarray:
    v = np.asarray(value, dtype=np.float64).reshape(-1)
    if v.shape != (3,):
        raise ValueError(f"expected 3-vector, got shape {np.asarray(value).shape}")
    return v


@dataclass(frozen=True)
class RigidTransform:
    """Scaled rigid motion: p -> scale * rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        r = _as_matrix3(self.rotation)
        t = _as_vector3(self.translation)
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise ValueError("transform entries must be finite")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ROTATION_TOL:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > _ROTATION_TOL:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        if not (self.scale > 0.0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive, got {self.scale}")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", float(self.scale))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one 3-vector or a 3xN stack of column points."""
        p = np.asarray(points, dtype=np.float64)
        if p.ndim == 1:
            return self.scale * (self.rotation @ p) + self.translation
        return self.scale * (self.rotation @ p) + self.translation[:, None]

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return self after other: (self . other)(p) = self(other(p))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.scale * (self.rotation @ other.translation) + self.translation,
            self.scale * other.scale,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        inv_s = 1.0 / self.scale
        return RigidTransform(rt, -inv_s * (rt @ self.translation), inv_s)

    def orthonormalized(self) -> "RigidTransform":
        """Snap the rotation back onto SO(3) via SVD (drift cleanup)."""
        u, _, vt = np.linalg.svd(self.rotation)
        d = np.sign(np.linalg.det(u @ vt))
        r = u @ np.diag([1.0, 1.0, d]) @ vt
        return RigidTransform(r, self.translation, self.scale)


def se3_compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def se3_inverse(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def axis_angle_rotation(axis, angle: float) -> np.ndarray:
    """Rotation matrix for a rotation of `angle` radians about `axis`."""
    a = _as_vector3(axis)
    n = np.linalg.norm(a)
    if n == 0.0:
        raise ValueError("rotation axis must be nonzero")
    x, y, z = a / n
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


@dataclass(frozen=True)
class PixelGrid:
    """Homogeneous pixel-centre coordinates for a WxH image.

    coords is 3 x (W*H); column k holds (i + 0.5, j + 0.5, 1) for pixel
    (i, j) = (k % W, k // W).
    """

    width: int
    height: int
    coords: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("grid dimensions must be positive")
        c = np.asarray(self.coords, dtype=np.float64)
        if c.shape != (3, self.width * self.height):
            raise ValueError("coords must be 3 x (W*H)")
        if not np.all(c[2] == 1.0):
            raise ValueError("third coordinate row must be all ones")
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)


def pixel_grid(width: int, height: int) -> PixelGrid:
    if width <= 0 or height <= 0:
        raise ValueError("grid dimensions must be positive")
    ii, jj = np.meshgrid(np.arange(width), np.arange(height))
    coords = np.stack(
        [ii.ravel() + 0.5, jj.ravel() + 0.5, np.ones(width * height)]
    ).astype(np.float64)
    return PixelGrid(width, height, coords)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: intrinsics plus a camera-to-world pose. Skew is 0."""

    fx: float
    fy: float
    cx: float
    cy: float
    pose: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError("focal lengths must be positive")

    def intrinsics(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def intrinsics_inverse(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass
class PointMap:
    """Pixel-aligned 3D points: 3xN columns plus a validity mask.

    `frame` tags which (time id, viewpoint id) the coordinates refer to;
    (0, 0) means unassigned. Invalid columns carry placeholder values and
    are excluded from every statistic and solver.
    """

    points: np.ndarray
    valid: np.ndarray
    frame: tuple[int, int] = (0, 0)

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        v = np.asarray(self.valid, dtype=bool)
        if p.ndim != 2 or p.shape[0] != 3:
            raise ValueError(f"points must be 3xN, got shape {p.shape}")
        if v.shape != (p.shape[1],):
            raise ValueError("valid mask length must match point count")
        if not np.all(np.isfinite(p[:, v])):
            raise ValueError("valid columns must hold finite coordinates")
        self.points = p
        self.valid = v
        self.frame = (int(self.frame[0]), int(self.frame[1]))

    @property
    def size(self) -> int:
        return self.points.shape[1]

    def valid_points(self) -> np.ndarray:
        return self.points[:, self.valid]

    def copy(self) -> "PointMap":
        return PointMap(self.points.copy(), self.valid.copy(), self.frame)


@dataclass
class DepthMap:
    """Per-pixel depths along the optical axis.

    The constructor enforces the positivity invariant by invalidating any
    entry that is not a finite positive number.
    """

    depths: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=np.float64)
        v = np.asarray(self.valid, dtype=bool)
        if d.ndim != 1 or v.shape != d.shape:
            raise ValueError("depths and valid must be matching 1-D arrays")
        with np.errstate(invalid="ignore"):
            v = v & np.isfinite(d) & (d > 0.0)
        self.depths = d
        self.valid = v

    @property
    def size(self) -> int:
        return self.depths.shape[0]


def project(points: PointMap, cam: CameraModel):
    """Project camera-frame points to continuous pixel coordinates.

    Returns (pixels, depths) where pixels is 2xN and depths carries the
    z coordinates. Points with z <= 0 are invalidated per pixel, never
    rejected globally. For every valid point, pixel * z == K @ p.
    """
    p = points.points
    z = p[2]
    with np.errstate(invalid="ignore"):
        ok = points.valid & (z > 0.0)
    pixels = np.zeros((2, points.size))
    np.divide(p[0], z, out=pixels[0], where=ok)
    np.divide(p[1], z, out=pixels[1], where=ok)
    pixels[0] = np.where(ok, cam.fx * pixels[0] + cam.cx, 0.0)
    pixels[1] = np.where(ok, cam.fy * pixels[1] + cam.cy, 0.0)
    depths = DepthMap(np.where(ok, z, 0.0), ok)
    return pixels, depths


def unproject(
    depths: DepthMap,
    cam: CameraModel,
    grid: PixelGrid,
    frame: tuple[int, int] = (0, 0),
) -> PointMap:
    """Lift a depth map back to camera-frame points: p = K^-1 u * depth."""
    if depths.size != grid.width * grid.height:
        raise ValueError("depth map size does not match the pixel grid")
    lam = depths.depths
    ok = depths.valid
    x = (grid.coords[0] - cam.cx) / cam.fx * lam
    y = (grid.coords[1] - cam.cy) / cam.fy * lam
    pts = np.stack([np.where(ok, x, 0.0), np.where(ok, y, 0.0), np.where(ok, lam, 0.0)])
    return PointMap(pts, ok, frame)


def se3_apply(transform: RigidTransform, pmap: PointMap) -> PointMap:
    """Apply a rigid transform to the valid columns of a point map.

    Invalid columns keep their placeholder values; the frame tag is left
    for the caller to update.
    """
    moved = transform.apply(pmap.points)
    pts = np.where(pmap.valid, moved, pmap.points)
    return PointMap(pts, pmap.valid.copy(), pmap.frame)
