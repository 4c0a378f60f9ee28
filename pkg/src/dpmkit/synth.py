"""Synthetic dynamic rigid scenes with exact ground truth.

Scenes are unions of analytic primitives (spheres, axis-aligned boxes,
infinite planes), each on its own rigid track between the two timestamps.
Ray casting is closed form, so every derived quantity (point maps, masks,
flows, relative poses) is exact up to float rounding — no renderer in the
loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import SceneSpecError
from .geometry import (
    CameraModel,
    DepthMap,
    PointMap,
    RigidTransform,
    axis_angle_rotation,
    pixel_grid,
    unproject,
)
from .solvers import FlowField

_RAY_EPS = 1e-9


@dataclass(frozen=True)
class Primitive:
    """Analytic solid in its object frame.

    kind "sphere": radius `size[0]`, centred at the origin.
    kind "box": axis-aligned with half extents `size`.
    kind "plane": infinite plane z = size[0].
    `albedo` doubles as the object id in rendered id grids.
    """

    kind: str
    size: tuple[float, ...]
    albedo: int

    def __post_init__(self):
        if self.kind not in ("sphere", "box", "plane"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        n = {"sphere": 1, "box": 3, "plane": 1}[self.kind]
        if len(self.size) != n:
            raise ValueError(f"{self.kind} takes {n} size parameter(s)")
        if self.kind != "plane" and any(s <= 0 for s in self.size):
            raise ValueError("size parameters must be positive")


@dataclass(frozen=True)
class ObjectTrack:
    """A primitive plus its object-to-world pose at each timestamp."""

    primitive: Primitive
    pose_t1: RigidTransform
    pose_t2: RigidTransform
    is_dynamic: bool

    def __post_init__(self):
        if not self.is_dynamic:
            same = np.array_equal(
                self.pose_t1.rotation, self.pose_t2.rotation
            ) and np.array_equal(self.pose_t1.translation, self.pose_t2.translation)
            if not same:
                raise ValueError("static object must have identical poses")

    def pose(self, time: int) -> RigidTransform:
        return self.pose_t1 if time == 1 else self.pose_t2


@dataclass(frozen=True)
class SceneSpec:
    """Two cameras, two timestamps, and a list of rigid object tracks."""

    width: int
    height: int
    camera1: CameraModel
    camera2: CameraModel
    objects: tuple[ObjectTrack, ...]
    seed: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise SceneSpecError("width/height", "image size must be positive")
        if not self.objects:
            raise SceneSpecError("objects", "scene needs at least one object")
        for name, cam in (("camera1", self.camera1), ("camera2", self.camera2)):
            if cam.fx <= 0 or cam.fy <= 0:
                raise SceneSpecError(name, "degenerate camera (zero focal)")
            if cam.pose.scale != 1.0:
                raise SceneSpecError(name, "camera pose must have unit scale")
        ids = [o.primitive.albedo for o in self.objects]
        if len(set(ids)) != len(ids):
            raise SceneSpecError("objects", "albedo ids must be unique")
        for k, obj in enumerate(self.objects):
            if obj.pose_t1.scale != 1.0 or obj.pose_t2.scale != 1.0:
                raise SceneSpecError(f"objects[{k}]", "object poses must be rigid")

    def camera(self, index: int) -> CameraModel:
        return self.camera1 if index == 1 else self.camera2


@dataclass
class DpmQuad:
    """The four point maps of an ordered image pair, all in viewpoint 1.

    img{i}_t{j} is the map of image i's pixels at time j. Maps of the same
    image share a validity mask; a fully static scene makes the two time
    variants of each image identical.
    """

    width: int
    height: int
    img1_t1: PointMap
    img2_t1: PointMap
    img1_t2: PointMap
    img2_t2: PointMap
    conf_img1_t1: np.ndarray
    conf_img2_t1: np.ndarray
    conf_img1_t2: np.ndarray
    conf_img2_t2: np.ndarray
    objid1: np.ndarray
    objid2: np.ndarray
    mask1: np.ndarray
    mask2: np.ndarray

    def __post_init__(self):
        n = self.width * self.height
        maps = {
            "img1_t1": (self.img1_t1, (1, 1)),
            "img2_t1": (self.img2_t1, (1, 1)),
            "img1_t2": (self.img1_t2, (2, 1)),
            "img2_t2": (self.img2_t2, (2, 1)),
        }
        for name, (pm, expected_frame) in maps.items():
            if pm.size != n:
                raise ValueError(f"{name} size does not match image size")
            if pm.frame != expected_frame:
                raise ValueError(f"{name} frame tag {pm.frame} != {expected_frame}")
        if not np.array_equal(self.img1_t1.valid, self.img1_t2.valid):
            raise ValueError("image-1 maps must share validity")
        if not np.array_equal(self.img2_t1.valid, self.img2_t2.valid):
            raise ValueError("image-2 maps must share validity")
        for name in ("conf_img1_t1", "conf_img2_t1", "conf_img1_t2", "conf_img2_t2"):
            c = np.asarray(getattr(self, name), dtype=np.float64)
            if c.shape != (n,):
                raise ValueError(f"{name} must have length W*H")
            if np.any(c <= 0.0) or np.any(c > 1.0):
                raise ValueError(f"{name} values must lie in (0, 1]")
            setattr(self, name, c)
        self.objid1 = np.asarray(self.objid1, dtype=np.int32)
        self.objid2 = np.asarray(self.objid2, dtype=np.int32)
        self.mask1 = np.asarray(self.mask1, dtype=bool)
        self.mask2 = np.asarray(self.mask2, dtype=bool)
        for name in ("objid1", "objid2", "mask1", "mask2"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length W*H")

    @property
    def valid1(self) -> np.ndarray:
        return self.img1_t1.valid

    @property
    def valid2(self) -> np.ndarray:
        return self.img2_t1.valid

    def maps(self) -> dict[str, PointMap]:
        return {
            "img1_t1": self.img1_t1,
            "img2_t1": self.img2_t1,
            "img1_t2": self.img1_t2,
            "img2_t2": self.img2_t2,
        }

    def copy(self) -> "DpmQuad":
        return DpmQuad(
            self.width,
            self.height,
            self.img1_t1.copy(),
            self.img2_t1.copy(),
            self.img1_t2.copy(),
            self.img2_t2.copy(),
            self.conf_img1_t1.copy(),
            self.conf_img2_t1.copy(),
            self.conf_img1_t2.copy(),
            self.conf_img2_t2.copy(),
            self.objid1.copy(),
            self.objid2.copy(),
            self.mask1.copy(),
            self.mask2.copy(),
        )


@dataclass
class GroundTruth:
    """Exact quantities the generator knows alongside a quad.

    cam_motion maps viewpoint-2 coordinates into viewpoint 1 (the relative
    camera pose). object_motions hold each object's t1->t2 motion expressed
    in the (t1, viewpoint 1) frame, keyed by object id. img2_t1_view2 is
    the image-2 map at t1 expressed in viewpoint 2 — the source cloud for
    camera-motion recovery.
    """

    cam_motion: RigidTransform
    object_motions: dict[int, RigidTransform]
    flows: dict[str, FlowField]
    img2_t1_view2: PointMap


# ---------------------------------------------------------------------------
# ray casting


def _ray_sphere(o, d, radius):
    a = np.sum(d * d, axis=0)
    b = 2.0 * np.sum(o[:, None] * d, axis=0)
    c = np.sum(o * o) - radius * radius
    disc = b * b - 4.0 * a * c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t_near = (-b - sq) / (2.0 * a)
    t_far = (-b + sq) / (2.0 * a)
    t = np.where(t_near > _RAY_EPS, t_near, t_far)
    return np.where(hit & (t > _RAY_EPS), t, np.inf)


def _ray_box(o, d, half_extents):
    t_enter = np.full(d.shape[1], -np.inf)
    t_exit = np.full(d.shape[1], np.inf)
    inside_all = np.ones(d.shape[1], dtype=bool)
    for k in range(3):
        h = half_extents[k]
        dk = d[k]
        ok = o[k]
        parallel = dk == 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            t0 = (-h - ok) / dk
            t1 = (h - ok) / dk
        lo = np.minimum(t0, t1)
        hi = np.maximum(t0, t1)
        in_slab = np.abs(ok) <= h
        lo = np.where(parallel, np.where(in_slab, -np.inf, np.inf), lo)
        hi = np.where(parallel, np.where(in_slab, np.inf, -np.inf), hi)
        t_enter = np.maximum(t_enter, lo)
        t_exit = np.minimum(t_exit, hi)
        inside_all &= ~parallel | in_slab
    hit = (t_enter <= t_exit) & (t_exit > _RAY_EPS) & inside_all
    t = np.where(t_enter > _RAY_EPS, t_enter, t_exit)
    return np.where(hit & (t > _RAY_EPS), t, np.inf)


def _ray_plane(o, d, height):
    dz = d[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (height - o[2]) / dz
    hit = (dz != 0.0) & (t > _RAY_EPS) & np.isfinite(t)
    return np.where(hit, t, np.inf)


def raycast(spec: SceneSpec, camera: int, time: int):
    """Render exact depths and object ids for one camera at one timestamp.

    The ray through pixel k has camera-frame direction K^-1 u_k whose z
    component is 1, so the ray parameter at the hit *is* the depth. Misses
    are invalid pixels, not errors. Returns (DepthMap, objid) where objid
    is -1 on misses.
    """
    cam = spec.camera(camera)
    grid = pixel_grid(spec.width, spec.height)
    d_cam = cam.intrinsics_inverse() @ grid.coords
    d_world = cam.pose.rotation @ d_cam
    o_world = cam.pose.translation

    n = grid.coords.shape[1]
    best_t = np.full(n, np.inf)
    best_id = np.full(n, -1, dtype=np.int32)
    for obj in spec.objects:
        pose = obj.pose(time)
        rt = pose.rotation.T
        o_loc = rt @ (o_world - pose.translation)
        d_loc = rt @ d_world
        prim = obj.primitive
        if prim.kind == "sphere":
            t = _ray_sphere(o_loc, d_loc, prim.size[0])
        elif prim.kind == "box":
            t = _ray_box(o_loc, d_loc, prim.size)
        else:
            t = _ray_plane(o_loc, d_loc, prim.size[0])
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_id = np.where(closer, prim.albedo, best_id)

    valid = np.isfinite(best_t)
    depths = DepthMap(np.where(valid, best_t, 0.0), valid)
    return depths, np.where(depths.valid, best_id, -1).astype(np.int32)


# ---------------------------------------------------------------------------
# quad construction


def _world_motion(obj: ObjectTrack) -> RigidTransform:
    """Object's t1 -> t2 motion in the world frame."""
    if not obj.is_dynamic:
        return RigidTransform.identity()
    return obj.pose_t2.compose(obj.pose_t1.inverse())


def _dynamic_mask(spec: SceneSpec, objid: np.ndarray, valid: np.ndarray):
    dyn_ids = {o.primitive.albedo for o in spec.objects if o.is_dynamic}
    if not dyn_ids:
        return np.zeros_like(valid)
    moved = np.isin(objid, sorted(dyn_ids))
    return moved & valid


def build_quad(spec: SceneSpec):
    """Render a scene into its four point maps plus exact ground truth.

    Image-1 pixels are lifted at t1 and pushed forward through their
    object's rigid motion to get the t2 variant; image-2 pixels are lifted
    at t2 and pulled back. Both time variants stay on the pixel grid of
    the image they came from, so a point is kept even where it ends up
    occluded at the other timestamp. Everything is expressed in the frame
    of camera 1. Deterministic: rebuilding the same spec is bit-identical.
    """
    grid = pixel_grid(spec.width, spec.height)
    cam1, cam2 = spec.camera1, spec.camera2
    pose1_inv = cam1.pose.inverse()
    cam_motion = pose1_inv.compose(cam2.pose)  # view2 coords -> view1 coords

    depth1, objid1 = raycast(spec, 1, 1)
    depth2, objid2 = raycast(spec, 2, 2)
    p11 = unproject(depth1, cam1, grid, frame=(1, 1))
    p22_view2 = unproject(depth2, cam2, grid, frame=(2, 2))
    p22_pts = np.where(
        p22_view2.valid, cam_motion.apply(p22_view2.points), p22_view2.points
    )
    p22 = PointMap(p22_pts, p22_view2.valid.copy(), (2, 1))

    # Cross-time maps: start from the same-time map and move only the
    # pixels of dynamic objects, so static scenes stay bit-identical.
    p12_pts = p11.points.copy()
    p21_pts = p22.points.copy()
    of_f = np.zeros_like(p11.points)
    sf_f = np.zeros_like(p11.points)
    of_b = np.zeros_like(p11.points)
    img2_t1_view2_pts = p22_view2.points.copy()

    pose2_inv = cam2.pose.inverse()
    for obj in spec.objects:
        if not obj.is_dynamic:
            continue
        motion_w = _world_motion(obj)
        motion_w_inv = motion_w.inverse()
        oid = obj.primitive.albedo

        cols1 = (objid1 == oid) & p11.valid
        if np.any(cols1):
            pts = p11.points[:, cols1]
            w1 = cam1.pose.apply(pts)
            w2 = motion_w.apply(w1)
            p12_pts[:, cols1] = pose1_inv.apply(w2)
            # ground-truth flows via the world-frame route
            of_f[:, cols1] = pose1_inv.apply(w2) - pts
            sf_f[:, cols1] = pose2_inv.apply(w2) - pts

        cols2 = (objid2 == oid) & p22.valid
        if np.any(cols2):
            w2 = cam2.pose.apply(p22_view2.points[:, cols2])
            w1 = motion_w_inv.apply(w2)
            p21_pts[:, cols2] = pose1_inv.apply(w1)
            img2_t1_view2_pts[:, cols2] = pose2_inv.apply(w1)

    # static pixels of the scene-flow fields still see the camera motion
    static1 = p11.valid & ~_dynamic_mask(spec, objid1, p11.valid)
    if np.any(static1):
        w = cam1.pose.apply(p11.points[:, static1])
        sf_f[:, static1] = pose2_inv.apply(w) - p11.points[:, static1]

    p12 = PointMap(p12_pts, p11.valid.copy(), (2, 1))
    p21 = PointMap(p21_pts, p22.valid.copy(), (1, 1))
    img2_t1_view2 = PointMap(img2_t1_view2_pts, p22.valid.copy(), (1, 2))

    of_b_pts = p21.points - p22.points
    sf_b_pts = p21.points - p22_view2.points
    of_b = np.where(p22.valid, of_b_pts, 0.0)
    sf_b = np.where(p22.valid, sf_b_pts, 0.0)
    of_f = np.where(p11.valid, of_f, 0.0)
    sf_f = np.where(p11.valid, sf_f, 0.0)

    mask1 = _dynamic_mask(spec, objid1, p11.valid)
    mask2 = _dynamic_mask(spec, objid2, p22.valid)

    def conf(valid):
        return np.where(valid, 1.0, 0.5)

    quad = DpmQuad(
        spec.width,
        spec.height,
        p11,
        p21,
        p12,
        p22,
        conf(p11.valid),
        conf(p22.valid),
        conf(p11.valid),
        conf(p22.valid),
        objid1,
        objid2,
        mask1,
        mask2,
    )

    object_motions = {}
    for obj in spec.objects:
        if obj.is_dynamic:
            motion = pose1_inv.compose(_world_motion(obj)).compose(cam1.pose)
        else:
            motion = RigidTransform.identity()
        object_motions[obj.primitive.albedo] = motion

    flows = {
        "SF-F": FlowField(sf_f, "SF-F", p11.valid.copy()),
        "SF-B": FlowField(sf_b, "SF-B", p22.valid.copy()),
        "OF-F": FlowField(of_f, "OF-F", p11.valid.copy()),
        "OF-B": FlowField(of_b, "OF-B", p22.valid.copy()),
    }
    gt = GroundTruth(cam_motion, object_motions, flows, img2_t1_view2)
    return quad, gt


def swap_scene(spec: SceneSpec) -> SceneSpec:
    """The same scene with the roles of the two images exchanged.

    Building the swapped spec yields the four complementary maps expressed
    in viewpoint 2.
    """
    objects = tuple(
        ObjectTrack(o.primitive, o.pose_t2, o.pose_t1, o.is_dynamic)
        for o in spec.objects
    )
    return SceneSpec(
        spec.width, spec.height, spec.camera2, spec.camera1, objects, spec.seed
    )


# ---------------------------------------------------------------------------
# perturbation


def perturb_point_map(pmap: PointMap, sigma: float, seed: int) -> PointMap:
    """Add iid zero-mean Gaussian noise to every valid point."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    out = pmap.copy()
    if sigma == 0.0:
        return out
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=out.points.shape)
    out.points[:, out.valid] += noise[:, out.valid]
    return out


def perturb(quad: DpmQuad, sigma: float, seed: int) -> DpmQuad:
    """Simulate prediction error: Gaussian noise on every valid point.

    Deterministic given seed; sigma == 0 returns a bit-identical copy.
    The full-size noise field is drawn per map in a fixed order, so the
    noise at a pixel does not depend on the validity pattern elsewhere.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    out = quad.copy()
    if sigma == 0.0:
        return out
    rng = np.random.default_rng(seed)
    for pm in (out.img1_t1, out.img2_t1, out.img1_t2, out.img2_t2):
        noise = rng.normal(0.0, sigma, size=pm.points.shape)
        pm.points[:, pm.valid] += noise[:, pm.valid]
    return out


# ---------------------------------------------------------------------------
# pixel-exact correspondence oracle


def exact_correspondence(spec: SceneSpec, quad: DpmQuad, gt: GroundTruth, tol=1e-9):
    """Image-1 -> image-2 pixel correspondence where it is exact.

    For each valid image-1 pixel, its point is pushed to t2, projected
    into camera 2, and snapped to the containing pixel. The pair counts
    only if that image-2 pixel saw the same object and its t1 point
    coincides with the query point within `tol` — i.e. the two cameras
    sampled the same physical point, as happens for pixel-aligned scene
    constructions. Returns (target_index, covisible) over image-1 pixels.
    """
    n = spec.width * spec.height
    target = np.full(n, -1, dtype=np.int64)
    covis = np.zeros(n, dtype=bool)

    p11 = quad.img1_t1
    sel = np.flatnonzero(p11.valid)
    if sel.size == 0:
        return target, covis

    # t2 world positions of image-1 points
    w1 = spec.camera1.pose.apply(p11.points[:, sel])
    w2 = w1.copy()
    for obj in spec.objects:
        if not obj.is_dynamic:
            continue
        cols = quad.objid1[sel] == obj.primitive.albedo
        if np.any(cols):
            w2[:, cols] = _world_motion(obj).apply(w1[:, cols])

    q = spec.camera2.pose.inverse().apply(w2)
    cam2 = spec.camera2
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam2.fx * q[0] / q[2] + cam2.cx
        v = cam2.fy * q[1] / q[2] + cam2.cy
    in_front = q[2] > 0
    with np.errstate(invalid="ignore"):
        iu = np.floor(u).astype(np.int64)
        iv = np.floor(v).astype(np.int64)
    inside = (
        in_front & (iu >= 0) & (iu < spec.width) & (iv >= 0) & (iv < spec.height)
    )
    idx2 = np.where(inside, iv * spec.width + iu, 0)

    same_obj = inside & (quad.objid2[idx2] == quad.objid1[sel]) & quad.valid2[idx2]
    dist = np.linalg.norm(
        quad.img2_t1.points[:, idx2] - p11.points[:, sel], axis=0
    )
    good = same_obj & (dist <= tol)

    target[sel[good]] = idx2[good]
    covis[sel[good]] = True
    return target, covis


# ---------------------------------------------------------------------------
# scene spec text format (YAML)


def _pose_to_dict(t: RigidTransform) -> dict:
    return {
        "rotation": [float(x) for x in t.rotation.ravel()],
        "translation": [float(x) for x in t.translation],
    }


def _pose_from_dict(d, where: str) -> RigidTransform:
    if not isinstance(d, dict):
        raise SceneSpecError(where, "expected a mapping with rotation/translation")
    rot = d.get("rotation", [1, 0, 0, 0, 1, 0, 0, 0, 1])
    tr = d.get("translation", [0, 0, 0])
    if not (isinstance(rot, list) and len(rot) == 9):
        raise SceneSpecError(f"{where}.rotation", "expected 9 row-major floats")
    if not (isinstance(tr, list) and len(tr) == 3):
        raise SceneSpecError(f"{where}.translation", "expected 3 floats")
    try:
        return RigidTransform(np.array(rot, dtype=float).reshape(3, 3), tr)
    except ValueError as exc:
        raise SceneSpecError(where, str(exc)) from None


def _camera_to_dict(cam: CameraModel) -> dict:
    d = {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy}
    d.update(_pose_to_dict(cam.pose))
    return d


def _camera_from_dict(d, where: str) -> CameraModel:
    if not isinstance(d, dict):
        raise SceneSpecError(where, "expected a mapping")
    for key in ("fx", "fy", "cx", "cy"):
        if key not in d:
            raise SceneSpecError(f"{where}.{key}", "missing required field")
        if not isinstance(d[key], (int, float)):
            raise SceneSpecError(f"{where}.{key}", "expected a number")
    if d["fx"] <= 0 or d["fy"] <= 0:
        raise SceneSpecError(f"{where}.fx", "focal lengths must be positive")
    pose = _pose_from_dict(d, where)
    return CameraModel(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), pose)


_SIZE_KEYS = {"sphere": "radius", "box": "half_extents", "plane": "height"}


def scene_to_dict(spec: SceneSpec) -> dict:
    objects = []
    for obj in spec.objects:
        prim = obj.primitive
        entry: dict = {"kind": prim.kind, "albedo": prim.albedo}
        if prim.kind == "sphere":
            entry["radius"] = prim.size[0]
        elif prim.kind == "box":
            entry["half_extents"] = list(prim.size)
        else:
            entry["height"] = prim.size[0]
        entry["dynamic"] = obj.is_dynamic
        entry["pose_t1"] = _pose_to_dict(obj.pose_t1)
        entry["pose_t2"] = _pose_to_dict(obj.pose_t2)
        objects.append(entry)
    return {
        "width": spec.width,
        "height": spec.height,
        "seed": spec.seed,
        "camera1": _camera_to_dict(spec.camera1),
        "camera2": _camera_to_dict(spec.camera2),
        "objects": objects,
    }


def scene_from_dict(data) -> SceneSpec:
    if not isinstance(data, dict):
        raise SceneSpecError("document", "top level must be a mapping")
    for key in ("width", "height", "camera1", "camera2", "objects"):
        if key not in data:
            raise SceneSpecError(key, "missing required field")
    for key in ("width", "height"):
        if not isinstance(data[key], int) or data[key] <= 0:
            raise SceneSpecError(key, "expected a positive integer")
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise SceneSpecError("seed", "expected an integer")
    cam1 = _camera_from_dict(data["camera1"], "camera1")
    cam2 = _camera_from_dict(data["camera2"], "camera2")
    raw_objects = data["objects"]
    if not isinstance(raw_objects, list) or not raw_objects:
        raise SceneSpecError("objects", "expected a non-empty list")

    objects = []
    for k, entry in enumerate(raw_objects):
        where = f"objects[{k}]"
        if not isinstance(entry, dict):
            raise SceneSpecError(where, "expected a mapping")
        kind = entry.get("kind")
        if kind not in _SIZE_KEYS:
            raise SceneSpecError(f"{where}.kind", "must be sphere, box or plane")
        size_key = _SIZE_KEYS[kind]
        if size_key not in entry:
            raise SceneSpecError(f"{where}.{size_key}", "missing required field")
        raw_size = entry[size_key]
        if kind == "box":
            if not (isinstance(raw_size, list) and len(raw_size) == 3):
                raise SceneSpecError(f"{where}.half_extents", "expected 3 floats")
            size = tuple(float(s) for s in raw_size)
        else:
            if not isinstance(raw_size, (int, float)):
                raise SceneSpecError(f"{where}.{size_key}", "expected a number")
            size = (float(raw_size),)
        if kind != "plane" and any(s <= 0 for s in size):
            raise SceneSpecError(f"{where}.{size_key}", "must be positive")
        albedo = entry.get("albedo", k)
        if not isinstance(albedo, int) or albedo < 0:
            raise SceneSpecError(f"{where}.albedo", "expected a nonnegative integer")
        dynamic = entry.get("dynamic", False)
        if not isinstance(dynamic, bool):
            raise SceneSpecError(f"{where}.dynamic", "expected true or false")
        pose_t1 = _pose_from_dict(entry.get("pose_t1", {}), f"{where}.pose_t1")
        pose_t2 = (
            _pose_from_dict(entry["pose_t2"], f"{where}.pose_t2")
            if "pose_t2" in entry
            else pose_t1
        )
        if not dynamic:
            same = np.array_equal(pose_t1.rotation, pose_t2.rotation) and np.array_equal(
                pose_t1.translation, pose_t2.translation
            )
            if not same:
                raise SceneSpecError(f"{where}.dynamic", "static object moved between poses")
        objects.append(ObjectTrack(Primitive(kind, size, albedo), pose_t1, pose_t2, dynamic))

    return SceneSpec(data["width"], data["height"], cam1, cam2, tuple(objects), seed)


def save_scene_spec(spec: SceneSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(scene_to_dict(spec), fh, sort_keys=False)


def load_scene_spec(path) -> SceneSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SceneSpecError("document", f"not valid YAML: {exc}") from None
    return scene_from_dict(data)


# ---------------------------------------------------------------------------
# scene builders


def look_at_camera(position, target, f: float, width: int, height: int) -> CameraModel:
    """Camera at `position` with its optical axis through `target`.

    World +z is treated as up; the camera y axis points downward in world
    terms, matching the x-right / y-down / z-forward camera convention.
    """
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ValueError("camera position and target coincide")
    forward = forward / norm
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-12:  # looking straight up/down
        right = np.array([1.0, 0.0, 0.0])
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    r = np.column_stack([right, down, forward])
    pose = RigidTransform(r, position).orthonormalized()
    return CameraModel(f, f, width / 2.0, height / 2.0, pose)


def _random_rigid_motion(rng, max_angle, t_lo, t_hi) -> RigidTransform:
    axis = rng.normal(size=3)
    while np.linalg.norm(axis) < 1e-8:
        axis = rng.normal(size=3)
    angle = rng.uniform(-max_angle, max_angle)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    t = direction * rng.uniform(t_lo, t_hi)
    return RigidTransform(axis_angle_rotation(axis, angle), t)


def random_scene(
    seed: int,
    width: int = 128,
    height: int = 96,
    min_objects: int = 2,
    max_objects: int = 6,
) -> SceneSpec:
    """Seeded random desk-scale scene: ground plane plus floating solids.

    At least one object is dynamic. Dynamic motions are translation
    dominated (|t| in [1.0, 1.6], rotation <= 0.12 rad), so every moved
    pixel travels farther than the default segmentation threshold, and
    the exact ground-truth mask equals the thresholded one noiselessly.
    """
    rng = np.random.default_rng(seed)
    n_objects = int(rng.integers(min_objects, max_objects + 1))

    objects = [
        ObjectTrack(
            Primitive("plane", (0.0,), 0),
            RigidTransform.identity(),
            RigidTransform.identity(),
            False,
        )
    ]
    n_floating = n_objects - 1
    dynamic_flags = rng.random(n_floating) < 0.5
    if n_floating > 0 and not dynamic_flags.any():
        dynamic_flags[int(rng.integers(0, n_floating))] = True

    for k in range(n_floating):
        centre = np.array(
            [
                rng.uniform(-2.2, 2.2),
                rng.uniform(-2.2, 2.2),
                rng.uniform(0.6, 2.4),
            ]
        )
        pose_t1 = RigidTransform(np.eye(3), centre)
        if rng.random() < 0.5:
            prim = Primitive("sphere", (float(rng.uniform(0.4, 0.9)),), k + 1)
        else:
            prim = Primitive(
                "box", tuple(float(x) for x in rng.uniform(0.3, 0.8, size=3)), k + 1
            )
        if dynamic_flags[k]:
            motion = _random_rigid_motion(rng, max_angle=0.12, t_lo=1.0, t_hi=1.6)
            pose_t2 = motion.compose(pose_t1)
            objects.append(ObjectTrack(prim, pose_t1, pose_t2, True))
        else:
            objects.append(ObjectTrack(prim, pose_t1, pose_t1, False))

    f = float(rng.uniform(95.0, 130.0))
    azim = rng.uniform(0, 2 * np.pi)
    dist = rng.uniform(6.5, 8.5)
    pos1 = np.array(
        [dist * np.cos(azim), dist * np.sin(azim), rng.uniform(2.0, 3.5)]
    )
    target = np.array([rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), 1.2])
    cam1 = look_at_camera(pos1, target, f, width, height)
    delta = _random_rigid_motion(rng, max_angle=0.08, t_lo=0.2, t_hi=0.6)
    cam2 = CameraModel(f, f, width / 2.0, height / 2.0, delta.compose(cam1.pose))
    return SceneSpec(width, height, cam1, cam2, tuple(objects), seed)


def exact_match_scene(seed: int, width: int = 64, height: int = 48) -> SceneSpec:
    """Scene whose image-to-image correspondence is pixel exact.

    A single static camera watches a fronto-parallel backdrop plane and
    one or two axis-aligned boxes whose front faces are fronto-parallel
    and which translate strictly parallel to the image plane by an exact
    integer number of pixels at their face depth. Every backdrop pixel
    and every front-face pixel therefore has an image-2 pixel that sampled
    the same physical point.
    """
    rng = np.random.default_rng(seed)
    f = 100.0
    cam = CameraModel(f, f, width / 2.0, height / 2.0, RigidTransform.identity())

    z_bg = float(rng.uniform(7.0, 9.0))
    # backdrop: plane z = z_bg, fronto-parallel to the identity camera
    objects = [
        ObjectTrack(
            Primitive("plane", (z_bg,), 0),
            RigidTransform.identity(),
            RigidTransform.identity(),
            False,
        )
    ]
    n_boxes = int(rng.integers(1, 3))
    for k in range(n_boxes):
        half = np.array(
            [rng.uniform(0.5, 1.0), rng.uniform(0.4, 0.8), rng.uniform(0.2, 0.4)]
        )
        centre = np.array(
            [rng.uniform(-1.2, 1.2), rng.uniform(-0.8, 0.8), rng.uniform(4.0, 5.5)]
        )
        z_face = centre[2] - half[2]
        nx = int(rng.integers(-4, 5))
        ny = int(rng.integers(-3, 4))
        if nx == 0 and ny == 0:
            nx = 2
        shift = np.array([nx * z_face / f, ny * z_face / f, 0.0])
        pose_t1 = RigidTransform(np.eye(3), centre)
        pose_t2 = RigidTransform(np.eye(3), centre + shift)
        objects.append(
            ObjectTrack(Primitive("box", tuple(half), k + 1), pose_t1, pose_t2, True)
        )
    return SceneSpec(width, height, cam, cam, tuple(objects), seed)


def follow_camera_scene(seed: int, width: int = 128, height: int = 96) -> SceneSpec:
    """Dynamic sphere with camera 2 rigidly attached to its motion.

    Because the camera undergoes exactly the sphere's world motion, each
    image-2 pixel on the sphere samples the same physical point as the
    identical image-1 pixel, so the two time-1 clouds coincide on the
    sphere exactly — the fusion coincidence fixture.
    """
    rng = np.random.default_rng(seed)
    objects = [
        ObjectTrack(
            Primitive("plane", (0.0,), 0),
            RigidTransform.identity(),
            RigidTransform.identity(),
            False,
        ),
        ObjectTrack(
            Primitive("box", (0.6, 0.6, 0.6), 2),
            RigidTransform(np.eye(3), np.array([1.8, -1.4, 0.6])),
            RigidTransform(np.eye(3), np.array([1.8, -1.4, 0.6])),
            False,
        ),
    ]
    centre = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 1.4])
    pose_t1 = RigidTransform(np.eye(3), centre)
    motion = _random_rigid_motion(rng, max_angle=0.25, t_lo=0.5, t_hi=0.9)
    sphere = ObjectTrack(
        Primitive("sphere", (0.8,), 1), pose_t1, motion.compose(pose_t1), True
    )
    objects.insert(1, sphere)

    cam1 = look_at_camera([0.5, -7.0, 2.5], [0.0, 0.0, 1.2], 110.0, width, height)
    cam2 = CameraModel(
        110.0, 110.0, width / 2.0, height / 2.0, motion.compose(cam1.pose)
    )
    return SceneSpec(width, height, cam1, cam2, tuple(objects), seed)


def two_spheres_scene(seed: int, width: int = 128, height: int = 96) -> SceneSpec:
    """One static and one dynamic sphere over a ground plane."""
    rng = np.random.default_rng(seed)
    plane = ObjectTrack(
        Primitive("plane", (0.0,), 0),
        RigidTransform.identity(),
        RigidTransform.identity(),
        False,
    )
    static_pose = RigidTransform(np.eye(3), np.array([-1.3, 0.4, 0.9]))
    static = ObjectTrack(Primitive("sphere", (0.9,), 1), static_pose, static_pose, False)
    dyn_pose1 = RigidTransform(np.eye(3), np.array([1.2, -0.3, 1.1]))
    motion = _random_rigid_motion(rng, max_angle=0.1, t_lo=1.0, t_hi=1.4)
    dynamic = ObjectTrack(
        Primitive("sphere", (0.7,), 2), dyn_pose1, motion.compose(dyn_pose1), True
    )

    f = 115.0
    cam1 = look_at_camera([0.3, -7.5, 2.8], [0.0, 0.0, 1.0], f, width, height)
    delta = _random_rigid_motion(rng, max_angle=0.06, t_lo=0.25, t_hi=0.5)
    cam2 = CameraModel(f, f, width / 2.0, height / 2.0, delta.compose(cam1.pose))
    return SceneSpec(width, height, cam1, cam2, (plane, static, dynamic), seed)


def static_room_scene(seed: int, width: int = 128, height: int = 96) -> SceneSpec:
    """Fully static scene with two distinct cameras."""
    rng = np.random.default_rng(seed)
    mk = lambda prim, centre: ObjectTrack(
        prim,
        RigidTransform(np.eye(3), np.asarray(centre, dtype=float)),
        RigidTransform(np.eye(3), np.asarray(centre, dtype=float)),
        False,
    )
    objects = (
        ObjectTrack(
            Primitive("plane", (0.0,), 0),
            RigidTransform.identity(),
            RigidTransform.identity(),
            False,
        ),
        mk(Primitive("box", (0.7, 0.5, 0.6), 1), [-1.2, 0.5, 0.6]),
        mk(Primitive("sphere", (0.8,), 2), [1.1, -0.2, 1.0]),
        mk(Primitive("box", (0.4, 0.4, 0.9), 3), [0.2, 1.4, 0.9]),
    )
    f = 120.0
    cam1 = look_at_camera([0.0, -7.0, 3.0], [0.0, 0.0, 1.0], f, width, height)
    delta = _random_rigid_motion(rng, max_angle=0.1, t_lo=0.4, t_hi=0.8)
    cam2 = CameraModel(f, f, width / 2.0, height / 2.0, delta.compose(cam1.pose))
    return SceneSpec(width, height, cam1, cam2, objects, seed)


PRESETS = {
    "two-spheres": two_spheres_scene,
    "static-room": static_room_scene,
    "follow-cam": follow_camera_scene,
    "plane-shift": exact_match_scene,
    "random": random_scene,
}


def preset_scene(name: str, seed: int = 0, width=None, height=None) -> SceneSpec:
    if name not in PRESETS:
        raise SceneSpecError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kwargs = {}
    if width is not None:
        kwargs["width"] = width
    if height is not None:
        kwargs["height"] = height
    return PRESETS[name](seed, **kwargs)
