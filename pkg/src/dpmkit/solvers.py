"""Downstream solvers that reduce a point-map quadruple to 3D/4D answers.

Everything here is a pure function over immutable inputs. Reductions use
numpy's fixed-order summation so results are bit-identical across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateGeometryError,
    EmptyTargetError,
    InsufficientDataError,
    InsufficientStaticStructureError,
)
from .geometry import PixelGrid, PointMap, RigidTransform

BRUTE_FORCE_LIMIT = 4096


@dataclass
class Correspondence:
    """Per-query-pixel nearest neighbour in a target map.

    target_index is -1 and distance inf where the query pixel is invalid.
    Every non-negative index addresses a valid target pixel.
    """

    target_index: np.ndarray
    distance: np.ndarray
    valid: np.ndarray


@dataclass
class MotionMask:
    """Boolean per-pixel motion indicator plus the threshold that made it."""

    moved: np.ndarray
    eps: float


@dataclass
class FlowField:
    """Per-pixel 3D displacement; kind is one of SF-F, SF-B, OF-F, OF-B."""

    vectors: np.ndarray
    kind: str
    valid: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        m = np.asarray(self.valid, dtype=bool)
        if v.ndim != 2 or v.shape[0] != 3 or m.shape != (v.shape[1],):
            raise ValueError("vectors must be 3xN with a matching valid mask")
        if self.kind not in ("SF-F", "SF-B", "OF-F", "OF-B"):
            raise ValueError(f"unknown flow kind {self.kind!r}")
        self.vectors = v
        self.valid = m

    def copy(self) -> "FlowField":
        return FlowField(self.vectors.copy(), self.kind, self.valid.copy())


# ---------------------------------------------------------------------------
# focal recovery


def recover_focal(pmap: PointMap, grid: PixelGrid, principal_point, iterations=10):
    """Recover the shared focal length from a camera-frame point map.

    Solves for f in u = f * (x/z, y/z) + c robustly: closed-form least
    squares to initialise, then Weiszfeld-style reweighting (minimising the
    sum of residual norms) for up to `iterations` rounds, which shrugs off
    a moderate fraction of depth outliers.
    """
    if pmap.size != grid.width * grid.height:
        raise ValueError("point map size does not match the pixel grid")
    z = pmap.points[2]
    with np.errstate(invalid="ignore"):
        use = pmap.valid & (z > 0.0)
    if np.count_nonzero(use) < 10:
        raise InsufficientDataError(
            f"need at least 10 usable pixels, have {np.count_nonzero(use)}"
        )
    c = np.asarray(principal_point, dtype=np.float64).reshape(2)
    a = grid.coords[:2, use] - c[:, None]
    b = pmap.points[:2, use] / z[use]

    bb = np.sum(b * b, axis=0)
    if np.max(bb) < 1e-24:
        raise DegenerateGeometryError("all points lie on the optical axis")
    ab = np.sum(a * b, axis=0)
    f = np.sum(ab) / np.sum(bb)
    for _ in range(iterations):
        residual = np.linalg.norm(a - f * b, axis=0)
        w = 1.0 / np.maximum(residual, 1e-12)
        f = np.sum(w * ab) / np.sum(w * bb)
    return float(f)


# ---------------------------------------------------------------------------
# exact nearest-neighbour matching


def _chunked_brute(query_pts, target_pts):
    n = query_pts.shape[1]
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    chunk = max(1, 8_000_000 // max(1, target_pts.shape[1]))
    for s in range(0, n, chunk):
        q = query_pts[:, s : s + chunk]
        d = np.sqrt(np.sum((q[:, :, None] - target_pts[:, None, :]) ** 2, axis=0))
        idx[s : s + chunk] = np.argmin(d, axis=1)
        dist[s : s + chunk] = d[np.arange(d.shape[0]), idx[s : s + chunk]]
    return idx, dist


def _estimate_spacing(points):
    """Median nearest-neighbour distance of a deterministic subsample."""
    n = points.shape[1]
    sample = points[:, np.linspace(0, n - 1, min(n, 256)).astype(np.int64)]
    d = np.sqrt(np.sum((sample[:, :, None] - points[:, None, :]) ** 2, axis=0))
    d[d == 0.0] = np.inf
    nn = np.min(d, axis=1)
    nn = nn[np.isfinite(nn)]
    if nn.size == 0:
        return 0.0
    return float(np.median(nn))


def _shell_offsets(r):
    """All integer cell offsets at Chebyshev distance exactly r."""
    if r == 0:
        return [(0, 0, 0)]
    offs = []
    for dx in range(-r, r + 1):
        for dy in range(-r, r + 1):
            for dz in range(-r, r + 1):
                if max(abs(dx), abs(dy), abs(dz)) == r:
                    offs.append((dx, dy, dz))
    return offs


_MAX_GRID_RING = 2


def _grid_match(query_pts, target_pts):
    """Exact NN via a uniform hash grid scanned ring by ring.

    Cells at Chebyshev ring >= r+1 only contain points at Euclidean
    distance >= r*h, so a query whose best distance after scanning ring r
    is strictly below r*h is finished. Queries not settled within a couple
    of rings (points far from the target cloud) fall back to a brute scan,
    which keeps the whole search exact. All per-candidate distances use
    the same expression as the brute path so results agree bitwise.
    """
    h = _estimate_spacing(target_pts)
    if h <= 0.0:
        span = np.max(target_pts, axis=1) - np.min(target_pts, axis=1)
        h = float(np.max(span)) / max(1.0, target_pts.shape[1] ** (1 / 3))
    if h <= 0.0:  # all target points coincide
        h = 1.0

    origin = np.min(target_pts, axis=1)
    cells = np.floor((target_pts - origin[:, None]) / h).astype(np.int64)
    lo = cells.min(axis=1)
    hi = cells.max(axis=1)
    dims = hi - lo + 1
    keys = (cells[0] - lo[0]) * dims[1] * dims[2] + (cells[1] - lo[1]) * dims[2] + (
        cells[2] - lo[2]
    )
    order = np.argsort(keys, kind="stable")  # within a cell: ascending index
    sorted_keys = keys[order]
    uniq_keys, cell_start = np.unique(sorted_keys, return_index=True)
    cell_end = np.append(cell_start[1:], sorted_keys.size)

    n = query_pts.shape[1]
    best_d = np.full(n, np.inf)
    best_i = np.full(n, -1, dtype=np.int64)
    active = np.arange(n)
    qcells = np.floor((query_pts - origin[:, None]) / h).astype(np.int64)

    for r in range(_MAX_GRID_RING + 1):
        if active.size == 0:
            break
        for off in _shell_offsets(r):
            cell = qcells[:, active] + np.array(off, dtype=np.int64)[:, None]
            inside = np.all((cell >= lo[:, None]) & (cell <= hi[:, None]), axis=0)
            if not inside.any():
                continue
            sub = active[inside]
            k = (cell[0, inside] - lo[0]) * dims[1] * dims[2] + (
                cell[1, inside] - lo[1]
            ) * dims[2] + (cell[2, inside] - lo[2])
            pos = np.searchsorted(uniq_keys, k)
            pos = np.minimum(pos, uniq_keys.size - 1)
            present = uniq_keys[pos] == k
            if not present.any():
                continue
            sub = sub[present]
            starts = cell_start[pos[present]]
            lens = cell_end[pos[present]] - starts
            total = int(lens.sum())
            cum = np.concatenate([[0], np.cumsum(lens)[:-1]])
            rep = np.repeat(np.arange(sub.size), lens)
            flat = np.repeat(starts, lens) + (np.arange(total) - np.repeat(cum, lens))
            cand = order[flat]
            d = np.sqrt(
                np.sum((target_pts[:, cand] - query_pts[:, sub[rep]]) ** 2, axis=0)
            )
            grp = np.flatnonzero(lens > 0)
            grp_starts = cum[grp]
            dmin = np.minimum.reduceat(d, grp_starts)
            # among equal-distance candidates keep the lowest global index
            tied = d == np.repeat(dmin, lens[grp])
            imin = np.minimum.reduceat(np.where(tied, cand, np.iinfo(np.int64).max), grp_starts)
            tq = sub[grp]
            better = (dmin < best_d[tq]) | ((dmin == best_d[tq]) & (imin < best_i[tq]))
            upd = tq[better]
            best_d[upd] = dmin[better]
            best_i[upd] = imin[better]
        settled = (best_i[active] >= 0) & (best_d[active] < r * h)
        active = active[~settled]

    if active.size:
        idx, dist = _chunked_brute(query_pts[:, active], target_pts)
        best_i[active] = idx
        best_d[active] = dist
    return best_i, best_d


def match_points(a: PointMap, b: PointMap, method: str = "auto") -> Correspondence:
    """Exact nearest neighbour in B for every valid pixel of A.

    Both maps must already share a (time, viewpoint) frame — that is the
    caller's contract. Ties break toward the lowest target index. `method`
    selects "brute" or "grid"; "auto" uses brute force for small targets.
    """
    if method not in ("auto", "brute", "grid"):
        raise ValueError(f"unknown method {method!r}")
    target_sel = np.flatnonzero(b.valid)
    if target_sel.size == 0:
        raise EmptyTargetError("target map has no valid pixels")
    query_sel = np.flatnonzero(a.valid)

    n = a.size
    index = np.full(n, -1, dtype=np.int64)
    distance = np.full(n, np.inf)
    if query_sel.size:
        qp = a.points[:, query_sel]
        tp = b.points[:, target_sel]
        if method == "brute" or (method == "auto" and target_sel.size <= BRUTE_FORCE_LIMIT):
            sub_idx, sub_dist = _chunked_brute(qp, tp)
        else:
            sub_idx, sub_dist = _grid_match(qp, tp)
        index[query_sel] = target_sel[sub_idx]
        distance[query_sel] = sub_dist
    return Correspondence(index, distance, a.valid.copy())


# ---------------------------------------------------------------------------
# motion segmentation


def motion_mask(a: PointMap, b: PointMap, eps: float) -> MotionMask:
    """Pixels whose point moved strictly farther than eps between maps.

    The maps must be column-aligned views of the same image in the same
    viewpoint; invalid pixels are never flagged.
    """
    if a.size != b.size:
        raise ValueError("maps have mismatched sizes")
    if a.frame[1] != b.frame[1]:
        raise ValueError(f"viewpoint tags differ: {a.frame} vs {b.frame}")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    d = np.linalg.norm(a.points - b.points, axis=0)
    moved = (d > eps) & a.valid & b.valid
    return MotionMask(moved, float(eps))


def median_norm(pmap: PointMap) -> float:
    """Median 2-norm of the valid points (the usual scale proxy)."""
    pts = pmap.valid_points()
    if pts.shape[1] == 0:
        raise InsufficientDataError("no valid points")
    return float(np.median(np.linalg.norm(pts, axis=0)))


def default_motion_eps(quad) -> float:
    """Relative threshold: 5% of the median norm of the image-1 map."""
    return 0.05 * median_norm(quad.img1_t1)


# ---------------------------------------------------------------------------
# similarity / rigid alignment


def umeyama_align(src, dst, weights=None, with_scale: bool = False) -> RigidTransform:
    """Weighted least-squares similarity (or rigid) alignment src -> dst.

    Closed form via SVD of the weighted cross-covariance, with the usual
    sign correction so the rotation never degenerates into a reflection.
    Minimises sum_i w_i ||dst_i - (s R src_i + t)||^2.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim != 2 or src.shape[0] != 3 or src.shape != dst.shape:
        raise ValueError("src and dst must both be 3xN")
    n = src.shape[1]
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape != (n,):
            raise ValueError("weights length must match point count")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
    effective = np.count_nonzero(w > 0)
    if effective < 3:
        raise InsufficientDataError(f"need at least 3 weighted points, have {effective}")

    wsum = np.sum(w)
    mu_s = (src @ w) / wsum
    mu_d = (dst @ w) / wsum
    sc = src - mu_s[:, None]
    dc = dst - mu_d[:, None]
    cov = (dc * w) @ sc.T / wsum

    u, d, vt = np.linalg.svd(cov)
    if d[1] <= d[0] * 1e-9:
        raise DegenerateGeometryError("points are collinear or coincident")
    sign = 1.0 if np.linalg.det(u) * np.linalg.det(vt) >= 0 else -1.0
    s_diag = np.array([1.0, 1.0, sign])
    rotation = u @ np.diag(s_diag) @ vt

    if with_scale:
        var_src = np.sum(w * np.sum(sc * sc, axis=0)) / wsum
        scale = float(np.sum(d * s_diag) / var_src)
        if scale <= 0:
            raise DegenerateGeometryError("alignment produced a nonpositive scale")
    else:
        scale = 1.0
    translation = mu_d - scale * (rotation @ mu_s)
    return RigidTransform(rotation, translation, scale)


def alignment_residual(transform: RigidTransform, src, dst, weights=None) -> float:
    """Value of the umeyama objective at a given transform."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    w = np.ones(src.shape[1]) if weights is None else np.asarray(weights, dtype=np.float64)
    r = dst - transform.apply(src)
    return float(np.sum(w * np.sum(r * r, axis=0)))


# ---------------------------------------------------------------------------
# camera and object motion


def estimate_camera_motion(
    quad,
    source,
    mode: str = "auto",
    eps: float | None = None,
    with_scale: bool | None = None,
) -> RigidTransform:
    """Recover the viewpoint-2 -> viewpoint-1 motion from static structure.

    `source` supplies the image-2 points at time 1 expressed in viewpoint
    2: either that PointMap directly (generator ground truth) or a quad
    built with the images swapped, whose img1_t2 is exactly that map.
    Static pixels come from the ground-truth mask (mode "gt") or from
    thresholding the two image-2 maps (mode "auto", threshold `eps`,
    default 5% of the image-1 median norm). The surviving pairs are then
    rigidly (or similarly, per `with_scale`) aligned.
    """
    if mode not in ("auto", "gt"):
        raise ValueError(f"unknown mask mode {mode!r}")
    src_map = source.img1_t2 if hasattr(source, "img1_t2") else source
    if src_map.size != quad.img2_t1.size:
        raise ValueError("source map size does not match the quad")
    if with_scale is None:
        with_scale = mode != "gt"

    if mode == "gt":
        static = ~quad.mask2
    else:
        threshold = default_motion_eps(quad) if eps is None else float(eps)
        static = ~motion_mask(quad.img2_t1, quad.img2_t2, threshold).moved
    sel = static & quad.valid2 & src_map.valid
    if np.count_nonzero(sel) < 3:
        raise InsufficientStaticStructureError(
            "fewer than 3 static pixels available for camera alignment"
        )
    return umeyama_align(
        src_map.points[:, sel], quad.img2_t1.points[:, sel], with_scale=with_scale
    )


def track_object(quad, object_mask) -> RigidTransform:
    """Rigid motion of one object between the two timestamps.

    `object_mask` selects the object's pixels in image 1; the motion is
    the rigid alignment of those points from their t1 to t2 positions,
    expressed in the (t1, viewpoint 1) frame.
    """
    object_mask = np.asarray(object_mask, dtype=bool)
    if object_mask.shape != quad.valid1.shape:
        raise ValueError("object mask length must match the image size")
    sel = object_mask & quad.valid1
    if np.count_nonzero(sel) < 3:
        raise InsufficientDataError(
            f"object mask selects {np.count_nonzero(sel)} valid pixels, need 3"
        )
    return umeyama_align(
        quad.img1_t1.points[:, sel], quad.img1_t2.points[:, sel], with_scale=False
    )


# ---------------------------------------------------------------------------
# flows and fusion


def compute_flows(quad, swapped=None, cam_motion: RigidTransform | None = None,
                  scene_flow: bool | None = None) -> dict[str, FlowField]:
    """Displacement fields between the two timestamps.

    Object flows need only the quad (fixed viewpoint 1). Scene flows need
    the viewpoint-2 versions of the cross-time maps, which come either
    from a swapped-input quad or by mapping through the relative camera
    pose (`cam_motion`, viewpoint 2 -> viewpoint 1). `scene_flow=None`
    computes them exactly when a source is available; requesting them
    without a source is an error.
    """
    flows = {
        "OF-F": FlowField(
            np.where(quad.valid1, quad.img1_t2.points - quad.img1_t1.points, 0.0),
            "OF-F",
            quad.valid1.copy(),
        ),
        "OF-B": FlowField(
            np.where(quad.valid2, quad.img2_t1.points - quad.img2_t2.points, 0.0),
            "OF-B",
            quad.valid2.copy(),
        ),
    }
    want_sf = scene_flow if scene_flow is not None else (
        swapped is not None or cam_motion is not None
    )
    if not want_sf:
        return flows
    if swapped is None and cam_motion is None:
        raise ValueError("scene flow requested without a swapped quad or camera pose")

    if swapped is not None:
        # swapped quad maps live in viewpoint 2; its image 1 is our image 2
        img1_t2_v2 = swapped.img2_t1  # our image-1 pixels at t2, viewpoint 2
        img2_t2_v2 = swapped.img1_t1  # our image-2 pixels at t2, viewpoint 2
        valid_f = quad.valid1 & img1_t2_v2.valid
        valid_b = quad.valid2 & img2_t2_v2.valid
        sf_f = img1_t2_v2.points - quad.img1_t1.points
        sf_b = quad.img2_t1.points - img2_t2_v2.points
    else:
        to_view2 = cam_motion.inverse()
        valid_f = quad.valid1
        valid_b = quad.valid2
        sf_f = to_view2.apply(quad.img1_t2.points) - quad.img1_t1.points
        sf_b = quad.img2_t1.points - to_view2.apply(quad.img2_t2.points)

    flows["SF-F"] = FlowField(np.where(valid_f, sf_f, 0.0), "SF-F", valid_f)
    flows["SF-B"] = FlowField(np.where(valid_b, sf_b, 0.0), "SF-B", valid_b)
    return flows


@dataclass
class FusedCloud:
    """Concatenated valid points of the two maps sharing a timestamp."""

    points: np.ndarray
    source_image: np.ndarray
    pixel_index: np.ndarray


def fuse_points(quad, target_time: str = "t1") -> FusedCloud:
    """Merge the two maps of one timestamp into a single labelled cloud."""
    if target_time == "t1":
        maps = [(1, quad.img1_t1), (2, quad.img2_t1)]
    elif target_time == "t2":
        maps = [(1, quad.img1_t2), (2, quad.img2_t2)]
    else:
        raise ValueError("target_time must be 't1' or 't2'")
    chunks, sources, pixels = [], [], []
    for img, pm in maps:
        sel = np.flatnonzero(pm.valid)
        chunks.append(pm.points[:, sel])
        sources.append(np.full(sel.size, img, dtype=np.int8))
        pixels.append(sel)
    return FusedCloud(
        np.concatenate(chunks, axis=1),
        np.concatenate(sources),
        np.concatenate(pixels),
    )
