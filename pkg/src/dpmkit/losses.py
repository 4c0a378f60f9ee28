"""Training losses and evaluation metrics, with analytic gradients.

The regression loss normalises each cloud by the mean 2-norm of its valid
points, so values are invariant to a global rescaling of either input.
All reductions are plain numpy sums (fixed-order pairwise summation), so
every number here is bit-identical across runs and thread counts.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DegenerateInputError
from .geometry import PointMap
from .solvers import FlowField

DEFAULT_ALPHA = 0.2


def _both_valid(pred: PointMap, gt: PointMap) -> np.ndarray:
    if pred.size != gt.size:
        raise ValueError("point maps have mismatched sizes")
    return pred.valid & gt.valid


def _mean_valid_norm(pmap: PointMap) -> float:
    pts = pmap.valid_points()
    if pts.shape[1] == 0:
        raise DegenerateInputError("map has no valid points to normalise by")
    mean = float(np.mean(np.linalg.norm(pts, axis=0)))
    if mean == 0.0:
        raise DegenerateInputError("mean point norm is zero (all-zero cloud)")
    return mean


def stack_maps(maps) -> PointMap:
    """Concatenate point maps column-wise (for jointly normalised losses)."""
    pts = np.concatenate([m.points for m in maps], axis=1)
    valid = np.concatenate([m.valid for m in maps])
    return PointMap(pts, valid)


def l_reg_values(pred: PointMap, gt: PointMap) -> np.ndarray:
    """Per-pixel scale-normalised regression loss; zero where invalid."""
    sel = _both_valid(pred, gt)
    hp = _mean_valid_norm(pred)
    hg = _mean_valid_norm(gt)
    diff = pred.points / hp - gt.points / hg
    values = np.where(sel, np.linalg.norm(diff, axis=0), 0.0)
    return values


def l_reg(pred: PointMap, gt: PointMap, index: int) -> float:
    values = l_reg_values(pred, gt)
    if not (pred.valid[index] and gt.valid[index]):
        raise ValueError(f"pixel {index} is not valid in both maps")
    return float(values[index])


def l_reg_mean(pred: PointMap, gt: PointMap, mask=None) -> float:
    sel = _both_valid(pred, gt)
    if mask is not None:
        sel = sel & np.asarray(mask, dtype=bool)
    if not sel.any():
        raise ValueError("mask selects no valid pixels")
    return float(np.sum(l_reg_values(pred, gt)[sel]) / np.count_nonzero(sel))


def _check_conf(conf: np.ndarray, sel: np.ndarray) -> np.ndarray:
    conf = np.asarray(conf, dtype=np.float64)
    if conf.shape != sel.shape:
        raise ValueError("confidence grid length must match the maps")
    used = conf[sel]
    if np.any(used <= 0.0):
        raise ValueError("confidence must be strictly positive (log divergence)")
    if np.any(used > 1.0):
        raise ValueError("confidence must not exceed 1")
    return conf


def l_conf(pred: PointMap, gt: PointMap, conf, alpha: float = DEFAULT_ALPHA) -> float:
    """Confidence-weighted regression loss with a -alpha*log(C) regulariser.

    Averages C_i * L_i - alpha * log(C_i) over the pixels valid in both
    maps; invalid pixels contribute nothing and do not count toward the
    divisor.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    sel = _both_valid(pred, gt)
    conf = _check_conf(conf, sel)
    if not sel.any():
        raise ValueError("no valid pixels")
    values = l_reg_values(pred, gt)
    terms = conf[sel] * values[sel] - alpha * np.log(conf[sel])
    return float(np.sum(terms) / np.count_nonzero(sel))


def l_conf_grad(pred: PointMap, gt: PointMap, conf, alpha: float = DEFAULT_ALPHA):
    """Analytic gradients of l_conf w.r.t. the predicted points and conf.

    The point gradient carries the quotient rule through the prediction's
    own normaliser: writing h for the mean valid norm of pred and
    r_i = p_i/h - q_i/g,

        dL/dp_k = (1/K) [ C_k r_k/(h |r_k|)
                          - (sum_i C_i <r_i/|r_i|, p_i>) p_k / (|P| h^2 |p_k|) ]

    where K counts pixels valid in both maps and |P| pixels valid in pred.
    Pixels with r_i = 0 use the zero subgradient. Returns (grad_points,
    grad_conf) with zeros at invalid pixels.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    sel = _both_valid(pred, gt)
    conf = _check_conf(conf, sel)
    if not sel.any():
        raise ValueError("no valid pixels")
    k_count = np.count_nonzero(sel)
    p_count = np.count_nonzero(pred.valid)
    hp = _mean_valid_norm(pred)
    hg = _mean_valid_norm(gt)

    diff = pred.points / hp - gt.points / hg
    l_vals = np.linalg.norm(diff, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where((l_vals > 0.0) & sel, diff / l_vals, 0.0)

    # direct term: C_k * unit_k / hp at pixels in the loss sum
    grad_pts = np.where(sel, conf, 0.0) * unit / hp

    # normaliser term, shared across all pred-valid pixels
    coupling = np.sum(np.where(sel, conf, 0.0) * np.sum(unit * pred.points, axis=0))
    norms = np.linalg.norm(pred.points, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit_p = np.where((norms > 0.0) & pred.valid, pred.points / norms, 0.0)
    grad_pts = grad_pts - (coupling / (p_count * hp * hp)) * unit_p
    grad_pts = grad_pts / k_count
    grad_pts[:, ~pred.valid] = 0.0

    grad_conf = np.where(sel, (l_vals - alpha / np.where(sel, conf, 1.0)) / k_count, 0.0)
    return grad_pts, grad_conf


def l_rel(
    pred: PointMap,
    gt: PointMap,
    mask=None,
    pred_scale: float | None = None,
    gt_scale: float | None = None,
) -> float:
    """Median-normalised relative point error over a pixel subset.

    Both clouds are divided by the median 2-norm of their points inside
    the mask (or by the supplied scales, for jointly normalised variants),
    then per-pixel errors are measured relative to the ground-truth norm.
    Ground-truth columns with zero norm cannot be measured relatively and
    are excluded with a warning.
    """
    sel = _both_valid(pred, gt)
    if mask is not None:
        sel = sel & np.asarray(mask, dtype=bool)
    if not sel.any():
        raise ValueError("mask selects no valid pixels")
    zp = median_scale(pred, sel) if pred_scale is None else float(pred_scale)
    zg = median_scale(gt, sel) if gt_scale is None else float(gt_scale)
    if zp == 0.0 or zg == 0.0:
        raise DegenerateInputError("median point norm is zero")

    gt_norms = np.linalg.norm(gt.points, axis=0)
    measurable = sel & (gt_norms > 0.0)
    skipped = int(np.count_nonzero(sel) - np.count_nonzero(measurable))
    if skipped:
        warnings.warn(f"l_rel: excluded {skipped} zero-norm ground-truth points")
    if not measurable.any():
        raise DegenerateInputError("no measurable pixels (all gt norms zero)")
    diff = pred.points[:, measurable] / zp - gt.points[:, measurable] / zg
    ratios = np.linalg.norm(diff, axis=0) / (gt_norms[measurable] / zg)
    return float(np.sum(ratios) / ratios.size)


def median_scale(pmap: PointMap, mask=None) -> float:
    """Median 2-norm of the selected valid points."""
    sel = pmap.valid if mask is None else (pmap.valid & np.asarray(mask, dtype=bool))
    if not sel.any():
        raise ValueError("mask selects no valid pixels")
    return float(np.median(np.linalg.norm(pmap.points[:, sel], axis=0)))


def epe(flow_pred: FlowField, flow_gt: FlowField, mask=None) -> float:
    """Mean end-point error between two displacement fields."""
    if flow_pred.vectors.shape != flow_gt.vectors.shape:
        raise ValueError("flow fields have mismatched shapes")
    sel = flow_pred.valid & flow_gt.valid
    if mask is not None:
        sel = sel & np.asarray(mask, dtype=bool)
    if not sel.any():
        raise ValueError("mask selects no valid pixels")
    d = np.linalg.norm(flow_pred.vectors[:, sel] - flow_gt.vectors[:, sel], axis=0)
    return float(np.sum(d) / d.size)


def _check_rotation(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise ValueError("rotation must be 3x3")
    if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6 or abs(np.linalg.det(r) - 1) > 1e-6:
        raise ValueError("matrix is not a rotation within 1e-6")
    return r


def rpe_rot(r_a, r_b) -> float:
    """Geodesic angle between two rotations, in [0, pi] radians."""
    r_a = _check_rotation(r_a)
    r_b = _check_rotation(r_b)
    cos = (np.trace(r_a.T @ r_b) - 1.0) / 2.0
    return float(math.acos(min(1.0, max(-1.0, cos))))


def rpe_trans(t_a, t_b) -> float:
    t_a = np.asarray(t_a, dtype=np.float64).reshape(3)
    t_b = np.asarray(t_b, dtype=np.float64).reshape(3)
    return float(np.linalg.norm(t_a - t_b))


class DepthMetrics(NamedTuple):
    abs_rel: float
    delta_125: float


def depth_metrics(pred, gt, mask=None, align: str = "none") -> DepthMetrics:
    """Absolute relative error and the delta < 1.25 accuracy ratio.

    `pred` and `gt` are DepthMap-like objects or plain arrays. With
    align="median" the prediction is rescaled by median(gt)/median(pred)
    before comparison.
    """
    if align not in ("none", "median"):
        raise ValueError("align must be 'none' or 'median'")
    p = np.asarray(getattr(pred, "depths", pred), dtype=np.float64)
    g = np.asarray(getattr(gt, "depths", gt), dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError("depth arrays have mismatched shapes")
    sel = np.ones(p.shape, dtype=bool)
    if hasattr(pred, "valid"):
        sel &= pred.valid
    if hasattr(gt, "valid"):
        sel &= gt.valid
    if mask is not None:
        sel &= np.asarray(mask, dtype=bool)
    if not sel.any():
        raise ValueError("mask selects no pixels")
    p = p[sel]
    g = g[sel]
    if np.any(g <= 0):
        raise ValueError("ground-truth depths must be positive on the mask")
    if align == "median":
        mp = float(np.median(p))
        if mp == 0.0:
            raise DegenerateInputError("median predicted depth is zero")
        p = p * (float(np.median(g)) / mp)
    abs_rel = float(np.sum(np.abs(p - g) / g) / g.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(p / g, g / p)
    ratio = np.where(np.isfinite(ratio), ratio, np.inf)
    delta = float(np.count_nonzero(ratio < 1.25) / g.size)
    return DepthMetrics(abs_rel, delta)


# ---------------------------------------------------------------------------
# reports


_REPORT_MAGIC = "metric-report 1"


@dataclass
class MetricReport:
    """Ordered named scalars plus the pixel/object counts behind them."""

    values: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for key, value in self.values.items():
            if not math.isfinite(value):
                raise ValueError(f"metric {key!r} is not finite")

    def to_text(self) -> str:
        lines = [_REPORT_MAGIC]
        for key, value in self.values.items():
            lines.append(f"{key} = {value!r}")
        for key, value in self.counts.items():
            lines.append(f"count {key} = {value}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "MetricReport":
        lines = text.splitlines()
        if not lines or lines[0] != _REPORT_MAGIC:
            raise ValueError("not a metric report")
        values: dict[str, float] = {}
        counts: dict[str, int] = {}
        for line in lines[1:]:
            if not line.strip():
                continue
            key, sep, value = line.rpartition(" = ")
            if not sep:
                raise ValueError(f"malformed report line {line!r}")
            if key.startswith("count "):
                counts[key[len("count "):]] = int(value)
            else:
                values[key] = float(value)
        return MetricReport(values, counts)


_MAP_LABELS = {
    "img1_t1": "P1(t1)",
    "img2_t1": "P2(t1)",
    "img1_t2": "P1(t2)",
    "img2_t2": "P2(t2)",
}

_FLOW_LABELS = {
    "SF-F": "Scene Flow Forward",
    "SF-B": "Scene Flow Backward",
    "OF-F": "Object Flow Forward",
    "OF-B": "Object Flow Backward",
}


def pointmap_report(pred_quad, gt_quad, joint: bool = False) -> MetricReport:
    """Relative point error per map, per-map or jointly median-normalised."""
    values: dict[str, float] = {}
    counts: dict[str, int] = {}
    pred_scale = gt_scale = None
    if joint:
        pred_scale = median_scale(
            stack_maps([pred_quad.img1_t1, pred_quad.img2_t2])
        )
        gt_scale = median_scale(stack_maps([gt_quad.img1_t1, gt_quad.img2_t2]))
    for name, label in _MAP_LABELS.items():
        pred = pred_quad.maps()[name]
        gt = gt_quad.maps()[name]
        values[f"L_rel {label}"] = l_rel(
            pred, gt, pred_scale=pred_scale, gt_scale=gt_scale
        )
        counts[f"L_rel {label}"] = int(np.count_nonzero(pred.valid & gt.valid))
    return MetricReport(values, counts)


def flow_report(pred_flows, gt_flows) -> MetricReport:
    """End-point error for the four flow kinds (Table-style schema)."""
    values: dict[str, float] = {}
    counts: dict[str, int] = {}
    for kind, label in _FLOW_LABELS.items():
        if kind not in pred_flows or kind not in gt_flows:
            raise ValueError(f"flow kind {kind} missing from inputs")
        values[f"EPE {label}"] = epe(pred_flows[kind], gt_flows[kind])
        counts[f"EPE {label}"] = int(
            np.count_nonzero(pred_flows[kind].valid & gt_flows[kind].valid)
        )
    return MetricReport(values, counts)


def pose_report(object_pairs, camera_pair=None) -> MetricReport:
    """Object (and optionally camera) relative-pose errors.

    `object_pairs` is a list of (gt, estimate) RigidTransform pairs. The
    rotation error is reported in radians and additionally in degrees.
    """
    if not object_pairs:
        raise ValueError("no object pose pairs supplied")
    rots = [rpe_rot(gt.rotation, est.rotation) for gt, est in object_pairs]
    trans = [rpe_trans(gt.translation, est.translation) for gt, est in object_pairs]
    values = {
        "RPE rot": float(np.mean(rots)),
        "RPE trans": float(np.mean(trans)),
        "RPE rot deg": float(np.degrees(np.mean(rots))),
    }
    counts = {"RPE rot": len(rots)}
    if camera_pair is not None:
        gt, est = camera_pair
        values["RPE rot camera"] = rpe_rot(gt.rotation, est.rotation)
        values["RPE trans camera"] = rpe_trans(gt.translation, est.translation)
    return MetricReport(values, counts)


def depth_report(pred, gt, mask=None, align: str = "median") -> MetricReport:
    m = depth_metrics(pred, gt, mask, align)
    sel_count = int(
        np.count_nonzero(
            (pred.valid if hasattr(pred, "valid") else True)
            & (gt.valid if hasattr(gt, "valid") else True)
        )
    )
    return MetricReport(
        {"Abs Rel": m.abs_rel, "δ<1.25": m.delta_125},
        {"Abs Rel": sel_count},
    )
