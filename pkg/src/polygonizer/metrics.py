"""Geometric evaluation: IoU, tangent-angle error, vertex-count ratio, C-IoU, AP/AR.

IoU is computed on rasterized masks at a fixed resolution inside an explicit
square frame (defaulting to the bounding extent of both rings), so results
are reproducible and frame-independent. The single-object detection metrics
degenerate to threshold counting: with exactly one ground truth and at most
one prediction per sample, precision equals recall at every IoU threshold,
and failed predictions count against both.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import PolygonRing, rasterize

DEFAULT_RESOLUTION = 256
# COCO-style threshold sweep 0.50:0.05:0.95
DEFAULT_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.96, 0.05), 2))


@dataclass
class EvalPair:
    """One evaluation unit: a predicted ring (None when inference failed) and its ground truth."""

    pred: PolygonRing | None
    gt: PolygonRing
    sample_id: str = ""


def _frame_for(pred: PolygonRing | None, gt: PolygonRing) -> float:
    hi = float(np.max(gt.vertices))
    if pred is not None:
        hi = max(hi, float(np.max(pred.vertices)))
    return max(hi, 1.0)


def iou(pred: PolygonRing | None, gt: PolygonRing, resolution: int = DEFAULT_RESOLUTION, frame: float | None = None) -> float:
    """Rasterized intersection-over-union in [0, 1]; a failed prediction scores 0."""
    if pred is None:
        return 0.0
    if frame is None:
        frame = _frame_for(pred, gt)
    scale = resolution / frame
    a = rasterize(PolygonRing(pred.vertices * scale), resolution).bits
    b = rasterize(PolygonRing(gt.vertices * scale), resolution).bits
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 0.0
    return int(np.logical_and(a, b).sum()) / union


def _boundary_samples(ring: PolygonRing, step: float):
    """Points sampled every ``step`` along the boundary plus each point's edge angle."""
    v = ring.vertices
    nxt = np.roll(v, -1, axis=0)
    d = nxt - v
    lengths = np.hypot(d[:, 0], d[:, 1])
    angles = np.arctan2(d[:, 1], d[:, 0])
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    total = cum[-1]
    n = max(int(total / step), len(v))
    s = np.arange(n) * (total / n)
    edge = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(v) - 1)
    t = (s - cum[edge]) / np.maximum(lengths[edge], 1e-12)
    pts = v[edge] + d[edge] * t[:, None]
    return pts, angles[edge]


def max_tangent_angle_error(pred: PolygonRing | None, gt: PolygonRing, sample_step: float = 0.5) -> float:
    """Worst tangent misalignment in degrees, in [0, 90]; failed predictions score 90.

    The predicted boundary is sampled densely; each sample is matched to the
    nearest ground-truth edge and the undirected angle between the two edge
    directions (mod 180, folded) is taken. Returns the maximum.
    """
    if pred is None:
        return 90.0
    pts, pred_angles = _boundary_samples(pred, sample_step)
    gv = gt.vertices
    a = gv
    b = np.roll(gv, -1, axis=0)
    ab = b - a
    ab_sq = np.maximum((ab ** 2).sum(axis=1), 1e-12)
    gt_angles = np.arctan2(ab[:, 1], ab[:, 0])

    # distance from every sample point to every gt segment
    ap = pts[:, None, :] - a[None, :, :]
    t = np.clip((ap * ab[None, :, :]).sum(axis=2) / ab_sq[None, :], 0.0, 1.0)
    closest = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    d2 = ((pts[:, None, :] - closest) ** 2).sum(axis=2)

    # samples at (or numerically on) a gt corner are equidistant from two
    # segments; the tangent there is ambiguous, so let near-ties compete and
    # keep the better-aligned edge
    diff = np.abs(np.degrees(pred_angles[:, None] - gt_angles[None, :])) % 180.0
    folded = np.minimum(diff, 180.0 - diff)
    near = d2 <= d2.min(axis=1, keepdims=True) + 1e-9
    per_sample = np.where(near, folded, np.inf).min(axis=1)
    return float(per_sample.max())


def n_ratio(pairs: list[EvalPair]) -> float:
    """Mean ratio of predicted to ground-truth vertex count; failures contribute 0."""
    if not pairs:
        return 0.0
    ratios = [(len(p.pred) / len(p.gt)) if p.pred is not None else 0.0 for p in pairs]
    return float(np.mean(ratios))


def c_iou(pred: PolygonRing | None, gt: PolygonRing, resolution: int = DEFAULT_RESOLUTION, frame: float | None = None) -> float:
    """IoU discounted by relative vertex-count mismatch:

        C-IoU = IoU * (1 - |Np - Ng| / (Np + Ng))
    """
    if pred is None:
        return 0.0
    np_, ng = len(pred), len(gt)
    return iou(pred, gt, resolution, frame) * (1.0 - abs(np_ - ng) / (np_ + ng))


def ap_ar(ious: list[float], thresholds=DEFAULT_THRESHOLDS) -> dict[str, float]:
    """Threshold-sweep detection metrics for the single-object case.

    With one ground truth and at most one prediction per sample, the fraction
    of pairs at IoU >= tau is both precision and recall, so AP == AR by
    construction; both are reported for table compatibility.
    """
    arr = np.asarray(ious, dtype=np.float64)
    if arr.size == 0:
        return {k: 0.0 for k in ("ap", "ap50", "ap75", "ar", "ar50", "ar75")}
    frac = {float(t): float((arr >= t).mean()) for t in thresholds}
    mean_frac = float(np.mean(list(frac.values())))
    return {
        "ap": mean_frac,
        "ap50": frac.get(0.5, float((arr >= 0.5).mean())),
        "ap75": frac.get(0.75, float((arr >= 0.75).mean())),
        "ar": mean_frac,
        "ar50": frac.get(0.5, float((arr >= 0.5).mean())),
        "ar75": frac.get(0.75, float((arr >= 0.75).mean())),
    }


@dataclass
class MetricsReport:
    ap: float
    ap50: float
    ap75: float
    ar: float
    ar50: float
    ar75: float
    iou: float
    mta_deg: float
    n_ratio: float
    c_iou: float
    n_samples: int
    n_failed: int = 0
    config: dict = field(default_factory=dict)

    def to_row(self, level="none") -> dict:
        return {
            "level": level,
            "ap": self.ap, "ap50": self.ap50, "ap75": self.ap75,
            "ar": self.ar, "ar50": self.ar50, "ar75": self.ar75,
            "iou": self.iou, "mta_deg": self.mta_deg,
            "n_ratio": self.n_ratio, "c_iou": self.c_iou,
            "n_samples": self.n_samples,
        }


def report(pairs: list[EvalPair], *, resolution: int = DEFAULT_RESOLUTION, frame: float | None = None,
           thresholds=DEFAULT_THRESHOLDS, config: dict | None = None) -> MetricsReport:
    """Aggregate all metrics over evaluation pairs.

    mta_deg is the median of per-pair maximum tangent errors (the max is
    already a worst-case statistic, so the median is the robust aggregate);
    IoU, N ratio, and C-IoU are means. Failed predictions score IoU/C-IoU 0,
    ratio 0, and tangent error 90.
    """
    ious = [iou(p.pred, p.gt, resolution, frame) for p in pairs]
    mtas = [max_tangent_angle_error(p.pred, p.gt) for p in pairs]
    cious = [c_iou(p.pred, p.gt, resolution, frame) for p in pairs]
    det = ap_ar(ious, thresholds)
    return MetricsReport(
        **det,
        iou=float(np.mean(ious)) if ious else 0.0,
        mta_deg=float(np.median(mtas)) if mtas else 90.0,
        n_ratio=n_ratio(pairs),
        c_iou=float(np.mean(cious)) if cious else 0.0,
        n_samples=len(pairs),
        n_failed=sum(1 for p in pairs if p.pred is None),
        config=dict(config or {}),
    )


def metrics_json(rows: list[dict], config: dict | None = None) -> str:
    """Serialize report rows to the canonical JSON document (stable key order)."""
    doc = {"version": 1, "config": dict(config or {}), "rows": rows}
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"
