"""Detection scoring and the threshold grid search.

Detections match groundtruth one-to-one, greedily in descending rotated-IoU
order; pairs at or above the IoU threshold count as true positives.  The
grid search sweeps both decode thresholds over {step, 2*step, ...} and keeps
the f-measure maximizer, breaking ties toward higher thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass

from .decoder import PredictionMaps, detect
from .geometry import RotatedRect, rotated_iou
from .topology import LayerPyramid

__all__ = [
    "EvalReport",
    "evaluate_batch",
    "grid_search_thresholds",
    "match_and_score",
    "threshold_grid",
]


@dataclass(frozen=True)
class EvalReport:
    """Precision/recall/f-measure plus the matched pairs and raw counts."""

    precision: float
    recall: float
    f_measure: float
    matches: tuple[tuple[int, int, float], ...]
    tp: int
    fp: int
    fn: int


def _make_report(matches, n_dets, n_gts) -> EvalReport:
    tp = len(matches)
    precision = tp / n_dets if n_dets else 0.0
    recall = tp / n_gts if n_gts else 0.0
    f = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalReport(
        precision=precision,
        recall=recall,
        f_measure=f,
        matches=tuple(matches),
        tp=tp,
        fp=n_dets - tp,
        fn=n_gts - tp,
    )


def match_and_score(
    dets: list[RotatedRect],
    gts: list[RotatedRect],
    iou_thresh: float = 0.5,
) -> EvalReport:
    """Greedy one-to-one matching in descending IoU order."""
    if not 0.0 < iou_thresh < 1.0:
        raise ValueError(f"iou threshold must lie in (0, 1), got {iou_thresh}")
    candidates = []
    for di, det in enumerate(dets):
        for gi, gt in enumerate(gts):
            iou = rotated_iou(det, gt)
            if iou >= iou_thresh:
                candidates.append((iou, di, gi))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    det_used = set()
    gt_used = set()
    matches = []
    for iou, di, gi in candidates:
        if di in det_used or gi in gt_used:
            continue
        det_used.add(di)
        gt_used.add(gi)
        matches.append((di, gi, iou))
    return _make_report(matches, len(dets), len(gts))


def evaluate_batch(
    dets_per_image: list[list[RotatedRect]],
    gts_per_image: list[list[RotatedRect]],
    iou_thresh: float = 0.5,
) -> EvalReport:
    """Micro-aggregated report over many images (matches are not carried)."""
    if len(dets_per_image) != len(gts_per_image):
        raise ValueError("detection and groundtruth image counts differ")
    tp = fp = fn = 0
    for dets, gts in zip(dets_per_image, gts_per_image):
        report = match_and_score(dets, gts, iou_thresh)
        tp += report.tp
        fp += report.fp
        fn += report.fn
    n_dets = tp + fp
    n_gts = tp + fn
    precision = tp / n_dets if n_dets else 0.0
    recall = tp / n_gts if n_gts else 0.0
    f = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalReport(
        precision=precision, recall=recall, f_measure=f, matches=(), tp=tp, fp=fp, fn=fn
    )


def threshold_grid(step: float = 0.1) -> list[float]:
    """Interior grid values {step, 2*step, ..., 1 - step}, exact decimals."""
    if not 0.0 < step < 1.0:
        raise ValueError(f"step must lie in (0, 1), got {step}")
    n = round(1.0 / step)
    return [round(i * step, 10) for i in range(1, n)]


def grid_search_thresholds(
    maps_per_image: list[PredictionMaps],
    gts_per_image: list[list[RotatedRect]],
    pyramid: LayerPyramid,
    step: float = 0.1,
    iou_thresh: float = 0.5,
) -> tuple[float, float, EvalReport]:
    """Sweep (segment, link) thresholds and return the f-measure maximizer.

    Ties are broken toward the higher segment threshold, then the higher
    link threshold; scene order does not affect the result.
    """
    if not maps_per_image:
        raise ValueError("grid search needs a non-empty validation set")
    values = threshold_grid(step)
    best = None
    for seg_thresh in values:
        for link_thresh in values:
            dets = [
                detect(maps, pyramid, seg_thresh, link_thresh) for maps in maps_per_image
            ]
            report = evaluate_batch(dets, gts_per_image, iou_thresh)
            if best is None or report.f_measure >= best[2].f_measure:
                best = (seg_thresh, link_thresh, report)
    return best
