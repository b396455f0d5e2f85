"""
Segmentation metrics: overlap scores, surface distances and report tables.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.ndimage import distance_transform_edt

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["dice", "miou", "acc", "spe", "sen", "hd95", "asd"]


class SurfaceDistanceUndefined(ValueError):
    """One mask has a boundary and the other has none."""

    code = "undefined surface distance"

    def __init__(self, message: str = "undefined surface distance"):
        super().__init__(message)


def _ratio(numerator: float, denominator: float) -> Optional[float]:
    return None if denominator == 0 else numerator / denominator


def _mean_defined(values: Sequence[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def overlap_metrics(pred: np.ndarray, gt: np.ndarray, num_classes: int = 2) -> Dict[str, object]:
    """
    Confusion-matrix metrics over the foreground classes.

    Args:
        pred: Predicted index map
        gt: Ground-truth index map of the same shape
        num_classes: Number of classes including background

    Returns:
        Dictionary with per-class ``dice``/``iou`` lists and the scalars
        ``mean_dice``, ``miou``, ``acc``, ``spe``, ``sen``. Cells whose
        denominator vanishes are None.
    """
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")

    dice, iou, spe, sen = [], [], [], []
    for k in range(1, num_classes):
        p, g = pred == k, gt == k
        tp = float(np.sum(p & g))
        fp = float(np.sum(p & ~g))
        fn = float(np.sum(~p & g))
        tn = float(np.sum(~p & ~g))
        if tp + fp + fn == 0:
            dice.append(1.0)
            iou.append(1.0)
        else:
            dice.append(2 * tp / (2 * tp + fp + fn))
            iou.append(tp / (tp + fp + fn))
        spe.append(_ratio(tn, tn + fp))
        sen.append(_ratio(tp, tp + fn))

    return {
        "dice": dice,
        "iou": iou,
        "mean_dice": float(np.mean(dice)),
        "miou": float(np.mean(iou)),
        "acc": _ratio(float(np.sum(pred == gt)), float(pred.size)),
        "spe": _mean_defined(spe),
        "sen": _mean_defined(sen),
    }


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one background 4-neighbour; outside the image is background."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    return mask & ~interior


def _directed_distances(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    # exact Euclidean distance from every pixel to the nearest target boundary pixel
    distance = distance_transform_edt(~target)
    return distance[source]


def surface_metrics(pred: np.ndarray, gt: np.ndarray) -> Dict[str, float]:
    """
    Average symmetric surface distance and 95th-percentile Hausdorff distance.

    Args:
        pred: Binary predicted mask
        gt: Binary ground-truth mask

    Returns:
        Dictionary with ``asd`` (mean of the two directed mean distances) and
        ``hd95`` (max of the two directed 95th percentiles)
    """
    pred_edge, gt_edge = boundary(pred), boundary(gt)
    if pred_edge.shape != gt_edge.shape:
        raise ValueError(f"mask shapes differ: {pred_edge.shape} vs {gt_edge.shape}")
    has_pred, has_gt = bool(pred_edge.any()), bool(gt_edge.any())
    if not has_pred and not has_gt:
        return {"asd": 0.0, "hd95": 0.0}
    if has_pred != has_gt:
        raise SurfaceDistanceUndefined()

    forward = _directed_distances(pred_edge, gt_edge)
    backward = _directed_distances(gt_edge, pred_edge)
    return {
        "asd": float((forward.mean() + backward.mean()) / 2.0),
        "hd95": float(max(np.percentile(forward, 95), np.percentile(backward, 95))),
    }


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cos(u, v), in [0, 2]."""
    u, v = np.ravel(u).astype(np.float64), np.ravel(v).astype(np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine distance of a zero-norm feature is undefined")
    return float(1.0 - np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


@dataclass
class MetricReport:
    """Per-image metrics plus their aggregate; undefined aggregates are None."""

    per_image: pd.DataFrame
    summary: Dict[str, Optional[float]] = field(default_factory=dict)
    undefined_surface: int = 0

    def table(self) -> str:
        frame = pd.DataFrame([{key: self.summary.get(key) for key in REPORT_COLUMNS}])
        return frame.to_string(index=False, float_format=lambda v: f"{v:.4f}", na_rep="undef")

    def __eq__(self, other) -> bool:
        if not isinstance(other, MetricReport):
            return NotImplemented
        return self.summary == other.summary and self.per_image.equals(other.per_image)


def metric_report(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray], num_classes: int = 2) -> MetricReport:
    """
    Evaluate predictions image by image and aggregate in image order.

    Args:
        preds: Predicted index maps
        gts: Ground-truth index maps
        num_classes: Number of classes including background

    Returns:
        MetricReport
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground truths")
    if not len(preds):
        raise ValueError("cannot evaluate an empty dataset")

    rows: List[Dict[str, object]] = []
    undefined = 0
    for index, (pred, gt) in enumerate(zip(preds, gts)):
        overlap = overlap_metrics(pred, gt, num_classes)
        row = {"image": index, "dice": overlap["mean_dice"], "miou": overlap["miou"], "acc": overlap["acc"],
               "spe": overlap["spe"], "sen": overlap["sen"]}
        distances = []
        for k in range(1, num_classes):
            try:
                distances.append(surface_metrics(pred == k, gt == k))
            except SurfaceDistanceUndefined:
                undefined += 1
        row["hd95"] = _mean_defined([d["hd95"] for d in distances])
        row["asd"] = _mean_defined([d["asd"] for d in distances])
        rows.append(row)

    if undefined:
        logger.warning(f"Surface distance undefined for {undefined} image/class pairs; excluded from the means")
    summary = {key: _mean_defined([row[key] for row in rows]) for key in REPORT_COLUMNS}
    return MetricReport(per_image=pd.DataFrame(rows), summary=summary, undefined_surface=undefined)
