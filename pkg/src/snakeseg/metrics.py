"""Detection and segmentation quality metrics.

Boxes are half-open rectangles ``(x0, y0, x1, y1)``. Detection AP follows
the 11-point interpolated protocol: rank predictions by confidence, match
greedily against unmatched ground truth at an IoU threshold, then average
the max-interpolated precision over recall levels {0, 0.1, ..., 1}.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .volume_io import MaskVolume

RECALL_LEVELS = tuple(i / 10 for i in range(11))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if self.tp < 0 or self.fp < 0 or self.fn < 0:
            raise ParameterError("confusion counts must be non-negative")


def precision(counts: ConfusionCounts) -> float:
    """tp / (tp + fp); 0 when there are no predictions."""
    denom = counts.tp + counts.fp
    return counts.tp / denom if denom else 0.0


def recall(counts: ConfusionCounts) -> float:
    """tp / (tp + fn); 0 when there are no positives."""
    denom = counts.tp + counts.fn
    return counts.tp / denom if denom else 0.0


def box_iou(a, b) -> float:
    """Intersection over union of two half-open rectangles."""
    ax0, ay0, ax1, ay1 = (float(v) for v in a)
    bx0, by0, bx1, by1 = (float(v) for v in b)
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    if area_a <= 0 or area_b <= 0:
        raise ParameterError("degenerate box")
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def _binary(mask) -> np.ndarray:
    if isinstance(mask, MaskVolume):
        return mask.labels > 0
    return np.asarray(mask) > 0


def dice(a, b) -> float:
    """2|A n B| / (|A| + |B|) over binarized masks; 1 when both are empty."""
    av, bv = _binary(a), _binary(b)
    if av.shape != bv.shape:
        raise ParameterError(f"mask shapes differ: {av.shape} vs {bv.shape}")
    sa, sb = int(av.sum()), int(bv.sum())
    if sa + sb == 0:
        return 1.0
    return 2.0 * int(np.logical_and(av, bv).sum()) / (sa + sb)


def voxel_iou(a, b) -> float:
    """|A n B| / |A u B| over binarized masks; 1 when both are empty."""
    av, bv = _binary(a), _binary(b)
    if av.shape != bv.shape:
        raise ParameterError(f"mask shapes differ: {av.shape} vs {bv.shape}")
    union = int(np.logical_or(av, bv).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(av, bv).sum()) / union


def dsc_from_iou(iou: float) -> float:
    """Dice score equivalent to a given IoU: 2*iou / (1 + iou)."""
    if not 0.0 <= iou <= 1.0:
        raise ParameterError(f"iou {iou} outside [0, 1]")
    return 2.0 * iou / (1.0 + iou)


def dice_loss(pred: np.ndarray, truth, epsilon: float = 1.0) -> float:
    """1 - (2*sum(pred*truth) + eps) / (sum(pred) + sum(truth) + eps).

    ``pred`` is a soft foreground map in [0, 1], ``truth`` a binary grid;
    eps rescues the empty/empty case (loss 0) and guards underflow.
    """
    if epsilon <= 0:
        raise ParameterError("epsilon must be positive")
    p = np.asarray(pred, dtype=np.float64)
    t = _binary(truth).astype(np.float64)
    if p.shape != t.shape:
        raise ParameterError(f"shapes differ: {p.shape} vs {t.shape}")
    num = 2.0 * float((p * t).sum()) + epsilon
    den = float(p.sum()) + float(t.sum()) + epsilon
    return 1.0 - num / den


@dataclass(frozen=True)
class RankedPrediction:
    """A detection candidate for AP evaluation."""

    box: tuple[float, float, float, float]
    confidence: float
    image_id: str = ""

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if x1 <= x0 or y1 <= y0:
            raise ParameterError("degenerate box")
        if not 0.0 <= self.confidence <= 1.0:
            raise ParameterError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class PrCurve:
    """(recall, precision) points measured along the ranked sweep."""

    points: tuple[tuple[float, float], ...]

    def interpolated(self, level: float) -> float:
        """Max precision over points with recall >= level; 0 when none."""
        best = 0.0
        for rec, prec in self.points:
            if rec >= level and prec > best:
                best = prec
        return best

    def eleven_point(self) -> list[tuple[float, float]]:
        return [(r, self.interpolated(r)) for r in RECALL_LEVELS]

    def average_precision(self) -> float:
        return sum(p for _, p in self.eleven_point()) / 11.0


def match_predictions(preds: list[RankedPrediction], gts: dict[str, list],
                      iou_thresh: float = 0.5) -> list[tuple[int, bool, float]]:
    """Greedy confidence-ranked matching against per-image ground truth.

    Each prediction (highest confidence first, input order on ties) takes
    the still-unmatched ground-truth box of highest IoU in its image; it is
    a true positive iff that IoU reaches iou_thresh, and only a true
    positive consumes the box. Returns (input index, is_tp, matched IoU)
    in rank order.
    """
    if not 0.0 < iou_thresh <= 1.0:
        raise ParameterError("iou threshold must lie in (0, 1]")
    order = sorted(range(len(preds)), key=lambda i: -preds[i].confidence)
    taken: dict[str, set[int]] = {}
    results = []
    for i in order:
        p = preds[i]
        boxes = gts.get(p.image_id, [])
        used = taken.setdefault(p.image_id, set())
        best_iou, best_j = 0.0, None
        for j, gt_box in enumerate(boxes):
            if j in used:
                continue
            v = box_iou(p.box, gt_box)
            if v > best_iou:
                best_iou, best_j = v, j
        is_tp = best_j is not None and best_iou >= iou_thresh
        if is_tp:
            used.add(best_j)
        results.append((i, is_tp, best_iou))
    return results


def pr_curve(preds: list[RankedPrediction], gts: dict[str, list],
             iou_thresh: float = 0.5) -> PrCurve | None:
    """Precision/recall sweep over the ranked predictions; None without
    any ground truth (AP undefined)."""
    n_gt = sum(len(b) for b in gts.values())
    if n_gt == 0:
        return None
    points = []
    tp = fp = 0
    for _, is_tp, _ in match_predictions(preds, gts, iou_thresh):
        if is_tp:
            tp += 1
        else:
            fp += 1
        points.append((tp / n_gt, tp / (tp + fp)))
    return PrCurve(tuple(points))


def average_precision(preds: list[RankedPrediction], gts: dict[str, list],
                      iou_thresh: float = 0.5) -> float | None:
    """11-point interpolated AP; None without any ground truth."""
    curve = pr_curve(preds, gts, iou_thresh)
    return None if curve is None else curve.average_precision()


def mean_ap(per_class_ap: list[float]) -> float:
    """Arithmetic mean of per-class APs."""
    if not per_class_ap:
        raise ParameterError("mean AP needs at least one class AP")
    return float(sum(per_class_ap)) / len(per_class_ap)


@dataclass(frozen=True)
class EvalReport:
    """Per-case metric values with their mean and population std."""

    cases: tuple[tuple[str, float], ...]
    mean: float
    std: float

    def to_kv(self) -> str:
        """Flat key=value text (summary first, then cases sorted by name)."""
        lines = [f"n={len(self.cases)}", f"mean={self.mean!r}", f"std={self.std!r}"]
        lines += [f"case.{name}={value!r}" for name, value in sorted(self.cases)]
        return "".join(line + "\n" for line in lines)

    def to_records(self) -> str:
        """Tab-separated per-case records for machine diffing."""
        lines = [f"{name}\t{value!r}" for name, value in sorted(self.cases)]
        lines += [f"mean\t{self.mean!r}", f"std\t{self.std!r}"]
        return "".join(line + "\n" for line in lines)


def report(values: list[float], names: list[str] | None = None) -> EvalReport:
    """Aggregate per-case values into mean +/- population std."""
    if len(values) == 0:
        raise ParameterError("report needs at least one value")
    if names is None:
        names = [f"case{i:04d}" for i in range(len(values))]
    if len(names) != len(values):
        raise ParameterError("names and values must pair up")
    arr = np.asarray(values, dtype=np.float64)
    return EvalReport(
        cases=tuple(zip(names, (float(v) for v in arr))),
        mean=float(arr.mean()),
        std=float(arr.std()),
    )
