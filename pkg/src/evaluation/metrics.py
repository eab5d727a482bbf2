"""Detection metrics: IoU, proposal recall, CorLoc and VOC-style average precision."""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..proposals.boxes import Box, iou

logger = logging.getLogger(__name__)

GroundTruth = Mapping[str, Sequence[Box]]
"""image id -> ground-truth boxes; each box carries its class in `label`."""

DEFAULT_RECALL_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: Box


def recall_curve(proposals: Mapping[str, Sequence[Box]], ground_truth: GroundTruth,
                 thresholds: Iterable[float] = DEFAULT_RECALL_THRESHOLDS) -> Dict[float, float]:
    """Fraction of GT boxes covered by at least one proposal at each IoU threshold.

    GT boxes are matched independently, so one proposal may cover several.
    Returns an empty mapping when there is no ground truth.
    """
    thresholds = list(thresholds)
    for tau in thresholds:
        if not 0.0 < tau <= 1.0:
            raise ValueError(f"IoU threshold {tau} outside (0, 1]")
    best = []
    for image_id, gt_boxes in ground_truth.items():
        candidates = proposals.get(image_id, ())
        for gt in gt_boxes:
            best.append(max((iou(gt, p) for p in candidates), default=0.0))
    if not best:
        return {}
    best = np.asarray(best)
    return {tau: float(np.mean(best >= tau)) for tau in thresholds}


def corloc(candidates: Mapping[Tuple[str, int], Box], ground_truth: GroundTruth,
           iou_threshold: float = 0.5) -> float:
    """Fraction of positive (image, class) pairs whose candidate hits a GT box of that class.

    A positive pair with no candidate counts as a miss.
    """
    positives = sorted({(image_id, gt.label) for image_id, boxes in ground_truth.items() for gt in boxes})
    if not positives:
        logger.warning("CorLoc requested with no positive (image, class) pairs")
        return 0.0
    hits = 0
    for image_id, label in positives:
        candidate = candidates.get((image_id, label))
        if candidate is None:
            continue
        if any(gt.label == label and iou(candidate, gt) >= iou_threshold for gt in ground_truth[image_id]):
            hits += 1
    return hits / len(positives)


def _envelope_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    idx = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def _voc07_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    ap = 0.0
    for t in np.arange(0.0, 1.1, 0.1):
        p = precision[recall >= t].max() if np.any(recall >= t) else 0.0
        ap += p / 11.0
    return float(ap)


def precision_recall(detections: Sequence[Detection], ground_truth: GroundTruth, label: int = 0,
                     iou_threshold: float = 0.5) -> Tuple[np.ndarray, np.ndarray, int]:
    """Cumulative precision and recall over detections of one class, by descending score.

    Each detection is compared with the best-overlapping GT box of the class
    that is still unmatched; it is a true positive when that overlap reaches
    the threshold. Score ties keep input order.
    """
    gt_by_image = {image_id: [gt for gt in boxes if gt.label == label] for image_id, boxes in ground_truth.items()}
    npos = sum(len(boxes) for boxes in gt_by_image.values())
    dets = [d for d in detections if d.box.label == label]
    order = np.argsort(-np.asarray([d.box.score for d in dets], dtype=np.float64), kind="stable")
    matched = {image_id: [False] * len(boxes) for image_id, boxes in gt_by_image.items()}
    tp = np.zeros(len(dets))
    fp = np.zeros(len(dets))
    for rank, j in enumerate(order):
        det = dets[j]
        gts = gt_by_image.get(det.image_id, [])
        taken = matched.get(det.image_id, [])
        overlaps = np.asarray([-1.0 if taken[i] else iou(det.box, gt) for i, gt in enumerate(gts)])
        if overlaps.size and overlaps.max() >= iou_threshold:
            k = int(np.argmax(overlaps))
            taken[k] = True
            tp[rank] = 1
        else:
            fp[rank] = 1
    tp = np.cumsum(tp)
    fp = np.cumsum(fp)
    recall = tp / npos if npos else np.zeros_like(tp)
    precision = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)
    return recall, precision, npos


def average_precision(detections: Sequence[Detection], ground_truth: GroundTruth, label: int = 0,
                      iou_threshold: float = 0.5, use_07_metric: bool = False) -> float:
    """Area under the precision envelope (all-point), or the 11-point VOC07 variant."""
    recall, precision, npos = precision_recall(detections, ground_truth, label, iou_threshold)
    if npos == 0:
        logger.warning("class %d has no ground-truth boxes; AP reported as 0", label)
        return 0.0
    if recall.size == 0:
        return 0.0
    if use_07_metric:
        return _voc07_ap(recall, precision)
    return _envelope_ap(recall, precision)


def mean_average_precision(detections: Sequence[Detection], ground_truth: GroundTruth,
                           iou_threshold: float = 0.5, use_07_metric: bool = False,
                           labels: Optional[Iterable[int]] = None) -> Tuple[Dict[int, float], float, List[int]]:
    """Per-class AP, their mean, and the classes that had no ground truth."""
    if labels is None:
        labels = {gt.label for boxes in ground_truth.values() for gt in boxes}
        labels |= {d.box.label for d in detections}
    labels = sorted(labels)
    per_class = {}
    missing = []
    for label in labels:
        if not any(gt.label == label for boxes in ground_truth.values() for gt in boxes):
            missing.append(label)
        per_class[label] = average_precision(detections, ground_truth, label, iou_threshold, use_07_metric)
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, mean, missing


def top_candidates(proposals: Mapping[str, Sequence[Box]]) -> Dict[Tuple[str, int], Box]:
    """Highest-scoring box per (image, class); the first one wins ties."""
    best: Dict[Tuple[str, int], Box] = {}
    for image_id, boxes in proposals.items():
        for box in boxes:
            key = (image_id, box.label)
            if key not in best or box.score > best[key].score:
                best[key] = box
    return best
