"""Aggregated evaluation report with JSON and CSV export."""
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence

import numpy as np

from ..proposals.boxes import Box
from .metrics import (DEFAULT_RECALL_THRESHOLDS, Detection, GroundTruth, corloc, mean_average_precision,
                      recall_curve, top_candidates)


@dataclass
class EvalReport:
    recall_at_iou: Dict[float, float]
    corloc: float
    ap_per_class: Dict[int, float]
    mAP: float
    mean_proposals_per_image: float
    ap_metric: str = "all-point"
    classes_without_ground_truth: List[int] = field(default_factory=list)
    num_images: int = 0

    def to_json(self) -> dict:
        return {
            "recallAtIoU": {f"{tau:g}": r for tau, r in sorted(self.recall_at_iou.items())},
            "corLoc": self.corloc,
            "apPerClass": {str(label): ap for label, ap in sorted(self.ap_per_class.items())},
            "mAP": self.mAP,
            "apMetric": self.ap_metric,
            "proposalStats": {"meanPerImage": self.mean_proposals_per_image, "images": self.num_images},
            "classesWithoutGroundTruth": self.classes_without_ground_truth,
        }

    def write(self, json_path: Path, csv_path: Path) -> None:
        json_path = Path(json_path)
        json_path.parent.mkdir(parents=True, exist_ok=True)
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=2)
        with open(csv_path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iou_threshold", "recall"])
            for tau, recall in sorted(self.recall_at_iou.items()):
                writer.writerow([f"{tau:g}", f"{recall:.6f}"])


def evaluate(proposals: Mapping[str, Sequence[Box]], ground_truth: GroundTruth,
             thresholds: Iterable[float] = DEFAULT_RECALL_THRESHOLDS, use_07_metric: bool = False) -> EvalReport:
    """Recall curve and mean proposal count over all proposals; CorLoc over each
    image's top-scoring box; AP treating every proposal as a scored detection."""
    detections = [Detection(image_id, box) for image_id, boxes in proposals.items() for box in boxes]
    per_class, mean_ap, missing = mean_average_precision(detections, ground_truth, use_07_metric=use_07_metric)
    counts = [len(proposals.get(image_id, ())) for image_id in ground_truth]
    return EvalReport(
        recall_at_iou=recall_curve(proposals, ground_truth, thresholds),
        corloc=corloc(top_candidates(proposals), ground_truth),
        ap_per_class=per_class,
        mAP=mean_ap,
        mean_proposals_per_image=float(np.mean(counts)) if counts else 0.0,
        ap_metric="voc07-11-point" if use_07_metric else "all-point",
        classes_without_ground_truth=missing,
        num_images=len(counts),
    )
