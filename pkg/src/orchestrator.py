"""Orchestrator for per-scene decoding, critical points and proposals with validation."""
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import LstmCctcError, SpecValidationError
from .features.grid import ALL_ORDERS, ScanOrder, serialize
from .features.synth import Scene, gt_area_density
from .network.cctc import decode_best_path, decode_constrained
from .network.lstm import ScanModel
from .proposals.boxes import Box
from .proposals.generator import (CriticalPoint, ProposalConfig, proposals_for_points, select_pseudo_ground_truth,
                                  to_critical_points)

ORDER_PRESETS: Dict[str, Tuple[ScanOrder, ...]] = {
    "one": (ScanOrder.ROW_MAJOR_FORWARD,),
    "two": (ScanOrder.ROW_MAJOR_FORWARD, ScanOrder.COL_MAJOR_FORWARD),
    "four": ALL_ORDERS,
}


def parse_orders(text: str) -> Tuple[ScanOrder, ...]:
    """A preset name (one, two, four) or a comma-separated list of order names."""
    if text in ORDER_PRESETS:
        return ORDER_PRESETS[text]
    orders = tuple(ScanOrder.parse(part.strip()) for part in text.split(",") if part.strip())
    if not orders or len(set(orders)) != len(orders):
        raise SpecValidationError(f"need distinct scan orders or a preset, got {text!r}", field="scan_orders")
    return orders


@dataclass
class LocalizationSummary:
    """How well decoded critical points and counts agree with the ground truth."""

    orders: List[str]
    images: int
    point_in_box_rate: float
    gt_area_density: float
    count_accuracy: float
    count_accuracy_per_order: Dict[str, float] = field(default_factory=dict)
    mean_points_per_image: float = 0.0
    mean_proposals_per_image: float = 0.0

    @property
    def lift_over_chance(self) -> float:
        return self.point_in_box_rate / self.gt_area_density if self.gt_area_density else 0.0

    def to_json(self) -> dict:
        return {
            "orders": self.orders,
            "images": self.images,
            "pointInBoxRate": self.point_in_box_rate,
            "gtAreaDensity": self.gt_area_density,
            "liftOverChance": self.lift_over_chance,
            "countAccuracy": self.count_accuracy,
            "countAccuracyPerOrder": self.count_accuracy_per_order,
            "meanPointsPerImage": self.mean_points_per_image,
            "meanProposalsPerImage": self.mean_proposals_per_image,
        }


class ProposalOrchestrator:
    """Orchestrates decoding of every scan direction and proposal generation."""

    def __init__(self, model: ScanModel, config: ProposalConfig = ProposalConfig(), known_count: bool = False):
        self.model = model
        self.config = config
        self.known_count = known_count

    def _decode_order(self, scene: Scene, order: ScanOrder):
        """Decode one direction. Best path at inference; constrained Viterbi when the count is known."""
        sample = serialize(scene.grid, order, scene.count if self.known_count else 0, scene.scene_id)
        logp, _ = self.model.forward(sample)
        predicted, alignment = decode_best_path(logp)
        if self.known_count:
            alignment = decode_constrained(logp, scene.count)
        return alignment, logp, predicted

    def _validate_points(self, points: Sequence[CriticalPoint], scene: Scene) -> dict:
        """Localization quality of one scene's critical points."""
        if not points:
            warnings = ["No critical points decoded"] if scene.count else []
            return {"points_in_box": 0, "points": 0, "warnings": warnings}

        inside = sum(1 for p in points if any(box.contains(p.row, p.col) for box in scene.gt_boxes))
        warnings = []
        if inside < len(points):
            warnings.append(f"{len(points) - inside} critical point(s) outside every ground-truth box")
        if len(points) != scene.count:
            warnings.append(f"{len(points)} critical point(s) for {scene.count} object(s)")
        return {"points_in_box": inside, "points": len(points), "warnings": warnings}

    def propose(self, scene: Scene) -> dict:
        """Decode all directions of a scene and generate its proposals."""
        start = time.time()

        results = {
            "image": scene.scene_id,
            "predicted_counts": {},
            "alignments": {},
            "points": [],
            "boxes": [],
            "validation": {},
            "errors": [],
            "execution_time": 0,
        }

        decoded = {}
        for order in self.model.orders:
            try:
                alignment, logp, predicted = self._decode_order(scene, order)
            except LstmCctcError as e:
                results["errors"].append(f"{order.value}: {str(e)}")
                continue
            decoded[order] = (alignment, logp)
            results["predicted_counts"][order.value] = predicted
            results["alignments"][order.value] = alignment.to_json(order.value)

        n = scene.grid.n
        points = to_critical_points(decoded, n, self.config.merge_radius)
        results["points"] = points
        results["boxes"] = proposals_for_points(points, n, self.config)
        results["validation"] = self._validate_points(points, scene)

        results["execution_time"] = time.time() - start
        return results

    def proposal_record(self, results: dict, pseudo_gt_overlap: Optional[float] = None) -> dict:
        """The exported JSON-lines record for one image."""
        scale = self.config.grid_scale
        boxes: List[Box] = results["boxes"]
        record = {
            "image": results["image"],
            "scale": scale,
            "boxes": [box.scaled(scale) + [box.score] for box in boxes],
        }
        if pseudo_gt_overlap is not None and boxes:
            pgt = select_pseudo_ground_truth(boxes, [b.score for b in boxes], pseudo_gt_overlap)
            record["pseudoGroundTruth"] = {
                "box": pgt.box.scaled(scale) + [pgt.box.score],
                "positives": [b.scaled(scale) + [b.score] for b in pgt.positives],
            }
        return record

    def summarize(self, scenes: Iterable[Scene]) -> LocalizationSummary:
        """Point-in-box rate, count accuracy and proposal statistics over a scene set."""
        scenes = list(scenes)
        inside = 0
        total_points = 0
        total_boxes = 0
        count_hits = {order.value: 0 for order in self.model.orders}
        for scene in scenes:
            results = self.propose(scene)
            inside += results["validation"]["points_in_box"]
            total_points += results["validation"]["points"]
            total_boxes += len(results["boxes"])
            for order_name, predicted in results["predicted_counts"].items():
                count_hits[order_name] += int(predicted == scene.count)

        images = len(scenes)
        per_order = {name: hits / images if images else 0.0 for name, hits in count_hits.items()}
        return LocalizationSummary(
            orders=[order.value for order in self.model.orders],
            images=images,
            point_in_box_rate=inside / total_points if total_points else 0.0,
            gt_area_density=gt_area_density(scenes),
            count_accuracy=max(per_order.values()) if per_order else 0.0,
            count_accuracy_per_order=per_order,
            mean_points_per_image=total_points / images if images else 0.0,
            mean_proposals_per_image=total_boxes / images if images else 0.0,
        )
