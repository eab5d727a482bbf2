"""Critical points from decoded alignments, and box proposals grown around them."""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from ..errors import ValidationError
from ..features.grid import ALL_ORDERS, ScanOrder, index_to_coord
from ..network.cctc import Alignment, runs_to_frames
from ..network.lstm import OBJECT, FrameLogProbs
from .boxes import Box, iou

# width:height
DEFAULT_RATIOS: Tuple[Tuple[int, int], ...] = ((1, 1), (2, 1), (1, 2), (1, 3), (3, 1))


@dataclass(frozen=True)
class ProposalConfig:
    ratios: Tuple[Tuple[int, int], ...] = DEFAULT_RATIOS
    base_side: int = 2
    growth_step: int = 2
    merge_radius: int = 1
    grid_scale: float = 1.0

    def __post_init__(self):
        if self.base_side < 1:
            raise ValidationError("must be at least 1", field="base_side")
        if self.growth_step < 1:
            raise ValidationError("must be at least 1", field="growth_step")
        if self.merge_radius < 0:
            raise ValidationError("must be non-negative", field="merge_radius")
        if self.grid_scale <= 0:
            raise ValidationError("must be positive", field="grid_scale")
        for w, h in self.ratios:
            if w < 1 or h < 1:
                raise ValidationError(f"invalid aspect ratio {w}:{h}", field="ratios")


@dataclass(frozen=True)
class CriticalPoint:
    row: int
    col: int
    order: ScanOrder
    score: float
    frame: int = 0
    support: int = 1


def _run_score(logp: FrameLogProbs, start: int, end: int) -> float:
    return float(np.mean(logp.values[start:end + 1, OBJECT]))


def to_critical_points(decoded: Mapping[ScanOrder, Tuple[Alignment, FrameLogProbs]], n: int,
                       merge_radius: int = 1) -> List[CriticalPoint]:
    """Map run midpoints to grid cells and merge near-duplicates found by different orders.

    Candidates are visited by descending score, so a merged point keeps the
    best score and the order that produced it. `support` counts the orders
    that found the cell.
    """
    candidates = []
    for order in ALL_ORDERS:
        if order not in decoded:
            continue
        alignment, logp = decoded[order]
        for (start, end), frame in zip(alignment.emitted_runs, runs_to_frames(alignment)):
            row, col = index_to_coord(order, frame, n)
            candidates.append((-_run_score(logp, start, end), ALL_ORDERS.index(order), frame, row, col, order))
    candidates.sort(key=lambda c: c[:3])

    kept: List[Dict] = []
    for neg_score, _, frame, row, col, order in candidates:
        duplicate = None
        for point in kept:
            if order not in point["orders"] and max(abs(point["row"] - row), abs(point["col"] - col)) <= merge_radius:
                duplicate = point
                break
        if duplicate is not None:
            duplicate["orders"].add(order)
            continue
        kept.append({"row": row, "col": col, "order": order, "score": -neg_score, "frame": frame, "orders": {order}})

    return [CriticalPoint(p["row"], p["col"], p["order"], p["score"], p["frame"], len(p["orders"])) for p in kept]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _centered_box(row: int, col: int, width: int, height: int, score: float) -> Box:
    # even sides put the center on the upper-left of the two central cells
    x0 = col - (width - 1) // 2
    y0 = row - (height - 1) // 2
    return Box(x0, y0, x0 + width - 1, y0 + height - 1, score=score, center=(row, col))


def generate_proposals(point: CriticalPoint, n: int, config: ProposalConfig = ProposalConfig()) -> List[Box]:
    """Nested boxes per aspect ratio, grown until the next one would leave the grid."""
    if not (0 <= point.row < n and 0 <= point.col < n):
        raise ValidationError(f"critical point ({point.row}, {point.col}) outside a {n}x{n} grid", field="point")
    boxes = []
    for rw, rh in config.ratios:
        short = config.base_side
        while True:
            if rw <= rh:
                width, height = short, _round_half_up(short * rh / rw)
            else:
                width, height = _round_half_up(short * rw / rh), short
            box = _centered_box(point.row, point.col, width, height, point.score)
            if not box.within(n):
                break
            boxes.append(box)
            short += config.growth_step
    return boxes


def proposals_for_points(points: Sequence[CriticalPoint], n: int,
                         config: ProposalConfig = ProposalConfig()) -> List[Box]:
    boxes = []
    for point in points:
        boxes.extend(generate_proposals(point, n, config))
    return boxes


@dataclass(frozen=True)
class PseudoGroundTruth:
    box: Box
    index: int
    positives: List[Box] = field(default_factory=list)


def select_pseudo_ground_truth(boxes: Sequence[Box], scores: Sequence[float],
                               overlap_threshold: float = 0.5) -> PseudoGroundTruth:
    """Top-scoring box plus every box overlapping it by at least the threshold.

    Score ties go to the larger box, then to the earlier index.
    """
    if not boxes:
        raise ValidationError("cannot select a pseudo ground truth from zero boxes", field="boxes")
    if len(scores) != len(boxes):
        raise ValidationError(f"{len(scores)} scores for {len(boxes)} boxes", field="scores")
    if not 0.0 < overlap_threshold < 1.0:
        raise ValidationError("must lie in (0, 1)", field="overlap_threshold")
    best = max(range(len(boxes)), key=lambda j: (scores[j], boxes[j].area, -j))
    pgt = boxes[best]
    positives = [box for box in boxes if iou(box, pgt) >= overlap_threshold]
    return PseudoGroundTruth(box=pgt, index=best, positives=positives)
