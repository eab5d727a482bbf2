"""Synthetic scenes: feature grids with planted rectangular object signatures."""
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from ..errors import DatasetError, InvalidGrid, PlacementFailure, SpecValidationError
from ..network.cctc import is_feasible
from ..proposals.boxes import Box
from ..utils.jsonl import iter_jsonl, write_jsonl
from .grid import FeatureGrid

logger = logging.getLogger(__name__)

MAX_PLACEMENT_ATTEMPTS = 1000
TEST_INDEX_OFFSET = 1_000_000
SPLITS = ("train", "test")

# JSON field name -> dataclass attribute
_SPEC_FIELDS = {
    "n": "n",
    "k": "k",
    "objectCountRange": "object_count_range",
    "objectSideRange": "object_side_range",
    "signalChannels": "signal_channels",
    "noiseSigma": "noise_sigma",
    "seed": "seed",
    "minGap": "min_gap",
    "classId": "class_id",
}


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a family of synthetic scenes."""

    n: int = 16
    k: int = 8
    object_count_range: Tuple[int, int] = (1, 3)
    object_side_range: Tuple[int, int] = (2, 5)
    signal_channels: Tuple[int, ...] = (0, 1, 2, 3)
    noise_sigma: float = 0.1
    seed: int = 42
    min_gap: int = 1
    class_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "object_count_range", tuple(self.object_count_range))
        object.__setattr__(self, "object_side_range", tuple(self.object_side_range))
        object.__setattr__(self, "signal_channels", tuple(self.signal_channels))
        self.validate()

    def validate(self) -> None:
        if self.n < 2:
            raise SpecValidationError("grid side must be at least 2", field="n")
        if self.k < 1:
            raise SpecValidationError("need at least one channel", field="k")
        lo, hi = _pair(self.object_count_range, "objectCountRange")
        if lo < 0 or lo > hi:
            raise SpecValidationError(f"invalid range [{lo}, {hi}]: need 0 <= min <= max", field="objectCountRange")
        if not is_feasible(self.n * self.n, hi):
            raise SpecValidationError(f"count {hi} does not fit a {self.n}x{self.n} scan", field="objectCountRange")
        slo, shi = _pair(self.object_side_range, "objectSideRange")
        if slo < 1 or slo > shi or shi > self.n:
            raise SpecValidationError(f"invalid range [{slo}, {shi}]: need 1 <= min <= max <= n",
                                      field="objectSideRange")
        if not self.signal_channels or any(not 0 <= c < self.k for c in self.signal_channels):
            raise SpecValidationError(f"channels must be a non-empty subset of [0, {self.k})", field="signalChannels")
        if len(set(self.signal_channels)) != len(self.signal_channels):
            raise SpecValidationError("duplicate channel", field="signalChannels")
        if self.noise_sigma < 0:
            raise SpecValidationError("must be non-negative", field="noiseSigma")
        if self.min_gap < 0:
            raise SpecValidationError("must be non-negative", field="minGap")
        if self.seed < 0:
            raise SpecValidationError("must be non-negative", field="seed")

    def to_json(self) -> Dict[str, Any]:
        data = asdict(self)
        return {key: (list(data[attr]) if isinstance(data[attr], tuple) else data[attr])
                for key, attr in _SPEC_FIELDS.items()}

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "SceneSpec":
        unknown = sorted(set(data) - set(_SPEC_FIELDS))
        if unknown:
            raise SpecValidationError(f"unknown field(s): {', '.join(unknown)}", field=unknown[0])
        kwargs = {}
        for key, value in data.items():
            if key in ("objectCountRange", "objectSideRange"):
                value = _pair(value, key)
            elif key == "signalChannels":
                if not isinstance(value, (list, tuple)):
                    raise SpecValidationError("expected a list of channel indices", field=key)
                value = tuple(_int(v, key) for v in value)
            elif key == "noiseSigma":
                value = _float(value, key)
            else:
                value = _int(value, key)
            kwargs[_SPEC_FIELDS[key]] = value
        return cls(**kwargs)


def _int(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise SpecValidationError(f"expected an integer, got {value!r}", field=name)
    return int(value)


def _float(value: Any, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SpecValidationError(f"expected a number, got {value!r}", field=name)
    return float(value)


def _pair(value: Any, name: str) -> Tuple[int, int]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise SpecValidationError(f"expected [min, max], got {value!r}", field=name)
    return _int(value[0], name), _int(value[1], name)


@dataclass(frozen=True)
class Scene:
    grid: FeatureGrid
    gt_boxes: List[Box]
    count: int
    class_id: int = 0
    scene_id: str = ""

    def __post_init__(self):
        if self.count != len(self.gt_boxes):
            raise InvalidGrid(f"count {self.count} != {len(self.gt_boxes)} boxes", field="count")
        for box in self.gt_boxes:
            if not box.within(self.grid.n):
                raise InvalidGrid(f"box {box.coords()} leaves the {self.grid.n}x{self.grid.n} grid", field="boxes")

    def to_json(self) -> Dict[str, Any]:
        return {
            "id": self.scene_id,
            "grid": self.grid.to_json(),
            "boxes": [box.coords() for box in self.gt_boxes],
            "count": self.count,
            "class": self.class_id,
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "Scene":
        try:
            label = int(data.get("class", 0))
            boxes = [Box.from_list(b, label=label) for b in data["boxes"]]
            return cls(
                grid=FeatureGrid.from_json(data["grid"]),
                gt_boxes=boxes,
                count=int(data["count"]),
                class_id=label,
                scene_id=str(data.get("id", "")),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetError(f"malformed scene record: {e}")


def _overlaps(a: Box, b: Box, gap: int) -> bool:
    return not (a.x1 + gap < b.x0 or b.x1 + gap < a.x0 or a.y1 + gap < b.y0 or b.y1 + gap < a.y0)


def scene_id(split: str, index: int) -> str:
    return f"{split}-{index:07d}"


def generate_scene(spec: SceneSpec, index: int, split: str = "train") -> Scene:
    """Deterministic in (spec.seed, index)."""
    rng = np.random.default_rng([spec.seed, index])
    lo, hi = spec.object_count_range
    count = int(rng.integers(lo, hi + 1))
    slo, shi = spec.object_side_range

    boxes: List[Box] = []
    attempts = 0
    while len(boxes) < count:
        if attempts >= MAX_PLACEMENT_ATTEMPTS:
            raise PlacementFailure(
                f"could not place {count} objects in a {spec.n}x{spec.n} grid after {attempts} attempts "
                f"(scene index {index})"
            )
        attempts += 1
        width, height = (int(v) for v in rng.integers(slo, shi + 1, size=2))
        x0 = int(rng.integers(0, spec.n - width + 1))
        y0 = int(rng.integers(0, spec.n - height + 1))
        box = Box(x0, y0, x0 + width - 1, y0 + height - 1, label=spec.class_id)
        if any(_overlaps(box, other, spec.min_gap) for other in boxes):
            continue
        boxes.append(box)

    if spec.noise_sigma > 0:
        values = rng.normal(0.0, spec.noise_sigma, (spec.n, spec.n, spec.k))
    else:
        values = np.zeros((spec.n, spec.n, spec.k))
    channels = list(spec.signal_channels)
    for box in boxes:
        values[box.y0:box.y1 + 1, box.x0:box.x1 + 1, channels] += 1.0

    boxes.sort(key=lambda b: (b.y0, b.x0))
    return Scene(FeatureGrid(values), boxes, count, spec.class_id, scene_id(split, index))


def split_indices(split: str, size: int) -> range:
    if split not in SPLITS:
        raise SpecValidationError(f"unknown split {split!r}", field="split")
    offset = TEST_INDEX_OFFSET if split == "test" else 0
    return range(offset, offset + size)


def generate_dataset(spec: SceneSpec, size: int, split: str, out_dir: Path) -> Path:
    """Write `<out_dir>/<split>.jsonl`; train and test draw from disjoint index ranges."""
    if size < 1:
        raise SpecValidationError("dataset size must be at least 1", field="size")
    path = Path(out_dir) / f"{split}.jsonl"
    scenes = (generate_scene(spec, index, split).to_json() for index in split_indices(split, size))
    written = write_jsonl(path, scenes)
    logger.info("wrote %d %s scenes to %s", written, split, path)
    return path


def load_scenes(path: Path, drop_infeasible: bool = True) -> List[Scene]:
    """Read a scene file; scenes whose count cannot be emitted are dropped with a warning."""
    scenes = [Scene.from_json(record) for record in iter_jsonl(path)]
    if not drop_infeasible:
        return scenes
    kept = [s for s in scenes if is_feasible(s.grid.n * s.grid.n, s.count)]
    dropped = len(scenes) - len(kept)
    if dropped:
        logger.warning("excluded %d infeasible scene(s) from %s", dropped, path)
    return kept


def ground_truth_of(scenes: Sequence[Scene]) -> Dict[str, List[Box]]:
    return {scene.scene_id: list(scene.gt_boxes) for scene in scenes}


def gt_area_density(scenes: Sequence[Scene]) -> float:
    """Fraction of grid cells covered by GT boxes, the chance level for point-in-box."""
    covered = 0
    total = 0
    for scene in scenes:
        covered += sum(box.area for box in scene.gt_boxes)
        total += scene.grid.n * scene.grid.n
    return covered / total if total else 0.0
