"""Axis-aligned boxes in grid cells.

Coordinates are inclusive integers: x runs along columns, y along rows, and a
box covers (x1 - x0 + 1) * (y1 - y0 + 1) cells. This convention is used
everywhere IoU is computed.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple


@dataclass(frozen=True)
class Box:
    x0: int
    y0: int
    x1: int
    y1: int
    score: float = 0.0
    center: Optional[Tuple[int, int]] = None
    label: int = 0

    def __post_init__(self):
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise ValueError(f"degenerate box ({self.x0}, {self.y0}, {self.x1}, {self.y1})")

    @property
    def width(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    def contains(self, row: int, col: int) -> bool:
        return self.y0 <= row <= self.y1 and self.x0 <= col <= self.x1

    def contains_box(self, other: "Box") -> bool:
        return self.x0 <= other.x0 and self.y0 <= other.y0 and self.x1 >= other.x1 and self.y1 >= other.y1

    def within(self, n: int) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= n - 1 and self.y1 <= n - 1

    def coords(self) -> List[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    def scaled(self, factor: float) -> List[float]:
        """Pixel-space corners for a uniform grid-to-image scale factor."""
        if factor == 1.0:
            return list(self.coords())
        return [self.x0 * factor, self.y0 * factor, (self.x1 + 1) * factor - 1, (self.y1 + 1) * factor - 1]

    @classmethod
    def from_scaled(cls, values: Sequence[float], factor: float, label: int = 0) -> "Box":
        """Inverse of `scaled`: pixel-space corners back to grid cells."""
        if factor == 1.0:
            return cls.from_list(values, label)
        x0, y0, x1, y1 = values[:4]
        cells = [x0 / factor, y0 / factor, (x1 + 1) / factor - 1, (y1 + 1) / factor - 1]
        return cls.from_list(cells + list(values[4:5]), label)

    @classmethod
    def from_list(cls, values: Sequence[float], label: int = 0) -> "Box":
        """[x0, y0, x1, y1] or [x0, y0, x1, y1, score]."""
        if len(values) not in (4, 5):
            raise ValueError(f"expected 4 or 5 numbers per box, got {len(values)}")
        x0, y0, x1, y1 = (int(round(v)) for v in values[:4])
        score = float(values[4]) if len(values) == 5 else 0.0
        return cls(x0, y0, x1, y1, score=score, label=label)


def iou(a: Box, b: Box) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0) + 1
    ih = min(a.y1, b.y1) - max(a.y0, b.y0) + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)
