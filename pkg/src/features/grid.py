"""Feature grids and the four raster scan-order serializations."""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from ..errors import InfeasibleCount, InvalidGrid


class ScanOrder(Enum):
    """Raster traversals of an n x n grid. Each row or column restarts at its origin."""

    ROW_MAJOR_FORWARD = "row-major-forward"
    ROW_MAJOR_REVERSE = "row-major-reverse"
    COL_MAJOR_FORWARD = "col-major-forward"
    COL_MAJOR_REVERSE = "col-major-reverse"

    @property
    def reversed(self) -> bool:
        return self in (ScanOrder.ROW_MAJOR_REVERSE, ScanOrder.COL_MAJOR_REVERSE)

    @property
    def column_major(self) -> bool:
        return self in (ScanOrder.COL_MAJOR_FORWARD, ScanOrder.COL_MAJOR_REVERSE)

    @classmethod
    def parse(cls, value: str) -> "ScanOrder":
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(o.value for o in cls)
            raise InvalidGrid(f"unknown scan order {value!r} (expected one of {names})", field="order")


ALL_ORDERS: Tuple[ScanOrder, ...] = tuple(ScanOrder)


@dataclass(frozen=True)
class FeatureGrid:
    """An n x n x k real-valued grid standing in for a CNN feature map."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise InvalidGrid(f"expected a 3-d array (n, n, k), got shape {values.shape}", field="values")
        n, width, k = values.shape
        if n != width:
            raise InvalidGrid(f"grid must be square, got {n}x{width}", field="values")
        if n < 2:
            raise InvalidGrid(f"grid side must be at least 2, got {n}", field="n")
        if k < 1:
            raise InvalidGrid("grid needs at least one channel", field="k")
        if not np.isfinite(values).all():
            raise InvalidGrid("grid holds NaN or Inf values", field="values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[2]

    def to_json(self) -> dict:
        """Row-major-then-channel flat layout."""
        return {"n": self.n, "k": self.k, "values": self.values.ravel().tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "FeatureGrid":
        try:
            n, k = int(data["n"]), int(data["k"])
            flat = np.asarray(data["values"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidGrid(f"malformed grid object: {e}", field="grid")
        if flat.size != n * n * k:
            raise InvalidGrid(f"expected {n * n * k} values for n={n}, k={k}, got {flat.size}", field="values")
        return cls(flat.reshape(n, n, k))

    def dumps(self) -> str:
        return json.dumps(self.to_json())


@dataclass(frozen=True)
class SequenceSample:
    """A grid serialized along one scan order, with the image's object count."""

    frames: np.ndarray
    order: ScanOrder
    count: int
    source_id: str = ""

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] == 0:
            raise InvalidGrid(f"frames must be a non-empty (T, k) array, got shape {frames.shape}", field="frames")
        if self.count < 0:
            raise InfeasibleCount(self.count, frames.shape[0], "count must be non-negative")
        if self.count > frames.shape[0]:
            raise InfeasibleCount(self.count, frames.shape[0])
        object.__setattr__(self, "frames", frames)

    @property
    def T(self) -> int:
        return self.frames.shape[0]


def _check_index(t: int, n: int):
    if not 0 <= t < n * n:
        raise InvalidGrid(f"timestep {t} outside [0, {n * n})", field="t")


def index_to_coord(order: ScanOrder, t: int, n: int) -> Tuple[int, int]:
    """Map timestep t of a scan to its (row, col) cell."""
    _check_index(t, n)
    u = n * n - 1 - t if order.reversed else t
    major, minor = divmod(u, n)
    if order.column_major:
        return minor, major
    return major, minor


def coord_to_index(order: ScanOrder, coord: Tuple[int, int], n: int) -> int:
    row, col = coord
    if not (0 <= row < n and 0 <= col < n):
        raise InvalidGrid(f"cell {coord} outside a {n}x{n} grid", field="coord")
    u = col * n + row if order.column_major else row * n + col
    return n * n - 1 - u if order.reversed else u


def scan_coords(order: ScanOrder, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row and column index arrays of the whole traversal, in timestep order."""
    u = np.arange(n * n)
    if order.reversed:
        u = u[::-1]
    major, minor = np.divmod(u, n)
    if order.column_major:
        return minor, major
    return major, minor


def serialize(grid: FeatureGrid, order: ScanOrder, count: int, source_id: str = "") -> SequenceSample:
    rows, cols = scan_coords(order, grid.n)
    return SequenceSample(grid.values[rows, cols], order, count, source_id)


def deserialize(sample: SequenceSample, n: int) -> FeatureGrid:
    if sample.T != n * n:
        raise InvalidGrid(f"sequence of {sample.T} frames cannot fill a {n}x{n} grid", field="n")
    rows, cols = scan_coords(sample.order, n)
    values = np.empty((n, n, sample.frames.shape[1]))
    values[rows, cols] = sample.frames
    return FeatureGrid(values)
