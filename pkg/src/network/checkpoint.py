"""JSON checkpoints for `ScanModel` plus optimizer state.

Floats are written with Python's shortest round-trip repr, so a reloaded
model reproduces forward outputs bit-exactly.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from ..errors import CheckpointError, ShapeMismatch
from ..features.grid import ScanOrder
from .lstm import NUM_LAYERS, LinearHead, LstmLayer, ScanModel

FORMAT = "lstm-cctc-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    model: ScanModel
    epoch: int = 0
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)
    config: Dict[str, object] = field(default_factory=dict)


def _encode(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": arr.ravel().tolist()}


def _decode(name: str, blob) -> np.ndarray:
    try:
        shape = tuple(int(d) for d in blob["shape"])
        data = np.asarray(blob["data"], dtype=np.float64)
        return data.reshape(shape)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"tensor {name!r} is corrupt: {e}")


def checkpoint_to_json(ckpt: Checkpoint) -> dict:
    model = ckpt.model
    return {
        "format": FORMAT,
        "version": VERSION,
        "seed": model.seed,
        "input_size": model.input_size,
        "hidden_size": model.hidden_size,
        "orders": [order.value for order in model.orders],
        "epoch": ckpt.epoch,
        "config": ckpt.config,
        "tensors": {name: _encode(arr) for name, arr in model.tensors().items()},
        "velocity": {name: _encode(arr) for name, arr in ckpt.velocity.items()},
    }


def save_checkpoint(path: Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(checkpoint_to_json(ckpt), f, separators=(",", ":"))
    tmp.replace(path)
    return path


def checkpoint_from_json(data: dict) -> Checkpoint:
    if not isinstance(data, dict) or data.get("format") != FORMAT:
        raise CheckpointError("not an lstm-cctc checkpoint")
    if data.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {data.get('version')!r}")
    try:
        orders = [ScanOrder(value) for value in data["orders"]]
        blobs = data["tensors"]
        tensors = {name: _decode(name, blob) for name, blob in blobs.items()}
        recurrent = {}
        for order in orders:
            recurrent[order] = [
                LstmLayer(
                    w_x=tensors[f"{order.value}.layer{idx}.w_x"],
                    w_h=tensors[f"{order.value}.layer{idx}.w_h"],
                    b=tensors[f"{order.value}.layer{idx}.b"],
                )
                for idx in range(NUM_LAYERS)
            ]
        head = LinearHead(weights=tensors["head.weights"], bias=tensors["head.bias"])
        model = ScanModel(recurrent=recurrent, head=head, seed=data.get("seed"))
        velocity = {name: _decode(name, blob) for name, blob in data.get("velocity", {}).items()}
        epoch = int(data.get("epoch", 0))
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, ShapeMismatch) as e:
        raise CheckpointError(f"checkpoint is corrupt: {e}")

    if model.input_size != data.get("input_size") or model.hidden_size != data.get("hidden_size"):
        raise CheckpointError("checkpoint size metadata disagrees with its tensors")
    names = model.tensors()
    for name, arr in velocity.items():
        if name not in names or names[name].shape != arr.shape:
            raise CheckpointError(f"velocity entry {name!r} does not match any parameter")
    return Checkpoint(model=model, epoch=epoch, velocity=velocity, config=dict(data.get("config") or {}))


def load_checkpoint(path: Path, expected_input_size: Optional[int] = None) -> Checkpoint:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")
    except json.JSONDecodeError as e:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {e}")
    ckpt = checkpoint_from_json(data)
    if expected_input_size is not None and ckpt.model.input_size != expected_input_size:
        raise ShapeMismatch(
            f"checkpoint expects {ckpt.model.input_size} channels, dataset has {expected_input_size}"
        )
    return ckpt
