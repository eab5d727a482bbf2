"""Tests for checkpoint persistence."""
import json

import numpy as np
import pytest

from src.errors import CheckpointError, ShapeMismatch
from src.features.grid import ALL_ORDERS, ScanOrder, serialize
from src.network.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from src.network.lstm import ScanModel


def test_reload_reproduces_forward_bit_exactly(tmp_path, single_object_scene):
    model = ScanModel.initialize(2, 5, seed=3, std=0.5)
    path = save_checkpoint(tmp_path / "ckpt.json", Checkpoint(model, epoch=4))
    loaded = load_checkpoint(path, expected_input_size=2)
    assert loaded.epoch == 4
    assert loaded.model.seed == 3
    assert loaded.model.orders == ALL_ORDERS
    for order in ALL_ORDERS:
        sample = serialize(single_object_scene.grid, order, 1)
        assert np.array_equal(model.forward(sample)[0].values, loaded.model.forward(sample)[0].values)


def test_velocity_and_config_survive(tmp_path):
    model = ScanModel.initialize(2, 3, orders=[ScanOrder.ROW_MAJOR_FORWARD], seed=1)
    velocity = {name: np.full_like(arr, 0.125) for name, arr in model.tensors().items()}
    save_checkpoint(tmp_path / "ckpt.json", Checkpoint(model, epoch=1, velocity=velocity, config={"seed": 1}))
    loaded = load_checkpoint(tmp_path / "ckpt.json")
    assert loaded.config == {"seed": 1}
    assert set(loaded.velocity) == set(velocity)
    assert all(np.array_equal(loaded.velocity[name], v) for name, v in velocity.items())


def test_channel_mismatch(tmp_path):
    save_checkpoint(tmp_path / "ckpt.json", Checkpoint(ScanModel.initialize(2, 3, seed=1)))
    with pytest.raises(ShapeMismatch):
        load_checkpoint(tmp_path / "ckpt.json", expected_input_size=8)


@pytest.mark.parametrize("content", [
    "{ truncated",
    json.dumps({"format": "something-else"}),
    json.dumps({"format": "lstm-cctc-checkpoint", "version": 99}),
    json.dumps({"format": "lstm-cctc-checkpoint", "version": 1, "orders": ["row-major-forward"], "tensors": {}}),
])
def test_corrupt_checkpoints_rejected(tmp_path, content):
    path = tmp_path / "ckpt.json"
    path.write_text(content)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_tensor_shape_corruption_rejected(tmp_path):
    path = save_checkpoint(tmp_path / "ckpt.json", Checkpoint(ScanModel.initialize(2, 3, seed=1)))
    data = json.loads(path.read_text())
    data["tensors"]["head.bias"]["shape"] = [3]
    path.write_text(json.dumps(data))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "absent.json")
