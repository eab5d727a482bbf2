"""Tests for the SGD trainer: update rule, schedule, determinism and resume."""
import csv

import numpy as np
import pytest

from src.errors import CheckpointError, DatasetError, SpecValidationError, TrainingDivergence
from src.features.grid import ScanOrder
from src.features.synth import SceneSpec, generate_scene
from src.network.checkpoint import load_checkpoint
from src.network.lstm import ScanModel
from src.training.trainer import (TrainConfig, batch_loss_and_grads, epoch_batches, lr_for_epoch, scene_loss_and_grads,
                                  train_loop, train_step, zero_velocity)


def copy_tensors(model):
    return {name: arr.copy() for name, arr in model.tensors().items()}


def small_model(scene, seed=0, std=0.3):
    return ScanModel.initialize(scene.grid.k, 4, seed=seed, std=std)


def test_default_config_values():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.momentum, cfg.weight_decay, cfg.batch_size) == (0.001, 0.9, 0.0005, 2)
    assert (cfg.lr_drop_epoch, cfg.dropped_rate, cfg.pretrain_epochs) == (200, 0.0001, 20)
    assert cfg.clip_norm is None
    assert cfg.init_std == 0.01
    assert len(cfg.scan_orders) == 4


@pytest.mark.parametrize("kwargs", [
    {"batch_size": 0}, {"learning_rate": -0.1}, {"momentum": 1.0}, {"scan_orders": ()}, {"clip_norm": 0.0},
    {"init_std": -0.1},
])
def test_config_validation(kwargs):
    with pytest.raises(SpecValidationError):
        TrainConfig(**kwargs)


def test_learning_rate_schedule():
    cfg = TrainConfig()
    assert lr_for_epoch(cfg, 0) == 0.001
    assert lr_for_epoch(cfg, 199) == 0.001
    assert lr_for_epoch(cfg, 200) == 0.0001


def test_zero_step_leaves_parameters_unchanged(single_object_scene):
    model = small_model(single_object_scene)
    before = copy_tensors(model)
    cfg = TrainConfig(learning_rate=0.0, momentum=0.0, weight_decay=0.0)
    step = train_step(model, zero_velocity(model), [single_object_scene], cfg)
    assert np.isfinite(step.loss) and step.loss > 0
    for name, arr in model.tensors().items():
        assert np.array_equal(arr, before[name])


def test_momentum_update_matches_hand_arithmetic(single_object_scene):
    model = small_model(single_object_scene)
    cfg = TrainConfig(learning_rate=0.01, momentum=0.9, weight_decay=0.0005)
    velocity = zero_velocity(model)

    theta0 = copy_tensors(model)
    _, _, g1 = scene_loss_and_grads(model, single_object_scene)
    train_step(model, velocity, [single_object_scene], cfg)
    v1 = {name: v.copy() for name, v in velocity.items()}

    theta1 = copy_tensors(model)
    _, _, g2 = scene_loss_and_grads(model, single_object_scene)
    train_step(model, velocity, [single_object_scene], cfg)

    for name in theta0:
        expected_v1 = -0.01 * (g1[name] + 0.0005 * theta0[name])
        assert np.allclose(v1[name], expected_v1, rtol=1e-12, atol=1e-15)
        assert np.allclose(theta1[name], theta0[name] + v1[name], rtol=0, atol=1e-15)
        expected_v2 = 0.9 * v1[name] - 0.01 * (g2[name] + 0.0005 * theta1[name])
        assert np.allclose(velocity[name], expected_v2, rtol=1e-12, atol=1e-15)


def test_weight_decay_on_a_single_parameter(single_object_scene):
    model = small_model(single_object_scene)
    eps = 1e-6
    cfg = TrainConfig(learning_rate=eps, momentum=0.0)
    name, idx = "head.bias", 1
    model.tensors()[name][idx] = 0.25
    _, _, grads = scene_loss_and_grads(model, single_object_scene)
    train_step(model, zero_velocity(model), [single_object_scene], cfg)
    delta = model.tensors()[name][idx] - 0.25
    assert delta == pytest.approx(-eps * (grads[name][idx] + 0.0005 * 0.25), rel=1e-9)


def test_batched_step_matches_per_scene_gradients(tiny_scenes):
    model = small_model(tiny_scenes[0])
    losses, batched = batch_loss_and_grads(model, tiny_scenes)
    expected = {name: np.zeros_like(arr) for name, arr in model.tensors().items()}
    for b, scene in enumerate(tiny_scenes):
        _, per_order, grads = scene_loss_and_grads(model, scene)
        assert losses[:, b].tolist() == pytest.approx(list(per_order.values()), rel=1e-12)
        for name, grad in grads.items():
            expected[name] += grad
    for name in expected:
        assert np.allclose(batched[name], expected[name], rtol=1e-10, atol=1e-12)


def test_mixed_grid_sizes_share_a_batch(tiny_scenes):
    larger = generate_scene(SceneSpec(n=5, k=3, object_count_range=(1, 2), object_side_range=(1, 2),
                                      signal_channels=(0,), noise_sigma=0.0, seed=5), 0)
    batch = [tiny_scenes[0], larger, tiny_scenes[1]]
    model = small_model(tiny_scenes[0])
    expected = np.mean([scene_loss_and_grads(model, s)[0] for s in batch])
    cfg = TrainConfig(learning_rate=0.0, momentum=0.0, weight_decay=0.0)
    assert train_step(model, zero_velocity(model), batch, cfg).loss == pytest.approx(expected, rel=1e-12)


def test_batch_loss_is_the_mean_of_summed_direction_losses(tiny_scenes):
    model = small_model(tiny_scenes[0])
    expected = np.mean([scene_loss_and_grads(model, s)[0] for s in tiny_scenes[:2]])
    cfg = TrainConfig(learning_rate=0.0, momentum=0.0, weight_decay=0.0)
    step = train_step(model, zero_velocity(model), tiny_scenes[:2], cfg)
    assert step.loss == pytest.approx(expected, rel=1e-12)
    assert sum(step.direction_loss.values()) == pytest.approx(step.loss, rel=1e-12)


def test_gradient_clipping(single_object_scene):
    model = small_model(single_object_scene)
    cfg = TrainConfig(learning_rate=1.0, momentum=0.0, weight_decay=0.0, clip_norm=1e-3)
    before = copy_tensors(model)
    train_step(model, zero_velocity(model), [single_object_scene], cfg)
    moved = np.sqrt(sum(np.sum((arr - before[name]) ** 2) for name, arr in model.tensors().items()))
    assert moved == pytest.approx(1e-3, rel=1e-9)


def test_non_finite_loss_names_the_sample(single_object_scene):
    model = small_model(single_object_scene)
    model.head.bias[:] = [0.0, -np.inf]
    with pytest.raises(TrainingDivergence, match=single_object_scene.scene_id):
        train_step(model, zero_velocity(model), [single_object_scene], TrainConfig())


def test_empty_batch_rejected(single_object_scene):
    model = small_model(single_object_scene)
    with pytest.raises(DatasetError):
        train_step(model, zero_velocity(model), [], TrainConfig())


def test_loss_decreases_on_noiseless_scenes(tiny_scenes):
    cfg = TrainConfig(learning_rate=0.01, momentum=0.0, batch_size=len(tiny_scenes), epochs=10, hidden_size=4,
                      seed=3)
    _, log = train_loop(tiny_scenes, cfg)
    losses = log.losses
    assert len(losses) == 10
    assert all(later < earlier for earlier, later in zip(losses, losses[1:]))


def test_epoch_batches_keep_the_short_batch():
    cfg = TrainConfig(batch_size=2, seed=1)
    batches = epoch_batches(5, cfg, 0)
    assert [len(b) for b in batches] == [2, 2, 1]
    assert sorted(np.concatenate(batches).tolist()) == [0, 1, 2, 3, 4]
    assert all(np.array_equal(a, b) for a, b in zip(batches, epoch_batches(5, cfg, 0)))


def test_zero_epochs_writes_initialization(tmp_path, tiny_scenes):
    cfg = TrainConfig(epochs=0, hidden_size=4, seed=7)
    ckpt, log = train_loop(tiny_scenes, cfg, checkpoint_path=tmp_path / "ckpt.json")
    assert log.records == []
    init = ScanModel.initialize(tiny_scenes[0].grid.k, 4, seed=7)
    loaded = load_checkpoint(tmp_path / "ckpt.json")
    assert loaded.epoch == 0
    for name, arr in init.tensors().items():
        assert np.array_equal(loaded.model.tensors()[name], arr)


def test_training_is_deterministic(tmp_path, tiny_scenes):
    cfg = TrainConfig(epochs=3, hidden_size=4, seed=7)
    first, log_a = train_loop(tiny_scenes, cfg, checkpoint_path=tmp_path / "a.json")
    second, log_b = train_loop(tiny_scenes, cfg, checkpoint_path=tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert log_a.losses == log_b.losses


def test_resume_matches_uninterrupted_run(tmp_path, tiny_scenes):
    full_cfg = TrainConfig(epochs=4, hidden_size=4, seed=2, checkpoint_every=1)
    full, _ = train_loop(tiny_scenes, full_cfg, checkpoint_path=tmp_path / "full.json")

    path = tmp_path / "resumed.json"
    train_loop(tiny_scenes, TrainConfig(epochs=2, hidden_size=4, seed=2, checkpoint_every=1), checkpoint_path=path)
    resumed, log = train_loop(tiny_scenes, full_cfg, checkpoint_path=path, resume=True)

    assert [r.epoch for r in log.records] == [3, 4]
    assert resumed.epoch == 4
    for name, arr in full.model.tensors().items():
        assert np.array_equal(resumed.model.tensors()[name], arr)


def test_resume_rejects_corrupt_checkpoint(tmp_path, tiny_scenes):
    path = tmp_path / "ckpt.json"
    path.write_text("{ not json")
    with pytest.raises(CheckpointError):
        train_loop(tiny_scenes, TrainConfig(epochs=1, hidden_size=4), checkpoint_path=path, resume=True)


def test_single_order_training(tiny_scenes):
    cfg = TrainConfig(epochs=1, hidden_size=4, scan_orders=(ScanOrder.ROW_MAJOR_FORWARD,))
    ckpt, log = train_loop(tiny_scenes, cfg)
    assert ckpt.model.orders == (ScanOrder.ROW_MAJOR_FORWARD,)
    assert list(log.records[0].direction_loss) == ["row-major-forward"]


def test_train_log_csv(tmp_path, tiny_scenes):
    cfg = TrainConfig(epochs=2, hidden_size=4)
    seen = []
    _, log = train_loop(tiny_scenes, cfg, epoch_callback=lambda epoch, model: seen.append(epoch))
    assert seen == [1, 2]
    log.write_csv(tmp_path / "log.csv")
    rows = list(csv.reader(open(tmp_path / "log.csv")))
    assert rows[0][:4] == ["epoch", "loss", "lr", "gradNorm"]
    assert [row[0] for row in rows[1:]] == ["1", "2"]
    assert all(np.isfinite(float(row[1])) for row in rows[1:])


def test_empty_dataset_rejected():
    with pytest.raises(DatasetError):
        train_loop([], TrainConfig())


def test_initial_weight_scale_is_configurable(tiny_scenes):
    cfg = TrainConfig(epochs=0, hidden_size=4, seed=7, init_std=0.5)
    ckpt, _ = train_loop(tiny_scenes, cfg)
    init = ScanModel.initialize(tiny_scenes[0].grid.k, 4, seed=7, std=0.5)
    for name, arr in init.tensors().items():
        assert np.array_equal(ckpt.model.tensors()[name], arr)
    assert ckpt.config["initStd"] == 0.5
