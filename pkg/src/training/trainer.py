"""SGD training of the four scan-direction LSTMs against the count-based CTC loss."""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import CheckpointError, DatasetError, SpecValidationError, TrainingDivergence
from ..features.grid import ALL_ORDERS, ScanOrder, serialize
from ..features.synth import Scene
from ..network.cctc import batch_cctc_loss
from ..network.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ..network.lstm import INIT_STD, ParamGrads, ScanModel

logger = logging.getLogger(__name__)

Velocity = Dict[str, np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer schedule and model shape. Defaults are the reference values."""

    learning_rate: float = 0.001
    lr_drop_epoch: int = 200
    dropped_rate: float = 0.0001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 2
    epochs: int = 200
    pretrain_epochs: int = 20
    seed: int = 42
    hidden_size: int = 256
    init_std: float = INIT_STD
    clip_norm: Optional[float] = None
    checkpoint_every: int = 10
    scan_orders: Tuple[ScanOrder, ...] = ALL_ORDERS

    def __post_init__(self):
        object.__setattr__(self, "scan_orders", tuple(self.scan_orders))
        self.validate()

    def validate(self) -> None:
        # zero rates are accepted; such a step leaves the parameters unchanged
        for name in ("learning_rate", "dropped_rate", "weight_decay"):
            if getattr(self, name) < 0:
                raise SpecValidationError("must be non-negative", field=name)
        if not 0.0 <= self.momentum < 1.0:
            raise SpecValidationError("must lie in [0, 1)", field="momentum")
        if self.batch_size < 1:
            raise SpecValidationError("must be at least 1", field="batch_size")
        if self.epochs < 0 or self.pretrain_epochs < 0 or self.lr_drop_epoch < 0:
            raise SpecValidationError("epoch counts must be non-negative", field="epochs")
        if self.hidden_size < 1:
            raise SpecValidationError("must be at least 1", field="hidden_size")
        if self.checkpoint_every < 1:
            raise SpecValidationError("must be at least 1", field="checkpoint_every")
        if self.init_std < 0:
            raise SpecValidationError("must be non-negative", field="init_std")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise SpecValidationError("must be positive when set", field="clip_norm")
        if not self.scan_orders or len(set(self.scan_orders)) != len(self.scan_orders):
            raise SpecValidationError("need a non-empty set of distinct scan orders", field="scan_orders")

    def to_json(self) -> dict:
        return {
            "learningRate": self.learning_rate,
            "lrDropEpoch": self.lr_drop_epoch,
            "droppedRate": self.dropped_rate,
            "momentum": self.momentum,
            "weightDecay": self.weight_decay,
            "batchSize": self.batch_size,
            "epochs": self.epochs,
            "pretrainEpochs": self.pretrain_epochs,
            "seed": self.seed,
            "hiddenSize": self.hidden_size,
            "initStd": self.init_std,
            "clipNorm": self.clip_norm,
            "checkpointEvery": self.checkpoint_every,
            "scanOrders": [order.value for order in self.scan_orders],
        }


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr: float
    grad_norm: float
    direction_loss: Dict[str, float] = field(default_factory=dict)


@dataclass
class TrainLog:
    """One record per completed epoch."""

    records: List[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    @property
    def losses(self) -> List[float]:
        return [r.loss for r in self.records]

    def write_csv(self, path: Path, orders: Sequence[ScanOrder] = ALL_ORDERS) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "loss", "lr", "gradNorm"] + [f"loss:{o.value}" for o in orders])
            for r in self.records:
                writer.writerow([r.epoch, repr(r.loss), repr(r.lr), repr(r.grad_norm)]
                                + [repr(r.direction_loss.get(o.value, float("nan"))) for o in orders])
        return path


@dataclass
class StepResult:
    loss: float
    grad_norm: float
    direction_loss: Dict[str, float]


def lr_for_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate in effect during 0-based `epoch`."""
    return cfg.learning_rate if epoch < cfg.lr_drop_epoch else cfg.dropped_rate


def zero_velocity(model: ScanModel) -> Velocity:
    return {name: np.zeros_like(arr) for name, arr in model.tensors().items()}


def batch_loss_and_grads(model: ScanModel, scenes: Sequence[Scene]) -> Tuple[np.ndarray, ParamGrads]:
    """CCTC losses of same-sized scenes under every scan order at once, and their summed gradient.

    Returns an (orders, scenes) loss array and gradients keyed like `model.tensors()`.
    """
    orders = model.orders
    frames = np.stack([np.stack([serialize(scene.grid, order, scene.count, scene.scene_id).frames
                                 for scene in scenes]) for order in orders])
    logp, tape = model.forward_batch(frames)
    O, B, T, _ = logp.shape
    counts = np.tile([scene.count for scene in scenes], O)
    losses, d_logits = batch_cctc_loss(logp.reshape(O * B, T, 2), counts)
    losses = losses.reshape(O, B)
    bad = np.argwhere(~np.isfinite(losses))
    if bad.size:
        o, b = bad[0]
        raise TrainingDivergence(scenes[b].scene_id, f"{orders[o].value} loss is {losses[o, b]}")
    return losses, model.backward_batch(tape, d_logits.reshape(O, B, T, 2))


def scene_loss_and_grads(model: ScanModel, scene: Scene) -> Tuple[float, Dict[str, float], ParamGrads]:
    """Summed CCTC loss over every scan order of one scene, and its gradient."""
    losses, grads = batch_loss_and_grads(model, [scene])
    per_order = {order.value: float(losses[pos, 0]) for pos, order in enumerate(model.orders)}
    return sum(per_order.values()), per_order, grads


def global_norm(grads: ParamGrads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def train_step(model: ScanModel, velocity: Velocity, batch: Sequence[Scene], cfg: TrainConfig,
               lr: Optional[float] = None) -> StepResult:
    """One momentum SGD update on the batch-mean loss; parameters change in place.

    v <- momentum * v - lr * (grad + weight_decay * theta); theta <- theta + v
    """
    if not batch:
        raise DatasetError("cannot take a training step on an empty batch")
    lr = cfg.learning_rate if lr is None else lr
    params = model.tensors()
    grads = {name: np.zeros_like(arr) for name, arr in params.items()}
    direction_loss = {order.value: 0.0 for order in model.orders}
    total = 0.0
    # scenes of one grid size run together; groups and scenes are summed in batch order
    groups: Dict[int, List[Scene]] = {}
    for scene in batch:
        groups.setdefault(scene.grid.n, []).append(scene)
    for members in groups.values():
        losses, group_grads = batch_loss_and_grads(model, members)
        for b in range(len(members)):
            for pos, order in enumerate(model.orders):
                direction_loss[order.value] += float(losses[pos, b])
                total += float(losses[pos, b])
        for name, grad in group_grads.items():
            grads[name] += grad

    scale = 1.0 / len(batch)
    for grad in grads.values():
        grad *= scale
    norm = global_norm(grads)
    if cfg.clip_norm is not None and norm > cfg.clip_norm:
        for grad in grads.values():
            grad *= cfg.clip_norm / norm

    for name, theta in params.items():
        v = velocity.setdefault(name, np.zeros_like(theta))
        v *= cfg.momentum
        v -= lr * (grads[name] + cfg.weight_decay * theta)
        theta += v

    return StepResult(
        loss=total * scale,
        grad_norm=norm,
        direction_loss={name: value * scale for name, value in direction_loss.items()},
    )


def epoch_batches(num_scenes: int, cfg: TrainConfig, epoch: int) -> List[np.ndarray]:
    """Seeded full permutation per epoch; the last short batch is kept."""
    perm = np.random.default_rng([cfg.seed, epoch]).permutation(num_scenes)
    return [perm[i:i + cfg.batch_size] for i in range(0, num_scenes, cfg.batch_size)]


def _resume(path: Path, cfg: TrainConfig, input_size: int) -> Checkpoint:
    ckpt = load_checkpoint(path, expected_input_size=input_size)
    if set(ckpt.model.orders) != set(cfg.scan_orders):
        raise CheckpointError(
            f"checkpoint covers orders {[o.value for o in ckpt.model.orders]}, "
            f"config asks for {[o.value for o in cfg.scan_orders]}"
        )
    if ckpt.model.hidden_size != cfg.hidden_size:
        raise CheckpointError(f"checkpoint hidden size {ckpt.model.hidden_size} != {cfg.hidden_size}")
    logger.info("resuming from %s at epoch %d", path, ckpt.epoch)
    return ckpt


def train_loop(scenes: Sequence[Scene], cfg: TrainConfig, checkpoint_path: Optional[Path] = None,
               resume: bool = False,
               epoch_callback: Optional[Callable[[int, ScanModel], None]] = None) -> Tuple[Checkpoint, TrainLog]:
    """Train for `cfg.epochs` epochs, checkpointing every `cfg.checkpoint_every` epochs and at the end.

    Args:
        scenes: Training scenes, all with the same channel count.
        cfg: Optimizer schedule.
        checkpoint_path: Where checkpoints are written (and read from when resuming).
        resume: Continue from `checkpoint_path` if it exists.
        epoch_callback: Called with (completed epochs, model) after every epoch.

    Returns:
        The final checkpoint and the log of the epochs run in this call.
    """
    if not scenes:
        raise DatasetError("training set is empty")
    input_size = scenes[0].grid.k
    if any(scene.grid.k != input_size for scene in scenes):
        raise DatasetError("training scenes disagree on the channel count")

    if resume and checkpoint_path is not None and Path(checkpoint_path).exists():
        ckpt = _resume(Path(checkpoint_path), cfg, input_size)
        ckpt.velocity = {**zero_velocity(ckpt.model), **ckpt.velocity}
    else:
        model = ScanModel.initialize(input_size, cfg.hidden_size, cfg.scan_orders, seed=cfg.seed,
                                     std=cfg.init_std)
        ckpt = Checkpoint(model=model, epoch=0, velocity=zero_velocity(model))
    ckpt.config = cfg.to_json()

    log = TrainLog()
    model = ckpt.model
    for epoch in range(ckpt.epoch, cfg.epochs):
        lr = lr_for_epoch(cfg, epoch)
        seen = 0
        loss_sum = 0.0
        norms = []
        direction_sum = {order.value: 0.0 for order in model.orders}
        for idx in epoch_batches(len(scenes), cfg, epoch):
            batch = [scenes[i] for i in idx]
            step = train_step(model, ckpt.velocity, batch, cfg, lr)
            loss_sum += step.loss * len(batch)
            for name, value in step.direction_loss.items():
                direction_sum[name] += value * len(batch)
            norms.append(step.grad_norm)
            seen += len(batch)

        record = EpochRecord(
            epoch=epoch + 1,
            loss=loss_sum / seen,
            lr=lr,
            grad_norm=float(np.mean(norms)),
            direction_loss={name: value / seen for name, value in direction_sum.items()},
        )
        log.append(record)
        ckpt.epoch = epoch + 1
        logger.info("epoch %d: loss=%.6f lr=%g grad_norm=%.4g", record.epoch, record.loss, lr, record.grad_norm)

        if epoch_callback is not None:
            epoch_callback(ckpt.epoch, model)
        if checkpoint_path is not None and ckpt.epoch % cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, ckpt)

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, ckpt)
    return ckpt, log
