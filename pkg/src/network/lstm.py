"""Two-layer unidirectional LSTM with a linear 2-class head, forward and exact BPTT.

Sequences are (T, k) arrays with one row per timestep. Gate pre-activations
are stacked in the order input, forget, cell, output, so every gate matrix is
(4H, fan_in). The recurrences run over (O, B, T, k) stacks: O scan orders with
their own weights, each over a batch of B sequences of a common length.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, logsumexp

from ..errors import NonDistribution, ShapeMismatch, TapeMismatch
from ..features.grid import ALL_ORDERS, ScanOrder, SequenceSample

INIT_STD = 0.01
NUM_LAYERS = 2
NUM_CLASSES = 2
BLANK = 0
OBJECT = 1


@dataclass
class LstmLayer:
    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray

    @property
    def input_size(self) -> int:
        return self.w_x.shape[-1]

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[-1]


@dataclass
class LinearHead:
    weights: np.ndarray
    bias: np.ndarray


@dataclass
class LstmParams:
    """Weights of one direction's LSTM stack plus the classification head."""

    layers: List[LstmLayer]
    head: LinearHead

    @property
    def input_size(self) -> int:
        return self.layers[0].input_size

    @property
    def hidden_size(self) -> int:
        return self.layers[0].hidden_size

    def tensors(self) -> Dict[str, np.ndarray]:
        """Named views of every parameter array, in a fixed order."""
        named = {}
        for idx, layer in enumerate(self.layers):
            named[f"layer{idx}.w_x"] = layer.w_x
            named[f"layer{idx}.w_h"] = layer.w_h
            named[f"layer{idx}.b"] = layer.b
        named["head.weights"] = self.head.weights
        named["head.bias"] = self.head.bias
        return named

    def validate(self) -> None:
        H = self.hidden_size
        fan_in = self.input_size
        for idx, layer in enumerate(self.layers):
            expected = {"w_x": (4 * H, fan_in), "w_h": (4 * H, H), "b": (4 * H,)}
            for name, shape in expected.items():
                arr = getattr(layer, name)
                if arr.shape != shape:
                    raise ShapeMismatch(f"layer{idx}.{name} has shape {arr.shape}, expected {shape}")
            fan_in = H
        if self.head.weights.shape != (H, NUM_CLASSES) or self.head.bias.shape != (NUM_CLASSES,):
            raise ShapeMismatch(
                f"head has shapes {self.head.weights.shape}/{self.head.bias.shape}, "
                f"expected {(H, NUM_CLASSES)}/{(NUM_CLASSES,)}"
            )
        for name, arr in self.tensors().items():
            if not np.isfinite(arr).all():
                raise ShapeMismatch(f"{name} holds non-finite values")


ParamGrads = Dict[str, np.ndarray]


@dataclass(frozen=True)
class FrameLogProbs:
    """Per-frame log-probabilities over {blank, object}."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != NUM_CLASSES or values.shape[0] == 0:
            raise ShapeMismatch(f"frame log-probabilities must be (T, 2), got {values.shape}")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "FrameLogProbs":
        logits = np.asarray(logits, dtype=np.float64)
        return cls(logits - logsumexp(logits, axis=1, keepdims=True))

    @classmethod
    def from_object_probs(cls, p_object: Sequence[float]) -> "FrameLogProbs":
        p = np.asarray(p_object, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return cls(np.log(np.stack([1.0 - p, p], axis=1)))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.values)

    def check_normalized(self, tol: float = 1e-6) -> None:
        err = np.abs(logsumexp(self.values, axis=1))
        if not np.all(err <= tol):
            t = int(np.argmax(np.where(np.isfinite(err), err, np.inf)))
            raise NonDistribution(f"frame {t} log-probabilities do not sum to one (|logsumexp| = {err[t]:.3g})",
                                  field="logP")


@dataclass
class LayerTape:
    inputs: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray


@dataclass
class NetTape:
    """Activations cached by `forward` for `backward`."""

    layers: List[LayerTape]
    logits: np.ndarray

    def __len__(self) -> int:
        return self.logits.shape[-2]

    def log_probs(self) -> FrameLogProbs:
        return FrameLogProbs.from_logits(self.logits)


def _init_layers(rng: np.random.Generator, input_size: int, hidden_size: int,
                 num_layers: int = NUM_LAYERS, std: float = INIT_STD) -> List[LstmLayer]:
    layers = []
    fan_in = input_size
    for _ in range(num_layers):
        layers.append(LstmLayer(
            w_x=rng.normal(0.0, std, (4 * hidden_size, fan_in)),
            w_h=rng.normal(0.0, std, (4 * hidden_size, hidden_size)),
            b=np.zeros(4 * hidden_size),
        ))
        fan_in = hidden_size
    return layers


def _init_head(rng: np.random.Generator, hidden_size: int, std: float = INIT_STD) -> LinearHead:
    return LinearHead(weights=rng.normal(0.0, std, (hidden_size, NUM_CLASSES)), bias=np.zeros(NUM_CLASSES))


def init_params(input_size: int, hidden_size: int, seed: int, std: float = INIT_STD) -> LstmParams:
    """Gaussian N(0, std^2) weights, zero biases, including the forget gate."""
    if input_size < 1 or hidden_size < 1:
        raise ShapeMismatch(f"sizes must be positive, got input={input_size}, hidden={hidden_size}")
    rng = np.random.default_rng(seed)
    layers = _init_layers(rng, input_size, hidden_size, std=std)
    return LstmParams(layers=layers, head=_init_head(rng, hidden_size, std=std))


def _layer_forward(layer: LstmLayer, x: np.ndarray) -> LayerTape:
    """One layer over (O, B, T, fan_in) inputs; the layer's arrays carry a leading O axis."""
    O, B, T, _ = x.shape
    H = layer.hidden_size
    pre = x @ layer.w_x[:, None].swapaxes(-1, -2) + layer.b[:, None, None, :]
    w_h_t = layer.w_h.swapaxes(-1, -2)
    i, f, g, o, c, tanh_c, h = (np.empty((O, B, T, H)) for _ in range(7))
    h_prev = np.zeros((O, B, H))
    c_prev = np.zeros((O, B, H))
    for t in range(T):
        z = pre[:, :, t] + h_prev @ w_h_t
        i[:, :, t] = expit(z[..., :H])
        f[:, :, t] = expit(z[..., H:2 * H])
        g[:, :, t] = np.tanh(z[..., 2 * H:3 * H])
        o[:, :, t] = expit(z[..., 3 * H:])
        c[:, :, t] = f[:, :, t] * c_prev + i[:, :, t] * g[:, :, t]
        tanh_c[:, :, t] = np.tanh(c[:, :, t])
        h[:, :, t] = o[:, :, t] * tanh_c[:, :, t]
        h_prev, c_prev = h[:, :, t], c[:, :, t]
    return LayerTape(inputs=x, i=i, f=f, g=g, o=o, c=c, tanh_c=tanh_c, h=h)


def _forward_stack(layers: List[LstmLayer], head: LinearHead, frames: np.ndarray) -> NetTape:
    tapes = []
    x = frames
    for layer in layers:
        tape = _layer_forward(layer, x)
        tapes.append(tape)
        x = tape.h
    return NetTape(layers=tapes, logits=x @ head.weights + head.bias)


def _outer_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum over the B and T axes of a[o, b, t, :, None] * b[o, b, t, None, :]."""
    O = a.shape[0]
    return a.reshape(O, -1, a.shape[-1]).swapaxes(1, 2) @ b.reshape(O, -1, b.shape[-1])


def _layer_backward(layer: LstmLayer, tape: LayerTape, dh: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    O, B, T, H = tape.h.shape
    dz = np.empty((O, B, T, 4 * H))
    dh_next = np.zeros((O, B, H))
    dc_next = np.zeros((O, B, H))
    zeros = np.zeros((O, B, H))
    for t in reversed(range(T)):
        i, f, g, o, tanh_c = tape.i[:, :, t], tape.f[:, :, t], tape.g[:, :, t], tape.o[:, :, t], tape.tanh_c[:, :, t]
        c_prev = tape.c[:, :, t - 1] if t > 0 else zeros
        dh_t = dh[:, :, t] + dh_next
        do = dh_t * tanh_c
        dc = dh_t * o * (1.0 - tanh_c ** 2) + dc_next
        dz[:, :, t, :H] = dc * g * i * (1.0 - i)
        dz[:, :, t, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, :, t, 2 * H:3 * H] = dc * i * (1.0 - g ** 2)
        dz[:, :, t, 3 * H:] = do * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz[:, :, t] @ layer.w_h
    grads = {
        "w_x": _outer_sum(dz, tape.inputs),
        "w_h": _outer_sum(dz[:, :, 1:], tape.h[:, :, :-1]),
        "b": dz.sum(axis=(1, 2)),
    }
    return dz @ layer.w_x[:, None], grads


def _backward_stack(layers: List[LstmLayer], head: LinearHead, tape: NetTape,
                    d_logits: np.ndarray) -> Tuple[List[Dict[str, np.ndarray]], Dict[str, np.ndarray]]:
    """Per-layer gradients with a leading O axis, and head gradients summed over every sequence."""
    top = tape.layers[-1].h
    head_grads = {
        "weights": top.reshape(-1, top.shape[-1]).T @ d_logits.reshape(-1, NUM_CLASSES),
        "bias": d_logits.reshape(-1, NUM_CLASSES).sum(axis=0),
    }
    layer_grads: List[Dict[str, np.ndarray]] = [{} for _ in layers]
    dh = d_logits @ head.weights.T
    for idx in reversed(range(len(layers))):
        dh, layer_grads[idx] = _layer_backward(layers[idx], tape.layers[idx], dh)
    return layer_grads, head_grads


def _single(layers: Sequence[LstmLayer]) -> List[LstmLayer]:
    return [LstmLayer(w_x=l.w_x[None], w_h=l.w_h[None], b=l.b[None]) for l in layers]


def _map_tape(tape: NetTape, view) -> NetTape:
    layers = [LayerTape(**{name: view(arr) for name, arr in vars(lt).items()}) for lt in tape.layers]
    return NetTape(layers=layers, logits=view(tape.logits))


def forward(params: LstmParams, sample: Union[SequenceSample, np.ndarray]) -> Tuple[FrameLogProbs, NetTape]:
    frames = sample.frames if isinstance(sample, SequenceSample) else np.asarray(sample, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ShapeMismatch(f"frames must be a non-empty (T, k) array, got {frames.shape}")
    if frames.shape[1] != params.input_size:
        raise ShapeMismatch(f"frame dimension {frames.shape[1]} does not match input size {params.input_size}")

    stacked = _forward_stack(_single(params.layers), params.head, frames[None, None])
    net_tape = _map_tape(stacked, lambda arr: arr[0, 0])
    return net_tape.log_probs(), net_tape


def backward(params: LstmParams, tape: NetTape, d_logits: np.ndarray) -> ParamGrads:
    """Exact gradients of a loss w.r.t. every parameter, given dLoss/dlogits."""
    d_logits = np.asarray(d_logits, dtype=np.float64)
    if len(tape.layers) != len(params.layers):
        raise TapeMismatch(f"tape has {len(tape.layers)} layers, params have {len(params.layers)}")
    for idx, (layer, ltape) in enumerate(zip(params.layers, tape.layers)):
        if ltape.inputs.shape[-1] != layer.input_size or ltape.h.shape[-1] != layer.hidden_size:
            raise TapeMismatch(f"tape layer {idx} does not match parameter shapes")
    if d_logits.shape != tape.logits.shape:
        raise TapeMismatch(f"dLogits has shape {d_logits.shape}, tape expects {tape.logits.shape}")

    stacked = _map_tape(tape, lambda arr: arr[None, None])
    layer_grads, head_grads = _backward_stack(_single(params.layers), params.head, stacked, d_logits[None, None])
    grads: ParamGrads = {f"head.{name}": grad for name, grad in head_grads.items()}
    for idx, named in enumerate(layer_grads):
        for name, grad in named.items():
            grads[f"layer{idx}.{name}"] = grad[0]
    return {name: grads[name] for name in params.tensors()}


@dataclass
class ScanModel:
    """One LSTM stack per scan order, all feeding a single shared head."""

    recurrent: Dict[ScanOrder, List[LstmLayer]]
    head: LinearHead
    seed: Optional[int] = None
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not self.recurrent:
            raise ShapeMismatch("a scan model needs at least one scan order")
        for order in self.orders:
            self.params_for(order).validate()

    @classmethod
    def initialize(cls, input_size: int, hidden_size: int, orders: Iterable[ScanOrder] = ALL_ORDERS,
                   seed: int = 0, std: float = INIT_STD) -> "ScanModel":
        """Draw every direction's weights, then the head, from one seeded generator."""
        if input_size < 1 or hidden_size < 1:
            raise ShapeMismatch(f"sizes must be positive, got input={input_size}, hidden={hidden_size}")
        wanted = set(orders)
        rng = np.random.default_rng(seed)
        recurrent = {order: _init_layers(rng, input_size, hidden_size, std=std)
                     for order in ALL_ORDERS if order in wanted}
        return cls(recurrent=recurrent, head=_init_head(rng, hidden_size, std=std), seed=seed)

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int, orders: Iterable[ScanOrder] = ALL_ORDERS) -> "ScanModel":
        return cls.initialize(input_size, hidden_size, orders, seed=0, std=0.0)

    @property
    def orders(self) -> Tuple[ScanOrder, ...]:
        return tuple(order for order in ALL_ORDERS if order in self.recurrent)

    @property
    def input_size(self) -> int:
        return self.params_for(self.orders[0]).input_size

    @property
    def hidden_size(self) -> int:
        return self.params_for(self.orders[0]).hidden_size

    def params_for(self, order: ScanOrder) -> LstmParams:
        if order not in self.recurrent:
            raise ShapeMismatch(f"model has no LSTM for scan order {order.value}")
        return LstmParams(layers=self.recurrent[order], head=self.head)

    def restricted(self, orders: Iterable[ScanOrder]) -> "ScanModel":
        """A view using only some scan orders; arrays are shared, not copied."""
        orders = set(orders)
        return ScanModel({o: layers for o, layers in self.recurrent.items() if o in orders},
                         self.head, seed=self.seed, meta=dict(self.meta))

    def tensors(self) -> Dict[str, np.ndarray]:
        named = {}
        for order in self.orders:
            for name, arr in self.params_for(order).tensors().items():
                if not name.startswith("head."):
                    named[f"{order.value}.{name}"] = arr
        named["head.weights"] = self.head.weights
        named["head.bias"] = self.head.bias
        return named

    def forward(self, sample: SequenceSample) -> Tuple[FrameLogProbs, NetTape]:
        return forward(self.params_for(sample.order), sample)

    def backward(self, order: ScanOrder, tape: NetTape, d_logits: np.ndarray) -> ParamGrads:
        """Gradients keyed like `tensors()`; only this direction's and the head's entries."""
        grads = backward(self.params_for(order), tape, d_logits)
        return {(name if name.startswith("head.") else f"{order.value}.{name}"): grad
                for name, grad in grads.items()}

    def stacked_layers(self) -> List[LstmLayer]:
        """Every direction's layers stacked along a leading axis in `orders` order (copies)."""
        depth = len(self.recurrent[self.orders[0]])
        return [LstmLayer(w_x=np.stack([self.recurrent[o][idx].w_x for o in self.orders]),
                          w_h=np.stack([self.recurrent[o][idx].w_h for o in self.orders]),
                          b=np.stack([self.recurrent[o][idx].b for o in self.orders]))
                for idx in range(depth)]

    def forward_batch(self, frames: np.ndarray) -> Tuple[np.ndarray, NetTape]:
        """Run (O, B, T, k) frames, one slice per order in `orders`, through their directions at once.

        Returns (O, B, T, 2) frame log-probabilities and the tape for `backward_batch`.
        """
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 4 or frames.shape[0] != len(self.orders) or frames.shape[2] == 0:
            raise ShapeMismatch(f"frames must be ({len(self.orders)}, B, T, k) with T > 0, got {frames.shape}")
        if frames.shape[3] != self.input_size:
            raise ShapeMismatch(f"frame dimension {frames.shape[3]} does not match input size {self.input_size}")
        tape = _forward_stack(self.stacked_layers(), self.head, frames)
        return tape.logits - logsumexp(tape.logits, axis=-1, keepdims=True), tape

    def backward_batch(self, tape: NetTape, d_logits: np.ndarray) -> ParamGrads:
        """Gradients keyed like `tensors()`, summed over the batch axis of the tape."""
        d_logits = np.asarray(d_logits, dtype=np.float64)
        if d_logits.shape != tape.logits.shape:
            raise TapeMismatch(f"dLogits has shape {d_logits.shape}, tape expects {tape.logits.shape}")
        if tape.logits.shape[0] != len(self.orders) or tape.layers[-1].h.shape[-1] != self.hidden_size:
            raise TapeMismatch("tape does not match this model's orders and hidden size")
        layer_grads, head_grads = _backward_stack(self.stacked_layers(), self.head, tape, d_logits)
        grads: ParamGrads = {f"head.{name}": grad for name, grad in head_grads.items()}
        for pos, order in enumerate(self.orders):
            for idx, named in enumerate(layer_grads):
                for name, grad in named.items():
                    grads[f"{order.value}.layer{idx}.{name}"] = grad[pos]
        return {name: grads[name] for name in self.tensors()}
