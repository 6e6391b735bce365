"""Stacked LSTM regressor built directly on numpy.

Two recurrent layers feed a dense scalar head; gradients come from full
backpropagation through time, and training uses Adam on a mean-absolute-error
loss. Everything is double precision and deterministic under a fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

GATE_ORDER = "ifgo"  # input, forget, cell-candidate, output


class TrainingDivergedError(Exception):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training loss became non-finite in epoch {epoch}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class LstmLayer:
    """One recurrent layer; weight columns are blocked by gate in GATE_ORDER."""

    w_in: np.ndarray  # (input_dim, 4*units)
    w_rec: np.ndarray  # (units, 4*units)
    bias: np.ndarray  # (4*units,)

    @property
    def input_dim(self) -> int:
        return self.w_in.shape[0]

    @property
    def units(self) -> int:
        return self.w_rec.shape[0]

    def __post_init__(self):
        u = self.units
        if self.w_in.shape[1] != 4 * u or self.bias.shape != (4 * u,):
            raise ValueError("gate block shapes are inconsistent")


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


@dataclass
class LstmNetwork:
    layer1: LstmLayer
    layer2: LstmLayer
    head_w: np.ndarray  # (units2,)
    head_b: float
    seed: int
    optimizer_state: AdamState | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.layer2.input_dim != self.layer1.units:
            raise ValueError("layer2 input width must equal layer1 units")
        if self.head_w.shape != (self.layer2.units,):
            raise ValueError("head width must equal layer2 units")

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            "layer1.w_in": self.layer1.w_in,
            "layer1.w_rec": self.layer1.w_rec,
            "layer1.bias": self.layer1.bias,
            "layer2.w_in": self.layer2.w_in,
            "layer2.w_rec": self.layer2.w_rec,
            "layer2.bias": self.layer2.bias,
            "head.w": self.head_w,
        }


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    loss: str = "mae"
    clip_norm: float | None = None  # optional divergence guard, off by default

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.loss != "mae":
            raise ValueError(f"unsupported loss {self.loss!r}")


def _init_layer(rng: np.random.Generator, input_dim: int, units: int) -> LstmLayer:
    def uniform(fan_in: int, shape) -> np.ndarray:
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    bias = np.zeros(4 * units)
    bias[units: 2 * units] = 1.0  # forget gate starts open
    return LstmLayer(uniform(input_dim, (input_dim, 4 * units)), uniform(units, (units, 4 * units)), bias)


def init_network(input_dim: int, units: tuple[int, int] = (64, 32), seed: int = 0) -> LstmNetwork:
    """Fresh network with uniform(-1/sqrt(fan_in)) weights, reproducible by seed."""
    rng = np.random.default_rng(seed)
    layer1 = _init_layer(rng, input_dim, units[0])
    layer2 = _init_layer(rng, units[0], units[1])
    bound = 1.0 / math.sqrt(units[1])
    head_w = rng.uniform(-bound, bound, size=units[1])
    head_b = float(rng.uniform(-bound, bound))
    return LstmNetwork(layer1, layer2, head_w, head_b, seed)


def cell_step(layer: LstmLayer, x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray):
    """One LSTM step: gates from current input and previous hidden state.

    Accepts a single vector or a batch (leading dimension broadcast through).
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.input_dim:
        raise ValueError(f"input width {x.shape[-1]} does not match layer input {layer.input_dim}")
    u = layer.units
    pre = x @ layer.w_in + h_prev @ layer.w_rec + layer.bias
    i = _sigmoid(pre[..., :u])
    f = _sigmoid(pre[..., u: 2 * u])
    g = np.tanh(pre[..., 2 * u: 3 * u])
    o = _sigmoid(pre[..., 3 * u:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


def _unroll(network: LstmNetwork, windows: np.ndarray, keep_caches: bool):
    """Run both layers over a (batch, window, features) block from zero state."""
    b, w, _ = windows.shape
    caches = ([], []) if keep_caches else None
    h = [np.zeros((b, network.layer1.units)), np.zeros((b, network.layer2.units))]
    c = [np.zeros((b, network.layer1.units)), np.zeros((b, network.layer2.units))]
    for t in range(w):
        x = windows[:, t, :]
        for li, layer in enumerate((network.layer1, network.layer2)):
            u = layer.units
            pre = x @ layer.w_in + h[li] @ layer.w_rec + layer.bias
            i = _sigmoid(pre[:, :u])
            f = _sigmoid(pre[:, u: 2 * u])
            g = np.tanh(pre[:, 2 * u: 3 * u])
            o = _sigmoid(pre[:, 3 * u:])
            c_new = f * c[li] + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            if keep_caches:
                caches[li].append((x, h[li], c[li], i, f, g, o, tc))
            h[li], c[li] = h_new, c_new
            x = h_new
    preds = h[1] @ network.head_w + network.head_b
    return preds, h[1], caches


def forward(network: LstmNetwork, window: np.ndarray) -> float:
    """Predict one scalar from a (window, features) block; deterministic."""
    window = np.asarray(window, dtype=float)
    if window.ndim != 2 or window.shape[1] != network.layer1.input_dim:
        raise ValueError(
            f"window shape {window.shape} does not match ({'*'}, {network.layer1.input_dim})"
        )
    preds, _, _ = _unroll(network, window[np.newaxis], keep_caches=False)
    return float(preds[0])


def forward_batch(network: LstmNetwork, windows: np.ndarray) -> np.ndarray:
    windows = np.asarray(windows, dtype=float)
    preds, _, _ = _unroll(network, windows, keep_caches=False)
    return preds


def loss_mae(predictions, targets) -> float:
    predictions = np.asarray(predictions, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if predictions.shape != targets.shape:
        raise ValueError("predictions and targets must have equal length")
    if predictions.size == 0:
        raise ValueError("cannot take the mean absolute error of nothing")
    return float(np.mean(np.abs(predictions - targets)))


def _layer_backward(layer: LstmLayer, cache, dh_ext):
    """BPTT through one layer; dh_ext[t] is the external gradient into h_t."""
    steps = len(cache)
    batch = cache[0][0].shape[0]
    d_w_in = np.zeros_like(layer.w_in)
    d_w_rec = np.zeros_like(layer.w_rec)
    d_bias = np.zeros_like(layer.bias)
    dx_all = [None] * steps
    dh_carry = np.zeros((batch, layer.units))
    dc_carry = np.zeros((batch, layer.units))
    for t in reversed(range(steps)):
        x, h_prev, c_prev, i, f, g, o, tc = cache[t]
        dh = dh_ext[t] + dh_carry
        do = dh * tc
        dc = dc_carry + dh * o * (1.0 - tc * tc)
        da = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        d_w_in += x.T @ da
        d_w_rec += h_prev.T @ da
        d_bias += da.sum(axis=0)
        dx_all[t] = da @ layer.w_in.T
        dh_carry = da @ layer.w_rec.T
        dc_carry = dc * f
    return d_w_in, d_w_rec, d_bias, dx_all


def _loss_and_gradients(network: LstmNetwork, inputs: np.ndarray, targets: np.ndarray):
    preds, h_last, caches = _unroll(network, inputs, keep_caches=True)
    batch = len(targets)
    loss = float(np.mean(np.abs(preds - targets)))
    dpred = np.sign(preds - targets) / batch

    grads = {
        "head.w": h_last.T @ dpred,
        "head.b": float(dpred.sum()),
    }
    steps = inputs.shape[1]
    dh2 = [np.zeros((batch, network.layer2.units)) for _ in range(steps)]
    dh2[-1] = dpred[:, np.newaxis] * network.head_w[np.newaxis, :]
    d_w_in2, d_w_rec2, d_bias2, dx2 = _layer_backward(network.layer2, caches[1], dh2)
    d_w_in1, d_w_rec1, d_bias1, _ = _layer_backward(network.layer1, caches[0], dx2)
    grads.update({
        "layer1.w_in": d_w_in1,
        "layer1.w_rec": d_w_rec1,
        "layer1.bias": d_bias1,
        "layer2.w_in": d_w_in2,
        "layer2.w_rec": d_w_rec2,
        "layer2.bias": d_bias2,
    })
    return loss, grads


def backward(network: LstmNetwork, batch) -> dict[str, np.ndarray]:
    """Exact MAE gradients for every parameter over the full unroll.

    The batch gradient is the mean of per-sample gradients; the MAE
    subgradient at zero error is taken as 0.
    """
    inputs = np.asarray(batch.inputs, dtype=float)
    targets = np.asarray(batch.targets, dtype=float)
    if len(targets) == 0:
        raise ValueError("batch is empty")
    _, grads = _loss_and_gradients(network, inputs, targets)
    if not all(np.isfinite(np.asarray(g)).all() for g in grads.values()):
        raise FloatingPointError("gradient overflow")
    return grads


def adam_step(network: LstmNetwork, gradients: dict, config: TrainConfig) -> LstmNetwork:
    """One bias-corrected Adam update, applied in place."""
    params = network.parameters()
    state = network.optimizer_state
    if state is None:
        state = AdamState(
            0,
            {name: np.zeros_like(p) for name, p in params.items()} | {"head.b": np.zeros(())},
            {name: np.zeros_like(p) for name, p in params.items()} | {"head.b": np.zeros(())},
        )
        network.optimizer_state = state
    state.step += 1
    t = state.step
    lr = config.learning_rate
    for name, param in params.items():
        g = gradients[name]
        state.m[name] = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
        m_hat = state.m[name] / (1.0 - ADAM_BETA1**t)
        v_hat = state.v[name] / (1.0 - ADAM_BETA2**t)
        param -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    g = gradients["head.b"]
    state.m["head.b"] = ADAM_BETA1 * state.m["head.b"] + (1.0 - ADAM_BETA1) * g
    state.v["head.b"] = ADAM_BETA2 * state.v["head.b"] + (1.0 - ADAM_BETA2) * g * g
    m_hat = state.m["head.b"] / (1.0 - ADAM_BETA1**t)
    v_hat = state.v["head.b"] / (1.0 - ADAM_BETA2**t)
    network.head_b = float(network.head_b - lr * m_hat / (math.sqrt(v_hat) + ADAM_EPS))
    return network


def _clip_gradients(grads: dict, max_norm: float) -> dict:
    total = math.sqrt(sum(float(np.square(g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        grads = {name: g * scale for name, g in grads.items()}
    return grads


def train(network: LstmNetwork, windows, config: TrainConfig) -> tuple[LstmNetwork, list[float]]:
    """Minibatch Adam over shuffled epochs; returns the per-epoch loss history.

    Fully reproducible: the sample order comes from a generator seeded by the
    config, and batch reductions run in a fixed order.
    """
    inputs = np.asarray(windows.inputs, dtype=float)
    targets = np.asarray(windows.targets, dtype=float)
    n = len(targets)
    if n == 0:
        raise ValueError("no training samples")
    rng = np.random.default_rng(config.seed)
    history: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_abs_error = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start: start + config.batch_size]
            loss, grads = _loss_and_gradients(network, inputs[idx], targets[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch)
            if config.clip_norm is not None:
                grads = _clip_gradients(grads, config.clip_norm)
            adam_step(network, grads, config)
            epoch_abs_error += loss * len(idx)
        history.append(epoch_abs_error / n)
    return network, history


# --- persistence --------------------------------------------------------------

def network_to_dict(network: LstmNetwork) -> dict:
    def layer_doc(layer: LstmLayer) -> dict:
        return {
            "input_dim": layer.input_dim,
            "units": layer.units,
            "w_in": layer.w_in.tolist(),
            "w_rec": layer.w_rec.tolist(),
            "bias": layer.bias.tolist(),
        }

    return {
        "gate_order": GATE_ORDER,
        "layer1": layer_doc(network.layer1),
        "layer2": layer_doc(network.layer2),
        "head_w": network.head_w.tolist(),
        "head_b": network.head_b,
        "seed": network.seed,
    }


def save_network(network: LstmNetwork, path) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(network), fh, sort_keys=True)
        fh.write("\n")


def network_from_dict(doc: dict) -> LstmNetwork:
    if doc.get("gate_order") != GATE_ORDER:
        raise ValueError(f"unsupported gate order {doc.get('gate_order')!r}")

    def layer_from(doc_layer: dict) -> LstmLayer:
        return LstmLayer(
            np.array(doc_layer["w_in"], dtype=float),
            np.array(doc_layer["w_rec"], dtype=float),
            np.array(doc_layer["bias"], dtype=float),
        )

    return LstmNetwork(
        layer_from(doc["layer1"]),
        layer_from(doc["layer2"]),
        np.array(doc["head_w"], dtype=float),
        float(doc["head_b"]),
        int(doc["seed"]),
    )


def load_network(path) -> LstmNetwork:
    with open(path) as fh:
        return network_from_dict(json.load(fh))
