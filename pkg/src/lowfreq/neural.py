"""Dense feedforward networks with minibatch SGD and per-sample online updates.

Plain numpy implementation: a network is a value object (lists of weight
matrices and bias vectors), training works on a private copy, and every
source of randomness is an explicitly seeded generator so identical
configurations reproduce identical parameter trajectories.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ACTIVATIONS = ("sigmoid", "relu", "linear")


class DivergenceError(ArithmeticError):
    """Training produced a non-finite value; ``layer`` locates the blow-up."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        with np.errstate(over="ignore"):  # saturates cleanly to 0
            return 1.0 / (1.0 + np.exp(-z))
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "linear":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def _activate_prime_from_output(a: np.ndarray, kind: str) -> np.ndarray:
    # derivative expressed via the activation output, cheap for all three
    if kind == "sigmoid":
        return a * (1.0 - a)
    if kind == "relu":
        return (a > 0.0).astype(a.dtype)
    if kind == "linear":
        return np.ones_like(a)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class DenseNetwork:
    """Fully-connected network: weights[i] has shape (n_i, n_{i+1})."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        sizes = [int(s) for s in self.layer_sizes]
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("one weight matrix and bias vector per layer transition")
        if len(self.activations) != len(sizes) - 1:
            raise ValueError("one activation per non-input layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValueError(
                    f"layer {i}: weight shape {w.shape} / bias shape {b.shape} "
                    f"inconsistent with sizes {sizes[i]}->{sizes[i + 1]}"
                )
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.layer_sizes = sizes

    def copy(self) -> "DenseNetwork":
        return DenseNetwork(
            layer_sizes=list(self.layer_sizes),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activations=list(self.activations),
        )

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights) and all(
            np.all(np.isfinite(b)) for b in self.biases
        )


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float
    epochs: int
    minibatch_size: int = 32
    l2_penalty: float = 0.0
    momentum: float = 0.0
    rng_seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be >= 1")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


@dataclass(frozen=True)
class OgdConfig:
    learning_rate: float

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


def he_adjusted_init(
    layer_sizes, rng_seed: int = 0, activations="sigmoid"
) -> DenseNetwork:
    """Uniform weight initialization scaled by the mean of fan-in and fan-out.

    Weights are drawn from U(-r, r) with r = sqrt(12 / (n_in + n_out)),
    giving each layer a weight variance of 4 / (n_in + n_out); biases start
    at zero. For constant layer sizes this reduces to the usual
    variance-preserving uniform scheme.
    """
    sizes = [int(s) for s in layer_sizes]
    if isinstance(activations, str):
        activations = [activations] * (len(sizes) - 1)
    rng = np.random.default_rng(rng_seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes, sizes[1:]):
        r = np.sqrt(12.0 / (n_in + n_out))
        weights.append(rng.uniform(-r, r, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return DenseNetwork(sizes, weights, biases, list(activations))


def forward(net: DenseNetwork, x: np.ndarray) -> list[np.ndarray]:
    """Activations of every layer, input first. Accepts a single sample
    (1-D) or a batch (2-D, one sample per row)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.n_inputs:
        raise ValueError(f"input width {x.shape[-1]}, network expects {net.n_inputs}")
    acts = [x]
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is
        for w, b, kind in zip(net.weights, net.biases, net.activations):
            acts.append(_activate(acts[-1] @ w + b, kind))  # detected downstream
    return acts


def predict(net: DenseNetwork, x: np.ndarray) -> np.ndarray:
    return forward(net, x)[-1]


def mse_loss(net: DenseNetwork, x: np.ndarray, y: np.ndarray) -> float:
    out = predict(net, x)
    with np.errstate(over="ignore"):  # inf loss is the divergence signal
        return float(np.mean((out - np.asarray(y, dtype=float)) ** 2))


def backprop_mse(
    net: DenseNetwork, x: np.ndarray, y: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of the mean-squared-error loss for every weight and bias.

    The loss averages over all output components (and over the batch when
    ``x`` is 2-D), so batch gradients are the mean of per-sample gradients.
    """
    y = np.asarray(y, dtype=float)
    acts = forward(net, x)
    for i, a in enumerate(acts):
        if not np.all(np.isfinite(a)):
            raise DivergenceError(f"non-finite activation at layer {i}", layer=i)
    batched = acts[0].ndim == 2
    if not batched:
        acts = [a[None, :] for a in acts]
        y = y[None, :] if y.ndim == 1 else y
    n_batch = acts[0].shape[0]

    delta = (2.0 / (n_batch * net.n_outputs)) * (acts[-1] - y)
    delta = delta * _activate_prime_from_output(acts[-1], net.activations[-1])
    w_grads = [None] * len(net.weights)
    b_grads = [None] * len(net.biases)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(len(net.weights) - 1, -1, -1):
            w_grads[i] = acts[i].T @ delta
            b_grads[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ net.weights[i].T) * _activate_prime_from_output(
                    acts[i], net.activations[i - 1]
                )
    return w_grads, b_grads


def _sgd_update(net, velocity_w, velocity_b, w_grads, b_grads, lr, momentum, l2):
    for i in range(len(net.weights)):
        gw = w_grads[i] + l2 * net.weights[i]  # weight decay on weights only
        velocity_w[i] = momentum * velocity_w[i] - lr * gw
        velocity_b[i] = momentum * velocity_b[i] - lr * b_grads[i]
        net.weights[i] += velocity_w[i]
        net.biases[i] += velocity_b[i]


def train_sgd(
    net: DenseNetwork, x: np.ndarray, y: np.ndarray, cfg: SgdConfig
) -> tuple[DenseNetwork, np.ndarray]:
    """Minibatch SGD on a private copy of ``net``.

    Returns the trained copy and the full-dataset MSE measured after each
    epoch. Shuffling is driven by ``cfg.rng_seed``, so a fixed seed yields
    bit-identical weights. A non-finite loss or parameter raises
    :class:`DivergenceError`.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if len(x) == 0:
        raise ValueError("empty training set")
    if len(x) != len(y):
        raise ValueError(f"{len(x)} inputs vs {len(y)} targets")

    net = net.copy()
    rng = np.random.default_rng(cfg.rng_seed)
    velocity_w = [np.zeros_like(w) for w in net.weights]
    velocity_b = [np.zeros_like(b) for b in net.biases]
    trace = np.empty(cfg.epochs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x)) if cfg.shuffle else np.arange(len(x))
        for start in range(0, len(x), cfg.minibatch_size):
            batch = order[start : start + cfg.minibatch_size]
            w_grads, b_grads = backprop_mse(net, x[batch], y[batch])
            _sgd_update(
                net, velocity_w, velocity_b, w_grads, b_grads,
                cfg.learning_rate, cfg.momentum, cfg.l2_penalty,
            )
        loss = mse_loss(net, x, y)
        if not np.isfinite(loss):
            raise DivergenceError(
                f"non-finite loss after epoch {epoch}", layer=None
            )
        trace[epoch] = loss
    if not net.all_finite():
        raise DivergenceError("non-finite parameters after training", layer=None)
    return net, trace


def ogd_step(
    net: DenseNetwork, x: np.ndarray, y: np.ndarray, cfg: OgdConfig
) -> np.ndarray:
    """One online step: predict, then apply a single full-gradient update.

    The returned prediction is computed before the update and therefore
    never depends on the target. Mutates ``net`` in place.
    """
    prediction = predict(net, x).copy()
    w_grads, b_grads = backprop_mse(net, x, y)
    for i in range(len(net.weights)):
        net.weights[i] -= cfg.learning_rate * w_grads[i]
        net.biases[i] -= cfg.learning_rate * b_grads[i]
    return prediction


# ---------------------------------------------------------------------------
# JSON persistence (round-trips bit-exactly: repr-precision floats)


def network_to_dict(net: DenseNetwork) -> dict:
    return {
        "layer_sizes": net.layer_sizes,
        "activations": net.activations,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def network_from_dict(payload: dict) -> DenseNetwork:
    return DenseNetwork(
        layer_sizes=list(payload["layer_sizes"]),
        weights=[np.array(w, dtype=float) for w in payload["weights"]],
        biases=[np.array(b, dtype=float) for b in payload["biases"]],
        activations=list(payload["activations"]),
    )


def save_network(net: DenseNetwork, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net)))


def load_network(path) -> DenseNetwork:
    return network_from_dict(json.loads(Path(path).read_text()))
