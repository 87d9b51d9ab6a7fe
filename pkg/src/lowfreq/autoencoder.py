"""Stacked autoencoders: unsupervised feature compression of the input matrix.

An autoencoder is built from an encoder size chain (input width down to the
bottleneck) mirrored by an untied decoder, trained input->input on the
training rows only, and then frozen: downstream prediction consumes the
bottleneck activations. Models are ranked by training reconstruction MSE.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .market_data import AggregatedDataset
from .neural import (
    DenseNetwork,
    DivergenceError,
    SgdConfig,
    forward,
    he_adjusted_init,
    mse_loss,
    network_from_dict,
    network_to_dict,
    train_sgd,
)


class SelectionError(ValueError):
    """No usable model to select from (every candidate diverged)."""


@dataclass(frozen=True)
class SaeSpec:
    """Encoder size chain (input width first, bottleneck last) plus training setup."""

    encoder_sizes: tuple[int, ...]
    activation: str = "sigmoid"
    sgd: SgdConfig = None

    def __post_init__(self):
        object.__setattr__(
            self, "encoder_sizes", tuple(int(s) for s in self.encoder_sizes)
        )
        if len(self.encoder_sizes) < 2:
            raise ValueError("encoder needs an input size and a bottleneck")
        if self.encoder_sizes[-1] < 1:
            raise ValueError("bottleneck must be >= 1")
        if self.sgd is None:
            raise ValueError("sgd config required")

    @property
    def bottleneck(self) -> int:
        return self.encoder_sizes[-1]


@dataclass
class SaeModel:
    network: DenseNetwork  # encoder plus mirrored decoder
    training_mse: float
    spec: SaeSpec

    @property
    def failed(self) -> bool:
        return not math.isfinite(self.training_mse)

    @property
    def n_encoder_layers(self) -> int:
        return len(self.spec.encoder_sizes) - 1


def _autoencoder_layout(spec: SaeSpec) -> tuple[list[int], list[str]]:
    enc = list(spec.encoder_sizes)
    sizes = enc + enc[-2::-1]
    # sigmoid reconstructions suit [0,1]-scaled data; otherwise end linear
    out_act = "sigmoid" if spec.activation == "sigmoid" else "linear"
    activations = [spec.activation] * (len(sizes) - 2) + [out_act]
    return sizes, activations


def train_sae(ds: AggregatedDataset, spec: SaeSpec) -> SaeModel:
    """Train input->input on the training rows; prediction rows are never read.

    A diverging run yields a model with infinite MSE so selection skips it
    instead of aborting a wider sweep.
    """
    if spec.encoder_sizes[0] != ds.n_inputs:
        raise ValueError(
            f"encoder expects width {spec.encoder_sizes[0]}, dataset has {ds.n_inputs}"
        )
    sizes, activations = _autoencoder_layout(spec)
    net = he_adjusted_init(sizes, rng_seed=spec.sgd.rng_seed, activations=activations)
    train = ds.inputs[: ds.split_index]
    try:
        trained, _ = train_sgd(net, train, train, spec.sgd)
    except DivergenceError:
        return SaeModel(network=net, training_mse=math.inf, spec=spec)
    return SaeModel(
        network=trained, training_mse=mse_loss(trained, train, train), spec=spec
    )


def select_best(models: list[SaeModel], k: int = 1) -> list[SaeModel]:
    """The k models with the smallest training MSE.

    Ties prefer the smaller bottleneck, then earlier creation order; failed
    models are excluded, and asking for more models than survived returns
    the survivors.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    survivors = [(m.training_mse, m.spec.bottleneck, i, m)
                 for i, m in enumerate(models) if not m.failed]
    if not survivors:
        raise SelectionError(f"all {len(models)} models diverged")
    survivors.sort(key=lambda item: item[:3])
    return [m for *_, m in survivors[:k]]


def encoder_forward(model: SaeModel, x: np.ndarray) -> np.ndarray:
    """Bottleneck activations for ``x`` (1-D sample or 2-D batch)."""
    return forward(model.network, x)[model.n_encoder_layers]


def encode(model: SaeModel, ds: AggregatedDataset) -> AggregatedDataset:
    """Replace dataset inputs with bottleneck activations; everything else
    (targets, anchors, split) is untouched."""
    if ds.n_inputs != model.spec.encoder_sizes[0]:
        raise ValueError(
            f"model encodes width {model.spec.encoder_sizes[0]}, "
            f"dataset has {ds.n_inputs}"
        )
    return replace(ds, inputs=encoder_forward(model, ds.inputs))


# ---------------------------------------------------------------------------
# persistence


def model_to_dict(model: SaeModel) -> dict:
    return {
        **network_to_dict(model.network),
        "training_mse": model.training_mse,
        "encoder_sizes": list(model.spec.encoder_sizes),
        "activation": model.spec.activation,
        "sgd": {
            "learning_rate": model.spec.sgd.learning_rate,
            "epochs": model.spec.sgd.epochs,
            "minibatch_size": model.spec.sgd.minibatch_size,
            "l2_penalty": model.spec.sgd.l2_penalty,
            "momentum": model.spec.sgd.momentum,
            "rng_seed": model.spec.sgd.rng_seed,
            "shuffle": model.spec.sgd.shuffle,
        },
    }


def model_from_dict(payload: dict) -> SaeModel:
    spec = SaeSpec(
        encoder_sizes=tuple(payload["encoder_sizes"]),
        activation=payload["activation"],
        sgd=SgdConfig(**payload["sgd"]),
    )
    mse = payload["training_mse"]
    return SaeModel(
        network=network_from_dict(payload),
        training_mse=math.inf if mse is None else float(mse),
        spec=spec,
    )


def save_model(model: SaeModel, path) -> None:
    payload = model_to_dict(model)
    if not math.isfinite(payload["training_mse"]):
        payload["training_mse"] = None  # JSON has no inf
    Path(path).write_text(json.dumps(payload))


def load_model(path) -> SaeModel:
    return model_from_dict(json.loads(Path(path).read_text()))
