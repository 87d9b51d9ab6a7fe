"""Supervised prediction: batch SGD on encoded training rows, then a strictly
sequential online pass over the prediction rows.

The online pass emulates live operation: each row is predicted with the
current weights, the scaled output is inverted back to a price level, and
only afterwards is a single gradient step taken. By default that step uses
the target that has just matured (the forward sum of ``h`` days ago), so no
update ever consumes information that would still be unknown in production.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .market_data import AggregatedDataset, ScalerParams, invert_scaler
from .neural import (
    DenseNetwork,
    DivergenceError,
    OgdConfig,
    SgdConfig,
    he_adjusted_init,
    ogd_step,
    predict,
    train_sgd,
)


@dataclass(frozen=True)
class PredictorConfig:
    hidden_sizes: tuple[int, ...]
    activation: str
    sgd: SgdConfig
    ogd: OgdConfig
    training_fraction_used: float = 1.0
    # None -> update with the target matured h days earlier (live causality);
    # 0 -> update immediately on each row's own target
    ogd_target_lag: int | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "hidden_sizes", tuple(int(s) for s in self.hidden_sizes)
        )
        if not 0.0 < self.training_fraction_used <= 1.0:
            raise ValueError("training_fraction_used must be in (0, 1]")
        if self.ogd_target_lag is not None and self.ogd_target_lag < 0:
            raise ValueError("ogd_target_lag must be >= 0")


@dataclass
class PredictionRun:
    """One online pass: per-(row, asset) predictions plus bookkeeping.

    Every matrix is (n_steps, n_assets); ``row_times`` indexes back into the
    original price series. ``failed`` marks a run whose network diverged
    mid-stream; records made before the failure are retained.
    """

    row_times: np.ndarray
    asset_ids: list[str]
    horizon: int
    pred_logsum: np.ndarray
    pred_price: np.ndarray
    price_t: np.ndarray
    price_t_plus_h: np.ndarray
    is_mse_trace: np.ndarray
    failed: bool = False
    failed_at: int | None = None

    @property
    def n_steps(self) -> int:
        return len(self.row_times)


def failed_run(ds: AggregatedDataset, is_mse_trace=None) -> PredictionRun:
    """Placeholder for a configuration whose batch phase diverged: no records."""
    empty = np.empty((0, ds.n_assets))
    return PredictionRun(
        row_times=np.empty(0, dtype=int),
        asset_ids=list(ds.asset_ids),
        horizon=ds.ht.forecast_horizon,
        pred_logsum=empty,
        pred_price=empty.copy(),
        price_t=empty.copy(),
        price_t_plus_h=empty.copy(),
        is_mse_trace=np.empty(0) if is_mse_trace is None else np.asarray(is_mse_trace),
        failed=True,
        failed_at=0,
    )


def select_training_rows(split_index: int, fraction: float) -> slice:
    """Most recent ``fraction`` of the training rows; the earliest are dropped."""
    n_used = max(1, math.floor(split_index * fraction))
    return slice(split_index - n_used, split_index)


def build_network(ds: AggregatedDataset, cfg: PredictorConfig) -> DenseNetwork:
    sizes = [ds.n_inputs, *cfg.hidden_sizes, ds.n_assets]
    out_act = "sigmoid" if cfg.activation == "sigmoid" else "linear"
    activations = [cfg.activation] * (len(sizes) - 2) + [out_act]
    return he_adjusted_init(sizes, rng_seed=cfg.sgd.rng_seed, activations=activations)


def train_batch(
    ds: AggregatedDataset, cfg: PredictorConfig
) -> tuple[DenseNetwork, np.ndarray]:
    """Batch-train the prediction network on the (possibly truncated) training rows.

    ``training_fraction_used`` < 1 keeps only the most recent rows; epoch
    counts are deliberately not rescaled to compensate. Zero epochs returns
    the freshly initialized network untouched.
    """
    rows = select_training_rows(ds.split_index, cfg.training_fraction_used)
    net = build_network(ds, cfg)
    return train_sgd(net, ds.inputs[rows], ds.targets[rows], cfg.sgd)


def run_online(
    net: DenseNetwork,
    ds: AggregatedDataset,
    cfg: PredictorConfig,
    scaler: ScalerParams,
    is_mse_trace=None,
) -> PredictionRun:
    """Sequential predict-then-update pass over the prediction rows.

    ``ds`` must be the scaled, encoded dataset whose target columns the
    ``scaler`` was fitted on. Divergence mid-run marks the run failed at
    that step and keeps all earlier records.
    """
    h = ds.ht.forecast_horizon
    lag = h if cfg.ogd_target_lag is None else cfg.ogd_target_lag
    target_cols = np.arange(scaler.n_inputs, scaler.n_inputs + ds.n_assets)

    x = ds.inputs[ds.split_index :]
    y = ds.targets[ds.split_index :]
    anchors = ds.anchor_prices[ds.split_index :]
    n_steps = len(x)

    pred_logsum = np.full((n_steps, ds.n_assets), np.nan)
    pred_price = np.full((n_steps, ds.n_assets), np.nan)
    realized = anchors * np.exp(invert_scaler(y, scaler, target_cols))

    net = net.copy()
    failed = False
    failed_at = None
    for i in range(n_steps):
        out = predict(net, x[i])
        with np.errstate(over="ignore"):
            logsum = invert_scaler(out, scaler, target_cols)
            price = anchors[i] * np.exp(logsum)
        if not (np.all(np.isfinite(logsum)) and np.all(np.isfinite(price))):
            failed, failed_at = True, i
            break
        pred_logsum[i] = logsum
        pred_price[i] = price
        j = i - lag
        if j >= 0 and cfg.ogd.learning_rate > 0.0:
            try:
                ogd_step(net, x[j], y[j], cfg.ogd)
            except DivergenceError:
                failed, failed_at = True, i
                break
            if not net.all_finite():
                failed, failed_at = True, i
                break

    kept = failed_at if failed else n_steps
    return PredictionRun(
        row_times=ds.row_times[ds.split_index : ds.split_index + kept],
        asset_ids=list(ds.asset_ids),
        horizon=h,
        pred_logsum=pred_logsum[:kept],
        pred_price=pred_price[:kept],
        price_t=anchors[:kept].copy(),
        price_t_plus_h=realized[:kept],
        is_mse_trace=np.empty(0) if is_mse_trace is None else np.asarray(is_mse_trace),
        failed=failed,
        failed_at=failed_at,
    )


# ---------------------------------------------------------------------------
# persistence: flat CSV, one record per (row, asset), plus a metadata sidecar


def run_to_frame(run: PredictionRun) -> pd.DataFrame:
    n, a = run.pred_logsum.shape
    return pd.DataFrame(
        {
            "t": np.repeat(run.row_times, a),
            "asset": np.tile(run.asset_ids, n),
            "pred_logsum": run.pred_logsum.ravel(),
            "pred_price": run.pred_price.ravel(),
            "price_t": run.price_t.ravel(),
            "price_t_plus_h": run.price_t_plus_h.ravel(),
        }
    )


def save_run(run: PredictionRun, directory, metadata: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    run_to_frame(run).to_csv(directory / "run.csv", index=False)
    payload = {
        "failed": run.failed,
        "failed_at": run.failed_at,
        "horizon": run.horizon,
        "assets": run.asset_ids,
        "is_mse_trace": run.is_mse_trace.tolist(),
    }
    if metadata:
        payload.update(metadata)
    (directory / "run.json").write_text(json.dumps(payload, indent=2))


def load_run(directory) -> PredictionRun:
    directory = Path(directory)
    meta = json.loads((directory / "run.json").read_text())
    frame = pd.read_csv(directory / "run.csv", float_precision="round_trip")
    assets = meta["assets"]
    a = len(assets)
    n = len(frame) // a if a else 0
    shaped = lambda col: frame[col].to_numpy().reshape(n, a)
    return PredictionRun(
        row_times=frame["t"].to_numpy(dtype=int)[::a] if a else np.empty(0, dtype=int),
        asset_ids=list(assets),
        horizon=meta["horizon"],
        pred_logsum=shaped("pred_logsum"),
        pred_price=shaped("pred_price"),
        price_t=shaped("price_t"),
        price_t_plus_h=shaped("price_t_plus_h"),
        is_mse_trace=np.array(meta["is_mse_trace"]),
        failed=meta["failed"],
        failed_at=meta["failed_at"],
    )
