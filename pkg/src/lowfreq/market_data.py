"""Closing-price ingestion, log-fluctuation horizon aggregation, and scaling.

The data pipeline turns raw closing prices into a supervised dataset:
daily log differences are summed over backward-looking windows (features)
and one forward-looking window (target), then min-max scaled with bounds
fitted on the training portion only. Every transform is invertible so a
scaled model output can be mapped back to an actual price level.

Window convention: a d-day backward aggregation at time t is the sum of
the d most recent log differences ending at t, i.e. ln(P_t) - ln(P_{t-d});
the forward aggregation is ln(P_{t+d}) - ln(P_t). A 1-day backward window
is therefore exactly the single daily fluctuation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd


class AlignmentError(ValueError):
    """Raised when input series do not share a common date index."""


@dataclass(frozen=True)
class PriceSeries:
    """Dated closing prices for a single asset."""

    asset_id: str
    dates: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates)
        prices = np.asarray(self.prices, dtype=float)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "prices", prices)
        if len(prices) != len(dates):
            raise ValueError(
                f"{self.asset_id}: {len(dates)} dates but {len(prices)} prices"
            )
        if len(prices) < 2:
            raise ValueError(f"{self.asset_id}: need at least 2 prices")
        bad = np.flatnonzero(~(prices > 0.0))
        if bad.size:
            raise ValueError(
                f"{self.asset_id}: non-positive price {prices[bad[0]]} at index {bad[0]}"
            )
        if np.any(dates[1:] <= dates[:-1]):
            raise ValueError(f"{self.asset_id}: dates must be strictly increasing")

    def __len__(self) -> int:
        return len(self.prices)


@dataclass(frozen=True)
class HorizonTuple:
    """Backward aggregation windows plus the forward prediction window, in days."""

    horizons: tuple[int, ...]
    forecast_horizon: int = 5

    def __post_init__(self):
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))
        if not self.horizons:
            raise ValueError("need at least one horizon")
        if any(h < 1 for h in self.horizons):
            raise ValueError(f"horizons must be positive: {self.horizons}")
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise ValueError(f"horizons must be strictly increasing: {self.horizons}")
        if self.forecast_horizon < 1:
            raise ValueError("forecast_horizon must be >= 1")


@dataclass
class AggregatedDataset:
    """Row-aligned feature/target matrices of horizon-summed log fluctuations.

    ``inputs`` has one column per (asset, horizon) pair, asset-major;
    ``targets`` one column per asset holding the forward sum over the
    forecast horizon; ``anchor_prices`` the price P_t each row's target is
    anchored to. Rows near the series boundaries that lack a full backward
    or forward window are dropped. ``row_times`` maps each row back to its
    position in the original price series.
    """

    inputs: np.ndarray
    targets: np.ndarray
    anchor_prices: np.ndarray
    split_index: int
    ht: HorizonTuple
    asset_ids: list[str]
    row_times: np.ndarray
    dates: np.ndarray = field(default=None, repr=False)

    @property
    def n_rows(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_assets(self) -> int:
        return self.targets.shape[1]

    def input_column_names(self) -> list[str]:
        return [f"{a}_h{d}" for a in self.asset_ids for d in self.ht.horizons]


@dataclass(frozen=True)
class ScalerParams:
    """Per-column min-max bounds over ``[inputs | targets]``, training rows only."""

    mins: np.ndarray
    maxs: np.ndarray
    target_range: tuple[float, float] = (0.0, 1.0)
    n_inputs: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mins", np.asarray(self.mins, dtype=float))
        object.__setattr__(self, "maxs", np.asarray(self.maxs, dtype=float))
        if self.mins.shape != self.maxs.shape:
            raise ValueError("mins and maxs must have the same shape")
        if np.any(self.maxs < self.mins):
            raise ValueError("per-column max must be >= min")
        lo, hi = self.target_range
        if not hi > lo:
            raise ValueError(f"degenerate target range {self.target_range}")


def log_fluctuations(series: PriceSeries) -> np.ndarray:
    """Daily log differences: delta[i] = ln(p[i+1]) - ln(p[i]), length n-1."""
    return np.diff(np.log(series.prices))


def aggregate(deltas: np.ndarray, d: int, t: int, direction: str) -> float:
    """Sum ``d`` log differences around price position ``t``.

    ``backward`` sums the d most recent differences ending at t (requires
    t >= d); ``forward`` sums the d differences after t, which telescopes
    to ln(P_{t+d} / P_t) (requires t + d <= len(prices) - 1).
    """
    deltas = np.asarray(deltas)
    if d < 1:
        raise ValueError(f"window must be positive, got {d}")
    if direction == "backward":
        if t - d < 0 or t > len(deltas):
            raise IndexError(f"no full {d}-day backward window at t={t}")
        return float(np.sum(deltas[t - d : t]))
    if direction == "forward":
        if t < 0 or t + d > len(deltas):
            raise IndexError(f"no full {d}-day forward window at t={t}")
        return float(np.sum(deltas[t : t + d]))
    raise ValueError(f"direction must be 'backward' or 'forward', got {direction!r}")


def build_dataset(
    series_list: list[PriceSeries],
    ht: HorizonTuple,
    split_fraction: float = 0.6,
) -> AggregatedDataset:
    """Assemble the aggregated feature/target matrices from aligned price series.

    All series must share a common date index. Only rows with a complete
    backward window for every horizon and a complete forward window for
    the forecast horizon are kept; ``split_index = floor(split_fraction * T)``
    separates the training rows from the prediction rows.
    """
    if not series_list:
        raise ValueError("need at least one price series")
    if not 0.0 < split_fraction < 1.0:
        raise ValueError(f"split_fraction must be in (0, 1), got {split_fraction}")
    ref = series_list[0]
    for s in series_list[1:]:
        if len(s.dates) != len(ref.dates) or np.any(s.dates != ref.dates):
            raise AlignmentError(
                f"date index of {s.asset_id} does not match {ref.asset_id}"
            )

    n = len(ref)
    max_h = max(ht.horizons)
    fh = ht.forecast_horizon
    t_first, t_last = max_h, n - 1 - fh
    if t_last < t_first:
        raise ValueError(
            f"series of length {n} too short for horizons {ht.horizons} "
            f"and forecast horizon {fh}"
        )
    times = np.arange(t_first, t_last + 1)
    n_rows = len(times)

    inputs = np.empty((n_rows, len(series_list) * len(ht.horizons)))
    targets = np.empty((n_rows, len(series_list)))
    anchors = np.empty((n_rows, len(series_list)))
    for a, s in enumerate(series_list):
        deltas = log_fluctuations(s)
        # cum[j] = sum of deltas[:j]; window sums become two lookups
        cum = np.concatenate(([0.0], np.cumsum(deltas)))
        for j, d in enumerate(ht.horizons):
            inputs[:, a * len(ht.horizons) + j] = cum[times] - cum[times - d]
        targets[:, a] = cum[times + fh] - cum[times]
        anchors[:, a] = s.prices[times]

    split_index = int(np.floor(split_fraction * n_rows))
    if not 0 < split_index < n_rows:
        raise ValueError(
            f"split_fraction {split_fraction} leaves an empty portion "
            f"(T={n_rows}, split_index={split_index})"
        )
    return AggregatedDataset(
        inputs=inputs,
        targets=targets,
        anchor_prices=anchors,
        split_index=split_index,
        ht=ht,
        asset_ids=[s.asset_id for s in series_list],
        row_times=times,
        dates=ref.dates[times],
    )


def fit_scaler(ds: AggregatedDataset, target_range=(0.0, 1.0)) -> ScalerParams:
    """Fit per-column min-max bounds on the training rows only."""
    train = np.hstack([ds.inputs, ds.targets])[: ds.split_index]
    return ScalerParams(
        mins=train.min(axis=0),
        maxs=train.max(axis=0),
        target_range=tuple(target_range),
        n_inputs=ds.n_inputs,
    )


def _span(params: ScalerParams, cols) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mins = params.mins[cols]
    span = params.maxs[cols] - mins
    return mins, span, span == 0.0


def apply_scaler(values: np.ndarray, params: ScalerParams, columns=None) -> np.ndarray:
    """Map columns onto ``target_range``; values outside the fitted bounds
    extrapolate linearly (no clamping). Degenerate columns map to the
    range midpoint."""
    values = np.asarray(values, dtype=float)
    cols = np.arange(len(params.mins)) if columns is None else np.asarray(columns)
    mins, span, flat = _span(params, cols)
    lo, hi = params.target_range
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lo + (values - mins) * (hi - lo) / span
    return np.where(flat, 0.5 * (lo + hi), out)


def invert_scaler(values: np.ndarray, params: ScalerParams, columns=None) -> np.ndarray:
    """Inverse of :func:`apply_scaler`; degenerate columns restore the constant."""
    values = np.asarray(values, dtype=float)
    cols = np.arange(len(params.mins)) if columns is None else np.asarray(columns)
    mins, span, flat = _span(params, cols)
    lo, hi = params.target_range
    out = mins + (values - lo) * span / (hi - lo)
    return np.where(flat, mins, out)


def scale_dataset(ds: AggregatedDataset, params: ScalerParams) -> AggregatedDataset:
    """Return a copy of ``ds`` with inputs and targets scaled."""
    n_in = ds.n_inputs
    if len(params.mins) != n_in + ds.n_assets:
        raise ValueError(
            f"scaler covers {len(params.mins)} columns, dataset has "
            f"{n_in + ds.n_assets}"
        )
    return replace(
        ds,
        inputs=apply_scaler(ds.inputs, params, np.arange(n_in)),
        targets=apply_scaler(
            ds.targets, params, np.arange(n_in, n_in + ds.n_assets)
        ),
    )


def reconstruct_price(
    predicted_scaled: float,
    col: int,
    anchor_price: float,
    params: ScalerParams,
) -> float:
    """Undo scaling and log-differencing: anchor * exp(inverse-scaled log sum).

    ``col`` is the absolute scaler column of the predicted target
    (``params.n_inputs + asset_index``).
    """
    if anchor_price <= 0:
        raise ValueError(f"anchor price must be positive, got {anchor_price}")
    logsum = invert_scaler(np.array([predicted_scaled]), params, np.array([col]))[0]
    return float(anchor_price * np.exp(logsum))


# ---------------------------------------------------------------------------
# CSV / JSON interfaces


def load_prices_csv(path) -> list[PriceSeries]:
    """Read ``date,ASSET1,ASSET2,...`` closing prices; rows with missing
    values are rejected rather than interpolated."""
    frame = pd.read_csv(path, float_precision="round_trip")
    if frame.columns[0] != "date":
        raise ValueError(f"first column must be 'date', got {frame.columns[0]!r}")
    if frame.shape[1] < 2:
        raise ValueError("no asset columns found")
    if frame.isna().any().any():
        n_bad = int(frame.isna().any(axis=1).sum())
        raise ValueError(f"{n_bad} rows contain missing values; refusing to impute")
    dates = pd.to_datetime(frame["date"]).to_numpy(dtype="datetime64[D]")
    return [
        PriceSeries(asset_id=c, dates=dates, prices=frame[c].to_numpy(dtype=float))
        for c in frame.columns[1:]
    ]


def save_prices_csv(series_list: list[PriceSeries], path) -> None:
    frame = pd.DataFrame({"date": series_list[0].dates})
    for s in series_list:
        frame[s.asset_id] = s.prices
    frame.to_csv(path, index=False)


def save_dataset(ds: AggregatedDataset, params: ScalerParams, directory) -> None:
    """Write the (unscaled) dataset snapshot CSV plus its JSON sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"t": ds.row_times})
    for j, name in enumerate(ds.input_column_names()):
        frame[name] = ds.inputs[:, j]
    for a, asset in enumerate(ds.asset_ids):
        frame[f"{asset}_target"] = ds.targets[:, a]
    for a, asset in enumerate(ds.asset_ids):
        frame[f"{asset}_anchor"] = ds.anchor_prices[:, a]
    frame.to_csv(directory / "dataset.csv", index=False)
    sidecar = {
        "horizons": list(ds.ht.horizons),
        "forecast_horizon": ds.ht.forecast_horizon,
        "split_index": ds.split_index,
        "mins": params.mins.tolist(),
        "maxs": params.maxs.tolist(),
        "range": list(params.target_range),
        "assets": ds.asset_ids,
    }
    (directory / "dataset.json").write_text(json.dumps(sidecar, indent=2))


def load_dataset(directory) -> tuple[AggregatedDataset, ScalerParams]:
    """Inverse of :func:`save_dataset`."""
    directory = Path(directory)
    sidecar = json.loads((directory / "dataset.json").read_text())
    frame = pd.read_csv(directory / "dataset.csv", float_precision="round_trip")
    ht = HorizonTuple(tuple(sidecar["horizons"]), sidecar["forecast_horizon"])
    assets = sidecar["assets"]
    input_cols = [f"{a}_h{d}" for a in assets for d in ht.horizons]
    ds = AggregatedDataset(
        inputs=frame[input_cols].to_numpy(),
        targets=frame[[f"{a}_target" for a in assets]].to_numpy(),
        anchor_prices=frame[[f"{a}_anchor" for a in assets]].to_numpy(),
        split_index=sidecar["split_index"],
        ht=ht,
        asset_ids=list(assets),
        row_times=frame["t"].to_numpy(dtype=int),
    )
    params = ScalerParams(
        mins=np.array(sidecar["mins"]),
        maxs=np.array(sidecar["maxs"]),
        target_range=tuple(sidecar["range"]),
        n_inputs=ds.n_inputs,
    )
    return ds, params
