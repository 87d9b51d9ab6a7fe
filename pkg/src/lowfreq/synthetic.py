"""Synthetic price generators for demos and calibration tests."""
from __future__ import annotations

import numpy as np
import pandas as pd

from .market_data import PriceSeries


def correlated_walk(
    n_assets: int = 4,
    n_days: int = 1300,
    seed: int = 0,
    correlation: float = 0.3,
    daily_vol: float = 0.01,
    drift: float = 0.0002,
    momentum: float = 0.25,
    momentum_window: int = 5,
    regime_start: float = 0.5,
    start_price: float = 100.0,
) -> list[PriceSeries]:
    """Correlated random-walk closing prices with an injected momentum regime.

    Daily log returns share a common factor (pairwise correlation
    ``correlation``); from day ``regime_start * n_days`` onward each asset
    additionally feeds back ``momentum`` times its own trailing mean return,
    giving the online learner a structure shift to adapt to.
    """
    if not 0.0 <= correlation < 1.0:
        raise ValueError("correlation must be in [0, 1)")
    rng = np.random.default_rng(seed)
    common = rng.standard_normal(n_days)
    own = rng.standard_normal((n_days, n_assets))
    shocks = daily_vol * (
        np.sqrt(correlation) * common[:, None] + np.sqrt(1.0 - correlation) * own
    )

    returns = np.empty((n_days, n_assets))
    switch = int(regime_start * n_days)
    for t in range(n_days):
        r = drift + shocks[t]
        if t >= switch and t >= momentum_window:
            trailing = returns[t - momentum_window : t].mean(axis=0)
            r = r + momentum * trailing
        returns[t] = r

    log_prices = np.log(start_price) + np.cumsum(returns, axis=0)
    prices = np.exp(log_prices)
    dates = pd.bdate_range("2010-01-04", periods=n_days).to_numpy(
        dtype="datetime64[D]"
    )
    return [
        PriceSeries(asset_id=f"A{i + 1}", dates=dates, prices=prices[:, i])
        for i in range(n_assets)
    ]


def planted_sharpe_matrix(
    t: int, n_noise: int, seed: int, planted_sharpe: float | None = None,
    daily_vol: float = 0.01,
) -> np.ndarray:
    """i.i.d. Gaussian noise return columns, optionally plus one column with
    a fixed per-period Sharpe appended last."""
    rng = np.random.default_rng(seed)
    cols = [rng.normal(0.0, daily_vol, size=(t, n_noise))]
    if planted_sharpe is not None:
        cols.append(
            rng.normal(planted_sharpe * daily_vol, daily_vol, size=(t, 1))
        )
    return np.hstack(cols)


def grouped_returns(
    t: int,
    group_sizes: list[int],
    intra_correlation: float = 0.9,
    seed: int = 0,
    daily_vol: float = 0.01,
) -> tuple[np.ndarray, np.ndarray]:
    """Return columns with block correlation structure: ``intra_correlation``
    within each group, zero across groups. Also returns the group label per
    column."""
    rng = np.random.default_rng(seed)
    cols, labels = [], []
    for g, size in enumerate(group_sizes):
        factor = rng.standard_normal((t, 1))
        noise = rng.standard_normal((t, size))
        cols.append(
            daily_vol
            * (
                np.sqrt(intra_correlation) * factor
                + np.sqrt(1.0 - intra_correlation) * noise
            )
        )
        labels.extend([g] * size)
    return np.hstack(cols), np.array(labels)
