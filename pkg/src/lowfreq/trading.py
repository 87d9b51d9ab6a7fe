"""Money management simulation: an arithmetic long strategy over predictions.

A unit of notional is bought in any asset whose predicted price exceeds the
current price; the position is closed at the prediction horizon regardless
of outcome. Costs are a fixed transaction fraction per round trip plus a
capital charge accrued pro-rata over the holding period. The perfect-
foresight benchmark applies the same mechanics to realized future prices
and only takes trades that are profitable net of costs, which makes it a
pointwise upper bound on any prediction-driven ledger under the same cost
model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .market_data import PriceSeries
from .predictor import PredictionRun


@dataclass(frozen=True)
class CostModel:
    capital_rate: float = 0.10  # annual, accrued over the holding period
    transaction_rate: float = 0.0045  # per round trip, on entry notional
    days_per_year: int = 252

    def __post_init__(self):
        if self.capital_rate < 0 or self.transaction_rate < 0:
            raise ValueError("cost rates must be >= 0")
        if self.days_per_year < 1:
            raise ValueError("days_per_year must be >= 1")

    def round_trip_cost(self, holding_days: int) -> float:
        return self.transaction_rate + self.capital_rate * holding_days / self.days_per_year


@dataclass(frozen=True)
class Trade:
    asset: str
    entry_t: int
    exit_t: int
    entry_price: float
    exit_price: float
    gross: float
    cost: float
    net: float


@dataclass
class TradeLedger:
    """Executed trades and the daily P&L they induce.

    ``daily_pnl[i]`` is the net P&L booked on day ``t0 + i`` (trades book on
    their exit day); it sums to ``total_pnl``.
    """

    trades: list[Trade]
    daily_pnl: np.ndarray
    t0: int
    total_pnl: float

    @property
    def n_trades(self) -> int:
        return len(self.trades)


def _empty_ledger(t0: int = 0) -> TradeLedger:
    return TradeLedger(trades=[], daily_pnl=np.zeros(0), t0=t0, total_pnl=0.0)


def _build_ledger(trades: list[Trade], t0: int, t_end: int) -> TradeLedger:
    daily = np.zeros(t_end - t0 + 1)
    for tr in trades:
        daily[tr.exit_t - t0] += tr.net
    return TradeLedger(
        trades=trades, daily_pnl=daily, t0=t0, total_pnl=float(daily.sum())
    )


def simulate(run: PredictionRun, costs: CostModel) -> TradeLedger:
    """Trade the prediction signal with unit notional per (day, asset) signal.

    Per trade, net P&L = P_exit/P_entry - 1 - transaction - capital accrual;
    a failed run trades nothing.
    """
    if run.failed or run.n_steps == 0:
        return _empty_ledger()
    h = run.horizon
    cost = costs.round_trip_cost(h)
    trades = []
    for i, t in enumerate(run.row_times):
        for a, asset in enumerate(run.asset_ids):
            exit_price = run.price_t_plus_h[i, a]
            if not np.isfinite(exit_price):
                continue  # no realized exit at the end of the data
            if run.pred_price[i, a] > run.price_t[i, a]:
                gross = exit_price / run.price_t[i, a] - 1.0
                trades.append(
                    Trade(
                        asset=asset,
                        entry_t=int(t),
                        exit_t=int(t) + h,
                        entry_price=float(run.price_t[i, a]),
                        exit_price=float(exit_price),
                        gross=float(gross),
                        cost=cost,
                        net=float(gross - cost),
                    )
                )
    t0 = int(run.row_times[0])
    return _build_ledger(trades, t0, int(run.row_times[-1]) + h)


def benchmark(
    series_list: list[PriceSeries],
    horizon: int,
    costs: CostModel,
    entry_times=None,
) -> TradeLedger:
    """Perfect-foresight upper bound: take exactly the trades whose realized
    return beats the round-trip cost.

    ``entry_times`` restricts entries to the given price positions (default:
    every position with a full forward window).
    """
    n = len(series_list[0])
    cost = costs.round_trip_cost(horizon)
    if entry_times is None:
        entry_times = np.arange(n - horizon)
    entry_times = np.asarray(entry_times, dtype=int)
    if len(entry_times) == 0:
        return _empty_ledger()
    if entry_times.max() + horizon > n - 1:
        raise ValueError("entry time lacks a full forward window")
    trades = []
    for t in entry_times:
        for s in series_list:
            gross = s.prices[t + horizon] / s.prices[t] - 1.0
            if gross - cost > 0.0:
                trades.append(
                    Trade(
                        asset=s.asset_id,
                        entry_t=int(t),
                        exit_t=int(t) + horizon,
                        entry_price=float(s.prices[t]),
                        exit_price=float(s.prices[t + horizon]),
                        gross=float(gross),
                        cost=cost,
                        net=float(gross - cost),
                    )
                )
    return _build_ledger(trades, int(entry_times[0]), int(entry_times[-1]) + horizon)


def returns_series(
    ledger: TradeLedger, length: int, capital_base: float, offset: int = 0
) -> np.ndarray:
    """Daily P&L scaled by ``capital_base`` on a zero-filled axis of ``length``.

    ``offset`` places ``ledger.daily_pnl[0]`` at that position, so ledgers
    from different windows can share one time axis.
    """
    if capital_base <= 0:
        raise ValueError("capital_base must be positive")
    if offset < 0 or offset + len(ledger.daily_pnl) > length:
        raise ValueError(
            f"ledger spans [{offset}, {offset + len(ledger.daily_pnl)}) "
            f"outside axis of length {length}"
        )
    out = np.zeros(length)
    out[offset : offset + len(ledger.daily_pnl)] = ledger.daily_pnl / capital_base
    return out


def peak_concurrent_notional(ledger: TradeLedger) -> float:
    """Largest simultaneously-open notional; capital is freed on exit day."""
    if not ledger.trades:
        return 0.0
    t_min = min(tr.entry_t for tr in ledger.trades)
    t_max = max(tr.exit_t for tr in ledger.trades)
    delta = np.zeros(t_max - t_min + 2)
    for tr in ledger.trades:
        delta[tr.entry_t - t_min] += 1.0
        delta[tr.exit_t - t_min] -= 1.0
    return float(np.cumsum(delta).max())


def ledger_to_frame(ledger: TradeLedger) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "asset": [tr.asset for tr in ledger.trades],
            "entry_t": [tr.entry_t for tr in ledger.trades],
            "exit_t": [tr.exit_t for tr in ledger.trades],
            "entry_px": [tr.entry_price for tr in ledger.trades],
            "exit_px": [tr.exit_price for tr in ledger.trades],
            "gross": [tr.gross for tr in ledger.trades],
            "cost": [tr.cost for tr in ledger.trades],
            "net": [tr.net for tr in ledger.trades],
        }
    )


def save_ledger(ledger: TradeLedger, path) -> None:
    ledger_to_frame(ledger).to_csv(path, index=False)


def load_ledger(path, t0: int | None = None, t_end: int | None = None) -> TradeLedger:
    frame = pd.read_csv(path, float_precision="round_trip")
    trades = [
        Trade(
            asset=str(r.asset),
            entry_t=int(r.entry_t),
            exit_t=int(r.exit_t),
            entry_price=float(r.entry_px),
            exit_price=float(r.exit_px),
            gross=float(r.gross),
            cost=float(r.cost),
            net=float(r.net),
        )
        for r in frame.itertuples()
    ]
    if not trades and (t0 is None or t_end is None):
        return _empty_ledger()
    t0 = min(tr.entry_t for tr in trades) if t0 is None else t0
    t_end = max(tr.exit_t for tr in trades) if t_end is None else t_end
    return _build_ledger(trades, t0, t_end)
