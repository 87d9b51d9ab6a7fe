import numpy as np
import pytest

from lowfreq.market_data import PriceSeries
from lowfreq.predictor import PredictionRun
from lowfreq.trading import (
    CostModel,
    benchmark,
    ledger_to_frame,
    load_ledger,
    peak_concurrent_notional,
    returns_series,
    save_ledger,
    simulate,
)

COSTS = CostModel()  # 10% p.a. capital, 0.45% transaction, 252 days


def make_run(price_t, pred_price, price_exit, horizon=5, t_start=100, assets=None):
    price_t = np.atleast_2d(np.asarray(price_t, dtype=float).T).T
    pred_price = np.atleast_2d(np.asarray(pred_price, dtype=float).T).T
    price_exit = np.atleast_2d(np.asarray(price_exit, dtype=float).T).T
    n, a = price_t.shape
    assets = assets or [f"S{i}" for i in range(a)]
    return PredictionRun(
        row_times=np.arange(t_start, t_start + n),
        asset_ids=assets,
        horizon=horizon,
        pred_logsum=np.log(pred_price / price_t),
        pred_price=pred_price,
        price_t=price_t,
        price_t_plus_h=price_exit,
        is_mse_trace=np.empty(0),
    )


def geometric_series(n, rate_per_day, start=100.0, asset="G"):
    prices = start * (1.0 + rate_per_day) ** np.arange(n)
    return PriceSeries(asset_id=asset, dates=np.arange(n), prices=prices)


# ---------------------------------------------------------------------------
# cost arithmetic


def test_round_trip_cost_from_stated_rates():
    expected = 0.0045 + 0.10 * 5 / 252
    assert COSTS.round_trip_cost(5) == pytest.approx(expected)
    assert expected == pytest.approx(0.0064841, abs=1e-7)


def test_flat_prices_cost_only_loss():
    run = make_run([100.0], [101.0], [100.0])
    ledger = simulate(run, COSTS)
    assert ledger.n_trades == 1
    assert ledger.trades[0].gross == 0.0
    assert ledger.trades[0].net == pytest.approx(-0.0064841, abs=1e-7)


def test_no_signal_no_trades():
    run = make_run([100.0, 100.0], [99.0, 100.0], [120.0, 120.0])
    ledger = simulate(run, COSTS)
    assert ledger.n_trades == 0
    assert ledger.total_pnl == 0.0


def test_ten_percent_gain_nets_stated_value():
    run = make_run([100.0], [105.0], [110.0])
    ledger = simulate(run, COSTS)
    assert ledger.trades[0].net == pytest.approx(0.0935159, abs=1e-7)


def test_zero_cost_model_net_equals_gross():
    rng = np.random.default_rng(0)
    n = 30
    price_t = 100 * np.exp(rng.normal(0, 0.02, (n, 2)).cumsum(axis=0))
    pred = price_t * rng.uniform(0.98, 1.02, (n, 2))
    exits = price_t * rng.uniform(0.97, 1.03, (n, 2))
    run = make_run(price_t, pred, exits)
    ledger = simulate(run, CostModel(capital_rate=0.0, transaction_rate=0.0))
    assert ledger.n_trades > 0
    for tr in ledger.trades:
        assert tr.net == tr.gross


# ---------------------------------------------------------------------------
# ledger bookkeeping


def test_pnl_booked_on_exit_day():
    run = make_run([100.0], [101.0], [103.0], horizon=5, t_start=40)
    ledger = simulate(run, COSTS)
    assert ledger.t0 == 40
    assert len(ledger.daily_pnl) == 6  # day 40 .. 45
    assert ledger.daily_pnl[5] == pytest.approx(ledger.total_pnl)
    assert np.all(ledger.daily_pnl[:5] == 0.0)


def test_daily_pnl_sums_to_total():
    rng = np.random.default_rng(1)
    n = 60
    price_t = 100 * np.exp(rng.normal(0, 0.02, (n, 3)).cumsum(axis=0))
    pred = price_t * rng.uniform(0.99, 1.01, (n, 3))
    exits = price_t * rng.uniform(0.95, 1.05, (n, 3))
    ledger = simulate(make_run(price_t, pred, exits), COSTS)
    assert ledger.daily_pnl.sum() == pytest.approx(ledger.total_pnl, abs=1e-9)
    assert ledger.total_pnl == pytest.approx(
        sum(tr.net for tr in ledger.trades), abs=1e-9
    )


def test_failed_run_yields_empty_ledger():
    run = make_run([100.0], [101.0], [103.0])
    run.failed = True
    ledger = simulate(run, COSTS)
    assert ledger.n_trades == 0
    assert ledger.total_pnl == 0.0


def test_missing_exit_price_skips_signal():
    run = make_run([100.0, 100.0], [101.0, 101.0], [np.nan, 103.0])
    ledger = simulate(run, COSTS)
    assert ledger.n_trades == 1
    assert ledger.trades[0].entry_t == 101


def test_ledger_invariant_to_asset_ordering():
    rng = np.random.default_rng(2)
    n = 40
    price_t = 100 * np.exp(rng.normal(0, 0.02, (n, 3)).cumsum(axis=0))
    pred = price_t * rng.uniform(0.99, 1.01, (n, 3))
    exits = price_t * rng.uniform(0.95, 1.05, (n, 3))
    run = make_run(price_t, pred, exits, assets=["A", "B", "C"])
    flipped = make_run(
        price_t[:, ::-1], pred[:, ::-1], exits[:, ::-1], assets=["C", "B", "A"]
    )
    a, b = simulate(run, COSTS), simulate(flipped, COSTS)
    assert a.total_pnl == pytest.approx(b.total_pnl, abs=1e-12)
    np.testing.assert_allclose(a.daily_pnl, b.daily_pnl, atol=1e-12)
    assert sorted((t.asset, t.entry_t) for t in a.trades) == sorted(
        (t.asset, t.entry_t) for t in b.trades
    )


# ---------------------------------------------------------------------------
# perfect-foresight benchmark


def test_benchmark_no_trades_on_falling_prices():
    falling = geometric_series(40, -0.01)
    ledger = benchmark([falling], 5, COSTS)
    assert ledger.n_trades == 0
    assert ledger.total_pnl == 0.0


def test_benchmark_on_steady_riser_closed_form():
    # +1% per 5 days: each day's trade nets 1% minus the round-trip cost
    rate = 1.01 ** (1.0 / 5.0) - 1.0
    rising = geometric_series(40, rate)
    ledger = benchmark([rising], 5, COSTS)
    assert ledger.n_trades == 35  # every day with a full window
    for tr in ledger.trades:
        assert tr.net == pytest.approx(0.01 - COSTS.round_trip_cost(5), abs=1e-9)


def test_benchmark_skips_sub_cost_gains():
    # +0.1%/5d gross is below the 0.648% round-trip cost
    rate = 1.001 ** (1.0 / 5.0) - 1.0
    ledger = benchmark([geometric_series(40, rate)], 5, COSTS)
    assert ledger.n_trades == 0


def test_benchmark_dominates_simulations():
    rng = np.random.default_rng(3)
    for trial in range(100):
        n = 50
        h = int(rng.integers(1, 8))
        prices = 100 * np.exp(rng.normal(0.0005, 0.02, n).cumsum())
        s = PriceSeries("X", np.arange(n), prices)
        entries = np.arange(n - h)
        pred = prices[:-h] * rng.uniform(0.97, 1.03, n - h)
        run = make_run(
            prices[:-h], pred, prices[h:], horizon=h, t_start=0, assets=["X"]
        )
        costs = CostModel(
            capital_rate=float(rng.uniform(0, 0.2)),
            transaction_rate=float(rng.uniform(0, 0.01)),
        )
        sim = simulate(run, costs)
        bench = benchmark([s], h, costs, entry_times=entries)
        assert bench.total_pnl >= sim.total_pnl - 1e-9


def test_benchmark_entry_times_respect_window():
    s = geometric_series(20, 0.01)
    with pytest.raises(ValueError):
        benchmark([s], 5, COSTS, entry_times=[18])


# ---------------------------------------------------------------------------
# returns series


def test_returns_series_empty_ledger_is_zero():
    ledger = simulate(make_run([100.0], [99.0], [100.0]), COSTS)
    out = returns_series(ledger, 10, capital_base=1.0)
    np.testing.assert_array_equal(out, np.zeros(10))


def test_returns_series_single_trade_day():
    ledger = simulate(make_run([100.0], [101.0], [110.0], t_start=0), COSTS)
    out = returns_series(ledger, 10, capital_base=2.0)
    assert np.count_nonzero(out) == 1
    assert out[5] == pytest.approx(ledger.total_pnl / 2.0)


def test_returns_series_sums_to_scaled_total():
    rng = np.random.default_rng(4)
    n = 30
    price_t = 100 * np.exp(rng.normal(0, 0.02, (n, 2)).cumsum(axis=0))
    pred = price_t * rng.uniform(0.99, 1.01, (n, 2))
    exits = price_t * rng.uniform(0.95, 1.05, (n, 2))
    ledger = simulate(make_run(price_t, pred, exits, t_start=0), COSTS)
    out = returns_series(ledger, 50, capital_base=4.0)
    assert out.sum() == pytest.approx(ledger.total_pnl / 4.0, abs=1e-12)


def test_returns_series_offset_and_bounds():
    ledger = simulate(make_run([100.0], [101.0], [110.0], t_start=7), COSTS)
    out = returns_series(ledger, 20, capital_base=1.0, offset=3)
    assert out[3 + 5] == pytest.approx(ledger.total_pnl)
    with pytest.raises(ValueError):
        returns_series(ledger, 5, capital_base=1.0)
    with pytest.raises(ValueError):
        returns_series(ledger, 10, capital_base=0.0)


def test_peak_concurrent_notional_counts_overlaps():
    # horizon 5, entries on days 0..3 -> 4 open positions at once
    price_t = np.full((4, 1), 100.0)
    run = make_run(price_t, price_t + 1.0, price_t + 2.0, horizon=5, t_start=0)
    ledger = simulate(run, COSTS)
    assert peak_concurrent_notional(ledger) == 4.0
    assert peak_concurrent_notional(simulate(make_run([100.0], [99.0], [100.0]), COSTS)) == 0.0


def test_exit_frees_capital_same_day():
    # horizon 1, back-to-back trades never overlap
    price_t = np.full((3, 1), 100.0)
    run = make_run(price_t, price_t + 1.0, price_t, horizon=1, t_start=0)
    ledger = simulate(run, COSTS)
    assert peak_concurrent_notional(ledger) == 1.0


# ---------------------------------------------------------------------------
# persistence


def test_ledger_csv_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    n = 20
    price_t = 100 * np.exp(rng.normal(0, 0.02, (n, 2)).cumsum(axis=0))
    pred = price_t * rng.uniform(0.99, 1.01, (n, 2))
    exits = price_t * rng.uniform(0.95, 1.05, (n, 2))
    ledger = simulate(make_run(price_t, pred, exits), COSTS)
    path = tmp_path / "ledger.csv"
    save_ledger(ledger, path)
    back = load_ledger(path)
    assert back.n_trades == ledger.n_trades
    assert back.total_pnl == pytest.approx(ledger.total_pnl, abs=1e-12)
    frame = ledger_to_frame(ledger)
    assert list(frame.columns) == [
        "asset", "entry_t", "exit_t", "entry_px", "exit_px", "gross", "cost", "net",
    ]
