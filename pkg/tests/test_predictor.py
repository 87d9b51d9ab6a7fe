import numpy as np
import pytest

from lowfreq.market_data import (
    HorizonTuple,
    PriceSeries,
    build_dataset,
    fit_scaler,
    scale_dataset,
)
from lowfreq.neural import OgdConfig, SgdConfig, predict
from lowfreq.predictor import (
    PredictorConfig,
    build_network,
    failed_run,
    load_run,
    run_online,
    run_to_frame,
    save_run,
    select_training_rows,
    train_batch,
)


def ar_prices(n=900, flip=None, phi=0.8, sigma=0.003, seed=0, n_assets=1):
    """Autoregressive daily returns; ``flip`` negates the coefficient there."""
    rng = np.random.default_rng(seed)
    r = np.zeros((n, n_assets))
    for t in range(1, n):
        coef = phi if flip is None or t < flip else -phi
        r[t] = coef * r[t - 1] + sigma * rng.standard_normal(n_assets)
    prices = 100.0 * np.exp(np.cumsum(r, axis=0))
    return [
        PriceSeries(f"A{i}", np.arange(n), prices[:, i]) for i in range(n_assets)
    ]


def scaled_dataset(series, horizons=(1, 5), h=5, split=0.6):
    ds = build_dataset(series, HorizonTuple(horizons, h), split)
    params = fit_scaler(ds)
    return scale_dataset(ds, params), params


def config(sgd_seed=0, ogd_lr=0.05, epochs=100, fraction=1.0, activation="linear",
           hidden=(4,), lag=None, sgd_lr=0.05):
    return PredictorConfig(
        hidden_sizes=hidden,
        activation=activation,
        sgd=SgdConfig(sgd_lr, epochs, 32, rng_seed=sgd_seed),
        ogd=OgdConfig(ogd_lr),
        training_fraction_used=fraction,
        ogd_target_lag=lag,
    )


# ---------------------------------------------------------------------------
# batch phase


def test_training_fraction_keeps_most_recent_rows():
    assert select_training_rows(100, 0.2) == slice(80, 100)
    assert select_training_rows(100, 1.0) == slice(0, 100)
    assert select_training_rows(10, 0.05) == slice(9, 10)  # never empty


def test_training_fraction_never_touches_earliest_rows():
    ds, params = scaled_dataset(ar_prices(seed=1))
    poisoned = ds
    cut = select_training_rows(ds.split_index, 0.2).start
    poisoned.inputs[:cut] = np.nan  # poison the rows that must be excluded
    net, trace = train_batch(poisoned, config(epochs=5, fraction=0.2))
    assert net.all_finite()
    assert np.all(np.isfinite(trace))


def test_zero_epochs_returns_initialized_network():
    ds, _ = scaled_dataset(ar_prices(seed=2))
    cfg = config(epochs=0, sgd_seed=11)
    net, trace = train_batch(ds, cfg)
    fresh = build_network(ds, cfg)
    assert trace.size == 0
    for a, b in zip(net.weights, fresh.weights):
        np.testing.assert_array_equal(a, b)


def test_epoch_grid_supported():
    ds, _ = scaled_dataset(ar_prices(n=400, seed=3))
    for epochs in (10, 100):
        _, trace = train_batch(ds, config(epochs=epochs))
        assert len(trace) == epochs


# ---------------------------------------------------------------------------
# online phase


def test_zero_ogd_rate_equals_frozen_inference():
    ds, params = scaled_dataset(ar_prices(seed=4))
    cfg = config(ogd_lr=0.0)
    net, _ = train_batch(ds, cfg)
    run = run_online(net, ds, cfg, params)
    frozen = predict(net, ds.inputs[ds.split_index :])
    target_cols = np.arange(params.n_inputs, params.n_inputs + ds.n_assets)
    from lowfreq.market_data import invert_scaler

    np.testing.assert_allclose(
        run.pred_logsum, invert_scaler(frozen, params, target_cols), atol=1e-12
    )


def test_reconstruction_identity_every_step():
    ds, params = scaled_dataset(ar_prices(seed=5))
    cfg = config()
    net, _ = train_batch(ds, cfg)
    run = run_online(net, ds, cfg, params)
    np.testing.assert_allclose(
        run.pred_price, run.price_t * np.exp(run.pred_logsum), rtol=1e-12
    )


def test_realized_prices_match_raw_series():
    series = ar_prices(seed=6)
    ds, params = scaled_dataset(series)
    cfg = config(epochs=10)
    net, _ = train_batch(ds, cfg)
    run = run_online(net, ds, cfg, params)
    h = ds.ht.forecast_horizon
    realized = series[0].prices[run.row_times + h]
    np.testing.assert_allclose(run.price_t_plus_h[:, 0], realized, rtol=1e-9)


def test_online_adapts_after_regime_shift():
    # momentum sign flips inside the prediction window: the updating net
    # must out-predict the frozen one on the final stretch
    ds, params = scaled_dataset(ar_prices(flip=700, seed=0))
    cfg = config(ogd_lr=0.05)
    net, _ = train_batch(ds, cfg)
    online = run_online(net, ds, cfg, params)
    frozen = run_online(net, ds, config(ogd_lr=0.0), params)

    def tail_mse(run, last=100):
        actual = np.log(run.price_t_plus_h / run.price_t)
        return ((run.pred_logsum - actual) ** 2)[-last:].mean()

    assert tail_mse(online) < tail_mse(frozen)


def test_causality_truncation_prefix_identical():
    ds, params = scaled_dataset(ar_prices(seed=7))
    cfg = config(ogd_lr=0.1)
    net, _ = train_batch(ds, cfg)
    full = run_online(net, ds, cfg, params)

    cut = ds.split_index + 40
    truncated = type(ds)(
        inputs=ds.inputs[:cut], targets=ds.targets[:cut],
        anchor_prices=ds.anchor_prices[:cut], split_index=ds.split_index,
        ht=ds.ht, asset_ids=ds.asset_ids, row_times=ds.row_times[:cut],
    )
    short = run_online(net, truncated, cfg, params)
    np.testing.assert_array_equal(short.pred_logsum, full.pred_logsum[:40])
    np.testing.assert_array_equal(short.pred_price, full.pred_price[:40])


@pytest.mark.parametrize("lag", [None, 0])
def test_target_lag_controls_information_flow(lag):
    ds, params = scaled_dataset(ar_prices(seed=8))
    cfg = config(ogd_lr=0.1, lag=lag)
    net, _ = train_batch(ds, cfg)
    base = run_online(net, ds, cfg, params)

    effective_lag = ds.ht.forecast_horizon if lag is None else lag
    j = 60  # corrupt one prediction-row target
    corrupted = type(ds)(
        inputs=ds.inputs, targets=ds.targets.copy(),
        anchor_prices=ds.anchor_prices, split_index=ds.split_index,
        ht=ds.ht, asset_ids=ds.asset_ids, row_times=ds.row_times,
    )
    corrupted.targets[ds.split_index + j] = 0.9
    other = run_online(net, corrupted, cfg, params)
    # the corrupted target is first consumed by the update made at step
    # j + lag, which can only influence predictions strictly after it
    first_affected = j + effective_lag + 1
    np.testing.assert_array_equal(
        base.pred_logsum[:first_affected], other.pred_logsum[:first_affected]
    )
    assert np.any(base.pred_logsum[first_affected:] != other.pred_logsum[first_affected:])


def test_run_is_seed_deterministic():
    ds, params = scaled_dataset(ar_prices(seed=9))
    cfg = config(sgd_seed=5)
    net1, t1 = train_batch(ds, cfg)
    net2, t2 = train_batch(ds, cfg)
    r1 = run_online(net1, ds, cfg, params, is_mse_trace=t1)
    r2 = run_online(net2, ds, cfg, params, is_mse_trace=t2)
    np.testing.assert_array_equal(r1.pred_logsum, r2.pred_logsum)
    np.testing.assert_array_equal(r1.is_mse_trace, r2.is_mse_trace)


def test_mid_run_divergence_keeps_prior_records():
    ds, params = scaled_dataset(ar_prices(seed=10))
    cfg = config(ogd_lr=1e14, activation="linear")
    net, _ = train_batch(ds, cfg)
    run = run_online(net, ds, cfg, params)
    assert run.failed
    assert run.failed_at is not None and run.failed_at > 0
    assert run.n_steps == run.failed_at
    assert np.all(np.isfinite(run.pred_logsum))


def test_failed_batch_produces_empty_run():
    ds, _ = scaled_dataset(ar_prices(seed=11))
    run = failed_run(ds)
    assert run.failed
    assert run.n_steps == 0


# ---------------------------------------------------------------------------
# persistence


def test_run_csv_round_trip(tmp_path):
    ds, params = scaled_dataset(ar_prices(seed=12, n_assets=2))
    cfg = config(epochs=20)
    net, trace = train_batch(ds, cfg)
    run = run_online(net, ds, cfg, params, is_mse_trace=trace)
    save_run(run, tmp_path, metadata={"config": "demo"})
    frame = run_to_frame(run)
    assert list(frame.columns) == [
        "t", "asset", "pred_logsum", "pred_price", "price_t", "price_t_plus_h",
    ]
    back = load_run(tmp_path)
    assert back.asset_ids == run.asset_ids
    assert back.failed == run.failed
    np.testing.assert_array_equal(back.row_times, run.row_times)
    np.testing.assert_array_equal(back.pred_logsum, run.pred_logsum)
    np.testing.assert_array_equal(back.is_mse_trace, run.is_mse_trace)
