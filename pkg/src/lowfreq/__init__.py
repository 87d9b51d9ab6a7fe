"""Low-frequency price-pattern research engine.

Pipeline: closing prices -> horizon-aggregated log fluctuations ->
autoencoder feature compression -> batch + online neural prediction ->
costed trading simulation -> backtest-overfitting validation (CSCV/PBO,
ONC clustering, probabilistic/deflated Sharpe ratios).
"""
from .market_data import (
    AggregatedDataset,
    HorizonTuple,
    PriceSeries,
    ScalerParams,
    aggregate,
    apply_scaler,
    build_dataset,
    fit_scaler,
    invert_scaler,
    log_fluctuations,
    reconstruct_price,
    scale_dataset,
)
from .neural import (
    DenseNetwork,
    DivergenceError,
    OgdConfig,
    SgdConfig,
    backprop_mse,
    forward,
    he_adjusted_init,
    ogd_step,
    train_sgd,
)
from .autoencoder import SaeModel, SaeSpec, encode, select_best, train_sae
from .predictor import PredictionRun, PredictorConfig, run_online, train_batch
from .trading import CostModel, TradeLedger, benchmark, returns_series, simulate
from .validation import (
    CscvResult,
    OncResult,
    SrStats,
    cscv,
    dsr,
    expected_max_sharpe,
    onc,
    psr,
    psr_from_stats,
    sharpe,
)

__version__ = "0.1.0"
