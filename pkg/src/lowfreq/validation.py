"""Backtest-overfitting and performance-inflation statistics.

Three complementary checks over a T x N matrix of daily returns (one column
per tested configuration):

* CSCV/PBO: partition the rows into S contiguous blocks and evaluate every
  balanced block combination as an in-sample/out-of-sample split. For each
  combination the in-sample winner's out-of-sample relative rank w is mapped
  to a logit ln(w/(1-w)); the probability of backtest overfitting is the
  fraction of combinations with logit <= 0 (winner at or below the
  out-of-sample median).
* ONC: cluster the configuration return columns on the correlation distance
  sqrt(0.5*(1-rho)) with silhouette-scored k-means, giving an effective
  number of independent trials.
* PSR/DSR: the probability that an observed Sharpe ratio exceeds a
  benchmark, with the benchmark set to the expected maximum Sharpe of that
  many independent trials under a zero-skill null.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np
import pandas as pd
from scipy import stats as sp_stats
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_samples

EULER_MASCHERONI = 0.5772156649


class UndefinedSharpeError(ValueError):
    """Sharpe ratio of a zero-variance series is undefined."""


def _is_constant(series: np.ndarray) -> bool:
    # std of an exactly-constant series can round to ~1e-18, so test the range
    return bool(series.max() == series.min())


def sharpe(series: np.ndarray, days_per_year: int = 252) -> float:
    """Annualized Sharpe ratio, mean/std * sqrt(days_per_year), sample std."""
    series = np.asarray(series, dtype=float)
    if len(series) < 2:
        raise UndefinedSharpeError("need at least 2 observations")
    if _is_constant(series):
        raise UndefinedSharpeError("zero-variance series has no Sharpe ratio")
    std = series.std(ddof=1)
    return float(series.mean() / std * np.sqrt(days_per_year))


def _safe_sharpe(series: np.ndarray, days_per_year: int = 252) -> float:
    # zero-variance columns (e.g. failed configurations) score 0 for ranking
    try:
        return sharpe(series, days_per_year)
    except UndefinedSharpeError:
        return 0.0


# ---------------------------------------------------------------------------
# CSCV / PBO


@dataclass
class CscvResult:
    s: int
    n_configs: int
    n_combinations: int
    logits: np.ndarray
    best_is: np.ndarray  # in-sample winner column per combination
    oos_rank: np.ndarray  # winner's relative out-of-sample rank per combination
    pbo: float
    labels: list[str] | None = None


def cscv(
    matrix: np.ndarray,
    s: int = 16,
    metric="sharpe",
    days_per_year: int = 252,
    labels: list[str] | None = None,
) -> CscvResult:
    """Combinatorially symmetric cross-validation over S contiguous blocks.

    ``metric`` is ``"sharpe"`` (annualized, of the sub-window returns),
    ``"total"`` (summed return) or any callable mapping a 1-D series to a
    score. Rows that do not fill the last block are dropped with a warning.
    Ranks use midranks for ties and are scaled by 1/(N+1) so every logit is
    finite.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[1] < 2:
        raise ValueError("need a 2-D matrix with at least 2 configuration columns")
    if s < 2 or s % 2 != 0:
        raise ValueError(f"split count must be even and >= 2, got {s}")
    t, n = matrix.shape
    if s > t:
        raise ValueError(f"cannot cut {t} rows into {s} blocks")
    block = t // s
    if t % s:
        warnings.warn(
            f"truncating {t % s} trailing rows so {s} blocks divide the sample"
        )
        matrix = matrix[: block * s]
    n_combos = math.comb(s, s // 2)
    if n_combos > 1_000_000:
        warnings.warn(f"{n_combos} block combinations; this will be slow")

    combos = np.array(list(combinations(range(s), s // 2)))
    picks = np.zeros((len(combos), s))
    picks[np.arange(len(combos))[:, None], combos] = 1.0

    blocks = matrix.reshape(s, block, n)
    if callable(metric):
        is_m = np.empty((len(combos), n))
        oos_m = np.empty((len(combos), n))
        mask = picks.astype(bool)
        for c in range(len(combos)):
            is_rows = blocks[mask[c]].reshape(-1, n)  # block order = time order
            oos_rows = blocks[~mask[c]].reshape(-1, n)
            for j in range(n):
                is_m[c, j] = metric(is_rows[:, j])
                oos_m[c, j] = metric(oos_rows[:, j])
    else:
        block_sum = blocks.sum(axis=1)
        total_sum = block_sum.sum(axis=0)
        is_sum = picks @ block_sum
        oos_sum = total_sum - is_sum
        if metric == "total":
            is_m, oos_m = is_sum, oos_sum
        elif metric == "sharpe":
            block_sumsq = (blocks**2).sum(axis=1)
            total_sumsq = block_sumsq.sum(axis=0)
            is_m = _sharpe_from_moments(
                is_sum, picks @ block_sumsq, s // 2 * block, days_per_year
            )
            oos_m = _sharpe_from_moments(
                oos_sum, total_sumsq - picks @ block_sumsq, s // 2 * block,
                days_per_year,
            )
            # catastrophic cancellation on constant columns would yield a
            # garbage Sharpe; they have none and rank as 0
            constant = matrix.max(axis=0) == matrix.min(axis=0)
            is_m[:, constant] = 0.0
            oos_m[:, constant] = 0.0
        else:
            raise ValueError(f"unknown metric {metric!r}")

    best = is_m.argmax(axis=1)
    ranks = sp_stats.rankdata(oos_m, method="average", axis=1)
    omega = ranks[np.arange(len(combos)), best] / (n + 1)
    logits = np.log(omega / (1.0 - omega))
    return CscvResult(
        s=s,
        n_configs=n,
        n_combinations=len(combos),
        logits=logits,
        best_is=best,
        oos_rank=omega,
        pbo=float(np.mean(logits <= 0.0)),
        labels=labels,
    )


def _sharpe_from_moments(sums, sumsqs, count, days_per_year):
    mean = sums / count
    var = np.maximum(sumsqs - count * mean**2, 0.0) / (count - 1)
    std = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        sr = mean / std * np.sqrt(days_per_year)
    return np.where(std > 0.0, sr, 0.0)


# ---------------------------------------------------------------------------
# ONC: optimal number of clusters over the strategy correlation structure


@dataclass
class ClusterStats:
    members: list[int]
    aggregate_returns: np.ndarray
    aggregate_sr: float
    sr_mean: float
    sr_var: float
    sr_skew: float


@dataclass
class OncResult:
    labels: np.ndarray  # cluster id per column
    clusters: list[ClusterStats]
    quality: float

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


def _cluster_quality(silh: np.ndarray) -> float:
    std = silh.std()
    return float(silh.mean() / std) if std > 0 else float(silh.mean() / 1e-12)


def _base_cluster(dist: np.ndarray, max_k: int, n_restarts: int, seed: int):
    """Silhouette-scored k-means over k = 2..max_k on the distance rows."""
    best = None
    for k in range(2, max_k + 1):
        if k >= len(dist):
            break
        km = KMeans(n_clusters=k, n_init=n_restarts, random_state=seed)
        labels = km.fit_predict(dist)
        silh = silhouette_samples(dist, labels)
        q = _cluster_quality(silh)
        if best is None or q > best[0]:
            best = (q, labels, silh)
    if best is None:  # too few columns to explore: single split
        labels = np.zeros(len(dist), dtype=int)
        labels[len(dist) // 2 :] = 1
        return 0.0, labels, np.zeros(len(dist))
    return best


def _distance(matrix: np.ndarray) -> np.ndarray:
    corr = np.corrcoef(matrix, rowvar=False)
    corr = np.clip(corr, -1.0, 1.0)
    return np.sqrt(0.5 * (1.0 - corr))


def _cluster_recursive(
    matrix: np.ndarray, max_k: int, depth: int, n_restarts: int, seed: int
):
    dist = _distance(matrix)
    q, labels, silh = _base_cluster(dist, max_k, n_restarts, seed)
    if depth <= 0:
        return q, labels
    # re-cluster the below-average-quality clusters and keep the result
    # only if the global score improves
    ids = np.unique(labels)
    t_stats = {c: _cluster_quality(silh[labels == c]) for c in ids}
    mean_t = np.mean(list(t_stats.values()))
    redo = [c for c in ids if t_stats[c] < mean_t]
    redo_cols = np.flatnonzero(np.isin(labels, redo))
    if len(redo) < 2 or len(redo_cols) < 4:
        return q, labels
    sub_q, sub_labels = _cluster_recursive(
        matrix[:, redo_cols], max_k, depth - 1, n_restarts, seed + 1
    )
    candidate = labels.copy()
    offset = labels.max() + 1
    candidate[redo_cols] = sub_labels + offset
    candidate = _relabel(candidate)
    new_q = _cluster_quality(silhouette_samples(dist, candidate))
    return (new_q, candidate) if new_q > q else (q, labels)


def _relabel(labels: np.ndarray) -> np.ndarray:
    _, compact = np.unique(labels, return_inverse=True)
    return compact


def onc(
    matrix: np.ndarray,
    max_k: int | None = None,
    depth: int = 1,
    n_restarts: int = 10,
    seed: int = 0,
    days_per_year: int = 252,
) -> OncResult:
    """Cluster configuration return columns by correlation distance.

    Constant columns have no defined correlation and are quarantined into
    their own clusters. ``depth`` bounds how many re-clustering passes may
    refine below-average clusters (0 disables refinement).
    """
    matrix = np.asarray(matrix, dtype=float)
    t, n = matrix.shape
    if n < 3:
        raise ValueError(f"need at least 3 configuration columns, got {n}")
    flat = matrix.max(axis=0) == matrix.min(axis=0)
    constant = np.flatnonzero(flat)
    active = np.flatnonzero(~flat)
    if max_k is None:
        max_k = max(2, min(10, math.isqrt(len(active) if len(active) else n)))

    labels = np.zeros(n, dtype=int)
    if len(active) >= 3:
        _, active_labels = _cluster_recursive(
            matrix[:, active], max_k, depth, n_restarts, seed
        )
        labels[active] = active_labels
        next_id = active_labels.max() + 1
    else:  # nothing meaningful to cluster
        labels[active] = 0
        next_id = 1 if len(active) else 0
    for c in constant:
        labels[c] = next_id
        next_id += 1

    clusters = []
    for c in range(next_id):
        members = np.flatnonzero(labels == c)
        agg = matrix[:, members].mean(axis=1)
        member_srs = np.array([_safe_sharpe(matrix[:, j], days_per_year) for j in members])
        clusters.append(
            ClusterStats(
                members=members.tolist(),
                aggregate_returns=agg,
                aggregate_sr=_safe_sharpe(agg, days_per_year),
                sr_mean=float(member_srs.mean()),
                sr_var=float(member_srs.var()),
                sr_skew=float(sp_stats.skew(member_srs)) if len(member_srs) > 2 else 0.0,
            )
        )
    quality = _cluster_quality(silhouette_samples(_distance(matrix[:, active]),
                                                  labels[active])) \
        if len(active) >= 3 and len(np.unique(labels[active])) > 1 else 0.0
    return OncResult(labels=labels, clusters=clusters, quality=quality)


# ---------------------------------------------------------------------------
# PSR / DSR


@dataclass(frozen=True)
class SrStats:
    sr_hat: float
    sr_star: float
    psr_value: float
    t_obs: int
    skewness: float
    kurtosis: float
    n_eff: int
    var_trials: float


def psr_from_stats(
    sr_hat: float,
    sr_star: float,
    n_obs: int,
    skewness: float = 0.0,
    kurtosis: float = 3.0,
) -> float:
    """Probability that the true Sharpe exceeds ``sr_star`` given an observed
    ``sr_hat`` over ``n_obs`` periods.

    Phi((sr_hat - sr_star) * sqrt(n_obs - 1) / sqrt(1 - g3*sr_hat
    + (g4-1)/4 * sr_hat^2)) with g3 the skewness and g4 the raw kurtosis of
    the return series. Both Sharpe arguments must share one periodicity; the
    formula itself is agnostic about which.
    """
    if n_obs < 2:
        raise ValueError("need at least 2 observations")
    radicand = 1.0 - skewness * sr_hat + (kurtosis - 1.0) / 4.0 * sr_hat**2
    if radicand <= 0.0:
        raise ValueError(
            f"pathological higher moments: variance term {radicand} not positive"
        )
    z = (sr_hat - sr_star) * np.sqrt(n_obs - 1.0) / np.sqrt(radicand)
    return float(sp_stats.norm.cdf(z))


def psr(series: np.ndarray, sr_star: float) -> float:
    """PSR of a return series against a per-period benchmark Sharpe.

    The observed Sharpe, skewness and raw kurtosis are all estimated from
    ``series``; no annualization is applied, so ``sr_star`` must be
    per-period as well.
    """
    series = np.asarray(series, dtype=float)
    if len(series) < 4:
        raise ValueError("need at least 4 observations for higher moments")
    std = series.std(ddof=1)
    if std == 0.0:
        raise UndefinedSharpeError("zero-variance series has no Sharpe ratio")
    return psr_from_stats(
        sr_hat=float(series.mean() / std),
        sr_star=sr_star,
        n_obs=len(series),
        skewness=float(sp_stats.skew(series)),
        kurtosis=float(sp_stats.kurtosis(series, fisher=False)),
    )


def expected_max_sharpe(var_trials: float, n_trials: int) -> float:
    """Expected maximum Sharpe of ``n_trials`` zero-skill trials whose Sharpe
    estimates have variance ``var_trials``."""
    if n_trials < 2:
        raise ValueError("need at least 2 trials")
    if var_trials < 0:
        raise ValueError("variance must be >= 0")
    g = EULER_MASCHERONI
    return float(
        np.sqrt(var_trials)
        * (
            (1.0 - g) * sp_stats.norm.ppf(1.0 - 1.0 / n_trials)
            + g * sp_stats.norm.ppf(1.0 - 1.0 / (n_trials * np.e))
        )
    )


def dsr(
    cluster_srs, best_series: np.ndarray, days_per_year: int = 252
) -> SrStats:
    """Deflated Sharpe ratio of the best strategy given the trial spread.

    ``cluster_srs`` are the annualized Sharpe ratios of the effective trials
    (cluster aggregates); their sample variance feeds the expected-maximum
    benchmark. Mirroring the usual reporting pipeline, the annualized
    benchmark and the annualized observed Sharpe enter the PSR formula
    directly, with the series length as the observation count.
    """
    cluster_srs = np.asarray(cluster_srs, dtype=float)
    if len(cluster_srs) < 2:
        raise ValueError(
            f"need >= 2 effective trials for deflation, got {len(cluster_srs)}"
        )
    best_series = np.asarray(best_series, dtype=float)
    var_trials = float(cluster_srs.var(ddof=1))
    sr_star = expected_max_sharpe(var_trials, len(cluster_srs))
    sr_hat = sharpe(best_series, days_per_year)
    skewness = float(sp_stats.skew(best_series))
    kurtosis = float(sp_stats.kurtosis(best_series, fisher=False))
    return SrStats(
        sr_hat=sr_hat,
        sr_star=sr_star,
        psr_value=psr_from_stats(
            sr_hat, sr_star, len(best_series), skewness, kurtosis
        ),
        t_obs=len(best_series),
        skewness=skewness,
        kurtosis=kurtosis,
        n_eff=len(cluster_srs),
        var_trials=var_trials,
    )


# ---------------------------------------------------------------------------
# CSV interfaces


def load_returns_csv(path) -> tuple[np.ndarray, list[str]]:
    """Returns matrix from CSV (optional leading ``t`` column, one column
    per configuration)."""
    frame = pd.read_csv(path, float_precision="round_trip")
    if frame.columns[0] == "t":
        frame = frame.drop(columns=["t"])
    if frame.shape[1] < 1:
        raise ValueError("no configuration columns found")
    return frame.to_numpy(dtype=float), list(frame.columns)


def save_logits_csv(result: CscvResult, path) -> None:
    names = result.labels or [str(i) for i in range(result.n_configs)]
    pd.DataFrame(
        {
            "combination": np.arange(result.n_combinations),
            "best_is": [names[i] for i in result.best_is],
            "oos_rank": result.oos_rank,
            "logit": result.logits,
        }
    ).to_csv(path, index=False)


def save_clusters_csv(result: OncResult, labels: list[str], path) -> None:
    pd.DataFrame({"config": labels, "cluster": result.labels}).to_csv(
        path, index=False
    )
