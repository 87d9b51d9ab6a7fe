"""Two-stage grid-search campaigns over the full pipeline.

Stage 1 sweeps data configurations (horizon tuples, split, scaling) crossed
with autoencoder specs, training each on its dataset's training rows. Stage
2 crosses the selected autoencoders with prediction-network and online
parameters; each configuration is encoded, batch-trained, run online,
traded, and reduced to a daily returns column. The assembled returns matrix
feeds the overfitting validation (CSCV/PBO, ONC, DSR) and the campaign
report.

Every configuration has a deterministic id (hash of its parameters) and a
private RNG seed derived from the master seed and that id, so results are
independent of worker scheduling and a killed campaign resumes to the same
bytes. The store is a plain directory tree: one subdirectory per
configuration holding the CSV/JSON artifacts, indexed by a manifest.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import autoencoder, market_data, predictor, trading, validation
from .neural import DivergenceError, OgdConfig, SgdConfig


class CampaignError(RuntimeError):
    """A campaign-level refusal (empty grid, nothing to validate, ...)."""


def demo_grid() -> dict:
    """Desk-scale default grid: two horizon tuples, two autoencoders, and a
    100-configuration stage 2 spanning the epoch and training-fraction
    ablation axes."""
    return {
        "stage1": {
            "data": {
                "horizons": [[1, 5, 10], [10, 20, 60]],
                "forecast_horizon": [5],
                "split_fraction": [0.6],
                "scaling_range": [[0.0, 1.0]],
            },
            "sae": {
                "encoder_sizes": [[6], [3]],
                "activation": ["sigmoid"],
                "learning_rate": [0.3],
                "epochs": [30],
                "minibatch_size": [32],
            },
        },
        "stage2": {
            "saes_per_data_config": 1,
            "fnn": {
                "hidden_sizes": [[8]],
                "activation": ["sigmoid"],
                "learning_rate": [0.1],
                "epochs": [0, 10, 100, 500, 1000],
                "minibatch_size": [32],
                "training_fraction": [0.2, 0.4, 0.6, 0.8, 1.0],
            },
            "ogd": {"learning_rate": [0.01, 0.1]},
        },
    }


def config_id(params: dict) -> str:
    """Deterministic 12-hex id of a parameter dictionary."""
    canonical = json.dumps(params, sort_keys=True, separators=(",", ":"))
    return hashlib.sha1(canonical.encode()).hexdigest()[:12]


def derive_seed(master_seed: int, tag: str) -> int:
    """Per-configuration RNG seed; independent of scheduling order."""
    digest = hashlib.sha256(f"{master_seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def _dump_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2))


# ---------------------------------------------------------------------------
# grid parsing


def _product(section: dict, keys: list[str]):
    missing = [k for k in keys if k not in section or not section[k]]
    if missing:
        raise CampaignError(f"grid section missing value sets: {missing}")
    for combo in itertools.product(*(section[k] for k in keys)):
        yield dict(zip(keys, combo))


@dataclass
class Grid:
    raw: dict

    @classmethod
    def load(cls, path) -> "Grid":
        return cls(json.loads(Path(path).read_text()))

    def costs(self) -> trading.CostModel:
        return trading.CostModel(**self.raw.get("costs", {}))

    def data_configs(self) -> list[dict]:
        data = self.raw.get("stage1", {}).get("data", {})
        configs = list(
            _product(
                data, ["horizons", "forecast_horizon", "split_fraction", "scaling_range"]
            )
        )
        if not configs:
            raise CampaignError("stage1 data grid is empty")
        return configs

    def sae_params(self) -> list[dict]:
        sae = self.raw.get("stage1", {}).get("sae", {})
        params = list(
            _product(
                sae,
                ["encoder_sizes", "activation", "learning_rate", "epochs",
                 "minibatch_size"],
            )
        )
        if not params:
            raise CampaignError("stage1 sae grid is empty")
        return params

    def stage2_params(self):
        """Lazy product over the prediction-network and online value sets."""
        stage2 = self.raw.get("stage2", {})
        fnn = stage2.get("fnn", {})
        ogd = stage2.get("ogd", {})
        fnn_keys = ["hidden_sizes", "activation", "learning_rate", "epochs",
                    "minibatch_size", "training_fraction"]
        lag = stage2.get("ogd_target_lag")
        for fnn_combo in _product(fnn, fnn_keys):
            for ogd_combo in _product(ogd, ["learning_rate"]):
                yield {
                    "hidden_sizes": list(fnn_combo["hidden_sizes"]),
                    "activation": fnn_combo["activation"],
                    "sgd_learning_rate": fnn_combo["learning_rate"],
                    "sgd_epochs": fnn_combo["epochs"],
                    "minibatch_size": fnn_combo["minibatch_size"],
                    "training_fraction": fnn_combo["training_fraction"],
                    "ogd_learning_rate": ogd_combo["learning_rate"],
                    "ogd_target_lag": lag,
                }

    def saes_per_data_config(self) -> int:
        return int(self.raw.get("stage2", {}).get("saes_per_data_config", 1))

    def explicit_sae_ids(self) -> list[str] | None:
        return self.raw.get("stage2", {}).get("sae_ids")


# ---------------------------------------------------------------------------
# store


class CampaignStore:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @property
    def prices_path(self) -> Path:
        return self.root / "prices.csv"

    def dataset_dir(self, data_id: str) -> Path:
        return self.root / "datasets" / data_id

    def sae_path(self, sae_id: str) -> Path:
        return self.root / "stage1" / "models" / f"{sae_id}.json"

    def config_dir(self, cid: str) -> Path:
        return self.root / "stage2" / cid

    def config_done(self, cid: str) -> bool:
        return (self.config_dir(cid) / "result.json").exists()

    def benchmark_path(self, data_id: str) -> Path:
        return self.root / "benchmarks" / f"{data_id}.csv"

    @property
    def report_dir(self) -> Path:
        return self.root / "report"

    def read_manifest(self) -> dict:
        path = self.root / "manifest.json"
        if not path.exists():
            return {}
        return json.loads(path.read_text())

    def write_manifest(self, manifest: dict) -> None:
        _dump_json(manifest, self.root / "manifest.json")

    def config_result(self, cid: str) -> dict:
        return json.loads((self.config_dir(cid) / "result.json").read_text())


# ---------------------------------------------------------------------------
# stage 1


def run_stage1(store: CampaignStore, grid: Grid, master_seed: int) -> pd.DataFrame:
    """Build every dataset, train every autoencoder spec on it, and record
    the training reconstruction MSEs. Already-trained models are skipped."""
    if not store.prices_path.exists():
        raise CampaignError(f"no price data at {store.prices_path}; run synth/ingest")
    series = market_data.load_prices_csv(store.prices_path)

    manifest = store.read_manifest()
    manifest["master_seed"] = master_seed
    manifest.setdefault("data_configs", {})
    manifest.setdefault("saes", {})

    rows = []
    for data_params in grid.data_configs():
        data_id = config_id(data_params)
        manifest["data_configs"][data_id] = data_params
        ds_dir = store.dataset_dir(data_id)
        if not (ds_dir / "dataset.json").exists():
            ht = market_data.HorizonTuple(
                tuple(data_params["horizons"]), data_params["forecast_horizon"]
            )
            ds = market_data.build_dataset(series, ht, data_params["split_fraction"])
            scaler = market_data.fit_scaler(
                ds, tuple(data_params["scaling_range"])
            )
            market_data.save_dataset(ds, scaler, ds_dir)
        ds, scaler = market_data.load_dataset(ds_dir)
        scaled = market_data.scale_dataset(ds, scaler)

        for sae_params in grid.sae_params():
            full = {"data": data_params, **sae_params}
            sae_id = config_id(full)
            manifest["saes"][sae_id] = {**full, "data_id": data_id}
            path = store.sae_path(sae_id)
            if not path.exists():
                spec = autoencoder.SaeSpec(
                    encoder_sizes=(ds.n_inputs, *sae_params["encoder_sizes"]),
                    activation=sae_params["activation"],
                    sgd=SgdConfig(
                        learning_rate=sae_params["learning_rate"],
                        epochs=sae_params["epochs"],
                        minibatch_size=sae_params["minibatch_size"],
                        rng_seed=derive_seed(master_seed, f"sae:{sae_id}"),
                    ),
                )
                path.parent.mkdir(parents=True, exist_ok=True)
                autoencoder.save_model(autoencoder.train_sae(scaled, spec), path)
            model = autoencoder.load_model(path)
            rows.append(
                {
                    "sae_id": sae_id,
                    "data_id": data_id,
                    "horizons": json.dumps(data_params["horizons"]),
                    "forecast_horizon": data_params["forecast_horizon"],
                    "split_fraction": data_params["split_fraction"],
                    "scaling_range": json.dumps(data_params["scaling_range"]),
                    "encoder_sizes": json.dumps(list(model.spec.encoder_sizes)),
                    "activation": sae_params["activation"],
                    "learning_rate": sae_params["learning_rate"],
                    "epochs": sae_params["epochs"],
                    "minibatch_size": sae_params["minibatch_size"],
                    "training_mse": model.training_mse,
                }
            )
    results = pd.DataFrame(rows).sort_values("sae_id", ignore_index=True)
    (store.root / "stage1").mkdir(parents=True, exist_ok=True)
    results.to_csv(store.root / "stage1" / "results.csv", index=False)
    store.write_manifest(manifest)
    return results


def select_stage2_saes(store: CampaignStore, grid: Grid) -> list[str]:
    """The autoencoders stage 2 will build on: explicit ids if the grid names
    them, otherwise the lowest-MSE models per data configuration."""
    explicit = grid.explicit_sae_ids()
    if explicit:
        return list(explicit)
    manifest = store.read_manifest()
    if not manifest.get("saes"):
        raise CampaignError("no stage-1 results in store; run stage1 first")
    chosen = []
    by_data: dict[str, list] = {}
    for sae_id, params in sorted(manifest["saes"].items()):
        by_data.setdefault(params["data_id"], []).append(sae_id)
    for data_id, sae_ids in sorted(by_data.items()):
        models = [autoencoder.load_model(store.sae_path(i)) for i in sae_ids]
        id_of = {id(m): sid for m, sid in zip(models, sae_ids)}
        try:
            best = autoencoder.select_best(models, grid.saes_per_data_config())
        except autoencoder.SelectionError:
            continue  # every autoencoder for this data configuration diverged
        chosen.extend(id_of[id(m)] for m in best)
    if not chosen:
        raise CampaignError("every stage-1 autoencoder diverged")
    return chosen


# ---------------------------------------------------------------------------
# stage 2


def _run_one_config(store_root: str, cid: str, params: dict, seed: int,
                    costs_kwargs: dict) -> dict:
    """Worker body: full pipeline for one configuration, artifacts written
    into the config directory; ``result.json`` is written last so partially
    written configurations are redone on resume."""
    store = CampaignStore(store_root)
    if store.config_done(cid):
        return store.config_result(cid)
    manifest = store.read_manifest()
    sae_info = manifest["saes"][params["sae_id"]]
    ds, scaler = market_data.load_dataset(store.dataset_dir(sae_info["data_id"]))
    scaled = market_data.scale_dataset(ds, scaler)
    sae = autoencoder.load_model(store.sae_path(params["sae_id"]))
    encoded = autoencoder.encode(sae, scaled)

    cfg = predictor.PredictorConfig(
        hidden_sizes=tuple(params["hidden_sizes"]),
        activation=params["activation"],
        sgd=SgdConfig(
            learning_rate=params["sgd_learning_rate"],
            epochs=params["sgd_epochs"],
            minibatch_size=params["minibatch_size"],
            rng_seed=seed,
        ),
        ogd=OgdConfig(learning_rate=params["ogd_learning_rate"]),
        training_fraction_used=params["training_fraction"],
        ogd_target_lag=params["ogd_target_lag"],
    )
    try:
        net, trace = predictor.train_batch(encoded, cfg)
        run = predictor.run_online(net, encoded, cfg, scaler, is_mse_trace=trace)
    except DivergenceError:
        run = predictor.failed_run(encoded)

    costs = trading.CostModel(**costs_kwargs)
    ledger = trading.simulate(run, costs)
    capital = max(1.0, trading.peak_concurrent_notional(ledger))

    cfg_dir = store.config_dir(cid)
    cfg_dir.mkdir(parents=True, exist_ok=True)
    predictor.save_run(run, cfg_dir, metadata={"config_id": cid, "seed": seed})
    trading.save_ledger(ledger, cfg_dir / "ledger.csv")

    t0 = int(encoded.row_times[encoded.split_index])
    t_end = int(encoded.row_times[-1]) + encoded.ht.forecast_horizon
    offset = 0 if run.failed or not ledger.trades else ledger.t0 - t0
    returns = trading.returns_series(ledger, t_end - t0 + 1, capital, offset)
    pd.DataFrame({"t": np.arange(t0, t_end + 1), "r": returns}).to_csv(
        cfg_dir / "returns.csv", index=False
    )
    result = {
        "config_id": cid,
        "config": params,
        "seed": seed,
        "failed": run.failed,
        "total_pnl": ledger.total_pnl,
        "n_trades": ledger.n_trades,
        "capital_base": capital,
        "t0": t0,
        "t_end": t_end,
    }
    _dump_json(result, cfg_dir / "result.json")
    return result


def run_stage2(
    store: CampaignStore,
    grid: Grid,
    master_seed: int,
    jobs: int | None = None,
) -> dict:
    """Run every (selected autoencoder x prediction parameters) configuration,
    then rebuild the benchmark ledgers and the campaign returns matrix."""
    manifest = store.read_manifest()
    sae_ids = select_stage2_saes(store, grid)
    if not sae_ids:
        raise CampaignError("no autoencoders selected for stage 2")

    configs = {}
    for sae_id in sae_ids:
        for p in grid.stage2_params():
            params = {"sae_id": sae_id, **p}
            configs[config_id(params)] = params
    if not configs:
        raise CampaignError("stage2 grid is empty")

    costs_kwargs = grid.raw.get("costs", {})
    jobs = jobs or os.cpu_count() or 1
    todo = [(cid, p) for cid, p in sorted(configs.items())
            if not store.config_done(cid)]
    if jobs == 1 or len(todo) <= 1:
        for cid, params in todo:
            _run_one_config(str(store.root), cid, params,
                            derive_seed(master_seed, f"cfg:{cid}"), costs_kwargs)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(
                    _run_one_config, str(store.root), cid, params,
                    derive_seed(master_seed, f"cfg:{cid}"), costs_kwargs,
                )
                for cid, params in todo
            ]
            for f in futures:
                f.result()

    manifest["configs"] = {cid: configs[cid] for cid in sorted(configs)}
    results = {cid: store.config_result(cid) for cid in sorted(configs)}
    manifest["failed_configs"] = sorted(
        cid for cid, r in results.items() if r["failed"]
    )
    store.write_manifest(manifest)

    _write_benchmarks(store, grid)
    _assemble_returns_matrix(store, results)
    return {
        "n_configs": len(configs),
        "n_failed": len(manifest["failed_configs"]),
        "sae_ids": sae_ids,
    }


def _write_benchmarks(store: CampaignStore, grid: Grid) -> None:
    """Perfect-foresight ledger per data configuration over its own
    out-of-sample entry days."""
    manifest = store.read_manifest()
    series = market_data.load_prices_csv(store.prices_path)
    costs = grid.costs()
    totals = []
    for data_id in sorted(manifest.get("data_configs", {})):
        ds, _ = market_data.load_dataset(store.dataset_dir(data_id))
        ledger = trading.benchmark(
            series,
            ds.ht.forecast_horizon,
            costs,
            entry_times=ds.row_times[ds.split_index :],
        )
        store.benchmark_path(data_id).parent.mkdir(parents=True, exist_ok=True)
        trading.save_ledger(ledger, store.benchmark_path(data_id))
        totals.append(
            {"data_id": data_id, "total_pnl": ledger.total_pnl,
             "n_trades": ledger.n_trades}
        )
    pd.DataFrame(totals).to_csv(store.root / "benchmarks" / "totals.csv", index=False)


def _assemble_returns_matrix(store: CampaignStore, results: dict) -> None:
    t0 = min(r["t0"] for r in results.values())
    t_end = max(r["t_end"] for r in results.values())
    columns = {"t": np.arange(t0, t_end + 1)}
    for cid in sorted(results):
        r = results[cid]
        col = np.zeros(t_end - t0 + 1)
        own = pd.read_csv(
            store.config_dir(cid) / "returns.csv", float_precision="round_trip"
        )["r"].to_numpy()
        col[r["t0"] - t0 : r["t0"] - t0 + len(own)] = own
        columns[cid] = col
    pd.DataFrame(columns).to_csv(store.root / "returns_matrix.csv", index=False)


# ---------------------------------------------------------------------------
# validation and reporting


def _load_matrix(store: CampaignStore, include_failed: bool,
                 config_filter: list[str] | None) -> tuple[np.ndarray, list[str]]:
    path = store.root / "returns_matrix.csv"
    if not path.exists():
        raise CampaignError("no returns matrix in store; run stage2 first")
    matrix, labels = validation.load_returns_csv(path)
    manifest = store.read_manifest()
    failed = set(manifest.get("failed_configs", []))
    keep = [
        i
        for i, lab in enumerate(labels)
        if (include_failed or lab not in failed)
        and (config_filter is None or lab in config_filter)
    ]
    if not keep:
        raise CampaignError(
            f"nothing to validate: {len(labels)} configs, {len(failed)} failed, "
            f"filter={'none' if config_filter is None else len(config_filter)}"
        )
    return matrix[:, keep], [labels[i] for i in keep]


def validate_campaign(
    store: CampaignStore,
    s: int = 16,
    include_failed: bool = False,
    config_filter: list[str] | None = None,
    seed: int = 0,
    days_per_year: int = 252,
) -> dict:
    """CSCV + ONC + DSR over the campaign returns matrix; writes the
    report files and returns the report dictionary."""
    matrix, labels = _load_matrix(store, include_failed, config_filter)
    store.report_dir.mkdir(parents=True, exist_ok=True)

    if matrix.shape[1] < 2:
        report = {
            "pbo": None, "s": s, "n_configs": matrix.shape[1],
            "sr_star": None, "best_sr": None, "psr": None, "n_clusters": None,
            "note": "overfitting statistics need at least 2 configurations",
        }
        _dump_json(report, store.report_dir / "report.json")
        return report

    cscv_result = validation.cscv(matrix, s=s, labels=labels)
    validation.save_logits_csv(cscv_result, store.report_dir / "logits.csv")

    srs = np.array(
        [validation._safe_sharpe(matrix[:, j], days_per_year)
         for j in range(matrix.shape[1])]
    )
    candidates = np.flatnonzero(matrix.max(axis=0) > matrix.min(axis=0))
    if len(candidates) == 0:
        raise CampaignError("every usable configuration has constant returns")
    best_col = int(candidates[np.argmax(srs[candidates])])

    report = {
        "pbo": cscv_result.pbo,
        "s": s,
        "n_configs": matrix.shape[1],
        "sr_star": None,
        "best_sr": float(srs[best_col]),
        "psr": None,
        "n_clusters": None,
        "best_config": labels[best_col],
        "n_combinations": cscv_result.n_combinations,
    }
    if matrix.shape[1] < 3:
        report["note"] = "clustering and deflation need at least 3 configurations"
    else:
        onc_result = validation.onc(matrix, seed=seed, days_per_year=days_per_year)
        validation.save_clusters_csv(
            onc_result, labels, store.report_dir / "clusters.csv"
        )
        cluster_srs = [c.aggregate_sr for c in onc_result.clusters]
        sr_stats = validation.dsr(cluster_srs, matrix[:, best_col], days_per_year)
        report.update(
            sr_star=sr_stats.sr_star,
            psr=sr_stats.psr_value,
            n_clusters=onc_result.n_clusters,
        )
    _dump_json(report, store.report_dir / "report.json")
    return report


def report_campaign(
    store: CampaignStore,
    s: int = 16,
    include_failed: bool = False,
    config_filter: list[str] | None = None,
    seed: int = 0,
) -> dict:
    """Full campaign report: validation statistics plus the plot-data files
    (P&L distribution, per-cluster Sharpe distribution, epoch and
    training-fraction ablation tables)."""
    report = validate_campaign(
        store, s=s, include_failed=include_failed,
        config_filter=config_filter, seed=seed,
    )
    manifest = store.read_manifest()
    configs = manifest.get("configs", {})

    rows = []
    for cid in sorted(configs):
        r = store.config_result(cid)
        rows.append(
            {
                "config_id": cid,
                "total_pnl": r["total_pnl"],
                "n_trades": r["n_trades"],
                "failed": r["failed"],
                "sgd_epochs": configs[cid]["sgd_epochs"],
                "training_fraction": configs[cid]["training_fraction"],
                "ogd_learning_rate": configs[cid]["ogd_learning_rate"],
                "sae_id": configs[cid]["sae_id"],
            }
        )
    frame = pd.DataFrame(rows)
    frame[["config_id", "total_pnl", "n_trades", "failed"]].to_csv(
        store.report_dir / "pnl_distribution.csv", index=False
    )

    usable = frame[~frame.failed] if not include_failed else frame
    for key, name in (
        ("sgd_epochs", "ablation_epochs.csv"),
        ("training_fraction", "ablation_training_fraction.csv"),
    ):
        table = (
            usable.groupby(key)["total_pnl"]
            .agg(["count", "mean", "median", "min", "max"])
            .reset_index()
        )
        table.to_csv(store.report_dir / name, index=False)

    # per-configuration Sharpe with cluster labels, for the cluster
    # distribution plot
    if (store.report_dir / "clusters.csv").exists():
        matrix, labels = _load_matrix(store, include_failed, config_filter)
        clusters = pd.read_csv(store.report_dir / "clusters.csv")
        srs = {
            lab: validation._safe_sharpe(matrix[:, j])
            for j, lab in enumerate(labels)
        }
        clusters["sharpe"] = clusters["config"].map(srs)
        clusters.to_csv(store.report_dir / "cluster_sharpes.csv", index=False)
    return report


def dominance_violations(store: CampaignStore, tolerance: float = 1e-9) -> list[dict]:
    """Configurations whose total P&L exceeds their data configuration's
    perfect-foresight benchmark (should be empty)."""
    manifest = store.read_manifest()
    benchmark_totals = {}
    for data_id in manifest.get("data_configs", {}):
        ledger = trading.load_ledger(store.benchmark_path(data_id))
        benchmark_totals[data_id] = ledger.total_pnl
    violations = []
    for cid in manifest.get("configs", {}):
        r = store.config_result(cid)
        data_id = manifest["saes"][manifest["configs"][cid]["sae_id"]]["data_id"]
        if r["total_pnl"] > benchmark_totals[data_id] + tolerance:
            violations.append(
                {
                    "config_id": cid,
                    "total_pnl": r["total_pnl"],
                    "benchmark": benchmark_totals[data_id],
                }
            )
    return violations
