"""Command-line front end for the research engine.

Subcommands mirror the campaign stages: ``synth`` and ``ingest`` prepare
data, ``stage1``/``stage2`` run the grids, ``validate`` and ``report``
produce the overfitting statistics. Errors exit nonzero with a one-line
JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import experiment, market_data, synthetic


def _bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {value!r}")


def _parse_configs(value: str | None) -> list[str] | None:
    if value is None:
        return None
    if value.startswith("@"):
        with open(value[1:]) as fh:
            return [line.strip() for line in fh if line.strip()]
    return [c for c in value.split(",") if c]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lowfreq",
        description="Price-pattern learning and backtest-overfitting analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic correlated prices")
    p.add_argument("--out", help="output CSV (default: <store>/prices.csv)")
    p.add_argument("--store", help="campaign store directory")
    p.add_argument("--assets", type=int, default=4)
    p.add_argument("--days", type=int, default=1300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--momentum", type=float, default=0.25)

    p = sub.add_parser("ingest", help="price CSV -> aggregated dataset snapshot")
    p.add_argument("--prices", required=True, help="CSV: date,ASSET1,ASSET2,...")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--horizons", default="1,5,20", help="comma-separated day windows")
    p.add_argument("--forecast", type=int, default=5)
    p.add_argument("--split", type=float, default=0.6)
    p.add_argument("--range", dest="scaling_range", default="0,1")

    for name, helptext in (
        ("stage1", "train the autoencoder grid"),
        ("stage2", "run the prediction/trading grid"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--grid", required=True, help="grid JSON file")
        p.add_argument("--store", required=True)
        p.add_argument("--seed", type=int, default=0)
        if name == "stage1":
            p.add_argument("--prices", help="copy this CSV into the store first")
        else:
            p.add_argument("--jobs", type=int, default=None)

    for name, helptext in (
        ("validate", "CSCV/PBO, ONC and DSR over the returns matrix"),
        ("report", "validation plus plot-data files and ablation tables"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--store", required=True)
        p.add_argument("--splits", type=int, default=16)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--include-failed", type=_bool, default=False)
        p.add_argument("--configs", help="comma-separated ids or @file filter")

    return parser


def run(args: argparse.Namespace) -> dict:
    if args.command == "synth":
        series = synthetic.correlated_walk(
            n_assets=args.assets, n_days=args.days, seed=args.seed,
            momentum=args.momentum,
        )
        if args.out:
            out = args.out
        elif args.store:
            out = experiment.CampaignStore(args.store).prices_path
        else:
            raise ValueError("synth needs --out or --store")
        market_data.save_prices_csv(series, out)
        return {"prices": str(out), "assets": args.assets, "days": args.days}

    if args.command == "ingest":
        series = market_data.load_prices_csv(args.prices)
        ht = market_data.HorizonTuple(
            tuple(int(h) for h in args.horizons.split(",")), args.forecast
        )
        ds = market_data.build_dataset(series, ht, args.split)
        lo, hi = (float(v) for v in args.scaling_range.split(","))
        scaler = market_data.fit_scaler(ds, (lo, hi))
        market_data.save_dataset(ds, scaler, args.out)
        return {
            "dataset": str(args.out), "rows": ds.n_rows,
            "inputs": ds.n_inputs, "split_index": ds.split_index,
        }

    if args.command == "stage1":
        store = experiment.CampaignStore(args.store)
        if getattr(args, "prices", None):
            series = market_data.load_prices_csv(args.prices)
            market_data.save_prices_csv(series, store.prices_path)
        results = experiment.run_stage1(store, experiment.Grid.load(args.grid), args.seed)
        return {
            "models": len(results),
            "best_mse": float(results["training_mse"].min()),
            "results": str(store.root / "stage1" / "results.csv"),
        }

    if args.command == "stage2":
        store = experiment.CampaignStore(args.store)
        return experiment.run_stage2(
            store, experiment.Grid.load(args.grid), args.seed, jobs=args.jobs
        )

    if args.command == "validate":
        store = experiment.CampaignStore(args.store)
        return experiment.validate_campaign(
            store, s=args.splits, include_failed=args.include_failed,
            config_filter=_parse_configs(args.configs), seed=args.seed,
        )

    if args.command == "report":
        store = experiment.CampaignStore(args.store)
        return experiment.report_campaign(
            store, s=args.splits, include_failed=args.include_failed,
            config_filter=_parse_configs(args.configs), seed=args.seed,
        )

    raise ValueError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = run(args)
    except Exception as exc:  # machine-readable failure contract
        print(
            json.dumps({"error": str(exc), "type": type(exc).__name__}),
            file=sys.stderr,
        )
        return 1
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
