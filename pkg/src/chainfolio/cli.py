"""Command-line entry point wiring ingestion, refinement, training,
registry management, backtesting, and reporting.

Exit codes: 0 on success, 1 on domain errors, 2 on usage errors.
Every run logs the effective configuration and seed to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ENV_DATA_DIR, RunConfig, load_config, parse_ts
from .cryptomodule import save_cm, train_cm
from .datastore import AssetId, CsvStore, parse_metrics_csv, parse_ohlcv_csv
from .errors import ChainfolioError, ConfigError
from .metrics import SECONDS_PER_DAY, stats_csv
from .portfolio import BacktestReport, CmRegistry, run_backtest
from .refinery import refine_features, select_valid_metrics

log = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chainfolio",
        description="Offline crypto portfolio pipeline: ingest, refine, train, backtest, report.",
    )
    parser.add_argument("-c", "--config", help="key=value config file")
    parser.add_argument("--data-dir", help=f"data directory (overrides config and ${ENV_DATA_DIR})")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load OHLCV and metric CSV files into the store")
    p.add_argument("--asset", required=True, help="asset symbol, e.g. BTC or BTC-USDT")
    p.add_argument("--ohlcv", help="OHLCV CSV: ts,open,high,low,close,volume")
    p.add_argument("--metrics", help="metric CSV: ts,name,value")

    p = sub.add_parser("refine", help="select metrics and emit refined features")
    p.add_argument("--asset", required=True)
    p.add_argument("--from", dest="start", help="range start (date or epoch), default: train split")
    p.add_argument("--to", dest="end", help="range end, inclusive date or epoch")
    p.add_argument("--table", help="write the correlation table CSV (metric,horizon,r,rank) here")
    p.add_argument("--out", help="write refined components CSV here")

    p = sub.add_parser("train-cm", help="train one module per asset")
    p.add_argument("--assets", required=True, help="comma-separated asset list")
    p.add_argument("--seed", type=int, help="base seed (per-asset seeds derive from it)")
    p.add_argument("--use-eam", action="store_true", default=None, help="train the signal agent too")
    p.add_argument("--jobs", type=int, default=1, help="parallel training processes")
    p.add_argument("--out-dir", help="module output directory, default <data>/models")

    p = sub.add_parser("registry", help="manage the trained-module registry")
    reg = p.add_subparsers(dest="registry_command", required=True)
    q = reg.add_parser("list", help="list registered modules and their status")
    q.add_argument("--registry", help="registry directory, default <data>/registry")
    q = reg.add_parser("add", help="validate and register a module file")
    q.add_argument("file")
    q.add_argument("--asset", help="expected asset key (checked against the file)")
    q.add_argument("--registry")
    q = reg.add_parser("remove", help="unregister a module")
    q.add_argument("asset")
    q.add_argument("--registry")

    p = sub.add_parser("backtest", help="run the fee-aware portfolio backtest")
    p.add_argument("--portfolio", required=True, help="comma-separated asset list, e.g. BTC,STORJ,BLZ")
    p.add_argument("--from", dest="start", help="range start, default: backtest split")
    p.add_argument("--to", dest="end", help="range end (inclusive date), default: backtest split")
    p.add_argument("--fee", type=float, help="proportional fee rate")
    p.add_argument("--rebalance-interval", type=int, help="bars between reallocations")
    p.add_argument("--retrain-days", type=int, help="retrain cadence in days, 0 disables")
    p.add_argument("--registry", help="registry directory, default <data>/registry")
    p.add_argument("--out", required=True, help="report output directory")

    p = sub.add_parser("report", help="render a stored backtest report")
    p.add_argument("--report", required=True, help="directory holding report.json")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    _setup_logging(args.verbose)
    try:
        cfg = load_config(args.config, overrides={"data_dir": args.data_dir}, env=os.environ)
        log.info("effective config: %s", json.dumps(cfg.to_doc(), sort_keys=True))
        log.info("seed: %d", cfg.seed)
        return _dispatch(args, cfg)
    except ChainfolioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _setup_logging(verbose: bool) -> None:
    if not logging.getLogger().handlers:
        logging.basicConfig(
            stream=sys.stderr,
            level=logging.DEBUG if verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
        )


def _dispatch(args, cfg: RunConfig) -> int:
    store = CsvStore(cfg.data_dir)
    if args.command == "ingest":
        return _cmd_ingest(args, cfg, store)
    if args.command == "refine":
        return _cmd_refine(args, cfg, store)
    if args.command == "train-cm":
        return _cmd_train(args, cfg)
    if args.command == "registry":
        return _cmd_registry(args, cfg)
    if args.command == "backtest":
        return _cmd_backtest(args, cfg, store)
    if args.command == "report":
        return _cmd_report(args)
    raise ConfigError(f"unknown command {args.command!r}")


def _registry_dir(args, cfg: RunConfig) -> Path:
    if getattr(args, "registry", None):
        return Path(args.registry)
    return Path(cfg.data_dir) / "registry"


def _inclusive_end(text: str, interval: int) -> int:
    """A bare date means 'through the end of that UTC day'."""
    ts = parse_ts(text)
    stripped = text.strip()
    # ten-digit epoch strings are not dates, even though both are 10 chars
    if len(stripped) == 10 and not stripped.lstrip("-").isdigit():
        ts += SECONDS_PER_DAY - interval
    return ts


def _cmd_ingest(args, cfg: RunConfig, store: CsvStore) -> int:
    if not args.ohlcv and not args.metrics:
        raise ConfigError("ingest needs --ohlcv and/or --metrics")
    asset = AssetId.parse(args.asset)
    if args.ohlcv:
        added = store.ingest_ohlcv(asset, parse_ohlcv_csv(args.ohlcv))
        print(f"{asset.key}: {added} new bars")
    if args.metrics:
        counts = store.ingest_metrics(asset, parse_metrics_csv(args.metrics))
        total = sum(counts.values())
        print(f"{asset.key}: {total} metric points across {len(counts)} metrics")
    return 0


def _cmd_refine(args, cfg: RunConfig, store: CsvStore) -> int:
    asset = AssetId.parse(args.asset)
    start = parse_ts(args.start) if args.start else cfg.data_ranges().train[0]
    end = _inclusive_end(args.end, cfg.interval) if args.end else cfg.data_ranges().train[1]
    frame = store.align(asset, start, end, cfg.interval, cfg.fill_limit)
    selected = select_valid_metrics(frame, cfg.horizon_config())
    for name in selected.names:
        freq = selected.frequency[name]
        print(f"{name}\tfrequency={freq}")
    if selected.shortfall:
        print("note: fewer qualifying metrics than requested", file=sys.stderr)
    if args.table:
        _write_table_csv(args.table, selected.table)
        print(f"correlation table written to {args.table}")
    if args.out:
        refined = refine_features(
            frame, selected.names, cfg.norm_window, cfg.pca_window, cfg.variance_target, cfg.epsilon
        )
        _write_refined_csv(args.out, refined)
        print(f"refined features written to {args.out}")
    return 0


def _write_table_csv(path: str, table) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["metric", "horizon", "r", "rank"])
        for name, horizon, r, rank in table.rows():
            writer.writerow([name, horizon, "" if r is None else repr(r), "" if rank is None else rank])


def _write_refined_csv(path: str, refined) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["ts", "n_components"] + [f"c{i+1}" for i in range(refined.c_max)])
        for i in range(len(refined.timestamps)):
            if not refined.valid[i]:
                continue
            row = [int(refined.timestamps[i]), int(refined.n_components[i])]
            row += [repr(float(x)) for x in refined.components[i]]
            writer.writerow(row)


def derive_asset_seed(base_seed: int, asset_key: str) -> int:
    """Stable per-asset training seed from the base seed."""
    digest = hashlib.sha256(f"{base_seed}:{asset_key}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _train_worker(payload) -> tuple[str, str]:
    cfg, key, use_eam, out_dir = payload
    store = CsvStore(cfg.data_dir)
    asset = AssetId.parse(key)
    seed = derive_asset_seed(cfg.seed, asset.key)
    cm = train_cm(
        store, asset, cfg.data_ranges(), cfg.cm_settings(seed), use_eam, cfg.interval, cfg.fill_limit
    )
    path = Path(out_dir) / f"{asset.key}.cm"
    save_cm(cm, path)
    return asset.key, str(path)


def _cmd_train(args, cfg: RunConfig) -> int:
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be nonnegative")
        cfg.seed = args.seed
    use_eam = cfg.use_eam if args.use_eam is None else True
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    keys = [AssetId.parse(a).key for a in args.assets.split(",") if a.strip()]
    if not keys:
        raise ConfigError("no assets given")
    out_dir = Path(args.out_dir) if args.out_dir else Path(cfg.data_dir) / "models"
    out_dir.mkdir(parents=True, exist_ok=True)
    payloads = [(cfg, key, use_eam, str(out_dir)) for key in keys]
    if args.jobs == 1 or len(keys) == 1:
        results = [_train_worker(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_train_worker, payloads))
    for key, path in sorted(results):
        print(f"{key}\t{path}")
    return 0


def _cmd_registry(args, cfg: RunConfig) -> int:
    registry = CmRegistry(_registry_dir(args, cfg))
    if args.registry_command == "list":
        print("asset\tfile\tstatus")
        for asset, filename, status in registry.status():
            print(f"{asset}\t{filename}\t{status}")
        return 0
    if args.registry_command == "add":
        key = registry.add(args.file, args.asset)
        print(f"registered {key}")
        return 0
    if args.registry_command == "remove":
        registry.remove(args.asset)
        print(f"removed {AssetId.parse(args.asset).key}")
        return 0
    raise ConfigError(f"unknown registry command {args.registry_command!r}")


def _cmd_backtest(args, cfg: RunConfig, store: CsvStore) -> int:
    assets = tuple(a for a in args.portfolio.split(",") if a.strip())
    if not assets:
        raise ConfigError("empty --portfolio")
    start = parse_ts(args.start) if args.start else None
    end = _inclusive_end(args.end, cfg.interval) if args.end else None
    bt_cfg = cfg.backtest_config(
        assets,
        start_ts=start,
        end_ts=end,
        fee_rate=args.fee,
        rebalance_interval=args.rebalance_interval,
        retrain_days=args.retrain_days,
    )
    registry = CmRegistry(_registry_dir(args, cfg))
    report = run_backtest(registry, bt_cfg, store)
    report.write(args.out)
    print(report.table())
    print(f"report written to {args.out}")
    return 0


def _cmd_report(args) -> int:
    report = BacktestReport.load(args.report)
    if args.format == "csv":
        sys.stdout.write(stats_csv(report.summary))
    else:
        print(report.table())
    return 0


if __name__ == "__main__":
    sys.exit(main())
