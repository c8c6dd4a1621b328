"""Command-line entry point: fetch, preprocess, train, backtest, baseline, gridsearch, report.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 validation failure.
Every subcommand that produces files writes ``<output>.manifest.json`` next to them.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .agent import TrainingConfig, run_policy, train
from .baselines import EG_ETA, PAMR_EPS, STRATEGIES, strategy_run
from .config import ConfigError, config_echo, load_config
from .environment import EnvConfig, clipped_reward, read_equity_csv, write_equity_csv
from .evaluation import BacktestReport, build_report, grid_search, write_drawdown_csv
from .market_data import MarketDataError, fetch_klines, load_directory, write_kline_csv
from .pipeline import GridRunner, data_fingerprint, load_dataset, load_with_warmup
from .preprocessing import BlockStream, price_matrix
from .qnet import ShapeError, load_checkpoint, save_checkpoint

logger = logging.getLogger("dqn_trader")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VALIDATION = 0, 1, 2, 3
VALIDATION_ERRORS = (ConfigError, MarketDataError, ShapeError, ValueError)


def parse_time(text: str) -> int:
    """ISO-8601 (naive means UTC) -> epoch milliseconds."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO-8601 timestamp: {text!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000)


def _csv_list(kind):
    def parse(text: str):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def write_manifest(primary: Path, subcommand: str, *, config=None, fingerprint=None, seed=None,
                   artifacts=(), extra=None) -> Path:
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "data_fingerprint": fingerprint,
        "seed": seed,
        "artifacts": sorted(Path(a).name for a in artifacts),
        "tool_version": __version__,
    }
    if extra:
        manifest.update(extra)
    path = primary.with_name(primary.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def cmd_fetch(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for symbol in args.symbols:
        series = fetch_klines(args.endpoint, symbol, args.start, args.end)
        written.append(write_kline_csv(series, out / f"{symbol}.csv"))
        print(f"{symbol}: {len(series)} klines")
    write_manifest(out / "fetch", "fetch", fingerprint=data_fingerprint(out, args.symbols),
                   artifacts=written, extra={"endpoint": args.endpoint, "start": args.start, "end": args.end})
    return EXIT_OK


def cmd_preprocess(args) -> int:
    dataset = load_dataset(args.data, n_assets=args.assets)
    stream = BlockStream(dataset, args.window)
    print(f"assets: {', '.join(dataset.symbols)}")
    print(f"minutes: {dataset.n_minutes}  padding: {dict(zip(dataset.symbols, dataset.n_padding))}")
    print(f"blocks: {len(stream)}  shape: {stream.block_shape}")
    if args.check:
        sample = stream.blocks([stream.first_index, stream.last_index])
        if sample.min() < 0 or sample.max() > 1:
            raise ValueError("normalized block outside [0, 1]")
        print("check: ok")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, env_cfg = load_config(args.config) if args.config else (TrainingConfig(), EnvConfig())
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    dataset = load_dataset(args.data, args.train_start, args.train_end, n_assets=cfg.number_of_assets)
    stream = BlockStream(dataset, cfg.window_size)
    net, log = train(stream, env_cfg, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "symbols": list(dataset.symbols),
        "train_period": {"start": dataset.period_start, "end": dataset.period_end},
        "config": config_echo(cfg, env_cfg),
        "seed": cfg.seed,
    }
    save_checkpoint(out, net, meta=meta)
    log_path = log.write_csv(out.with_suffix(".log.csv"))
    write_manifest(out, "train", config=meta["config"], seed=cfg.seed,
                   fingerprint=data_fingerprint(args.data, dataset.symbols), artifacts=[out, log_path])
    losses = log.losses()
    print(f"trained {len(log)} steps, {losses.size} updates, final loss "
          f"{losses[-1] if losses.size else float('nan'):.6g}")
    return EXIT_OK


def _period(start: int, end: int) -> dict:
    return {"start": start, "end": end}


def cmd_backtest(args) -> int:
    net, header = load_checkpoint(args.model)
    meta = header["meta"]
    window = net.input_shape[0]
    dataset = load_with_warmup(args.data, meta["symbols"], args.test_start, args.test_end, window)
    env_cfg = EnvConfig(
        initial_amount=meta["config"]["initial_amount"],
        beta=meta["config"]["variable_ratio_amplification_constant"],
        commission_rate=meta["config"]["commission_rate"],
    )
    run = run_policy(net, BlockStream(dataset, window), env_cfg)
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    curve_path = write_equity_csv(run.rows, report_path.with_suffix(".curve.csv"))
    report = build_report(run.curve, "dqn", _period(args.test_start, args.test_end),
                          meta["config"], meta.get("seed"), curve_path.name)
    report.save(report_path)
    write_manifest(report_path, "backtest", config=meta["config"], seed=meta.get("seed"),
                   fingerprint=data_fingerprint(args.data, meta["symbols"]),
                   artifacts=[report_path, curve_path], extra={"model": Path(args.model).name})
    print(f"profit {report.profit:.6g}  sharpe {report.sharpe}  mdd {report.mdd:.6g}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    dataset = load_dataset(args.data, args.start, args.end, n_assets=args.assets)
    prices = price_matrix(dataset)
    run = strategy_run(prices, args.method, eta=args.eg_eta, eps=args.pamr_eps,
                       include_cash=args.include_cash, initial_value=args.initial_amount)
    rows = [(0, int(dataset.timestamps[0]), None, None, None, float(run.curve[0]))]
    for t in range(1, len(run.curve)):
        rows.append((t, int(dataset.timestamps[t]), None, None,
                     clipped_reward(run.curve[t - 1], run.curve[t], 5), float(run.curve[t])))
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    curve_path = write_equity_csv(rows, report_path.with_suffix(".curve.csv"))
    config = {"method": args.method, "eg_eta": args.eg_eta, "pamr_eps": args.pamr_eps,
              "include_cash": args.include_cash, "symbols": list(dataset.symbols)}
    report = build_report(run.curve, args.method, _period(args.start, args.end), config, None, curve_path.name)
    report.save(report_path)
    write_manifest(report_path, "baseline", config=config,
                   fingerprint=data_fingerprint(args.data, dataset.symbols), artifacts=[report_path, curve_path])
    print(f"{args.method}: profit {report.profit:.6g}  sharpe {report.sharpe}  mdd {report.mdd:.6g}")
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    cfg, env_cfg = load_config(args.config) if args.config else (TrainingConfig(), EnvConfig())
    train_data = load_dataset(args.data, args.train_start, args.train_end, n_assets=cfg.number_of_assets)
    max_window = max(args.windows)
    test_data = load_with_warmup(args.data, train_data.symbols, args.test_start, args.test_end, max_window)
    runner = GridRunner(train_data, test_data, cfg, env_cfg, max_window=max_window)
    result = grid_search(args.windows, args.temps, args.repeats, runner, base_seed=args.seed, workers=args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(result.to_json(), encoding="utf-8")
    write_manifest(out, "gridsearch", config=config_echo(cfg, env_cfg), seed=args.seed,
                   fingerprint=data_fingerprint(args.data, train_data.symbols), artifacts=[out])
    print(f"best (window, temperature, mean profit): {result.best()}")
    if result.failures:
        print(f"{len(result.failures)} cell(s) had failed runs", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    src = Path(args.input)
    report = BacktestReport.load(src)
    print(report.to_json(), end="")
    if args.emit_csv:
        if not report.curve_file:
            raise ValueError(f"{src} has no curve_file to export")
        rows = read_equity_csv(src.parent / report.curve_file)
        curve = np.array([float(r["total_value"]) for r in rows])
        write_drawdown_csv(curve, args.emit_csv)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    version = f"%(prog)s {__version__}"
    parser = argparse.ArgumentParser(prog="dqn-trader", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=version)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--version", action="version", version=version)
        p.set_defaults(func=fn)
        return p

    p = add("fetch", cmd_fetch, "download 1-minute klines into <SYMBOL>.csv files")
    p.add_argument("--endpoint", required=True)
    p.add_argument("--symbols", required=True, type=_csv_list(str))
    p.add_argument("--start", required=True, type=parse_time)
    p.add_argument("--end", required=True, type=parse_time)
    p.add_argument("--out", required=True)

    p = add("preprocess", cmd_preprocess, "validate a data directory and report block count and shape")
    p.add_argument("--data", required=True)
    p.add_argument("--window", required=True, type=int)
    p.add_argument("--assets", type=int, default=None, help="keep the top-volume N assets")
    p.add_argument("--check", action="store_true")

    p = add("train", cmd_train, "train a Q-network on a period and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--train-start", required=True, type=parse_time)
    p.add_argument("--train-end", required=True, type=parse_time)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)

    p = add("backtest", cmd_backtest, "run a trained checkpoint greedily over a test period")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--test-start", required=True, type=parse_time)
    p.add_argument("--test-end", required=True, type=parse_time)
    p.add_argument("--report", required=True)

    p = add("baseline", cmd_baseline, "run UBAH, UCRP, EG or PAMR over a period")
    p.add_argument("--method", required=True, choices=STRATEGIES)
    p.add_argument("--data", required=True)
    p.add_argument("--start", required=True, type=parse_time)
    p.add_argument("--end", required=True, type=parse_time)
    p.add_argument("--assets", type=int, default=None)
    p.add_argument("--eg-eta", type=float, default=EG_ETA)
    p.add_argument("--pamr-eps", type=float, default=PAMR_EPS)
    p.add_argument("--include-cash", action="store_true")
    p.add_argument("--initial-amount", type=float, default=1.0)
    p.add_argument("--report", required=True)

    p = add("gridsearch", cmd_gridsearch, "mean backtest profit over a window x hyper-temperature grid")
    p.add_argument("--windows", required=True, type=_csv_list(int))
    p.add_argument("--temps", required=True, type=_csv_list(float))
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--train-start", required=True, type=parse_time)
    p.add_argument("--train-end", required=True, type=parse_time)
    p.add_argument("--test-start", required=True, type=parse_time)
    p.add_argument("--test-end", required=True, type=parse_time)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("report", cmd_report, "print a report and export its curve with drawdowns")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--emit-csv")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"dqn-trader {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"dqn-trader {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        logger.debug("failure", exc_info=True)
        print(f"dqn-trader {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
