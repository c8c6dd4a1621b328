"""Glue between files on disk and the train / backtest / baseline runs."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .agent import TrainingConfig, run_policy, train
from .environment import EnvConfig, profit
from .market_data import (
    MINUTE_MS,
    AssetSeries,
    MarketDataError,
    MarketDataset,
    align_and_pad,
    load_directory,
    select_top_assets,
)
from .preprocessing import BlockStream


def data_fingerprint(directory, symbols=None) -> str:
    """sha256 over the names and bytes of the kline CSVs used."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.csv")) if symbols is None else [directory / f"{s}.csv" for s in sorted(symbols)]
    h = hashlib.sha256()
    for p in paths:
        h.update(p.name.encode())
        h.update(b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()


def _restrict(series: list[AssetSeries], start: int | None, end: int | None) -> list[AssetSeries]:
    out = [s.between(start, end) for s in series]
    empty = [s.symbol for s in out if len(s) == 0]
    if empty:
        raise MarketDataError(f"no records in the requested period for {', '.join(empty)}")
    return out


def load_dataset(
    directory,
    start: int | None = None,
    end: int | None = None,
    n_assets: int | None = None,
    symbols=None,
) -> MarketDataset:
    """Load CSVs, cut to ``[start, end)``, keep the top-volume ``n_assets`` and align them.

    With ``symbols`` given, exactly those assets are used in that order.
    """
    series = _restrict(load_directory(directory, symbols), start, end)
    if symbols is None and n_assets is not None:
        series = select_top_assets(series, n_assets)
    return align_and_pad(series)


def load_with_warmup(directory, symbols, start: int, end: int, window: int) -> MarketDataset:
    """Like :func:`load_dataset` but reaching ``window - 1`` minutes before ``start``
    so the first tradable state sits at ``start``."""
    return load_dataset(directory, start - (window - 1) * MINUTE_MS, end, symbols=symbols)


@dataclass
class CycleResult:
    profit: float
    curve: np.ndarray
    train_log_len: int


def train_and_backtest(
    train_data: MarketDataset,
    test_data: MarketDataset,
    config: TrainingConfig,
    env_config: EnvConfig | None = None,
) -> CycleResult:
    env_config = env_config or EnvConfig()
    net, log = train(BlockStream(train_data, config.window_size), env_config, config)
    run = run_policy(net, BlockStream(test_data, config.window_size), env_config)
    return CycleResult(profit(run.curve), run.curve, len(log))


class GridRunner:
    """Picklable ``(window, temperature, seed) -> profit`` callable for :func:`grid_search`.

    ``test_data`` must carry enough leading minutes for the largest window; the
    test stream for window ``w`` starts ``max_window - w`` minutes in so that
    every cell trades the same minutes.
    """

    def __init__(self, train_data: MarketDataset, test_data: MarketDataset, config: TrainingConfig,
                 env_config: EnvConfig | None = None, max_window: int | None = None):
        self.train_data = train_data
        self.test_data = test_data
        self.config = config
        self.env_config = env_config or EnvConfig()
        self.max_window = max_window

    def __call__(self, window: int, temperature: float, seed: int) -> float:
        cfg = replace(self.config, window_size=int(window), hyper_temperature=float(temperature), seed=int(seed))
        test = self.test_data
        if self.max_window is not None:
            test = test.slice_rows(self.max_window - int(window), test.n_minutes)
        return train_and_backtest(self.train_data, test, cfg, self.env_config).profit
