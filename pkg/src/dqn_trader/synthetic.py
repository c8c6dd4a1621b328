"""Deterministic and random synthetic markets for tests, demos and smoke runs."""
from __future__ import annotations

import numpy as np

from .market_data import MINUTE_MS, N_FEATURES, AssetSeries

DEFAULT_START = 1_500_000_000_000 - 1_500_000_000_000 % MINUTE_MS


def _series_from_prices(symbol: str, prices: np.ndarray, start: int, volume=None) -> AssetSeries:
    n = len(prices)
    feats = np.zeros((n, N_FEATURES))
    prev = np.concatenate([[prices[0]], prices[:-1]])
    feats[:, 0] = prev
    feats[:, 3] = prices
    feats[:, 1] = np.maximum(prev, prices)
    feats[:, 2] = np.minimum(prev, prices)
    vol = np.ones(n) if volume is None else np.asarray(volume, dtype=np.float64)
    typical = feats[:, :4].mean(axis=1)
    feats[:, 4] = vol
    feats[:, 5] = np.round(10 * vol)
    feats[:, 6] = vol * typical
    feats[:, 7] = 0.5 * vol
    feats[:, 8] = 0.5 * vol * typical
    ts = start + MINUTE_MS * np.arange(n, dtype=np.int64)
    return AssetSeries(symbol, ts, feats)


def flat_ohlc_series(symbol: str, prices, start: int = DEFAULT_START, volume=None) -> AssetSeries:
    """Klines with open = high = low = close = price, so the mean price is exact."""
    prices = np.asarray(prices, dtype=np.float64)
    feats = np.zeros((len(prices), N_FEATURES))
    feats[:, :4] = prices[:, None]
    vol = np.ones(len(prices)) if volume is None else np.asarray(volume, dtype=np.float64)
    feats[:, 4] = vol
    feats[:, 5] = np.round(10 * vol)
    feats[:, 6] = vol * prices
    feats[:, 7] = 0.5 * vol
    feats[:, 8] = 0.5 * vol * prices
    ts = start + MINUTE_MS * np.arange(len(prices), dtype=np.int64)
    return AssetSeries(symbol, ts, feats)


def alternating_prices(n_minutes: int, up: float = 0.05, down: float = -0.04, phase: int = 0) -> np.ndarray:
    """Price path that moves by ``up`` into even minutes and ``down`` into odd ones.

    ``phase=1`` gives the mirror path.
    """
    t = np.arange(1, n_minutes)
    moves = np.where((t + phase) % 2 == 0, 1 + up, 1 + down)
    return np.concatenate([[1.0], np.cumprod(moves)])


def alternating_market(n_minutes: int, start: int = DEFAULT_START, up: float = 0.05, down: float = -0.04):
    """Two assets: A rises by ``up`` on even minutes and falls on odd ones, B is the mirror."""
    return [
        flat_ohlc_series("AAA", alternating_prices(n_minutes, up, down, 0), start),
        flat_ohlc_series("BBB", alternating_prices(n_minutes, up, down, 1), start),
    ]


def random_walk_market(
    n_assets: int,
    n_minutes: int,
    seed: int = 0,
    start: int = DEFAULT_START,
    vol: float = 0.002,
    listing_delays=None,
) -> list[AssetSeries]:
    """Geometric random walks with positive volumes; ``listing_delays`` drops leading minutes."""
    rng = np.random.default_rng(seed)
    out = []
    for j in range(n_assets):
        steps = rng.normal(0.0, vol, n_minutes)
        prices = 100.0 * (j + 1) * np.exp(np.cumsum(steps))
        volume = rng.gamma(2.0, 50.0 * (n_assets - j), n_minutes)
        s = _series_from_prices(f"C{j:02d}", prices, start, volume)
        delay = 0 if listing_delays is None else int(listing_delays[j])
        if delay:
            s = s.between(start + delay * MINUTE_MS, None)
        out.append(s)
    return out
