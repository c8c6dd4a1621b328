"""Price vectors and min-max normalized sliding-window history blocks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .market_data import MarketDataset

OHLC = slice(0, 4)


class InsufficientHistoryError(IndexError):
    pass


def price_matrix(dataset: MarketDataset) -> np.ndarray:
    """``(alpha, m + 1)`` prices; column 0 is the base currency (always 1)."""
    out = np.ones((dataset.n_minutes, dataset.n_assets + 1))
    out[:, 1:] = dataset.features[:, :, OHLC].mean(axis=2)
    return out


def price_vector_at(dataset: MarketDataset, t: int) -> np.ndarray:
    if not 0 <= t < dataset.n_minutes:
        raise IndexError(f"minute {t} outside [0, {dataset.n_minutes})")
    p = np.ones(dataset.n_assets + 1)
    p[1:] = dataset.features[t, :, OHLC].sum(axis=1) / 4.0
    return p


def normalize_block(raw: np.ndarray) -> np.ndarray:
    """Min-max scale every (asset, feature) column over the window axis.

    Works on a single ``(w, m, f)`` block or a batch ``(n, w, m, f)``; the
    window axis is always third from the end. Constant columns map to 0.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise FloatingPointError("history block contains non-finite values")
    lo = raw.min(axis=-3, keepdims=True)
    span = raw.max(axis=-3, keepdims=True) - lo
    flat = span == 0
    out = (raw - lo) / np.where(flat, 1.0, span)
    out[np.broadcast_to(flat, out.shape)] = 0.0
    # guard rounding on the upper end
    return np.clip(out, 0.0, 1.0, out=out)


@dataclass(frozen=True)
class HistoryBlock:
    data: np.ndarray
    end_index: int

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


def make_block(dataset: MarketDataset, end_index: int, window: int) -> HistoryBlock:
    if window < 1:
        raise ValueError("window must be >= 1")
    if end_index < window - 1:
        raise InsufficientHistoryError(f"end_index {end_index} needs {window} minutes of history")
    if end_index >= dataset.n_minutes:
        raise IndexError(f"end_index {end_index} outside dataset of {dataset.n_minutes} minutes")
    raw = dataset.features[end_index - window + 1 : end_index + 1]
    return HistoryBlock(normalize_block(raw), end_index)


class BlockStream:
    """All ``alpha - window + 1`` history blocks of a dataset.

    States are addressed by ``end_index`` (the block's last minute in the
    dataset), so valid states run from ``window - 1`` to ``alpha - 1``. Blocks
    are built on demand unless ``eager`` is set.
    """

    def __init__(self, dataset: MarketDataset, window: int, eager: bool = False):
        if window < 1:
            raise ValueError("window must be >= 1")
        if window > dataset.n_minutes:
            raise InsufficientHistoryError(
                f"window {window} longer than the {dataset.n_minutes}-minute dataset"
            )
        self.dataset = dataset
        self.window = window
        self.prices = price_matrix(dataset)
        self.prices.setflags(write=False)
        # (alpha - window + 1, m, 9, window) view, no copy
        self._windows = sliding_window_view(dataset.features, window, axis=0)
        self._cache = self._materialize(np.arange(len(self))) if eager else None

    def __len__(self) -> int:
        return self.dataset.n_minutes - self.window + 1

    @property
    def first_index(self) -> int:
        return self.window - 1

    @property
    def last_index(self) -> int:
        return self.dataset.n_minutes - 1

    @property
    def block_shape(self) -> tuple[int, int, int]:
        return (self.window, self.dataset.n_assets, self.dataset.features.shape[2])

    def indices(self) -> range:
        return range(self.first_index, self.last_index + 1)

    def _materialize(self, pos: np.ndarray) -> np.ndarray:
        raw = np.moveaxis(self._windows[pos], -1, 1)
        return normalize_block(raw)

    def _positions(self, end_indices) -> np.ndarray:
        pos = np.asarray(end_indices, dtype=np.int64) - self.first_index
        if pos.size and (pos.min() < 0 or pos.max() >= len(self)):
            raise IndexError(f"state index outside [{self.first_index}, {self.last_index}]")
        return pos

    def blocks(self, end_indices) -> np.ndarray:
        """Stacked normalized blocks, shape ``(n, window, m, 9)``."""
        pos = self._positions(end_indices)
        if self._cache is not None:
            return self._cache[pos]
        return self._materialize(pos)

    def block(self, end_index: int) -> HistoryBlock:
        return HistoryBlock(self.blocks([end_index])[0], int(end_index))

    def price(self, end_index: int) -> np.ndarray:
        return self.prices[end_index]

    def timestamp(self, end_index: int) -> int:
        return int(self.dataset.timestamps[end_index])
