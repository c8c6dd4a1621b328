"""Minute-level kline ingestion: CSV files, REST fetch, asset selection and alignment.

An :class:`AssetSeries` stores its records column-wise (an int64 timestamp
vector and an ``(n, 9)`` float64 feature matrix) so that datasets at the scale
of several hundred thousand minutes stay cheap to hold and slice.
"""
from __future__ import annotations

import csv
import json
import logging
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MINUTE_MS = 60_000

FEATURES = (
    "open",
    "high",
    "low",
    "close",
    "volume",
    "num_trades",
    "quote_volume",
    "taker_buy_base",
    "taker_buy_quote",
)
CSV_COLUMNS = ("timestamp",) + FEATURES
N_FEATURES = len(FEATURES)

# kline REST payload position -> feature column (position 6, close time, is dropped)
_REST_POSITIONS = (1, 2, 3, 4, 5, 8, 7, 9, 10)


class MarketDataError(ValueError):
    """Base class for malformed or inconsistent market data."""


class KlineParseError(MarketDataError):
    def __init__(self, path, line: int, reason: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {reason}")


class OrderingError(MarketDataError):
    """Timestamps are duplicated or not increasing."""


class GapError(MarketDataError):
    """The 1-minute grid has a hole."""

    def __init__(self, symbol: str, missing_start: int, missing_end: int):
        self.symbol = symbol
        self.missing_start = missing_start
        self.missing_end = missing_end
        super().__init__(
            f"{symbol}: missing minutes [{missing_start}, {missing_end}] "
            f"({(missing_end - missing_start) // MINUTE_MS + 1} records)"
        )


class FetchError(RuntimeError):
    """Transport-level failure talking to the kline endpoint; safe to retry."""


class ProtocolError(MarketDataError):
    """The kline endpoint answered with something that is not the documented shape."""


class KlineRecord(NamedTuple):
    timestamp: int
    open: float
    high: float
    low: float
    close: float
    volume: float
    num_trades: float
    quote_volume: float
    taker_buy_base: float
    taker_buy_quote: float

    @property
    def is_padding(self) -> bool:
        return all(v == 0.0 for v in self[1:])


def _check_grid(symbol: str, timestamps: np.ndarray) -> None:
    if timestamps.size < 2:
        return
    diffs = np.diff(timestamps)
    bad = np.flatnonzero(diffs <= 0)
    if bad.size:
        i = int(bad[0])
        kind = "duplicate" if diffs[i] == 0 else "non-monotonic"
        raise OrderingError(
            f"{symbol}: {kind} timestamp {int(timestamps[i + 1])} after {int(timestamps[i])}"
        )
    gaps = np.flatnonzero(diffs != MINUTE_MS)
    if gaps.size:
        i = int(gaps[0])
        if diffs[i] % MINUTE_MS:
            raise OrderingError(f"{symbol}: timestamp {int(timestamps[i + 1])} is off the minute grid")
        raise GapError(symbol, int(timestamps[i]) + MINUTE_MS, int(timestamps[i + 1]) - MINUTE_MS)


@dataclass(frozen=True, eq=False)
class AssetSeries:
    """Time-ordered 1-minute klines of one asset.

    ``features`` columns follow :data:`FEATURES`. Padding records (all-zero
    features) may only form a prefix.
    """

    symbol: str
    timestamps: np.ndarray
    features: np.ndarray
    n_padding: int = 0

    def __post_init__(self):
        ts = np.ascontiguousarray(self.timestamps, dtype=np.int64)
        feats = np.ascontiguousarray(self.features, dtype=np.float64).reshape(len(ts), N_FEATURES)
        _check_grid(self.symbol, ts)
        ts.setflags(write=False)
        feats.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return len(self.timestamps)

    def __iter__(self) -> Iterator[KlineRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i: int) -> KlineRecord:
        return KlineRecord(int(self.timestamps[i]), *map(float, self.features[i]))

    @property
    def records(self) -> list[KlineRecord]:
        return list(self)

    @property
    def listed_at(self) -> int | None:
        if self.n_padding >= len(self):
            return None
        return int(self.timestamps[self.n_padding])

    @property
    def total_volume(self) -> float:
        return float(self.features[:, FEATURES.index("volume")].sum())

    def between(self, start: int | None = None, end: int | None = None) -> "AssetSeries":
        """Records with ``start <= timestamp < end``."""
        lo = 0 if start is None else int(np.searchsorted(self.timestamps, start, "left"))
        hi = len(self) if end is None else int(np.searchsorted(self.timestamps, end, "left"))
        return AssetSeries(
            self.symbol,
            self.timestamps[lo:hi],
            self.features[lo:hi],
            n_padding=max(0, min(self.n_padding - lo, hi - lo)),
        )

    @classmethod
    def from_records(cls, symbol: str, records: Sequence[Sequence[float]]) -> "AssetSeries":
        if len(records) == 0:
            return cls(symbol, np.zeros(0, np.int64), np.zeros((0, N_FEATURES)))
        ts = np.array([int(r[0]) for r in records], dtype=np.int64)
        feats = np.array([[float(v) for v in r[1:]] for r in records], dtype=np.float64)
        return cls(symbol, ts, feats)


@dataclass(frozen=True, eq=False)
class MarketDataset:
    """Rectangular ``(alpha, m, 9)`` view over ``m`` aligned assets."""

    symbols: tuple[str, ...]
    timestamps: np.ndarray
    features: np.ndarray
    n_padding: tuple[int, ...]
    base_currency: str = "USDT"
    assets: tuple[AssetSeries, ...] = field(default=(), repr=False)

    def __post_init__(self):
        self.timestamps.setflags(write=False)
        self.features.setflags(write=False)

    @property
    def n_assets(self) -> int:
        return len(self.symbols)

    @property
    def n_minutes(self) -> int:
        return len(self.timestamps)

    @property
    def period_start(self) -> int:
        return int(self.timestamps[0])

    @property
    def period_end(self) -> int:
        return int(self.timestamps[-1])

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.features.shape  # type: ignore[return-value]

    def slice_rows(self, lo: int, hi: int) -> "MarketDataset":
        lo = max(0, lo)
        hi = min(self.n_minutes, hi)
        if hi <= lo:
            raise MarketDataError(f"empty row range [{lo}, {hi})")
        pads = tuple(max(0, min(p - lo, hi - lo)) for p in self.n_padding)
        return MarketDataset(
            self.symbols,
            self.timestamps[lo:hi].copy(),
            self.features[lo:hi].copy(),
            pads,
            self.base_currency,
        )

    def between(self, start: int | None = None, end: int | None = None) -> "MarketDataset":
        """Minutes with ``start <= timestamp < end``."""
        lo = 0 if start is None else int(np.searchsorted(self.timestamps, start, "left"))
        hi = self.n_minutes if end is None else int(np.searchsorted(self.timestamps, end, "left"))
        return self.slice_rows(lo, hi)


def parse_kline_csv(path, symbol: str | None = None) -> AssetSeries:
    path = Path(path)
    symbol = symbol or path.stem
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise KlineParseError(path, 1, f"header must be {','.join(CSV_COLUMNS)}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(CSV_COLUMNS):
                raise KlineParseError(path, reader.line_num, f"expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            try:
                ts = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise KlineParseError(path, reader.line_num, str(exc)) from None
            rows.append((ts, *vals))
    return AssetSeries.from_records(symbol, rows)


def write_kline_csv(series: AssetSeries, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for ts, row in zip(series.timestamps.tolist(), series.features.tolist()):
            writer.writerow([ts, *map(repr, row)])
    return path


def load_directory(directory, symbols: Sequence[str] | None = None) -> list[AssetSeries]:
    """Parse every ``<SYMBOL>.csv`` in ``directory`` (or just ``symbols``), sorted by symbol."""
    directory = Path(directory)
    if symbols is None:
        paths = sorted(directory.glob("*.csv"))
    else:
        paths = [directory / f"{s}.csv" for s in symbols]
    if not paths:
        raise MarketDataError(f"no kline CSV files in {directory}")
    return [parse_kline_csv(p) for p in paths]


def select_top_assets(candidates: Sequence[AssetSeries], m: int) -> list[AssetSeries]:
    """The ``m`` series with the largest summed volume, ties broken by symbol."""
    if m < 1 or m > len(candidates):
        raise ValueError(f"cannot select {m} assets from {len(candidates)} candidates")
    ranked = sorted(candidates, key=lambda s: (-s.total_volume, s.symbol))
    return ranked[:m]


def align_and_pad(assets: Sequence[AssetSeries], base_currency: str = "USDT") -> MarketDataset:
    """Trim to a common last minute and zero-pad late listings at the front."""
    if not assets:
        raise ValueError("align_and_pad needs at least one asset")
    for a in assets:
        if len(a) == 0:
            raise MarketDataError(f"{a.symbol}: empty series")
    end = min(int(a.timestamps[-1]) for a in assets)
    trimmed = [a.between(None, end + 1) for a in assets]
    for a in trimmed:
        if len(a) == 0:
            raise MarketDataError(f"{a.symbol}: no records at or before common end {end}")
        if int(a.timestamps[-1]) != end:
            raise MarketDataError(f"{a.symbol}: not on the common minute grid ending at {end}")
    alpha = max(len(a) for a in trimmed)
    timestamps = end - MINUTE_MS * np.arange(alpha - 1, -1, -1, dtype=np.int64)
    features = np.zeros((alpha, len(trimmed), N_FEATURES))
    pads = []
    out_assets = []
    for j, a in enumerate(trimmed):
        pad = alpha - len(a)
        features[pad:, j, :] = a.features
        pads.append(a.n_padding + pad)
        out_assets.append(AssetSeries(a.symbol, timestamps, features[:, j, :], n_padding=a.n_padding + pad))
    return MarketDataset(
        tuple(a.symbol for a in trimmed),
        timestamps,
        features,
        tuple(pads),
        base_currency,
        tuple(out_assets),
    )


def _http_get_json(url: str, timeout: float):
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            body = resp.read()
    except (urllib.error.URLError, OSError) as exc:
        raise FetchError(f"GET {url}: {exc}") from exc
    try:
        return json.loads(body)
    except ValueError as exc:
        raise ProtocolError(f"GET {url}: body is not JSON") from exc


def _kline_row(item) -> tuple:
    if not isinstance(item, list) or len(item) < 11:
        raise ProtocolError(f"kline entry must be an array of >= 11 fields, got {item!r:.80}")
    try:
        return (int(item[0]), *(float(item[i]) for i in _REST_POSITIONS))
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"bad kline entry {item!r:.80}: {exc}") from None


def fetch_klines(
    endpoint: str,
    symbol: str,
    start: int,
    end: int,
    *,
    limit: int = 1000,
    retries: int = 3,
    backoff: float = 0.5,
    timeout: float = 10.0,
) -> AssetSeries:
    """Download 1-minute klines for ``[start, end)`` (epoch ms), following pagination."""
    if end <= start:
        raise MarketDataError(f"{symbol}: empty interval [{start}, {end})")
    rows: list[tuple] = []
    cursor = start
    while cursor < end:
        query = urllib.parse.urlencode(
            {"symbol": symbol, "interval": "1m", "startTime": cursor, "endTime": end - 1, "limit": limit}
        )
        url = f"{endpoint.rstrip('/')}/klines?{query}"
        for attempt in range(retries + 1):
            try:
                payload = _http_get_json(url, timeout)
                break
            except FetchError:
                if attempt == retries:
                    raise
                logger.warning("fetch %s failed (attempt %d), retrying", symbol, attempt + 1)
                time.sleep(backoff * 2**attempt)
        if not isinstance(payload, list):
            raise ProtocolError(f"{symbol}: expected a JSON array, got {type(payload).__name__}")
        page = [r for r in map(_kline_row, payload) if start <= r[0] < end]
        if not page:
            break
        rows.extend(page)
        cursor = page[-1][0] + MINUTE_MS
    if not rows:
        raise MarketDataError(f"{symbol}: no klines returned for [{start}, {end})")
    return AssetSeries.from_records(symbol, rows)
