"""Backtest metrics, JSON reports and the window/temperature grid search."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .environment import profit

logger = logging.getLogger(__name__)

__all__ = [
    "UndefinedSharpeError", "per_step_returns", "profit", "sharpe", "mdd", "drawdown_series",
    "BacktestReport", "build_report", "GridSearchResult", "grid_search", "cell_seed",
]


class UndefinedSharpeError(ValueError):
    """Per-step returns have zero spread, so the ratio does not exist."""


def per_step_returns(curve) -> np.ndarray:
    curve = np.asarray(curve, dtype=np.float64)
    return curve[1:] / curve[:-1] - 1.0


def sharpe(curve) -> float:
    """Mean over sample standard deviation of per-step simple returns (risk-free rate 0, not annualized)."""
    curve = np.asarray(curve, dtype=np.float64)
    if curve.size < 3:
        raise ValueError("sharpe needs at least 3 curve points")
    r = per_step_returns(curve)
    sd = float(np.std(r, ddof=1))
    # a geometric curve rebuilt in floating point leaves ~1e-17 of spread
    if not np.isfinite(sd) or sd <= 1e-12 * abs(float(np.mean(r))) or sd == 0.0:
        raise UndefinedSharpeError("per-step returns have zero variance")
    return float(np.mean(r)) / sd


def drawdown_series(curve) -> np.ndarray:
    curve = np.asarray(curve, dtype=np.float64)
    peak = np.maximum.accumulate(curve)
    return (peak - curve) / peak


def mdd(curve) -> float:
    """Largest ``(P_t - P_s) / P_t`` over ``t < s``, one pass with a running peak."""
    curve = np.asarray(curve, dtype=np.float64)
    if curve.size == 0:
        raise ValueError("mdd of an empty curve")
    worst = 0.0
    peak = curve[0]
    for v in curve[1:]:
        if v > peak:
            peak = v
        else:
            dd = (peak - v) / peak
            if dd > worst:
                worst = dd
    return float(worst)


@dataclass
class BacktestReport:
    strategy: str
    period: dict
    profit: float | None
    sharpe: float | None
    mdd: float | None
    returns: dict
    config: dict = field(default_factory=dict)
    seed: int | None = None
    curve_file: str | None = None
    errors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BacktestReport":
        return cls(**json.loads(text))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "BacktestReport":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _guarded(fn, curve, errors: dict, name: str):
    try:
        return fn(curve)
    except ValueError as exc:
        errors[name] = str(exc)
        return None


def build_report(
    curve,
    strategy: str,
    period: dict | None = None,
    config: dict | None = None,
    seed: int | None = None,
    curve_file: str | None = None,
) -> BacktestReport:
    curve = np.asarray(curve, dtype=np.float64)
    errors: dict = {}
    r = per_step_returns(curve)
    returns = (
        {"mean": float(r.mean()), "std": float(r.std(ddof=1)) if r.size > 1 else None,
         "min": float(r.min()), "max": float(r.max())}
        if r.size else {"mean": None, "std": None, "min": None, "max": None}
    )
    return BacktestReport(
        strategy=strategy,
        period=dict(period or {"start": None, "end": None}),
        profit=_guarded(profit, curve, errors, "profit"),
        sharpe=_guarded(sharpe, curve, errors, "sharpe"),
        mdd=_guarded(mdd, curve, errors, "mdd"),
        returns=returns,
        config=dict(config or {}),
        seed=seed,
        curve_file=curve_file,
        errors=errors,
    )


def write_drawdown_csv(curve, path) -> Path:
    curve = np.asarray(curve, dtype=np.float64)
    dd = drawdown_series(curve)
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "total_value", "drawdown"])
        for i, (v, d) in enumerate(zip(curve.tolist(), dd.tolist())):
            writer.writerow([i, repr(v), repr(d)])
    return path


def cell_seed(base_seed: int, cell_index: int, repeat: int) -> int:
    return int(np.random.SeedSequence([base_seed, cell_index, repeat]).generate_state(1)[0])


@dataclass
class GridSearchResult:
    windows: list
    temperatures: list
    repeats: int
    base_seed: int
    profits: list  # [window][temperature] -> list of per-repeat profits (None on failure)
    seeds: list
    failures: dict = field(default_factory=dict)

    def mean_profit(self) -> np.ndarray:
        out = np.full((len(self.windows), len(self.temperatures)), np.nan)
        for i, row in enumerate(self.profits):
            for j, cell in enumerate(row):
                if all(p is not None for p in cell):
                    out[i, j] = float(np.mean(cell))
        return out

    def best(self) -> tuple | None:
        means = self.mean_profit()
        if np.all(np.isnan(means)):
            return None
        i, j = np.unravel_index(np.nanargmax(means), means.shape)
        return self.windows[i], self.temperatures[j], float(means[i, j])

    def to_dict(self) -> dict:
        d = asdict(self)
        means = self.mean_profit()
        d["mean_profit"] = [[None if np.isnan(v) else float(v) for v in row] for row in means]
        d["best"] = self.best()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _run_cell(job):
    runner, window, temperature, seed = job
    try:
        return float(runner(window, temperature, seed)), None
    except Exception as exc:  # recorded per cell, never aborts the grid
        return None, f"{type(exc).__name__}: {exc}"


def grid_search(
    windows,
    temperatures,
    repeats: int,
    runner: Callable[[int, float, int], float],
    base_seed: int = 0,
    workers: int = 1,
) -> GridSearchResult:
    """Average ``runner(window, temperature, seed)`` profits over ``repeats`` per grid cell.

    ``runner`` performs one full train + backtest cycle and must be picklable
    when ``workers > 1``. Seeds are derived from (base_seed, cell, repeat).
    """
    windows, temperatures = list(windows), list(temperatures)
    if not windows or not temperatures or repeats < 1:
        raise ValueError("grid_search needs non-empty grids and repeats >= 1")
    jobs, keys = [], []
    seeds = [[[] for _ in temperatures] for _ in windows]
    for i, w in enumerate(windows):
        for j, tau in enumerate(temperatures):
            cell = i * len(temperatures) + j
            for k in range(repeats):
                s = cell_seed(base_seed, cell, k)
                seeds[i][j].append(s)
                jobs.append((runner, w, tau, s))
                keys.append((i, j))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell, jobs))
    else:
        outcomes = [_run_cell(job) for job in jobs]
    profits = [[[] for _ in temperatures] for _ in windows]
    failures: dict = {}
    for (i, j), (value, err) in zip(keys, outcomes):
        profits[i][j].append(value)
        if err is not None:
            failures.setdefault(f"{windows[i]},{temperatures[j]}", []).append(err)
            logger.warning("grid cell window=%s temp=%s failed: %s", windows[i], temperatures[j], err)
    return GridSearchResult(windows, temperatures, repeats, base_seed, profits, seeds, failures)
