"""Market environment: portfolio bookkeeping, trade execution and clipped rewards."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .preprocessing import BlockStream

NONE, BUY, SELL = "none", "buy", "sell"


class EnvStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    initial_amount: float = 1000.0  # delta
    beta: int = 5  # variable ratio amplification constant
    commission_rate: float = 0.0

    def __post_init__(self):
        if not self.initial_amount > 0:
            raise ValueError("initial_amount must be > 0")
        if int(self.beta) != self.beta or self.beta < 1:
            raise ValueError("beta must be a positive integer")
        if not 0 <= self.commission_rate < 1:
            raise ValueError("commission_rate must be in [0, 1)")


@dataclass(frozen=True)
class TradeAction:
    """``kind`` on ``asset`` (1-based) at ``ratio``.

    Action ids: 0 is none, ``2b - 1`` buys asset b, ``2b`` sells asset b.
    """

    kind: str = NONE
    asset: int | None = None
    ratio: float = 0.0

    def __post_init__(self):
        if self.kind not in (NONE, BUY, SELL):
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.kind != NONE and (self.asset is None or self.asset < 1):
            raise ValueError("buy/sell needs an asset index >= 1")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"ratio {self.ratio} outside [0, 1]")

    @property
    def action_id(self) -> int:
        if self.kind == NONE:
            return 0
        return 2 * self.asset - 1 if self.kind == BUY else 2 * self.asset

    @classmethod
    def from_id(cls, action_id: int, ratio: float = 0.0, n_assets: int | None = None) -> "TradeAction":
        action_id = int(action_id)
        if action_id < 0 or (n_assets is not None and action_id > 2 * n_assets):
            raise ValueError(f"action id {action_id} out of range")
        if action_id == 0:
            return cls(NONE, None, ratio)
        asset = (action_id + 1) // 2
        return cls(BUY if action_id % 2 else SELL, asset, ratio)


def initial_portfolio(n_assets: int, initial_amount: float) -> np.ndarray:
    w = np.zeros(n_assets + 1)
    w[0] = initial_amount
    return w


def total_value(w, p) -> float:
    w = np.asarray(w, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if w.shape != p.shape or w.ndim != 1:
        raise ValueError(f"portfolio shape {w.shape} does not match price shape {p.shape}")
    return float(p @ w)


def execute_action(w, p, action: TradeAction, commission_rate: float = 0.0) -> np.ndarray:
    """Return the portfolio after ``action`` at prices ``p``.

    Untradable requests (zero price, nothing to spend, nothing to sell) leave
    the portfolio unchanged.
    """
    w = np.array(w, dtype=np.float64)
    if action.kind == NONE:
        return w
    b = action.asset
    if b >= len(w):
        raise ValueError(f"asset {b} not in a {len(w) - 1}-asset portfolio")
    price = float(p[b])
    if price <= 0:
        return w
    sigma = action.ratio
    keep = 1.0 - commission_rate
    if action.kind == BUY:
        spend = sigma * w[0]
        if spend <= 0:
            return w
        w[0] -= spend
        w[b] += keep * spend / price
    else:
        units = sigma * w[b]
        if units <= 0:
            return w
        w[b] -= units
        w[0] += keep * units * price
    # sigma = 1 can leave -0.0 or a tiny negative from cancellation
    np.maximum(w, 0.0, out=w)
    return w


def clipped_reward(prev_value: float, value: float, beta: float) -> float:
    eta = beta * (value / prev_value - 1.0)
    return float(min(1.0, max(-1.0, eta)))


def profit(curve) -> float:
    curve = np.asarray(curve, dtype=np.float64)
    if curve.size == 0:
        raise ValueError("profit of an empty curve")
    if not curve[0] > 0:
        raise ValueError("initial value must be > 0")
    return float(curve[-1] / curve[0])


@dataclass(frozen=True)
class StepResult:
    reward: float
    next_state_index: int
    done: bool
    total_value_after: float
    noop: bool = False


class TradingEnv:
    """One pass over a :class:`BlockStream`.

    Trades execute at the price of the current state's last minute; the
    portfolio is then revalued at the next state's last minute. The market is
    exogenous: the next state is always ``state + 1``.
    """

    def __init__(self, stream: BlockStream, config: EnvConfig | None = None):
        if len(stream) == 0:
            raise EnvStateError("empty block stream")
        self.stream = stream
        self.config = config or EnvConfig()
        self.n_assets = stream.dataset.n_assets
        self.state_index: int | None = None
        self.w: np.ndarray | None = None
        self.noop_trades = 0

    @property
    def n_steps(self) -> int:
        return len(self.stream) - 1

    def reset(self) -> tuple[int, np.ndarray]:
        self.state_index = self.stream.first_index
        self.w = initial_portfolio(self.n_assets, self.config.initial_amount)
        self.noop_trades = 0
        return self.state_index, self.w.copy()

    @property
    def value(self) -> float:
        return total_value(self.w, self.stream.price(self.state_index))

    @property
    def done(self) -> bool:
        return self.state_index is not None and self.state_index >= self.stream.last_index

    def step(self, action: TradeAction) -> StepResult:
        if self.state_index is None:
            raise EnvStateError("step() before reset()")
        if self.done:
            raise EnvStateError("episode already finished")
        t = self.state_index
        p_now = self.stream.price(t)
        before = total_value(self.w, p_now)
        w_new = execute_action(self.w, p_now, action, self.config.commission_rate)
        noop = action.kind != NONE and np.array_equal(w_new, self.w)
        self.noop_trades += noop
        self.w = w_new
        self.state_index = t + 1
        after = total_value(self.w, self.stream.price(t + 1))
        return StepResult(
            reward=clipped_reward(before, after, self.config.beta),
            next_state_index=t + 1,
            done=self.state_index == self.stream.last_index,
            total_value_after=after,
            noop=bool(noop),
        )


EQUITY_COLUMNS = ("step", "timestamp", "action_id", "sigma", "reward", "total_value")


def write_equity_csv(rows, path) -> Path:
    """Rows are ``(step, timestamp, action_id, sigma, reward, total_value)``; None -> blank."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EQUITY_COLUMNS)
        for row in rows:
            writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])
    return path


def read_equity_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
