"""Classical online portfolio baselines: UBAH, UCRP, EG and PAMR.

All strategies work on a price matrix of shape ``(T, m + 1)`` whose column 0
is the base currency. Weights are value fractions over the ``m + 1`` columns;
by default the base currency gets weight 0 (fully invested). An asset whose
price is still 0 (padding before listing) is excluded until it trades.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STRATEGIES = ("ubah", "ucrp", "eg", "pamr")
EG_ETA = 0.05
PAMR_EPS = 0.5


def simplex_project(v) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = 1}`` via the sorted-threshold rule."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("simplex_project needs finite input")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.count_nonzero(u - css / k > 0)
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def price_relatives(prices) -> np.ndarray:
    """``(T - 1, m + 1)`` ratios ``p_t / p_{t-1}``; 1 wherever either price is 0."""
    prices = np.asarray(prices, dtype=np.float64)
    prev, cur = prices[:-1], prices[1:]
    ok = (prev > 0) & (cur > 0)
    return np.where(ok, cur / np.where(ok, prev, 1.0), 1.0)


def eg_update(w, x, eta: float = EG_ETA, active=None) -> np.ndarray:
    """Exponentiated-gradient step ``w_i * exp(eta * x_i / (w . x))``, renormalized."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    wx = float(w @ x)
    if wx <= 0:
        raise FloatingPointError("eg_update: portfolio return w.x is not positive")
    g = eta * x / wx
    # shifting the exponent leaves the normalized result unchanged
    new = w * np.exp(g - g.max())
    if active is not None:
        new = np.where(active, new, 0.0)
    return new / new.sum()


def pamr_update(w, x, eps: float = PAMR_EPS, active=None) -> np.ndarray:
    """Passive-aggressive mean-reversion step followed by simplex projection.

    ``active`` restricts the update to a subset of coordinates; the rest stay 0.
    """
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if active is None:
        active = np.ones(w.size, bool)
    idx = np.flatnonzero(active)
    wa, xa = w[idx], x[idx]
    loss = max(0.0, float(wa @ xa) - eps)
    dev = xa - xa.mean()
    denom = float(dev @ dev)
    if loss == 0.0 or denom == 0.0:
        return w.copy()
    out = np.zeros_like(w)
    out[idx] = simplex_project(wa - (loss / denom) * dev)
    return out


@dataclass
class StrategyRun:
    strategy: str
    curve: np.ndarray  # value before the first step, then after every step
    weights: np.ndarray  # (T - 1, m + 1) weights held over each step

    @property
    def profit(self) -> float:
        return float(self.curve[-1] / self.curve[0])


def _uniform(active: np.ndarray) -> np.ndarray:
    return active / active.sum()


def strategy_run(
    prices,
    strategy: str,
    *,
    eta: float = EG_ETA,
    eps: float = PAMR_EPS,
    include_cash: bool = False,
    initial_value: float = 1.0,
    commission_rate: float = 0.0,
) -> StrategyRun:
    """Step ``strategy`` over every consecutive pair of rows in ``prices``.

    Commission is charged on traded value: ``W *= 1 - c * sum|target - drifted|``.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    prices = np.asarray(prices, dtype=np.float64)
    if prices.ndim != 2 or prices.shape[0] < 1 or prices.shape[1] < 2:
        raise ValueError("prices must be (T, m + 1) with T >= 1 and m >= 1")
    listed = prices > 0
    listed[:, 0] = include_cash
    if strategy == "ubah" and not listed[0, 1:].all():
        raise ValueError("ubah needs a nonzero initial price for every asset")
    if not listed[0].any():
        raise ValueError("no asset has a nonzero initial price")
    rel = price_relatives(prices)
    n_steps = len(rel)

    value = initial_value
    curve = [value]
    held = np.zeros((n_steps, prices.shape[1]))
    w = _uniform(listed[0])
    for t in range(n_steps):
        held[t] = w
        x = rel[t]
        growth = float(w @ x)
        value *= growth
        drifted = w * x / growth
        active = listed[t + 1]
        if strategy == "ubah":
            target = drifted
        elif strategy == "ucrp":
            target = _uniform(active)
        elif strategy == "eg":
            target = eg_update(w, x, eta)
        else:
            target = pamr_update(w, x, eps, active=listed[t])
        if strategy != "ubah" and (active & ~listed[t]).any():
            # a newly listed asset joins: restart its share from the uniform allocation
            target = _uniform(active) if strategy != "eg" else eg_update(_uniform(active), x, 0.0, active)
        if commission_rate:
            value *= 1.0 - commission_rate * float(np.abs(target - drifted).sum())
        curve.append(value)
        w = target
    return StrategyRun(strategy, np.array(curve), held)


def ubah_run(prices, **kw) -> StrategyRun:
    return strategy_run(prices, "ubah", **kw)


def ucrp_run(prices, **kw) -> StrategyRun:
    return strategy_run(prices, "ucrp", **kw)


def eg_run(prices, eta: float = EG_ETA, **kw) -> StrategyRun:
    return strategy_run(prices, "eg", eta=eta, **kw)


def pamr_run(prices, eps: float = PAMR_EPS, **kw) -> StrategyRun:
    return strategy_run(prices, "pamr", eps=eps, **kw)
