"""
Classic online portfolio strategies
===================================

Buy-and-hold, uniform rebalancing, exponentiated gradient and PAMR on a
random market, with the metrics used for the agent's backtests.
"""
import numpy as np

from dqn_trader.baselines import STRATEGIES, strategy_run
from dqn_trader.evaluation import build_report
from dqn_trader.market_data import align_and_pad
from dqn_trader.preprocessing import price_matrix
from dqn_trader.synthetic import random_walk_market

dataset = align_and_pad(random_walk_market(5, 2000, seed=42, vol=0.01))
prices = price_matrix(dataset)

print(f"{'strategy':8s} {'profit':>8s} {'sharpe':>8s} {'mdd':>7s}")
for name in STRATEGIES:
    run = strategy_run(prices, name)
    rep = build_report(run.curve, name)
    print(f"{name:8s} {rep.profit:8.4f} {rep.sharpe:8.4f} {rep.mdd:7.4f}")

# PAMR bets on the loser of the last step. Averaging OHLC smooths the price,
# so consecutive relatives are positively correlated here and that bet loses.
r = prices[2:, 1:] / prices[1:-1, 1:] - 1
print("lag-1 autocorrelation of relatives:", round(float(np.corrcoef(r[1:].ravel(), r[:-1].ravel())[0, 1]), 3))
run = strategy_run(prices, "pamr")
print("pamr weights, first steps:")
print(np.round(run.weights[:4, 1:], 3))
