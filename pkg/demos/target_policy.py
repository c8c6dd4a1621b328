"""
The temperature-normalized update target
========================================

The bootstrap term is an expectation of next-state q-values under a softmax
whose temperature is the mean absolute q-value times a hyper temperature.
"""
import numpy as np

from dqn_trader.agent import compute_target, normalized_temperature, target_policy

q = np.array([1.0, -1.0])
print("q =", q)
print("temperature at 0.5:", normalized_temperature(q, 0.5))
print("policy:", np.round(target_policy(q, 0.5), 4))
print("target with r = 0, gamma = 0.99:", round(compute_target(0.0, q, False, 0.99, 0.5), 4))

# small hyper temperatures approach the greedy max, large ones the plain mean
q = np.array([0.2, -0.7, 0.5, 0.1])
for tp in (1e-6, 0.25, 1.0, 1e6):
    print(f"hyper temperature {tp:>8g}: target {compute_target(0.0, q, False, 1.0, tp):+.6f}")
print("max", q.max(), "mean", q.mean())

# scaling q leaves the policy alone; shifting it does not
print("x100:", np.allclose(target_policy(100 * q, 0.25), target_policy(q, 0.25)))
print("+5  :", np.round(target_policy(q + 5, 0.25), 3), "vs", np.round(target_policy(q, 0.25), 3))
