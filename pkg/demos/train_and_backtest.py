"""
Training the agent on a zig-zag market
======================================

Two coins take turns: one gains 5% while the other loses 4%, then they swap.
A small network learns to buy whichever is about to rise and is then
backtested on the next 1000 minutes. Takes about a minute.
"""
import time

from dqn_trader.agent import TrainingConfig, run_policy, train
from dqn_trader.baselines import ubah_run
from dqn_trader.environment import EnvConfig, profit
from dqn_trader.evaluation import build_report
from dqn_trader.market_data import align_and_pad
from dqn_trader.preprocessing import BlockStream
from dqn_trader.synthetic import alternating_market

window = 8
data = align_and_pad(alternating_market(6000))
train_stream = BlockStream(data.slice_rows(0, 5000), window, eager=True)
test_stream = BlockStream(data.slice_rows(5000 - (window - 1), 6000), window, eager=True)

config = TrainingConfig(
    number_of_assets=2, window_size=window, seed=0, epochs=20,
    update_start_size=500, exploration_annealing_length=2000, target_network_update_frequency=500,
    memory_size=2500, minibatch_size=64, learning_rate=0.001,
    conv_layers=("3x2x3:1x1x1:8", "2x1x3:2x1x1:8", "2x1x3:1x1x1:8"), fc_units=32,
    output_activation="linear",
)
t0 = time.perf_counter()
net, log = train(train_stream, EnvConfig(), config)
losses = log.losses()
k = len(losses) // 10
print(f"{len(log)} steps in {time.perf_counter() - t0:.0f}s; loss {losses[:k].mean():.4f} -> {losses[-k:].mean():.4f}")

run = run_policy(net, test_stream, EnvConfig())
ubah = ubah_run(test_stream.prices[test_stream.first_index:]).profit
print("first greedy actions:", run.actions[:6], "ratios", run.sigmas[:2].round(3))
print(f"agent profit {profit(run.curve):.2f}  buy-and-hold {ubah:.2f}  ratio {profit(run.curve) / ubah:.2f}")
print(build_report(run.curve, "dqn").to_json())
