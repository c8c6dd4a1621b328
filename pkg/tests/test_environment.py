import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dqn_trader.environment import (
    BUY,
    NONE,
    SELL,
    EnvConfig,
    EnvStateError,
    TradeAction,
    TradingEnv,
    clipped_reward,
    execute_action,
    profit,
    read_equity_csv,
    total_value,
    write_equity_csv,
)
from dqn_trader.market_data import align_and_pad
from dqn_trader.preprocessing import BlockStream
from dqn_trader.synthetic import flat_ohlc_series, random_walk_market


def _stream(prices_by_asset, window=1):
    series = [flat_ohlc_series(f"S{j}", p) for j, p in enumerate(prices_by_asset)]
    return BlockStream(align_and_pad(series), window)


def test_action_id_mapping():
    assert TradeAction().action_id == 0
    assert TradeAction(BUY, 1, 0.5).action_id == 1
    assert TradeAction(SELL, 1, 0.5).action_id == 2
    assert TradeAction(BUY, 3).action_id == 5
    assert TradeAction(SELL, 3).action_id == 6
    for i in range(9):
        assert TradeAction.from_id(i, 0.3, n_assets=4).action_id == i
    with pytest.raises(ValueError):
        TradeAction.from_id(9, n_assets=4)
    with pytest.raises(ValueError):
        TradeAction(BUY, 1, 1.5)


def test_total_value():
    assert total_value([10, 5, 2.5], [1, 2, 4]) == 30.0
    assert total_value([7.0, 0, 0], [1, 3, 9]) == 7.0
    assert total_value([0, 0], [1, 5]) == 0.0
    with pytest.raises(ValueError):
        total_value([1, 2], [1, 2, 3])


def test_execute_none_buy_sell():
    w = np.array([100.0, 0.0])
    p = np.array([1.0, 4.0])
    np.testing.assert_array_equal(execute_action(w, p, TradeAction()), w)
    after = execute_action(w, p, TradeAction(BUY, 1, 0.5))
    np.testing.assert_array_equal(after, [50.0, 12.5])
    assert total_value(after, p) == total_value(w, p) == 100.0
    sold = execute_action([0.0, 10.0], [1.0, 2.0], TradeAction(SELL, 1, 1.0))
    np.testing.assert_array_equal(sold, [20.0, 0.0])


def test_execute_commission():
    after = execute_action([100.0, 0.0], [1.0, 4.0], TradeAction(BUY, 1, 0.5), commission_rate=0.001)
    np.testing.assert_allclose(after, [50.0, 12.5 * 0.999])


def test_degenerate_trades_are_noops():
    w = np.array([0.0, 3.0, 0.0])
    p = np.array([1.0, 2.0, 0.0])
    np.testing.assert_array_equal(execute_action(w, p, TradeAction(BUY, 1, 0.5)), w)  # no cash
    np.testing.assert_array_equal(execute_action(w, p, TradeAction(SELL, 2, 0.5)), w)  # nothing held
    np.testing.assert_array_equal(execute_action([5.0, 0, 0], p, TradeAction(BUY, 2, 0.5)), [5.0, 0, 0])  # padded


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.floats(0, 1e4), min_size=4, max_size=4),
    st.lists(st.floats(1e-3, 1e4), min_size=3, max_size=3),
    st.integers(0, 6),
    st.floats(0, 1),
)
def test_value_neutral_and_nonnegative(w, p, action_id, sigma):
    w = np.array(w)
    p = np.array([1.0, *p])
    after = execute_action(w, p, TradeAction.from_id(action_id, sigma))
    assert np.all(after >= 0)
    before_v = total_value(w, p)
    assert abs(total_value(after, p) - before_v) <= 1e-9 * max(before_v, 1e-300)


def test_reward_examples():
    assert clipped_reward(100.0, 100.0, 5) == 0.0
    assert clipped_reward(100.0, 110.0, 5) == pytest.approx(0.5, abs=1e-12)
    assert clipped_reward(100.0, 150.0, 5) == 1.0
    assert clipped_reward(100.0, 50.0, 5) == -1.0


def test_profit():
    assert profit([5.0, 5.0, 5.0]) == 1.0
    assert profit([100.0, 180.0, 250.0]) == 2.5
    with pytest.raises(ValueError):
        profit([0.0, 1.0])


def test_config_validation():
    with pytest.raises(ValueError):
        EnvConfig(initial_amount=0)
    with pytest.raises(ValueError):
        EnvConfig(beta=0)
    with pytest.raises(ValueError):
        EnvConfig(commission_rate=1.0)


def test_reset_is_idempotent():
    stream = _stream([np.ones(10)] * 3, window=4)
    env = TradingEnv(stream, EnvConfig(initial_amount=1000.0))
    s1, w1 = env.reset()
    env.step(TradeAction(BUY, 1, 0.5))
    s2, w2 = env.reset()
    assert s1 == s2 == 3
    np.testing.assert_array_equal(w1, [1000.0, 0, 0, 0])
    np.testing.assert_array_equal(w1, w2)
    assert env.value == 1000.0


def test_step_flat_prices_no_reward_and_terminal():
    stream = _stream([np.full(6, 2.0)], window=2)
    env = TradingEnv(stream)
    env.reset()
    results = [env.step(TradeAction()) for _ in range(4)]
    assert [r.reward for r in results] == [0.0] * 4
    assert [r.done for r in results] == [False, False, False, True]
    assert [r.next_state_index for r in results] == [2, 3, 4, 5]
    with pytest.raises(EnvStateError):
        env.step(TradeAction())


def test_step_reward_clipping_with_beta_5():
    # a 10% move on a fully invested book gives 0.5; a 50% move clips to 1
    stream = _stream([[1.0, 1.0, 1.1, 1.65]])
    env = TradingEnv(stream, EnvConfig(initial_amount=1.0, beta=5))
    env.reset()
    r0 = env.step(TradeAction(BUY, 1, 1.0))
    assert r0.reward == 0.0
    assert env.step(TradeAction()).reward == pytest.approx(0.5, abs=1e-12)
    assert env.step(TradeAction()).reward == 1.0


def test_step_counts_noops():
    stream = _stream([np.ones(5)])
    env = TradingEnv(stream)
    env.reset()
    assert env.step(TradeAction(SELL, 1, 0.5)).noop
    assert env.noop_trades == 1


def test_market_is_exogenous():
    stream = BlockStream(align_and_pad(random_walk_market(2, 40, seed=2)), 5)
    visits = []
    for actions in ([0] * 35, [1, 2, 3, 4, 0] * 7):
        env = TradingEnv(stream)
        s, _ = env.reset()
        seq = [s]
        for a in actions:
            res = env.step(TradeAction.from_id(a, 0.5))
            seq.append(res.next_state_index)
            if res.done:
                break
        visits.append(seq)
    assert visits[0] == visits[1]


def test_equity_csv(tmp_path):
    rows = [(0, 100, None, None, None, 1.0), (1, 160, 3, 0.25, 0.1, 1.02)]
    path = write_equity_csv(rows, tmp_path / "eq.csv")
    back = read_equity_csv(path)
    assert path.read_text().splitlines()[0] == "step,timestamp,action_id,sigma,reward,total_value"
    assert back[0]["action_id"] == "" and float(back[1]["total_value"]) == 1.02
