import numpy as np
import pytest

from dqn_trader.market_data import align_and_pad, write_kline_csv
from dqn_trader.synthetic import random_walk_market


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_dataset():
    return align_and_pad(random_walk_market(3, 120, seed=7))


@pytest.fixture
def data_dir(tmp_path):
    """Three random-walk assets over 600 minutes, the last listed 100 minutes late."""
    d = tmp_path / "data"
    d.mkdir()
    for s in random_walk_market(3, 600, seed=3, listing_delays=[0, 0, 100]):
        write_kline_csv(s, d / f"{s.symbol}.csv")
    return d


def pytest_terminal_summary(terminalreporter):
    # one line per acceptance criterion, filled in by tests/test_acceptance.py
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[key])
