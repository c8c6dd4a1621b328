"""Low-risk deep Q-learning portfolio manager and backtesting toolkit."""

__version__ = "0.1.0"
