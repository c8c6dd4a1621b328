"""
From kline CSVs to history blocks
=================================

Writes a few synthetic minute-kline files, loads them back the same way real
exchange exports are loaded, and slides a normalized window over the result.
"""
import tempfile
from pathlib import Path

import numpy as np

from dqn_trader.market_data import load_directory, select_top_assets, align_and_pad, write_kline_csv
from dqn_trader.preprocessing import BlockStream, price_matrix
from dqn_trader.synthetic import random_walk_market

# four coins over six hours; the second one lists two hours late
series = random_walk_market(4, 360, seed=0, listing_delays=[0, 120, 0, 0])
tmp = Path(tempfile.mkdtemp())
for s in series:
    write_kline_csv(s, tmp / f"{s.symbol}.csv")
print("wrote", sorted(p.name for p in tmp.glob("*.csv")))

# keep the three most traded, then align them on one minute grid
loaded = load_directory(tmp)
top = select_top_assets(loaded, 3)
print("by volume:", [(s.symbol, round(s.total_volume)) for s in top])
dataset = align_and_pad(top)
print("dataset shape (minutes, assets, features):", dataset.shape)
print("padding rows per asset:", dict(zip(dataset.symbols, dataset.n_padding)))

# the price vector has cash first, then the OHLC mean of each asset
prices = price_matrix(dataset)
print("price vector at minute 0:", np.round(prices[0], 4))

# one block per minute once a full window of history exists
stream = BlockStream(dataset, window=30)
print("blocks:", len(stream), "each", stream.block_shape)
block = stream.block(stream.first_index)
print("normalized range:", float(block.data.min()), float(block.data.max()))
