import json
from datetime import datetime, timezone

import numpy as np
import pytest

from dqn_trader import __version__
from dqn_trader.cli import main, parse_time
from dqn_trader.market_data import parse_kline_csv
from dqn_trader.synthetic import random_walk_market
from test_market_data import T0, _rest_payload, _Stub

SMALL_CFG = """\
number_of_assets = 3
window_size = 8
update_start_size = 50
exploration_annealing_length = 200
target_network_update_frequency = 100
conv_layers = 3x2x3:1x1x1:4, 2x1x3:2x1x1:4, 2x1x3:1x1x1:4
fc_units = 16
output_activation = linear
"""
TRAIN = ["--train-start", "2017-07-14T02:40", "--train-end", "2017-07-14T09:00"]
TEST = ["--test-start", "2017-07-14T09:00", "--test-end", "2017-07-14T12:40"]


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CFG)
    return path


def test_parse_time():
    assert parse_time("2017-07-14T02:40") == 1_499_999_999_999 + 1 - 1_500_000_000_000 % 60000
    assert parse_time("2017-07-14T02:40:00Z") == parse_time("2017-07-14T02:40:00+00:00")


@pytest.mark.parametrize("sub", [[], ["train"], ["backtest"], ["baseline"], ["report"], ["fetch"]])
def test_help_exits_zero(sub, capsys):
    assert main([*sub, "--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_version(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out
    assert main(["report", "--version"]) == 0


def test_unknown_flag_exits_two(capsys):
    assert main(["report", "--in", "r.json", "--bogus-flag", "1"]) == 2
    assert "--bogus-flag" in capsys.readouterr().err
    assert main([]) == 2


def test_validation_errors_exit_three(tmp_path, data_dir, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("hyper_temperature = -1\n")
    assert main(["train", "--config", str(bad), "--data", str(data_dir), *TRAIN, "--out", str(tmp_path / "m.npz")]) == 3
    assert "hyper_temperature" in capsys.readouterr().err
    assert main(["report", "--in", str(tmp_path / "missing.json")]) == 3


def test_preprocess_check(data_dir, capsys):
    assert main(["preprocess", "--data", str(data_dir), "--window", "30", "--check"]) == 0
    out = capsys.readouterr().out
    assert "blocks: 571" in out and "check: ok" in out


def _train_backtest(tmp_path, cfg, data_dir, tag):
    model = tmp_path / tag / "model.npz"
    report = tmp_path / tag / "report.json"
    assert main(["train", "--config", str(cfg), "--data", str(data_dir), *TRAIN, "--seed", "4",
                 "--epochs", "2", "--out", str(model)]) == 0
    assert main(["backtest", "--model", str(model), "--data", str(data_dir), *TEST, "--report", str(report)]) == 0
    return model, report


def test_train_backtest_is_byte_identical(tmp_path, cfg, data_dir):
    m1, r1 = _train_backtest(tmp_path, cfg, data_dir, "a")
    m2, r2 = _train_backtest(tmp_path, cfg, data_dir, "b")
    assert r1.read_bytes() == r2.read_bytes()
    assert r1.with_suffix(".curve.csv").read_bytes() == r2.with_suffix(".curve.csv").read_bytes()
    with np.load(m1) as a, np.load(m2) as b:
        assert a.files == b.files
        assert all(np.array_equal(a[k], b[k]) for k in a.files)
    man1 = json.loads((m1.parent / "report.json.manifest.json").read_text())
    man2 = json.loads((m2.parent / "report.json.manifest.json").read_text())
    assert man1 == man2 and man1["seed"] == 4 and man1["data_fingerprint"]
    report = json.loads(r1.read_text())
    assert report["strategy"] == "dqn" and report["profit"] > 0
    # the test window starts 09:00 and runs to 12:40 with one curve row per minute
    assert len(r1.with_suffix(".curve.csv").read_text().splitlines()) == 1 + 220


def test_baseline_and_report_csv(tmp_path, data_dir, capsys):
    report = tmp_path / "ucrp.json"
    assert main(["baseline", "--method", "ucrp", "--data", str(data_dir), "--start", "2017-07-14T02:40",
                 "--end", "2017-07-14T12:40", "--report", str(report)]) == 0
    assert json.loads(report.read_text())["strategy"] == "ucrp"
    capsys.readouterr()
    dd = tmp_path / "dd.csv"
    assert main(["report", "--in", str(report), "--emit-csv", str(dd)]) == 0
    assert json.loads(capsys.readouterr().out)["strategy"] == "ucrp"
    lines = dd.read_text().splitlines()
    assert lines[0] == "step,total_value,drawdown" and len(lines) == 601
    # ubah refuses the late-listed asset, a validation failure
    assert main(["baseline", "--method", "ubah", "--data", str(data_dir), "--start", "2017-07-14T02:40",
                 "--end", "2017-07-14T12:40", "--report", str(tmp_path / "u.json")]) == 3


def test_gridsearch_small(tmp_path, cfg, data_dir):
    out = tmp_path / "grid.json"
    assert main(["gridsearch", "--windows", "6,8", "--temps", "0.25", "--repeats", "1", "--config", str(cfg),
                 "--data", str(data_dir), *TRAIN, *TEST, "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["windows"] == [6, 8] and len(res["profits"]) == 2
    assert res["best"] is not None and not res["failures"]


def test_fetch_via_stub(tmp_path):
    (fixture,) = random_walk_market(1, 30, seed=2, start=T0)
    fixture = type(fixture)("XYZ", fixture.timestamps, np.round(fixture.features, 6))
    out = tmp_path / "fetched"
    with _Stub(_rest_payload(fixture)) as stub:
        iso = datetime.fromtimestamp(T0 / 1000, timezone.utc).isoformat()
        end = datetime.fromtimestamp((T0 + 30 * 60000) / 1000, timezone.utc).isoformat()
        assert main(["fetch", "--endpoint", stub.url, "--symbols", "XYZ", "--start", iso, "--end", end,
                     "--out", str(out)]) == 0
    got = parse_kline_csv(out / "XYZ.csv")
    np.testing.assert_array_equal(got.features, fixture.features)
    assert (out / "fetch.manifest.json").exists()
