import csv
import json
import subprocess
import sys

import pytest

from forecast_duel.cli import (
    TRACE_COLUMNS,
    ConfigError,
    GameConfig,
    execute,
    main,
    sweep_cells,
)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_three_zero_rounds(tmp_path):
    trace = tmp_path / "t.csv"
    summary = tmp_path / "s.json"
    rc = main(["--rounds", "3", "--skeptic", "skeptic_zero", "--forecaster", "point",
               "--trace", str(trace), "--summary", str(summary)])
    assert rc == 0
    rows = read_csv(trace)
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == 4
    assert len({r[-1] for r in rows[1:]}) == 1
    data = json.loads(summary.read_text())
    assert data["config"]["rounds"] == 3
    assert set(data["calibration_ratio"]) == {"[0, 0.5)", "[0.5, 1]"}
    assert "corollary_statistic" in data and "growth" in data
    assert data["ledger"]["ok"] is True


def test_replay_is_byte_identical(tmp_path):
    args = ["--rounds", "300", "--seed", "17", "--forecaster", "uniform:0.2"]
    main(args + ["--trace", str(tmp_path / "a.csv"), "--summary", str(tmp_path / "a.json")])
    main(args + ["--trace", str(tmp_path / "b.csv"), "--summary", str(tmp_path / "b.json")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    main(["--rounds", "300", "--seed", "18", "--trace", str(tmp_path / "c.csv")])
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()


def test_thinning_does_not_change_summary(tmp_path):
    base = dict(rounds=205, seed=3, forecaster="kf:0.1")
    full = execute(GameConfig(**base, trace=str(tmp_path / "full.csv")))
    thin = execute(GameConfig(**base, record_every=50, trace=str(tmp_path / "thin.csv")))
    assert full == thin
    rows = read_csv(tmp_path / "thin.csv")
    assert [int(r[0]) for r in rows[1:]] == [50, 100, 150, 200, 205]
    full_rows = {r[0]: r for r in read_csv(tmp_path / "full.csv")[1:]}
    assert all(full_rows[r[0]] == r for r in rows[1:])


def test_infinities_serialise(tmp_path):
    main(["--rounds", "2", "--forecaster", "point", "--trace", str(tmp_path / "t.csv")])
    rows = read_csv(tmp_path / "t.csv")
    assert rows[1][TRACE_COLUMNS.index("delta_n")] == "inf"


def test_svg_output(tmp_path):
    svg = tmp_path / "c.svg"
    assert main(["--rounds", "50", "--svg", str(svg)]) == 0
    text = svg.read_text()
    assert text.startswith("<svg") and text.count("<polyline") == 3


@pytest.mark.parametrize("argv", [
    ["--rounds", "0"],
    ["--rounds", "5", "--forecaster", "bogus"],
    ["--rounds", "5", "--record-every", "0"],
    ["--rounds", "5", "--reality", "oakes2", "--forecaster", "uniform:0.2"],
])
def test_bad_config_exit_code(argv, capsys):
    assert main(argv) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "error" in err and "message" in err


def test_violation_exit_code(tmp_path, capsys):
    summary = tmp_path / "s.json"
    rc = main(["--rounds", "5", "--mode", "forecaster-test", "--forecaster", "minimax:1e-40",
               "--summary", str(summary)])
    assert rc == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "SlackNotMet" and err["round"] == 1
    assert json.loads(summary.read_text())["error"] == "SlackNotMet"


def test_sweep_cells_seed_rules():
    base = GameConfig(rounds=10, seed=6, forecaster="uniform:0.2")
    cells = sweep_cells(base, deltas=[0.05, 0.1, 0.2])
    assert [c.seed for c in cells] == [6, 7, 4]
    assert [c.forecaster for c in cells] == ["uniform:0.05", "uniform:0.1", "uniform:0.2"]
    assert [c.seed for c in sweep_cells(base, seeds=[1, 2, 3])] == [1, 2, 3]
    for bad in (dict(), dict(deltas=[0.1], seeds=[1])):
        with pytest.raises(ConfigError):
            sweep_cells(base, **bad)
    with pytest.raises(ConfigError):
        sweep_cells(GameConfig(rounds=10, forecaster="point"), deltas=[0.1])


def test_delta_sweep(tmp_path):
    out = tmp_path / "sw"
    rc = main(["--rounds", "3000", "--seed", "1", "--sweep-delta", "0.05,0.1,0.2",
               "--jobs", "2", "--out-dir", str(out)])
    assert rc == 0
    rows = read_csv(out / "aggregate.csv")
    assert rows[0] == ["cell", "delta", "seed", "status", "final_log_K",
                       "corollary_statistic", "max_drift_violation"]
    assert [r[1] for r in rows[1:]] == ["0.05", "0.1", "0.2"]
    assert all(r[3] == "ok" for r in rows[1:])
    stats = [float(r[5]) for r in rows[1:]]
    assert stats == sorted(stats)
    assert all(float(r[6]) == 0.0 for r in rows[1:])
    for i in range(3):
        assert json.loads((out / f"cell{i:03d}_summary.json").read_text())["rounds"] == 3000


def test_seed_sweep_and_failed_cell(tmp_path):
    out = tmp_path / "seeds"
    assert main(["--rounds", "2000", "--sweep-seed", "1..5", "--out-dir", str(out)]) == 0
    rows = read_csv(out / "aggregate.csv")[1:]
    assert [r[2] for r in rows] == ["1", "2", "3", "4", "5"]
    assert all(float(r[4]) > 0 for r in rows)

    bad = tmp_path / "bad"
    rc = main(["--rounds", "5", "--mode", "forecaster-test", "--forecaster", "minimax:1e-40",
               "--sweep-seed", "1,2", "--out-dir", str(bad)])
    assert rc == 1
    assert {r[3] for r in read_csv(bad / "aggregate.csv")[1:]} == {"failed"}


def test_empty_axis_is_usage_error(tmp_path):
    assert main(["--rounds", "5", "--sweep-seed", "", "--out-dir", str(tmp_path)]) == 2


def test_console_script_module_entry(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "forecast_duel.cli", "--rounds", "5", "--summary",
         str(tmp_path / "s.json")],
        capture_output=True, text=True, env={"FORECAST_DUEL_LOG": "INFO", "PATH": ""})
    assert out.returncode == 0
    assert "playing 5 rounds" in out.stderr
