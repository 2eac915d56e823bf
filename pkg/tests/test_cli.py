import json

import pytest

from amm_lab.calibrate import synthetic_ticks, write_ticks
from amm_lab.cli import ConfigError, load_config, main


def test_shipped_configs():
    nt = load_config("noise_trading", out="x")
    base = load_config("baseline", out="x")
    assert (nt.params.a2, nt.params.impact_a) == (1e-5, 5e-6)
    assert (base.params.a2, base.params.impact_a) == (0.0, 1e-14)
    assert nt.sim.n_steps == 10_000 and nt.solve_steps == 10_000
    assert load_config(None, out="x").params == nt.params


def test_overrides_and_env(monkeypatch, tmp_path):
    monkeypatch.setenv("AMM_LAB_OUT", str(tmp_path))
    cfg = load_config("baseline", seed=4, n_paths=7, gamma=2e-18)
    assert cfg.out == tmp_path and cfg.sim.seed == 4 and cfg.sim.n_paths == 7
    assert cfg.params.gamma == 2e-18


def test_config_file_parsing(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\na2 = 1e-5  # trailing\nn_steps = 2e4\nexact_shift = yes\n")
    cfg = load_config(str(path), out=tmp_path)
    assert cfg.params.a2 == 1e-5 and cfg.sim.n_steps == 20_000 and cfg.sim.exact_shift
    path.write_text("bogus = 1\n")
    with pytest.raises(ConfigError, match="bogus"):
        load_config(str(path))
    path.write_text("a2 = 1\na2 = 2\n")
    with pytest.raises(ConfigError, match="duplicate"):
        load_config(str(path))
    path.write_text("n_steps = 1.5\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_bad_config_exit_code(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert "missing.cfg" in capsys.readouterr().err


def test_empty_ticks_exit_code(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["calibrate", "--ticks", str(empty), "--out", str(tmp_path)]) == 2
    assert "empty.csv" in capsys.readouterr().err


def test_calibrate_writes_outputs(tmp_path, capsys):
    ticks = tmp_path / "ticks.csv"
    write_ticks(synthetic_ticks(n_buckets=500, seed=0), ticks)
    assert main(["calibrate", "--ticks", str(ticks), "--out", str(tmp_path), "--window", "10"]) == 0
    doc = json.loads((tmp_path / "calibration.json").read_text())
    assert {"a1_hat", "a3_hat"} <= set(doc)
    out = capsys.readouterr().out
    assert "boundary d" in out and "violation fraction" in out


def test_solve_prints_diagnostic(tmp_path, capsys):
    assert main(["solve", "--config", "baseline", "--steps", "200", "--out", str(tmp_path)]) == 0
    cap = capsys.readouterr()
    assert "existence: FAIL" in cap.out and "G2(0)" in cap.out
    assert "warning" in cap.err
    assert (tmp_path / "riccati.csv").is_file()


def test_simulate_needs_solve(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path)]) == 2
    assert "amm-lab solve" in capsys.readouterr().err
    assert main(["report", "--out", str(tmp_path)]) == 2
    assert "amm-lab simulate" in capsys.readouterr().err


def test_pipeline_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["solve", "--out", str(out)]) == 0
        assert main(["simulate", "--out", str(out), "--paths", "100", "--seed", "3"]) == 0
        assert main(["report", "--out", str(out)]) == 0
    for name in ("simulate/summary.json", "simulate/band_z.csv", "report/band_prices.csv",
                 "report/hist_reward.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    doc = json.loads((a / "simulate/summary.json").read_text())
    assert doc["mean_reward"] > 0 and doc["mean_venue_pnl"] > 0
    assert doc["mean_reward"] == pytest.approx(doc["mean_venue_pnl"])
    assert "equal_split_p0" in doc


def test_verify_runs_oracles(tmp_path, capsys):
    assert main(["solve", "--out", str(tmp_path)]) == 0
    code = main(["verify", "--out", str(tmp_path), "--paths", "300"])
    lines = (tmp_path / "verify.jsonl").read_text().splitlines()
    reports = [json.loads(line) for line in lines]
    assert len(reports) == 6
    assert code == (0 if all(r["pass"] for r in reports) else 1)
    assert "PASS" in capsys.readouterr().out
