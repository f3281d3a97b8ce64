import json

import numpy as np
import pytest

from aoiprice.cli import main
from aoiprice.errors import ConfigError, EmptyTrace

from conftest import ring_chain


def write_config(run, **extra):
    run.mkdir(parents=True, exist_ok=True)
    cfg = {
        "model": {"transitions": ring_chain(6).tolist()},
        "max_age": 10,
        "prices": [0, 6, 9, 0, 6, 9],
        "costs": [1.0, 2.0, 3.0, 1.5, 2.5, 3.5],
        "capacities": 1.0,
        "d": 4,
        "epsilon": 0.2,
        "seed": 7,
        "anneal": {"iteration_cap": 400},
        "report": {"d_values": [3, 4, 5], "iteration_cap": 300, "price_values": [0, 2, 4, 8]},
    }
    cfg.update(extra)
    (run / "config.json").write_text(json.dumps(cfg))
    return run / "config.json"


def test_solve(tmp_path):
    cfg = write_config(tmp_path / "run")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "solve")]) == 0
    out = json.loads((tmp_path / "solve" / "solve.json").read_text())
    assert out["threshold_structure"]
    thr = out["thresholds"]
    # zero-priced locations upload at once; thresholds rise with price
    assert thr[0] == 0 and thr[3] == 0
    assert thr[1] <= thr[2] and thr[4] <= thr[5]
    assert (tmp_path / "solve" / "value.csv").read_text().startswith("age,location,value,upload")


def test_optimize_plain_and_accelerated(tmp_path):
    cfg = write_config(tmp_path / "run")
    assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path / "o"), "--schedule", "power"]) == 0
    best = json.loads((tmp_path / "o" / "best.json").read_text())
    assert best["best_W"] <= best["baseline_W"] + 1e-12
    assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path / "a"), "--accelerated",
                 "--t-max", "3"]) == 0
    assert (tmp_path / "a" / "coloring.csv").exists()
    assert json.loads((tmp_path / "a" / "best.json").read_text())["t_max"] == 3


def test_optimize_uniform_costs_is_baseline(tmp_path):
    cfg = write_config(tmp_path / "run", costs=[2.0] * 6, anneal={})
    assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    best = json.loads((tmp_path / "o" / "best.json").read_text())
    assert best["best_W"] == pytest.approx(best["baseline_W"])
    assert best["stop_reason"] == "unchanged"


def test_simulate(tmp_path):
    cfg = write_config(tmp_path / "run")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s"), "--cycles", "2000",
                 "--tau", "0,0,0,0,0,0"]) == 0
    sim = json.loads((tmp_path / "s" / "sim.json").read_text())
    assert np.allclose(sim["empirical_y"], np.eye(6))
    assert sim["mean_aoi"] == [1.0] * 6


def test_report(tmp_path):
    run = tmp_path / "run"
    write_config(run)
    assert main(["report", str(run)]) == 0
    rep = json.loads((run / "report" / "report.json").read_text())
    assert rep["cost_non_increasing"] and rep["reward_non_increasing"]
    for name in ("cost_vs_d.csv", "traffic_share.csv", "convergence.csv", "aoi_ccdf.csv",
                 "reward_vs_price.csv"):
        assert (run / "report" / name).exists()


def test_estimate(tmp_path):
    lines = [f"{k},dev{k % 2},{(k // 2) % 3}" for k in range(60)]
    (tmp_path / "trace.csv").write_text("time,device,cell\n" + "\n".join(lines) + "\n")
    assert main(["estimate", "--trace", str(tmp_path / "trace.csv"), "--resample-step", "2",
                 "--out", str(tmp_path / "e")]) == 0
    est = json.loads((tmp_path / "e" / "estimate.json").read_text())
    assert est["locations"] == 3


def test_exit_codes(tmp_path):
    (tmp_path / "empty.csv").write_text("")
    assert main(["estimate", "--trace", str(tmp_path / "empty.csv"), "--resample-step", "1",
                 "--out", str(tmp_path / "e")]) == EmptyTrace.exit_code
    assert main(["solve", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == ConfigError.exit_code
    (tmp_path / "empty_run").mkdir()
    assert main(["report", str(tmp_path / "empty_run")]) == ConfigError.exit_code
    bad = write_config(tmp_path / "bad", anneal={"temperature": 3})
    assert main(["optimize", "--config", str(bad), "--out", str(tmp_path / "o")]) == ConfigError.exit_code
    infeasible = write_config(tmp_path / "inf", capacities=1e-9)
    assert main(["optimize", "--config", str(infeasible), "--out", str(tmp_path / "o")]) == 30
    with pytest.raises(SystemExit):
        main(["optimize"])
