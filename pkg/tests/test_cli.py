import csv
import json

import pytest

from wavesched.cli import main

SMALL = {
    "scenario": {"n_p": 5, "n_o": 120, "n_b": 10, "n_c": 10, "n_w": 6, "T": 480, "max_unique": 3,
                 "deadline_granularity": 32, "history_seasons": 4},
    "hts": {"budget": 20, "K": 5, "rollout_depth": 4},
    "seeds": [1, 2],
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return str(p)


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_print_defaults_is_complete_json(capsys):
    assert main(["print-defaults"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["scenario"]["n_o"] == 2000 and cfg["hts"]["budget"] == 2000
    assert cfg["alphas"] == [0.5, 0.625, 0.75, 0.875, 1.0]


def test_gen_scenario_roundtrip_and_seed(tmp_path, cfg_path):
    from wavesched.simulator import Scenario

    a, b, c = tmp_path / "a.json", tmp_path / "b.json", tmp_path / "c.json"
    assert main(["gen-scenario", "--config", cfg_path, "--out", str(a)]) == 0
    Scenario.load(a).save(b)
    assert a.read_bytes() == b.read_bytes()
    assert main(["gen-scenario", "--config", cfg_path, "--seed", "5", "--out", str(c)]) == 0
    ja, jc = json.loads(a.read_text()), json.loads(c.read_text())
    assert ja != jc and set(ja) == set(jc)


def test_bad_alpha_exit_code(tmp_path, capsys):
    assert main(["gen-scenario", "--alpha", "0.4", "--out", str(tmp_path / "x.json")]) == 2
    assert "[0.5, 1.0]" in capsys.readouterr().err


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scenario": {"n_w": "lots"}}))
    assert main(["compare", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "scenario.n_w" in capsys.readouterr().err
    bad.write_text("{nope")
    assert main(["compare", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["simulate", "--planner", "random", "--out", "x"]) == 2
    assert main(["no-such-command"]) == 2


def test_fit_examples(tmp_path, capsys):
    one = tmp_path / "one.csv"
    one.write_text("product_id,season_index,time_step,quantity\n0,0,0,3\n0,0,2,1\n")
    out = tmp_path / "m.json"
    assert main(["fit", "--history", str(one), "--out", str(out), "--samples", "10"]) == 0
    (model,) = json.loads(out.read_text())
    assert all(len(row["targets"]) == 1 for row in model["rows"])
    samples = read_rows(tmp_path / "m.samples.csv")
    finals = [int(r["state"]) for r in samples if r["time_step"] == "2"]
    assert len(finals) == 10 and set(finals) == {1000}

    bad = tmp_path / "bad.csv"
    bad.write_text("product_id,season_index,time_step,quantity\n0,0,0,3\n0,0,1,-2\n")
    assert main(["fit", "--history", str(bad), "--out", str(out)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_simulate_and_replay(tmp_path, cfg_path, capsys):
    run = tmp_path / "run"
    assert main(["simulate", "--config", cfg_path, "--planner", "greedy", "--planner", "hts", "--out", str(run)]) == 0
    rows = read_rows(run / "results.csv")
    assert [(r["planner"], r["seed"]) for r in rows] == [("greedy", "1"), ("hts", "1"), ("greedy", "2"), ("hts", "2")]
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["seeds"] == [1, 2] and len(manifest["config_hash"]) == 64 and manifest["version"]
    assert json.loads((run / "diagnostics.json").read_text())[0]["planner"] == "hts"
    assert main(["simulate", "--replay", str(run)]) == 0
    (run / "results.csv").write_text((run / "results.csv").read_text().replace("greedy,1", "greedy,9", 1))
    assert main(["simulate", "--replay", str(run)]) == 1
    assert main(["simulate", "--replay", str(tmp_path / "missing")]) == 2


def test_simulate_saved_scenario(tmp_path, cfg_path):
    scen = tmp_path / "s.json"
    main(["gen-scenario", "--config", cfg_path, "--out", str(scen)])
    run = tmp_path / "r"
    assert main(["simulate", "--config", cfg_path, "--scenario", str(scen), "--planner", "hts",
                 "--budget", "5", "--seeds", "3", "--out", str(run)]) == 0
    assert main(["simulate", "--replay", str(run)]) == 0
    scen.write_text(scen.read_text().replace('"deadline": 1', '"deadline": 2', 1))
    assert main(["simulate", "--replay", str(run)]) == 1


def test_compare_and_sweep(tmp_path, cfg_path):
    c1, c2 = tmp_path / "c1", tmp_path / "c2"
    assert main(["compare", "--config", cfg_path, "--out", str(c1)]) == 0
    assert main(["compare", "--config", cfg_path, "--out", str(c2), "--parallel", "2"]) == 0
    assert (c1 / "rows.csv").read_text() == (c2 / "rows.csv").read_text()
    assert (c1 / "aggregate.csv").read_text() == (c2 / "aggregate.csv").read_text()
    assert [r["planner"] for r in read_rows(c1 / "aggregate.csv")] == ["greedy", "hts"]

    s1 = tmp_path / "s1"
    assert main(["sweep-alpha", "--config", cfg_path, "--alphas", "1.0", "--out", str(s1)]) == 0
    assert (s1 / "sweep.csv").read_text() == (c1 / "rows.csv").read_text()
    s5 = tmp_path / "s5"
    assert main(["sweep-alpha", "--config", cfg_path, "--out", str(s5)]) == 0
    assert len(read_rows(s5 / "sweep.csv")) == 5 * 2 * 2
    assert main(["sweep-alpha", "--config", cfg_path, "--alphas", "0.3", "--out", str(s5)]) == 2


def test_trend_check_gate(tmp_path, cfg_path, monkeypatch):
    import wavesched.cli as cli

    monkeypatch.setattr(cli, "trend_violations", lambda *a: ["alpha=1.0: forced"])
    assert main(["sweep-alpha", "--config", cfg_path, "--alphas", "1.0", "--trend-check",
                 "--out", str(tmp_path / "t")]) == 1
    assert main(["sweep-alpha", "--config", cfg_path, "--alphas", "1.0", "--trend-check", "--planner", "hts",
                 "--out", str(tmp_path / "t")]) == 2


def test_trend_violations_rule():
    from wavesched.cli import trend_violations
    from wavesched.simulator import ComparisonTable

    rows = [
        {"planner": "greedy", "alpha": 0.5, "missed_pct": 10.0},
        {"planner": "hts", "alpha": 0.5, "missed_pct": 10.9},
        {"planner": "greedy", "alpha": 1.0, "missed_pct": 10.0},
        {"planner": "hts", "alpha": 1.0, "missed_pct": 11.5},
    ]
    bad = trend_violations(ComparisonTable(rows), [0.5, 1.0], 1.0)
    assert len(bad) == 1 and bad[0].startswith("alpha=1.0")
