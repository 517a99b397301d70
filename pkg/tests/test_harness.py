import csv
import io
import json
from dataclasses import replace

import numpy as np
import pytest

from asyncba import cli, fraud, harness
from asyncba.core import ParamError

FAST = harness.RunConfig(m=8, T=4, max_restarts=0)


def test_defaults_are_desk_profile():
    cfg = harness.RunConfig()
    assert (cfg.f, cfg.epsilon, cfg.m, cfg.T, cfg.c, cfg.max_restarts) == (2, 0.5, 16, 32, 2.0, 3)
    assert cfg.params().n == 7


def test_config_text_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# desk run\nf = 3\nepsilon=0.3333333333\nadversary=crash  # trailing\ncrashSet=0,1\n")
    cfg = harness.load_config(str(path), {"seed": "7", "adversary": None})
    assert (cfg.f, cfg.seed, cfg.adversary, cfg.crash_set) == (3, 7, "crash", (0, 1))
    assert cfg.params().n == 10
    cfg = harness.load_config(str(path), {"adversary": "fair"})
    assert cfg.adversary == "fair"


@pytest.mark.parametrize("text", ["bogus=1", "f 2", "transport=udp", "stallGood=maybe"])
def test_config_errors(text):
    with pytest.raises(ParamError):
        harness.build_config(harness.parse_config_text(text))


def test_invalid_params_rejected_before_running():
    with pytest.raises(ParamError):
        harness.build_config({}, {"epsilon": "0.6"})
    with pytest.raises(ValueError):
        harness.build_config({}, {"adversary": "nobody"})


@pytest.mark.parametrize("text, want", [
    ("unanimous+", [1] * 7), ("unanimous-", [-1] * 7), ("alternating", [1, -1, 1, -1, 1, -1, 1]),
    ("1,1,-1,1,1,-1,1", [1, 1, -1, 1, 1, -1, 1]), ("random", None),
])
def test_input_specs(text, want):
    assert harness.build_config({}, {"inputs": text}).input_vector(7) == want


def test_input_list_length_checked():
    with pytest.raises(ParamError):
        harness.build_config({}, {"inputs": "1,1"}).input_vector(7)


def test_desk_fair_seed1_run():
    report = harness.run(harness.RunConfig(seed=1))
    assert report.agreement_ok and report.validity_ok and report.decided


def test_unanimous_plus():
    report = harness.run(replace(FAST, inputs="unanimous+", adversary="mirror-mimic"))
    assert report.decided_value == 1


def test_outputs_are_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        d.mkdir()
        cfg = replace(FAST, adversary="mirror-mimic", seed=5, json=str(d / "r.json"),
                      csv=str(d / "r.csv"), epoch_csv=str(d / "e.csv"), trace=str(d / "t.txt"),
                      board_dump=str(d / "b.txt"), stop_when_decided=False, max_iterations=6)
        harness.run(cfg)
        outs.append({name: (d / name).read_text() for name in ("r.csv", "e.csv", "t.txt", "b.txt")}
                    | {"json": json.loads((d / "r.json").read_text())})
    for o in outs:
        o["json"]["config"] = {k: v for k, v in o["json"]["config"].items()
                               if k not in ("json", "csv", "epochCsv", "trace", "boardDump")}
    assert outs[0] == outs[1]
    assert outs[0]["t.txt"].count("\n") > 100


def test_csv_row_columns(tmp_path):
    path = tmp_path / "rows.csv"
    for seed in (1, 2):
        harness.run(replace(FAST, seed=seed, csv=str(path)))
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0]) == harness.CSV_COLUMNS + [harness.STATUS_COLUMN]
    assert [r["seed"] for r in rows] == ["1", "2"]
    assert all(r["status"] == "ok" and r["decidedValue"] in ("+1", "-1") for r in rows)


def test_sweep_cardinality_and_order():
    configs = harness.grid(FAST, range(1, 101), ["fair", "crash", "mirror-mimic"])
    rows, epochs = harness.sweep(configs)
    assert len(rows) == 300
    assert [(r["adversary"], r["seed"]) for r in rows] == sorted((r["adversary"], r["seed"]) for r in rows)
    assert all(r["status"] == "ok" for r in rows)
    agg = harness.aggregate(rows)
    assert agg["fair"]["decisionRate"] == 1.0
    assert agg["crash"]["runs"] == 100


def test_sweep_parallel_matches_serial():
    configs = harness.grid(FAST, range(1, 7), ["fair", "mirror-mimic"])
    assert harness.sweep(configs, parallelism=2) == harness.sweep(list(reversed(configs)))


def test_sweep_records_failures_per_row():
    configs = [replace(FAST, seed=1), replace(FAST, seed=2, crash_set=(0, 1, 2), adversary="crash")]
    rows, _ = harness.sweep(configs)
    status = {r["adversary"]: r["status"] for r in rows}
    assert status["fair"] == "ok"
    assert status["crash"].startswith("HarnessFault")


def test_epoch_time_roughly_linear_in_mT():
    def epoch_time(m, T):
        cfg = replace(FAST, m=m, T=T, stop_when_decided=False, max_iterations=T)
        _, report = harness.simulate(cfg)
        (ep,) = report.epochs
        return ep.time_end - ep.time_start
    small, big = epoch_time(8, 16), epoch_time(16, 32)
    assert 2 <= big / small <= 8  # m*T grows fourfold


def test_triangle_oracle():
    g = fraud.make_graph([1, 1, 1], np.ones((3, 3)))
    step = 1e-5
    mu = harness.oracle_rising_tide(g, step).mu
    assert np.abs(mu[np.triu_indices(3, 1)] - 0.5).max() <= step


def test_single_edge_oracle():
    g = fraud.make_graph([1, 0.3], [[0, 1], [0, 0]])
    assert harness.oracle_rising_tide(g).mu[0, 1] == pytest.approx(fraud.rising_tide(g).mu[0, 1], abs=1e-5)


def test_oracle_correlations_basic():
    sim, _ = harness.simulate(replace(FAST, stop_when_decided=False, max_iterations=1), keep_records=True)
    w = [0.0, 1, 1, 1, 0.5, 1, 1]
    counts, corr = harness.oracle_correlations(sim.history, [1], w, sim.params.xmax)
    assert corr[0] == [0.0] * 7
    xs = sim.records[1].X
    for i in range(7):
        for j in range(7):
            if i != j:
                assert corr[i][j] == w[i] * w[j] * xs[i] * xs[j]


def test_cli_run_prints_json(capsys):
    assert cli.main(["run", "--m", "8", "--T", "4", "--seed", "3"]) == cli.EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["agreementOk"] and out["validityOk"] and out["params"]["n"] == 7


def test_cli_usage_errors(capsys, tmp_path):
    assert cli.main(["run", "--epsilon", "0.9"]) == cli.EXIT_USAGE
    bad = tmp_path / "x.cfg"
    bad.write_text("nonsense=1\n")
    assert cli.main(["run", "--config", str(bad)]) == cli.EXIT_USAGE


def test_cli_sweep_csv(capsys):
    code = cli.main(["sweep", "--m", "8", "--T", "4", "--maxRestarts", "0", "--seeds", "1-3",
                     "--adversaries", "fair,crash"])
    assert code == cli.EXIT_OK
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 6


def test_cli_sweep_flags_failures(capsys):
    code = cli.main(["sweep", "--m", "8", "--T", "4", "--seeds", "1", "--adversary", "crash",
                     "--crashSet", "0,1,2"])
    assert code == cli.EXIT_CHECK


def test_cli_verify_matching(capsys):
    assert cli.main(["verify-matching", "--graphs", "20", "--max-n", "5"]) == cli.EXIT_OK
    assert "maxDeviation" in capsys.readouterr().out


def test_cli_verify_invariants(capsys):
    code = cli.main(["verify-invariants", "--m", "8", "--T", "4", "--maxRestarts", "0",
                     "--adversary", "mirror-mimic", "--seeds", "1-2"])
    assert code == cli.EXIT_OK
    assert "totals" in capsys.readouterr().out
