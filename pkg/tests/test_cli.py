import json

import pytest

from ril.cli import DEFAULTS, gnuplot_script, resolve_values, run
from ril import mc_experiments as mc


def test_constants(tmp_path, capsys):
    assert run(["constants", "--d", "3", "--p", "2", "--walk", "simple", "--out", str(tmp_path),
                "--seed", "1"]) == 0
    doc = json.loads((tmp_path / "constants.json").read_text())
    assert doc["gamma_escape"] == pytest.approx(0.6594627, abs=1e-6)
    assert doc["kappa"] == pytest.approx(0.449257, abs=1e-5)
    assert set(doc["md_rate"]) == {"0.25", "0.5", "1.0", "2.0", "4.0"}
    assert doc["method"]["gamma_escape"]["K"] == 10000
    assert json.loads(capsys.readouterr().out)["d"] == 3


def test_constants_d2_has_no_escape(tmp_path):
    assert run(["constants", "--d", "2", "--p", "3", "--out", str(tmp_path), "--seed", "1"]) == 0
    doc = json.loads((tmp_path / "constants.json").read_text())
    assert doc["gamma_escape"] is None and doc["lil_constant"] > 0


def test_exit_codes(tmp_path, capsys):
    assert run(["moments", "--config", str(tmp_path / "missing.toml")]) == 3
    assert run(["frobnicate"]) == 2
    assert run(["moments", "--set", "run.nonsense=1", "--out", str(tmp_path)]) == 3
    err = capsys.readouterr().err
    assert "run.nonsense" in err
    bad = tmp_path / "bad.ini"
    bad.write_text("[walk]\nflavour = odd\n")
    assert run(["moments", "--config", str(bad)]) == 3
    assert "walk.flavour" in capsys.readouterr().err


def test_invalid_value_names_key(tmp_path, capsys):
    assert run(["moments", "--set", "run.replicates=many", "--out", str(tmp_path)]) == 3
    assert "run.replicates" in capsys.readouterr().err


def test_budget_exit_code(tmp_path):
    out = tmp_path / "o"
    code = run(["simulate", "--n", "10", "--d", "3", "--out", str(out), "--seed", "1",
                "--set", "run.p=1"])
    assert code == 0
    # enumeration budget: 6^12 paths are refused by the oracle layer
    from ril.oracles import EnumerationBudget, path_ensemble
    from ril.lattice_walk import BudgetError, make_simple_walk
    with pytest.raises(BudgetError):
        path_ensemble(make_simple_walk(3), 12, EnumerationBudget(10 ** 6))


def test_budget_maps_to_exit_4(tmp_path, monkeypatch):
    from ril import cli
    from ril.lattice_walk import BudgetError

    def boom(*a, **k):
        raise BudgetError("too big")
    monkeypatch.setattr(cli, "run_constants", boom)
    assert run(["constants", "--out", str(tmp_path), "--seed", "1"]) == 4
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "budget exceeded"


def test_manifest_written_even_on_failure(tmp_path, monkeypatch):
    def boom(cfg):
        raise RuntimeError("late failure")
    monkeypatch.setattr(mc, "estimate_moments", boom)
    assert run(["moments", "--out", str(tmp_path), "--seed", "4"]) == 1
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "failed" and man["seed"] == 4
    assert man["resolved"]["run.seed"] == "4"


def test_seed_from_entropy_is_printed(tmp_path, capsys):
    assert run(["simulate", "--n", "5", "--out", str(tmp_path)]) == 0
    err = capsys.readouterr().err
    seed = int(err.split("seed:")[1].split()[0])
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seed"] == seed and man["seed_source"] == "entropy"


def test_overrides_win(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nreplicates = 10\nn = 50\n")
    vals = resolve_values(str(cfg), ["run.replicates=20"])
    assert vals[("run", "replicates")] == "20" and vals[("run", "n")] == "50"
    assert all(desc for _, desc in DEFAULTS.values())


def test_moments_outputs_and_gnuplot(tmp_path):
    assert run(["moments", "--n", "32,64", "--replicates", "20", "--seed", "3",
                "--out", str(tmp_path), "--emit-gnuplot"]) == 0
    assert (tmp_path / "moments.csv").exists() and (tmp_path / "moments.json").exists()
    gp = (tmp_path / "moments.gp").read_text()
    assert '"moments.csv"' in gp and "moment_scaled" in gp


def test_gnuplot_template_for_tails():
    cfg = mc.ExperimentConfig(n_grid=(64,), replicates=10, seed=1)
    rep = mc.ExperimentReport("tails", cfg, [mc.Cell("tail_prob", 2, 2, 64, 0.5, 1.4, 0.3, 0.1, 10, 1)])
    assert "lambda" in gnuplot_script(rep, "tails")


def test_oracle_suite_fast(tmp_path, capsys):
    assert run(["oracle-suite", "--fast", "--out", str(tmp_path), "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 10
    doc = json.loads((tmp_path / "oracle_suite.json").read_text())
    assert all(row["pass"] for row in doc["checks"])


def test_simulate(tmp_path):
    assert run(["simulate", "--n", "30", "--p", "3", "--seed", "8", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "simulate.json").read_text())
    assert 1 <= doc["J"] <= doc["I"]
    rows = (tmp_path / "positions.csv").read_text().splitlines()
    assert len(rows) == 1 + 3 * 31
