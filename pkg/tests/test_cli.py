"""Command-line pipeline: subcommands, exit codes, reproducibility."""

import csv
import json
import os

import numpy as np
import pytest

from swingnet.cli import main
from swingnet.training import LossWeights, lambda_f_schedule


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture()
def workspace(tmp_path):
    return str(tmp_path)


def fast_training_config(tmp_path, flavour="vanilla", scenario="A", **train_kw):
    train_kw.setdefault("max_epochs", 6)
    train_kw.setdefault("patience", 6)
    cfg = {
        "case": "kundur11",
        "scenario": scenario,
        "flavour": flavour,
        "seed": 0,
        "workspace": str(tmp_path),
        "training": train_kw,
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return str(path)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def test_simulate_writes_trajectory(workspace):
    code = run_cli("simulate", "--case", "kundur11", "--disturbance", "6.09",
                   "--rel-tol", "1e-6", "--workspace", workspace)
    assert code == 0
    out = os.path.join(workspace, "trajectories")
    files = sorted(os.listdir(out))
    assert any(f.endswith(".csv") for f in files)
    assert any(f.endswith(".manifest.json") for f in files)
    csv_file = next(f for f in files if f.endswith(".csv"))
    with open(os.path.join(out, csv_file)) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "t"
    assert float(rows[-1][0]) == 20.0


def test_simulate_zero_disturbance_constant(workspace):
    code = run_cli("simulate", "--case", "kundur11", "--disturbance", "0",
                   "--rel-tol", "1e-8", "--workspace", workspace)
    assert code == 0
    out = os.path.join(workspace, "trajectories")
    csv_file = next(f for f in sorted(os.listdir(out)) if f.endswith(".csv"))
    data = np.genfromtxt(os.path.join(out, csv_file), delimiter=",", skip_header=1)
    states = data[:, 1:]
    assert np.max(np.abs(states - states[0])) < 1e-8


def test_simulate_bad_case_exit_code(workspace):
    code = run_cli("simulate", "--case", "/no/such/file.case",
                   "--disturbance", "1.0", "--workspace", workspace)
    assert code == 2


def test_unknown_flavour_exit_code(workspace):
    code = run_cli("train", "--case", "kundur11", "--flavour", "bogus",
                   "--workspace", workspace)
    assert code == 2


# ---------------------------------------------------------------------------
# generate-data
# ---------------------------------------------------------------------------

def test_generate_data_row_count_and_idempotence(workspace):
    code = run_cli("generate-data", "--case", "kundur11", "--scenario", "A",
                   "--workspace", workspace)
    assert code == 0
    csv_path = os.path.join(workspace, "data", "kundur11_A.csv")
    man_path = csv_path + ".manifest.json"
    with open(man_path) as fh:
        manifest = json.load(fh)
    assert manifest["row_count"] == 66
    assert manifest["wall_time_s"] > 0.0
    first_hash = manifest["content_hash"]
    first_bytes = open(csv_path, "rb").read()

    code = run_cli("generate-data", "--case", "kundur11", "--scenario", "A",
                   "--workspace", workspace, "--force")
    assert code == 0
    with open(man_path) as fh:
        manifest2 = json.load(fh)
    assert manifest2["content_hash"] == first_hash
    assert open(csv_path, "rb").read() == first_bytes


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def test_train_writes_model_and_records(tmp_path):
    cfg = fast_training_config(tmp_path)
    assert run_cli("train", "--config", cfg) == 0
    models = os.path.join(tmp_path, "models")
    stems = os.listdir(models)
    assert "kundur11_A_vanilla_seed0.swnn" in stems
    assert "kundur11_A_vanilla_seed0_record.csv" in stems
    assert "kundur11_A_vanilla_seed0_summary.json" in stems
    assert "kundur11_A_vanilla_seed0_timing.json" in stems
    with open(os.path.join(models, "kundur11_A_vanilla_seed0_record.csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    assert all(row["loss_dt"] == "" for row in rows)


def test_vanilla_rejects_nonzero_lambda_dt(tmp_path):
    cfg = fast_training_config(tmp_path, flavour="vanilla", lambda_dt=0.5)
    assert run_cli("train", "--config", cfg) == 2


def test_dtnn_rejects_nonzero_lambda_f(tmp_path):
    cfg = fast_training_config(tmp_path, flavour="dtnn", lambda_f_max=0.5)
    assert run_cli("train", "--config", cfg) == 2


def test_pinn_fade_in_trace_matches_schedule(tmp_path):
    cfg = fast_training_config(tmp_path, flavour="pinn", max_epochs=4, patience=4)
    assert run_cli("train", "--config", cfg) == 0
    record = os.path.join(tmp_path, "models", "kundur11_A_pinn_seed0_record.csv")
    with open(record) as fh:
        rows = list(csv.DictReader(fh))
    weights = LossWeights(lambda_dt=0.01, lambda_f0=0.005, lambda_f_max=0.5)
    for row in rows:
        expected = lambda_f_schedule(int(row["epoch"]), weights)
        assert float(row["lambda_f"]) == expected


def test_seed_matrix_writes_one_model_per_seed(tmp_path):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({
        "case": "kundur11", "scenario": "A", "flavour": "vanilla",
        "workspace": str(tmp_path), "seeds": [0, 1, 2],
        "training": {"max_epochs": 4, "patience": 4},
    }))
    assert run_cli("seed-matrix", "--config", str(cfg_path)) == 0
    models = os.listdir(os.path.join(tmp_path, "models"))
    for seed in (0, 1, 2):
        assert f"kundur11_A_vanilla_seed{seed}.swnn" in models


def test_train_rerun_byte_identical_non_timing_outputs(tmp_path):
    cfg = fast_training_config(tmp_path, max_epochs=5, patience=5)
    assert run_cli("train", "--config", cfg) == 0
    models = os.path.join(tmp_path, "models")
    stem = "kundur11_A_vanilla_seed0"
    first = {
        name: open(os.path.join(models, name), "rb").read()
        for name in (stem + ".swnn", stem + "_record.csv", stem + "_summary.json")
    }
    assert run_cli("train", "--config", cfg) == 0
    for name, payload in first.items():
        assert open(os.path.join(models, name), "rb").read() == payload, name


# ---------------------------------------------------------------------------
# evaluate / benchmark
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def trained_workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cliws")
    cfg = fast_training_config(ws, max_epochs=8, patience=8)
    assert run_cli("train", "--config", cfg) == 0
    return ws


def test_evaluate_on_small_grid(trained_workspace, tmp_path):
    # evaluating against the scenario-B file keeps the test fast; any
    # dataset file works as --test-data
    ws = str(trained_workspace)
    assert run_cli("generate-data", "--case", "kundur11", "--scenario", "B",
                   "--workspace", ws) == 0
    model = os.path.join(ws, "models", "kundur11_A_vanilla_seed0.swnn")
    out_prefix = str(tmp_path / "eval")
    code = run_cli("evaluate", "--case", "kundur11", "--model", model,
                   "--test-data", os.path.join(ws, "data", "kundur11_B.csv"),
                   "--out", out_prefix, "--workspace", ws)
    assert code == 0
    with open(out_prefix + "_summary.json") as fh:
        summary = json.load(fh)
    assert summary["accuracy"][0]["max_ae"]["delta"] > 0.0
    assert os.path.exists(out_prefix + "_distribution.csv")


def test_benchmark_emits_timing_and_cost(trained_workspace, tmp_path):
    ws = str(trained_workspace)
    model = os.path.join(ws, "models", "kundur11_A_vanilla_seed0.swnn")
    out_prefix = str(tmp_path / "bench")
    code = run_cli("benchmark", "--case", "kundur11", "--model", model,
                   "--reps", "5", "--rel-tol", "1e-4",
                   "--out", out_prefix, "--workspace", ws)
    assert code == 0
    with open(out_prefix + "_timing.csv") as fh:
        rows = list(csv.DictReader(fh))
    methods = {row["method"] for row in rows}
    assert methods == {"nn", "solver"}
    with open(out_prefix + "_summary.json") as fh:
        summary = json.load(fh)
    assert "critical_n" in summary
