import json
import os

import pytest

from tensorcf.api import interface
from tensorcf.config import config
from tensorcf.core.diagnostics import Check, DiagnosticsReport
from tensorcf.core.experiment import read_manifest


def data_flags(paths, sampling=True):
    flags = ["--ratings", paths["ratings"], "--users", paths["users"], "--items", paths["items"],
             "--occupations", paths["occupations"]]
    if sampling:
        flags += ["--subsample-users", "4", "--subsample-movies", "5", "--test-fraction", "0.3", "--seed", "0"]
    return flags


@pytest.fixture
def paths(movielens_files):
    return movielens_files()


def test_parse_prints_counts_and_snapshot(paths, tmp_path, capsys):
    snapshot = str(tmp_path / "snapshot.txt")
    code = interface.run_cli(["parse", *data_flags(paths, sampling=False), "--snapshot", snapshot])
    assert code == interface.EXIT_OK
    assert "users=4 movies=5 ratings=10 occupations=21" in capsys.readouterr().out
    assert os.path.exists(snapshot)


def test_parse_error_exit_code(movielens_files, capsys):
    paths = movielens_files(ratings=["1\t1\tfive\t0"])
    assert interface.run_cli(["parse", *data_flags(paths, sampling=False)]) == interface.EXIT_ERROR
    assert "u.data:1:" in capsys.readouterr().err


def test_missing_file_exit_code(paths, tmp_path):
    flags = data_flags(paths, sampling=False)
    flags[1] = str(tmp_path / "absent.data")
    assert interface.run_cli(["parse", *flags]) == interface.EXIT_ERROR


def test_unknown_config_key(paths, tmp_path):
    config_path = tmp_path / "bad.json"
    config_path.write_text(json.dumps({"learning_rate": 0.1}), encoding="utf-8")
    assert interface.run_cli(["--config", str(config_path), "parse", *data_flags(paths, sampling=False)]) \
        == interface.EXIT_ERROR


def test_fit_save_and_evaluate(paths, tmp_path, capsys):
    model_path = str(tmp_path / "model.npz")
    output = str(tmp_path / "out")
    code = interface.run_cli(["fit", *data_flags(paths), "--eta", "0.5", "--zeta", "0.5", "--rank", "2",
                              "--lambda", "0.01", "--max-iter", "100", "--save-model", model_path,
                              "--output", output])
    assert code == interface.EXIT_OK
    assert "test_mse=" in capsys.readouterr().out
    manifest = read_manifest(os.path.join(output, "fit_manifest.txt"))
    assert manifest["rank"] == "2" and manifest["solver"] == "fixed_rank"

    code = interface.run_cli(["evaluate", *data_flags(paths, sampling=False), "--model", model_path])
    assert code == interface.EXIT_OK
    assert "ratings=10" in capsys.readouterr().out


def test_save_model_needs_fixed_rank(paths, tmp_path):
    code = interface.run_cli(["fit", *data_flags(paths), "--eta", "0.5", "--zeta", "0.5", "--lambda", "0.01",
                              "--solver", "product_ridge", "--save-model", str(tmp_path / "model.npz"),
                              "--output", str(tmp_path / "out")])
    assert code == interface.EXIT_ERROR


def test_grid_from_config_file(paths, tmp_path, capsys):
    config_path = tmp_path / "smoke.json"
    config_path.write_text(json.dumps({
        "etas": [0.0, 1.0], "zetas": [0.5], "ranks": [1], "lambdas": [0.01], "folds": 2,
        "max_iter": 100, "workers": 1,
    }), encoding="utf-8")
    output = tmp_path / "grid"
    code = interface.run_cli(["--config", str(config_path), "grid", *data_flags(paths), "--no-timing",
                              "--output", str(output)])
    assert code == interface.EXIT_OK
    assert "2 cells, 0 failed" in capsys.readouterr().out
    for name in ("results.csv", "table1.csv", "surface.csv", "lambda_sweep.csv", "manifest.txt"):
        assert (output / name).exists()
    manifest = read_manifest(str(output / "manifest.txt"))
    assert manifest["folds"] == "2"
    assert manifest["input_ratings"] == paths["ratings"]


def test_flags_override_config(paths, tmp_path, capsys):
    config_path = tmp_path / "smoke.json"
    config_path.write_text(json.dumps({"etas": [0.0, 1.0], "zetas": [0.5], "ranks": [1], "lambdas": [0.01],
                                       "folds": 2, "workers": 1}), encoding="utf-8")
    code = interface.run_cli(["--config", str(config_path), "grid", *data_flags(paths), "--etas", "0.5",
                              "--max-iter", "50", "--output", str(tmp_path / "grid")])
    assert code == interface.EXIT_OK
    assert "1 cells" in capsys.readouterr().out


def test_surface_writes_csv(paths, tmp_path):
    output = tmp_path / "surface"
    code = interface.run_cli(["surface", *data_flags(paths), "--rank", "1", "--lambda", "0.01", "--etas", "0", "1",
                              "--zetas", "0.5", "--max-iter", "50", "--workers", "1", "--output", str(output)])
    assert code == interface.EXIT_OK
    assert (output / "surface_rank1_lambda0.01.csv").exists()


def test_diagnostics_exit_codes(monkeypatch, capsys):
    passing = DiagnosticsReport([Check("kronecker.vec", True, 0.0, 1e-10)])
    failing = DiagnosticsReport([Check("gradient.fixed_rank", False, 2.0, 1e-5)])
    monkeypatch.setattr(interface, "run_diagnostics", lambda seed: passing)
    assert interface.run_cli(["diagnostics"]) == interface.EXIT_OK
    monkeypatch.setattr(interface, "run_diagnostics", lambda seed: failing)
    assert interface.run_cli(["diagnostics", "--seed", "3"]) == interface.EXIT_DIAGNOSTICS
    assert "failed: gradient.fixed_rank" in capsys.readouterr().out


def test_command_is_required():
    with pytest.raises(SystemExit):
        interface.run_cli([])


def test_trace_norm_size_guard_flag(paths, tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(config, "TRACE_SIZE_LIMIT", 4)
    flags = ["fit", *data_flags(paths), "--eta", "0.5", "--zeta", "0.5", "--lambda", "0.01", "--solver", "trace_norm",
             "--mu", "0.05", "--max-iter", "50", "--output", str(tmp_path / "out")]
    assert interface.run_cli(flags) == interface.EXIT_ERROR
    assert "size guard" in capsys.readouterr().err
    assert interface.run_cli([*flags, "--allow-large"]) == interface.EXIT_OK
    assert "solver=trace_norm" in capsys.readouterr().out
