"""Experiment orchestration: config identity, phases, artifacts, CLI."""

import json

import numpy as np
import pytest

from locmap import cli, harness, training
from locmap.harness import ExperimentConfig, Manifest, NumericalError, UsageError
from locmap.localization import load_scheme

TINY = {
    "obs_kind": "direct",
    "n_obs": 40,
    "obs_stride": 1,
    "cycles_train": 260,
    "cycles_verify": 200,
    "ensemble_sizes": [5],
    "inflation_grid": [0.05],
    "schemes": ["map", "diagonal_map", "gaspari_cohn"],
    "regressor_kind": "etkf",
    "regressor_size": 60,
    "benchmark_size": 60,
    "subsample_count": 1,
    "half_width_grid": [2, 4],
    "gc_tuning_inflations": [0.05],
    "filter_spinup_cycles": 60,
    "nature_spinup_steps": 300,
    "master_seed": 987,
}


def tiny_config(tmp_path, **overrides):
    data = dict(TINY)
    data["out_dir"] = str(tmp_path / "runs")
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


@pytest.fixture(scope="module")
def completed_run(tmp_path_factory):
    config = tiny_config(tmp_path_factory.mktemp("pipeline"))
    manifest = harness.run_all(config)
    return config, manifest


def test_config_validation():
    with pytest.raises(UsageError, match="observation kind"):
        ExperimentConfig(obs_kind="psychic")
    with pytest.raises(UsageError, match="scheme"):
        ExperimentConfig(schemes=("map", "banana"))
    with pytest.raises(UsageError, match="regressor"):
        ExperimentConfig(regressor_kind="oracle")
    with pytest.raises(UsageError, match="spinup"):
        ExperimentConfig(cycles_train=100, cycles_verify=500, filter_spinup_cycles=100)
    with pytest.raises(UsageError, match="unknown config keys"):
        ExperimentConfig.from_dict({"volume": 11})


def test_config_round_trip_and_hash(tmp_path):
    config = tiny_config(tmp_path)
    clone = ExperimentConfig.from_dict(config.to_dict())
    assert clone.config_hash() == config.config_hash()
    assert len(config.config_hash()) == 12
    moved = ExperimentConfig.from_dict({**config.to_dict(), "out_dir": "elsewhere"})
    assert moved.config_hash() == config.config_hash()
    reseeded = ExperimentConfig.from_dict({**config.to_dict(), "master_seed": 1})
    assert reseeded.config_hash() != config.config_hash()
    assert config.run_dir.name == f"run-{config.config_hash()}"


def test_config_from_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(dict(TINY, out_dir=str(tmp_path))))
    config = ExperimentConfig.from_file(path)
    assert config.master_seed == 987
    with pytest.raises(UsageError, match="not found"):
        ExperimentConfig.from_file(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(UsageError, match="valid JSON"):
        ExperimentConfig.from_file(bad)


def test_phases_require_their_inputs(tmp_path):
    config = tiny_config(tmp_path)
    with pytest.raises(UsageError, match="nature"):
        harness.run_observe_phase(config)
    with pytest.raises(UsageError, match="observe"):
        harness.run_training_phase(config)
    with pytest.raises(UsageError, match="observe"):
        harness.run_verification_phase(config)


def test_nature_numerical_failure_is_typed(tmp_path):
    config = tiny_config(tmp_path, dt=5.0, nature_spinup_steps=50)
    with pytest.raises(NumericalError, match="blew up"):
        harness.run_nature_phase(config)


def test_pipeline_produces_expected_artifacts(completed_run):
    config, manifest = completed_run
    run = config.run_dir
    for rel in (
        "nature/truth.bin",
        "nature/observations.csv",
        "training/gc_tuning.csv",
        "training/regressor_ensembles.bin",
        "training/correlations_regressor.bin",
        "maps/full_K5_S1.json",
        "maps/full_K5_S1.bin",
        "maps/diag_K5_S1.json",
        "verification/results.csv",
        "verification/curves_full_K5.csv",
        "manifest.json",
    ):
        assert (run / rel).exists(), rel
    assert all(manifest.phase_complete(p) for p in ("nature", "observe", "tune_gc", "train", "verify"))


def test_results_table_covers_every_cell(completed_run):
    config, _ = completed_run
    rows = harness.load_results(config.run_dir / "verification" / "results.csv")
    # 3 schemes x 1 size x 1 inflation, plus the benchmark row
    assert len(rows) == 4
    schemes = sorted(r["scheme"] for r in rows)
    assert schemes == ["diagonal_map", "etkf_benchmark", "gaspari_cohn", "map"]
    for row in rows:
        assert row["n"] == "1"
        assert row["M"] == "40"
        assert float(row["mean_rmse"]) > 0
        assert row["diverged"] in ("true", "false")
    benchmark = next(r for r in rows if r["scheme"] == "etkf_benchmark")
    assert float(benchmark["normalized_rmse"]) == 1.0
    gc = next(r for r in rows if r["scheme"] == "gaspari_cohn")
    assert gc["half_width"] in ("2", "4")


def test_trained_maps_are_loadable_and_dimensioned(completed_run):
    config, _ = completed_run
    scheme = load_scheme(config.run_dir / "maps" / "full_K5_S1.json")
    assert scheme.tensor.shape == (40, 40, 40)
    assert scheme.meta["K_train"] == 5
    assert scheme.meta["L_train"] == 60
    assert scheme.meta["T"] == 260
    diag = load_scheme(config.run_dir / "maps" / "diag_K5_S1.json")
    assert diag.diagonal.shape == (40, 40)


def test_tuning_table_covers_cases(completed_run):
    config, _ = completed_run
    entries = training.load_tuning_table(config.run_dir / "training" / "gc_tuning.csv")
    assert [(e.ensemble_size, e.inflation) for e in entries] == [(5, 0.05)]
    assert entries[0].half_width in (2, 4)


def test_rerun_is_a_noop_and_force_is_deterministic(completed_run):
    config, _ = completed_run
    results = config.run_dir / "verification" / "results.csv"
    before = results.read_bytes()
    stamp = results.stat().st_mtime_ns
    harness.run_all(config)
    assert results.stat().st_mtime_ns == stamp
    harness.run_verification_phase(config, force=True)
    assert results.read_bytes() == before


def test_manifest_rejects_foreign_directory(completed_run, tmp_path):
    config, _ = completed_run
    other = tiny_config(tmp_path, master_seed=321)
    foreign = config.run_dir.parent / f"run-{other.config_hash()}"
    foreign.mkdir(parents=True)
    (foreign / "manifest.json").write_text(
        (config.run_dir / "manifest.json").read_text()
    )
    relocated = ExperimentConfig.from_dict(
        {**other.to_dict(), "out_dir": str(config.run_dir.parent)}
    )
    with pytest.raises(UsageError, match="config hash"):
        Manifest(relocated)


def test_missing_tuning_case_is_reported(completed_run):
    config, _ = completed_run
    with pytest.raises(UsageError, match="inflation=0.4"):
        harness._tuned_half_width(config, 5, 0.4)


def test_report_formats_results(completed_run):
    config, _ = completed_run
    text = harness.format_report(config)
    assert config.config_hash() in text
    assert "etkf_benchmark" in text
    assert "half_width" in text


def test_serial_gc_regressor_requires_tuning(tmp_path):
    config = tiny_config(tmp_path, regressor_kind="serial_gc", regressor_size=20)
    harness.run_nature_phase(config)
    harness.run_observe_phase(config)
    with pytest.raises(UsageError, match="tune_gc"):
        harness.run_training_phase(config)
    assert (20, 0.05) in [(k, f) for k, f in harness._tuning_cases(config)]


def test_cli_full_pipeline_and_report(tmp_path, capsys):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(dict(TINY, out_dir=str(tmp_path / "runs"))))
    assert cli.main(["all", "--config", str(path)]) == 0
    assert cli.main(["report", "--config", str(path)]) == 0
    out = capsys.readouterr().out
    assert "etkf_benchmark" in out
    # a completed pipeline re-run is a cheap no-op
    assert cli.main(["all", "--config", str(path)]) == 0


def test_cli_usage_errors_exit_1(tmp_path, capsys):
    assert cli.main(["all", "--config", str(tmp_path / "absent.json")]) == 1
    path = tmp_path / "config.json"
    path.write_text(json.dumps(dict(TINY, out_dir=str(tmp_path / "runs"))))
    assert cli.main(["verify", "--config", str(path)]) == 1
    err = capsys.readouterr().err
    assert "missing artifact" in err
    with pytest.raises(UsageError):
        cli.build_parser().parse_args(["frobnicate"])
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(dict(TINY, volume=11)))
    assert cli.main(["nature", "--config", str(bad)]) == 1


def test_cli_numerical_failure_exits_2(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(
        json.dumps(dict(TINY, dt=5.0, nature_spinup_steps=50, out_dir=str(tmp_path / "runs")))
    )
    assert cli.main(["nature", "--config", str(path)]) == 2


def test_cli_seed_and_out_dir_overrides(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(dict(TINY, out_dir=str(tmp_path / "runs"))))
    other = tmp_path / "other"
    assert cli.main(["nature", "--config", str(path), "--seed", "5", "--out-dir", str(other)]) == 0
    candidates = list(other.glob("run-*/nature/truth.bin"))
    assert len(candidates) == 1
    reseeded = ExperimentConfig.from_dict(dict(TINY, master_seed=5, out_dir=str(other)))
    assert candidates[0].parent.parent.name == f"run-{reseeded.config_hash()}"


def test_threaded_verification_matches_serial(completed_run):
    config, _ = completed_run
    results = config.run_dir / "verification" / "results.csv"
    before = results.read_bytes()
    harness.run_verification_phase(config, force=True, threads=3)
    assert results.read_bytes() == before
