"""Twin-experiment orchestration: config, phases, artifacts, and reports.

An experiment is a pure function of its configuration and master seed.  Each
phase persists its artifacts under a run directory addressed by the config
hash, so a changed configuration can never silently reuse stale files, and a
completed phase is never recomputed (re-running is a no-op unless forced).

Phases, in order:

* ``nature``   -- integrate the truth trajectory, stored at cycle resolution;
* ``observe``  -- synthesise noisy observations (and, for the nonlinear kind,
                  the data extrema that define the operator);
* ``tune-gc``  -- grid-search Gaspari-Cohn half-widths on the training window;
* ``train``    -- run the regressor filter over the training window, archive
                  its analysis ensembles, and fit localization maps;
* ``verify``   -- sweep (scheme, ensemble size, inflation) cells over the
                  verification window and emit the results table.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import diagnostics, filters, model, observations, stats, training
from .localization import LocalizationScheme, load_scheme, save_scheme
from .seeding import substream_seed

SCHEME_NAMES = ("map", "diagonal_map", "gaspari_cohn", "none")
REGRESSOR_KINDS = ("etkf", "serial_gc")
BENCHMARK_SCHEME = "etkf_benchmark"

RESULT_COLUMNS = (
    "scheme",
    "K",
    "n",
    "M",
    "inflation",
    "half_width",
    "mean_rmse",
    "mean_spread",
    "normalized_rmse",
    "diverged",
)


class UsageError(ValueError):
    """Bad command line, unusable configuration, or missing prerequisite."""


class NumericalError(RuntimeError):
    """A phase failed numerically (blow-up, degenerate statistics, ...)."""


@dataclass
class ExperimentConfig:
    """Complete description of one twin experiment."""

    obs_kind: str = "direct"
    n_obs: int = 40
    obs_stride: int = 1
    cycles_train: int = 10000
    cycles_verify: int = 20000
    ensemble_sizes: tuple = (5, 10, 20, 40)
    inflation_grid: tuple = (0.0, 0.02, 0.05, 0.08, 0.1, 0.15, 0.2, 0.3)
    schemes: tuple = ("map", "diagonal_map", "gaspari_cohn")
    regressor_kind: str = "etkf"
    regressor_size: int = 500
    benchmark_size: int = 500
    subsample_count: int = 1
    extra_subsample_counts: tuple = ()
    half_width_grid: tuple = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10)
    gc_tuning_inflations: tuple | None = None
    obs_error_variance: float = 1.0
    n_state: int = 40
    forcing: float = 8.0
    dt: float = 0.05
    nature_spinup_steps: int = 1000
    filter_spinup_cycles: int = 500
    master_seed: int = 93150421
    out_dir: str = "runs"

    def __post_init__(self):
        self.ensemble_sizes = tuple(int(k) for k in self.ensemble_sizes)
        self.inflation_grid = tuple(float(f) for f in self.inflation_grid)
        self.schemes = tuple(self.schemes)
        self.extra_subsample_counts = tuple(int(s) for s in self.extra_subsample_counts)
        self.half_width_grid = tuple(int(c) for c in self.half_width_grid)
        if self.gc_tuning_inflations is not None:
            self.gc_tuning_inflations = tuple(float(f) for f in self.gc_tuning_inflations)
        if self.obs_kind not in observations.KINDS:
            raise UsageError(f"unknown observation kind {self.obs_kind!r}")
        for scheme in self.schemes:
            if scheme not in SCHEME_NAMES:
                raise UsageError(f"unknown scheme {scheme!r}")
        if self.regressor_kind not in REGRESSOR_KINDS:
            raise UsageError(f"unknown regressor kind {self.regressor_kind!r}")
        if self.cycles_train < 1 or self.cycles_verify < 1:
            raise UsageError("cycles_train and cycles_verify must be positive")
        if not 0 <= self.filter_spinup_cycles < min(self.cycles_train, self.cycles_verify):
            raise UsageError(
                "filter_spinup_cycles must leave a non-empty scoring window in "
                "both the training and verification segments"
            )
        if self.obs_stride < 1:
            raise UsageError("obs_stride must be positive")
        if not self.ensemble_sizes:
            raise UsageError("ensemble_sizes must not be empty")
        if not self.inflation_grid:
            raise UsageError("inflation_grid must not be empty")
        if self.subsample_count < 1:
            raise UsageError("subsample_count must be positive")

    @property
    def model_config(self) -> model.ModelConfig:
        return model.ModelConfig(self.n_state, self.forcing, self.dt)

    @property
    def cycles_total(self) -> int:
        return self.cycles_train + self.cycles_verify

    @property
    def tuning_inflations(self) -> tuple:
        if self.gc_tuning_inflations is not None:
            return self.gc_tuning_inflations
        return self.inflation_grid

    @property
    def subsample_counts(self) -> tuple:
        counts = [self.subsample_count]
        for extra in self.extra_subsample_counts:
            if extra not in counts:
                counts.append(extra)
        return tuple(counts)

    def to_dict(self) -> dict:
        d = {
            "obs_kind": self.obs_kind,
            "n_obs": self.n_obs,
            "obs_stride": self.obs_stride,
            "cycles_train": self.cycles_train,
            "cycles_verify": self.cycles_verify,
            "ensemble_sizes": list(self.ensemble_sizes),
            "inflation_grid": list(self.inflation_grid),
            "schemes": list(self.schemes),
            "regressor_kind": self.regressor_kind,
            "regressor_size": self.regressor_size,
            "benchmark_size": self.benchmark_size,
            "subsample_count": self.subsample_count,
            "extra_subsample_counts": list(self.extra_subsample_counts),
            "half_width_grid": list(self.half_width_grid),
            "gc_tuning_inflations": (
                None if self.gc_tuning_inflations is None else list(self.gc_tuning_inflations)
            ),
            "obs_error_variance": self.obs_error_variance,
            "n_state": self.n_state,
            "forcing": self.forcing,
            "dt": self.dt,
            "nature_spinup_steps": self.nature_spinup_steps,
            "filter_spinup_cycles": self.filter_spinup_cycles,
            "master_seed": self.master_seed,
            "out_dir": str(self.out_dir),
        }
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def config_hash(self) -> str:
        identity = self.to_dict()
        identity.pop("out_dir")
        canonical = json.dumps(identity, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    @property
    def run_dir(self) -> Path:
        return Path(self.out_dir) / f"run-{self.config_hash()}"


# ---------------------------------------------------------------------------
# manifest

PHASES = ("nature", "observe", "tune_gc", "train", "verify")


class Manifest:
    """Phase-completion ledger of one run directory."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.path = config.run_dir / "manifest.json"
        if self.path.exists():
            self.data = json.loads(self.path.read_text())
            if self.data.get("config_hash") != config.config_hash():
                raise UsageError(
                    f"manifest in {config.run_dir} belongs to config hash "
                    f"{self.data.get('config_hash')}, not {config.config_hash()}"
                )
        else:
            self.data = {
                "config_hash": config.config_hash(),
                "config": config.to_dict(),
                "created": _timestamp(),
                "seeds": {},
                "phases": {},
            }

    def phase_complete(self, phase: str) -> bool:
        return bool(self.data["phases"].get(phase, {}).get("complete"))

    def mark_complete(self, phase: str, files: dict, seeds: dict | None = None) -> None:
        self.data["phases"][phase] = {
            "complete": True,
            "at": _timestamp(),
            "files": {k: str(v) for k, v in files.items()},
        }
        if seeds:
            self.data["seeds"].update({k: int(v) for k, v in seeds.items()})
        self.save()

    def files(self, phase: str) -> dict:
        return self.data["phases"].get(phase, {}).get("files", {})

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _require(manifest: Manifest, phase: str, artifact: Path) -> None:
    if not manifest.phase_complete(phase) or not artifact.exists():
        raise UsageError(
            f"missing artifact {artifact} from phase '{phase}'; run that phase first"
        )


# ---------------------------------------------------------------------------
# artifact paths


def _paths(config: ExperimentConfig) -> dict:
    run = config.run_dir
    return {
        "truth": run / "nature" / "truth.bin",
        "observations": run / "nature" / "observations.csv",
        "tuning": run / "training" / "gc_tuning.csv",
        "regressor_archive": run / "training" / "regressor_ensembles.bin",
        "regressor_correlations": run / "training" / "correlations_regressor.bin",
        "maps_dir": run / "maps",
        "results": run / "verification" / "results.csv",
        "curves_dir": run / "verification",
    }


def _map_path(config: ExperimentConfig, variant: str, size: int, subsets: int) -> Path:
    stem = "full" if variant == "full_map" else "diag"
    return _paths(config)["maps_dir"] / f"{stem}_K{size}_S{subsets}.json"


# ---------------------------------------------------------------------------
# phases


def run_nature_phase(config: ExperimentConfig, force: bool = False) -> Manifest:
    """Integrate and persist the truth trajectory at cycle resolution."""
    manifest = Manifest(config)
    if manifest.phase_complete("nature") and not force:
        return manifest
    seed = substream_seed(config.master_seed, "nature")
    n_model_steps = config.cycles_total * config.obs_stride
    trajectory = model.nature_run(
        config.model_config, seed, config.nature_spinup_steps, n_model_steps
    )
    if trajectory.diverged:
        raise NumericalError("nature run blew up; check model configuration")
    cycle_states = trajectory.states[:: config.obs_stride]
    cycle_trajectory = model.Trajectory(
        cycle_states,
        config.dt * config.obs_stride,
        meta={
            "seed": seed,
            "forcing": config.forcing,
            "spinup_steps": config.nature_spinup_steps,
            "model_dt": config.dt,
            "obs_stride": config.obs_stride,
        },
    )
    path = _paths(config)["truth"]
    model.save_trajectory(cycle_trajectory, path)
    manifest.mark_complete("nature", {"truth": path}, {"nature": seed})
    return manifest


def run_observe_phase(config: ExperimentConfig, force: bool = False) -> Manifest:
    """Synthesise the observation records for every assimilation cycle."""
    manifest = Manifest(config)
    paths = _paths(config)
    if manifest.phase_complete("observe") and not force:
        return manifest
    _require(manifest, "nature", paths["truth"])
    truth = model.load_trajectory(paths["truth"])
    if truth.n_steps != config.cycles_total:
        raise NumericalError(
            f"truth trajectory covers {truth.n_steps} cycles, expected {config.cycles_total}"
        )
    meta = {
        "kind": config.obs_kind,
        "n_obs": config.n_obs,
        "n_state": config.n_state,
        "obs_stride": config.obs_stride,
        "noise_std": 1.0,
    }
    # the operator (and for the nonlinear kind its extrema) must be valid
    # before anything is written
    if config.obs_kind == "nonlinear_indirect":
        a, b = observations.compute_extrema(truth)
        params = observations.NonlinearObsParams(a, b)
        meta["a"] = a
        meta["b"] = b
        operator = observations.ObservationOperator(
            config.obs_kind, config.n_obs, config.n_state, params
        )
    else:
        operator = observations.ObservationOperator(config.obs_kind, config.n_obs, config.n_state)
    seed = substream_seed(config.master_seed, "observe")
    meta["seed"] = seed
    records = observations.generate_observations(truth, operator, 1, seed)
    observations.save_observations(records, paths["observations"], meta)
    manifest.mark_complete("observe", {"observations": paths["observations"]}, {"observe": seed})
    return manifest


def _load_operator(config: ExperimentConfig) -> observations.ObservationOperator:
    _, meta = observations.load_observations(_paths(config)["observations"])
    params = None
    if meta["kind"] == "nonlinear_indirect":
        params = observations.NonlinearObsParams(meta["a"], meta["b"])
    return observations.ObservationOperator(meta["kind"], meta["n_obs"], meta["n_state"], params)


def _load_windows(config: ExperimentConfig):
    paths = _paths(config)
    truth = model.load_trajectory(paths["truth"])
    records, _ = observations.load_observations(paths["observations"])
    obs = observations.stack_values(records)
    if obs.shape[0] != config.cycles_total:
        raise NumericalError(
            f"found {obs.shape[0]} observation records, expected {config.cycles_total}"
        )
    split = config.cycles_train
    train = (truth.states[: split + 1], obs[:split])
    verify = (truth.states[split:], obs[split:])
    return train, verify


def _tuning_cases(config: ExperimentConfig) -> list[tuple[int, float]]:
    sizes = list(config.ensemble_sizes)
    if config.regressor_kind == "serial_gc" and config.regressor_size not in sizes:
        sizes.append(config.regressor_size)
    return [(k, f) for k in sizes for f in config.tuning_inflations]


def run_gc_tuning_phase(
    config: ExperimentConfig, force: bool = False, threads: int = 1
) -> Manifest:
    """Tune the Gaspari-Cohn half-width per (ensemble size, inflation) case."""
    manifest = Manifest(config)
    paths = _paths(config)
    if manifest.phase_complete("tune_gc") and not force:
        return manifest
    _require(manifest, "observe", paths["observations"])
    operator = _load_operator(config)
    (truth_train, obs_train), _ = _load_windows(config)

    def tune_case(case):
        size, inflation = case
        return training.tune_gc(
            truth_train,
            obs_train,
            operator,
            config.model_config,
            size,
            inflation,
            config.half_width_grid,
            steps_per_cycle=config.obs_stride,
            spinup_cycles=config.filter_spinup_cycles,
            seed=substream_seed(config.master_seed, "tune", size, repr(inflation)),
            obs_error_variance=config.obs_error_variance,
        )

    cases = _tuning_cases(config)
    entries = _map_jobs(tune_case, cases, threads)
    training.save_tuning_table(entries, paths["tuning"])
    manifest.mark_complete("tune_gc", {"tuning": paths["tuning"]})
    return manifest


def run_training_phase(config: ExperimentConfig, force: bool = False, threads: int = 1) -> Manifest:
    """Archive the regressor filter's analyses and fit the localization maps."""
    manifest = Manifest(config)
    paths = _paths(config)
    if manifest.phase_complete("train") and not force:
        return manifest
    _require(manifest, "observe", paths["observations"])
    operator = _load_operator(config)
    (truth_train, obs_train), _ = _load_windows(config)
    cycles = obs_train.shape[0]
    source_size = config.regressor_size
    seed = substream_seed(config.master_seed, "train", "regressor")

    archive_meta = {
        "n_state": config.n_state,
        "size": source_size,
        "cycles": cycles,
        "obs_stride": config.obs_stride,
        "seed": seed,
        "regressor_id": _regressor_id(config),
    }
    if config.regressor_kind == "etkf":
        filter_config = filters.FilterConfig(
            source_size, 0.0, LocalizationScheme.none(), config.obs_error_variance
        )
        method = "etkf"
    else:
        entry = _best_tuning_entry(config, source_size)
        scheme = LocalizationScheme.for_gaspari_cohn(
            entry.half_width, operator.grid_centers, config.n_state
        )
        filter_config = filters.FilterConfig(
            source_size, entry.inflation, scheme, config.obs_error_variance
        )
        method = "serial"
        archive_meta["gc_half_width"] = entry.half_width
        archive_meta["gc_inflation"] = entry.inflation
    archive = filters.create_ensemble_archive(
        paths["regressor_archive"], (cycles, config.n_state, source_size), archive_meta
    )
    run = filters.run_filter(
        truth_train,
        obs_train,
        operator,
        config.model_config,
        filter_config,
        config.obs_stride,
        seed,
        method=method,
        archive_out=archive,
    )
    if run.diverged:
        raise NumericalError(
            f"regressor filter diverged at training cycle {run.diverged_cycle}"
        )
    archive.flush()

    map_files: dict = {"regressor_archive": paths["regressor_archive"]}
    regressor_saved = False
    for size in config.ensemble_sizes:
        for subsets in config.subsample_counts:
            sub_seed = substream_seed(config.master_seed, "subsample", size, subsets)
            ts = training.build_training_set(
                archive, operator, size, subsets, sub_seed, source=_regressor_id(config)
            )
            meta = {
                "n_state": config.n_state,
                "n_obs": config.n_obs,
                "K_train": size,
                "L_train": source_size,
                "T": ts.n_times,
                "S": subsets,
                "obs_kind": config.obs_kind,
                "regressor_id": _regressor_id(config),
                "created": _timestamp(),
            }
            tensor = training.fit_map(ts)
            full = LocalizationScheme.for_full_map(tensor, meta)
            full_path = _map_path(config, "full_map", size, subsets)
            save_scheme(full, full_path)
            diag = LocalizationScheme.for_diagonal_map(training.fit_diagonal(ts), meta)
            diag_path = _map_path(config, "diagonal_map", size, subsets)
            save_scheme(diag, diag_path)
            map_files[f"full_K{size}_S{subsets}"] = full_path
            map_files[f"diag_K{size}_S{subsets}"] = diag_path
            if not regressor_saved:
                stats.save_correlation_archive(
                    paths["regressor_correlations"],
                    ts.regressor,
                    {
                        "N": config.n_state,
                        "M": config.n_obs,
                        "K_sub": source_size,
                        "L": source_size,
                        "T": ts.n_times,
                        "S": 1,
                        "seed": seed,
                        "source_filter": _regressor_id(config),
                    },
                )
                regressor_saved = True
    manifest.mark_complete("train", map_files, {"train_regressor": seed})
    return manifest


def _regressor_id(config: ExperimentConfig) -> str:
    return f"{config.regressor_kind}:{config.regressor_size}"


def _best_tuning_entry(config: ExperimentConfig, size: int) -> training.GCTuningEntry:
    paths = _paths(config)
    if not paths["tuning"].exists():
        raise UsageError(
            f"missing artifact {paths['tuning']} from phase 'tune_gc'; run that phase first"
        )
    entries = [
        e for e in training.load_tuning_table(paths["tuning"]) if e.ensemble_size == size
    ]
    if not entries:
        raise UsageError(f"tuning table has no entries for ensemble size {size}")
    finite = [e for e in entries if np.isfinite(e.rmse)]
    if not finite:
        raise NumericalError(f"all tuned Gaspari-Cohn cases diverged for size {size}")
    return min(finite, key=lambda e: (e.rmse, e.half_width))


def _tuned_half_width(config: ExperimentConfig, size: int, inflation: float) -> int:
    paths = _paths(config)
    for entry in training.load_tuning_table(paths["tuning"]):
        if entry.ensemble_size == size and entry.inflation == inflation:
            return entry.half_width
    raise UsageError(
        f"tuning table lacks the case K={size}, inflation={inflation}; "
        "re-run the tune-gc phase with matching grids"
    )


def _cell_scheme(config: ExperimentConfig, scheme: str, size: int, inflation: float, operator):
    if scheme == "none":
        return LocalizationScheme.none(), None
    if scheme == "gaspari_cohn":
        half_width = _tuned_half_width(config, size, inflation)
        return (
            LocalizationScheme.for_gaspari_cohn(
                half_width, operator.grid_centers, config.n_state
            ),
            half_width,
        )
    variant = "full_map" if scheme == "map" else "diagonal_map"
    path = _map_path(config, variant, size, config.subsample_count)
    if not path.exists():
        raise UsageError(f"missing artifact {path} from phase 'train'; run that phase first")
    return load_scheme(path), None


def run_verification_phase(
    config: ExperimentConfig, force: bool = False, threads: int = 1
) -> Manifest:
    """Score every (scheme, size, inflation) cell against the benchmark."""
    manifest = Manifest(config)
    paths = _paths(config)
    if manifest.phase_complete("verify") and not force:
        return manifest
    _require(manifest, "observe", paths["observations"])
    if any(s in ("map", "diagonal_map") for s in config.schemes):
        _require(manifest, "train", paths["regressor_archive"])
    if "gaspari_cohn" in config.schemes:
        _require(manifest, "tune_gc", paths["tuning"])
    operator = _load_operator(config)
    _, (truth_verify, obs_verify) = _load_windows(config)
    window = (config.filter_spinup_cycles, obs_verify.shape[0])

    benchmark_config = filters.FilterConfig(
        config.benchmark_size, 0.0, LocalizationScheme.none(), config.obs_error_variance
    )
    benchmark_run = filters.run_filter(
        truth_verify,
        obs_verify,
        operator,
        config.model_config,
        benchmark_config,
        config.obs_stride,
        substream_seed(config.master_seed, "verify", BENCHMARK_SCHEME),
        method="etkf",
    )
    benchmark_series = diagnostics.DiagnosticsSeries(
        benchmark_run.rmse, benchmark_run.spread, window, benchmark_run.diverged
    )
    benchmark = diagnostics.aggregate(benchmark_series)
    if benchmark.diverged or not np.isfinite(benchmark.mean_rmse):
        raise NumericalError("benchmark ETKF diverged; verification cannot be normalised")

    cells = [
        (scheme, size, inflation)
        for scheme in config.schemes
        for size in config.ensemble_sizes
        for inflation in config.inflation_grid
    ]

    def run_cell(cell):
        scheme_name, size, inflation = cell
        scheme, half_width = _cell_scheme(config, scheme_name, size, inflation, operator)
        cell_config = filters.FilterConfig(size, inflation, scheme, config.obs_error_variance)
        run = filters.run_filter(
            truth_verify,
            obs_verify,
            operator,
            config.model_config,
            cell_config,
            config.obs_stride,
            substream_seed(config.master_seed, "verify", scheme_name, size, repr(inflation)),
            method="serial",
        )
        series = diagnostics.DiagnosticsSeries(run.rmse, run.spread, window, run.diverged)
        summary = diagnostics.aggregate(series, benchmark.mean_rmse)
        return _result_row(config, scheme_name, size, inflation, half_width, summary)

    rows = _map_jobs(run_cell, cells, threads)
    rows.append(
        _result_row(
            config,
            BENCHMARK_SCHEME,
            config.benchmark_size,
            0.0,
            None,
            diagnostics.aggregate(benchmark_series, benchmark.mean_rmse),
        )
    )
    rows.sort(key=lambda r: (r["scheme"], int(r["K"]), float(r["inflation"])))
    _write_results(paths["results"], rows)
    curve_files = _emit_curves(config)
    files = {"results": paths["results"]}
    files.update(curve_files)
    manifest.mark_complete("verify", files)
    return manifest


def _result_row(config, scheme, size, inflation, half_width, summary) -> dict:
    return {
        "scheme": scheme,
        "K": size,
        "n": config.obs_stride,
        "M": config.n_obs,
        "inflation": repr(float(inflation)),
        "half_width": "" if half_width is None else int(half_width),
        "mean_rmse": repr(float(summary.mean_rmse)),
        "mean_spread": repr(float(summary.mean_spread)),
        "normalized_rmse": repr(float(summary.normalized_rmse)),
        "diverged": str(bool(summary.diverged)).lower(),
    }


def _write_results(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def load_results(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"missing results table: {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _emit_curves(config: ExperimentConfig) -> dict:
    """Write map cross-sections at the middle observation as plot-ready CSVs."""
    files = {}
    mid = config.n_obs // 2
    for size in config.ensemble_sizes:
        for variant, stem in (("full_map", "full"), ("diagonal_map", "diag")):
            map_file = _map_path(config, variant, size, config.subsample_count)
            if not map_file.exists():
                continue
            scheme = load_scheme(map_file)
            out = _paths(config)["curves_dir"] / f"curves_{stem}_K{size}.csv"
            with open(out, "w", newline="") as fh:
                writer = csv.writer(fh)
                if variant == "full_map":
                    writer.writerow(["q"] + [f"i{i}" for i in range(config.n_state)])
                    for q in range(config.n_state):
                        writer.writerow(
                            [q] + [repr(float(v)) for v in scheme.tensor[q, :, mid]]
                        )
                else:
                    writer.writerow(["i", "factor"])
                    for i in range(config.n_state):
                        writer.writerow([i, repr(float(scheme.diagonal[i, mid]))])
            files[f"curves_{stem}_K{size}"] = out
    return files


def _map_jobs(fn, jobs, threads: int):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


def run_all(config: ExperimentConfig, force: bool = False, threads: int = 1) -> Manifest:
    """Run every phase in dependency order."""
    run_nature_phase(config, force)
    run_observe_phase(config, force)
    needs_tuning = "gaspari_cohn" in config.schemes or config.regressor_kind == "serial_gc"
    if needs_tuning:
        run_gc_tuning_phase(config, force, threads)
    needs_maps = any(s in ("map", "diagonal_map") for s in config.schemes)
    if needs_maps or config.regressor_kind == "serial_gc":
        run_training_phase(config, force, threads)
    return run_verification_phase(config, force, threads)


def format_report(config: ExperimentConfig) -> str:
    """Human-readable summary of the results and tuning tables."""
    paths = _paths(config)
    rows = load_results(paths["results"])
    lines = [
        f"run {config.config_hash()}  "
        f"[{config.obs_kind}, M={config.n_obs}, n={config.obs_stride}, "
        f"seed={config.master_seed}]",
        "",
        f"{'scheme':<16}{'K':>5}{'infl':>7}{'c':>4}{'rmse':>10}{'spread':>10}"
        f"{'norm':>8}  {'div':<5}",
    ]
    for row in rows:
        lines.append(
            f"{row['scheme']:<16}{row['K']:>5}{float(row['inflation']):>7.3g}"
            f"{row['half_width'] or '-':>4}"
            f"{float(row['mean_rmse']):>10.4f}{float(row['mean_spread']):>10.4f}"
            f"{float(row['normalized_rmse']):>8.3f}  {row['diverged']:<5}"
        )
    if paths["tuning"].exists():
        lines.append("")
        lines.append("tuned Gaspari-Cohn half-widths (training window):")
        for e in training.load_tuning_table(paths["tuning"]):
            rmse_text = f"{e.rmse:.4f}" if np.isfinite(e.rmse) else "diverged"
            lines.append(
                f"  K={e.ensemble_size:<4} inflation={e.inflation:<6.3g} "
                f"half_width={e.half_width:<3} rmse={rmse_text}"
            )
    return "\n".join(lines)
