"""Fitting localization maps from archived correlation statistics.

A training set pairs, for every archived analysis time m, the correlation
matrix of a large source ensemble (the regression target, treated as the
best available estimate of the true correlation) with one or more
correlation matrices of random size-K member subsets (the regressands, which
carry the sampling noise the map must learn to undo).  Each map column
L(., i, j) solves an independent least-squares problem: predict the target
correlation of pair (i, j) from the whole subset-correlation column of
observation j.  The diagonal variant constrains the prediction to a single
entrywise factor.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import observations
from .filters import FilterConfig, run_filter
from .localization import LocalizationScheme
from .model import ModelConfig
from .numerics import solve_gram
from .seeding import substream_seed
from .stats import Ensemble, correlation_from_members, subsample


@dataclass
class CorrelationTrainingSet:
    """Paired correlation statistics for map regression.

    ``regressor`` has shape (T, n_state, n_obs): the source-ensemble
    correlation at each archived time.  ``regressands`` has shape
    (T * S, n_state, n_obs) with the S subset correlations of time m stored
    in rows m*S .. (m+1)*S - 1.
    """

    regressor: np.ndarray
    regressands: np.ndarray
    subset_size: int
    source_size: int
    subsets_per_time: int
    seed: int
    source: str = ""

    def __post_init__(self):
        self.regressor = np.asarray(self.regressor, dtype=float)
        self.regressands = np.asarray(self.regressands, dtype=float)
        if self.regressor.ndim != 3 or self.regressands.ndim != 3:
            raise ValueError("regressor and regressands must be 3-d arrays")
        t = self.regressor.shape[0]
        if self.regressands.shape != (t * self.subsets_per_time,) + self.regressor.shape[1:]:
            raise ValueError(
                f"regressands shape {self.regressands.shape} does not match "
                f"{self.subsets_per_time} subsets of regressor shape {self.regressor.shape}"
            )

    @property
    def n_times(self) -> int:
        return self.regressor.shape[0]

    @property
    def n_state(self) -> int:
        return self.regressor.shape[1]

    @property
    def n_obs(self) -> int:
        return self.regressor.shape[2]

    @property
    def n_samples(self) -> int:
        return self.regressands.shape[0]


def build_training_set(
    analysis_archive,
    operator: observations.ObservationOperator,
    subset_size: int,
    subsets_per_time: int,
    seed: int,
    source: str = "",
) -> CorrelationTrainingSet:
    """Assemble regression statistics from an archive of analysis ensembles.

    ``analysis_archive`` holds full source ensembles with shape
    (T, n_state, source_size).  For every time m the source correlation is
    computed once, and ``subsets_per_time`` member subsets of ``subset_size``
    are drawn from per-(m, s) substreams of ``seed``, so the statistics do
    not depend on evaluation order.  Requires T * S > n_state so the per-pair
    regressions are overdetermined.
    """
    archive = np.asarray(analysis_archive)
    if archive.ndim != 3:
        raise ValueError("analysis archive must have shape (T, n_state, source_size)")
    n_times, n_state, source_size = archive.shape
    if n_times * subsets_per_time <= n_state:
        raise ValueError(
            f"underdetermined regression: T * S = {n_times * subsets_per_time} "
            f"samples for {n_state} coefficients; need T * S > n_state"
        )
    n_obs = operator.n_obs
    regressor = np.empty((n_times, n_state, n_obs))
    regressands = np.empty((n_times * subsets_per_time, n_state, n_obs))
    for m in range(n_times):
        members = np.asarray(archive[m], dtype=float)
        observed = operator.apply(members)
        regressor[m] = correlation_from_members(members, observed)
        subsets = subsample(
            Ensemble(members),
            subset_size,
            subsets_per_time,
            substream_seed(seed, "time", m),
        )
        for s, subset in enumerate(subsets):
            sub_observed = operator.apply(subset.members)
            regressands[m * subsets_per_time + s] = correlation_from_members(
                subset.members, sub_observed
            )
    return CorrelationTrainingSet(
        regressor,
        regressands,
        subset_size=subset_size,
        source_size=source_size,
        subsets_per_time=subsets_per_time,
        seed=seed,
        source=source,
    )


class MapFitError(RuntimeError):
    """The normal-equations solve failed for a map column."""


def fit_map(training_set: CorrelationTrainingSet, ridge: float = 0.0) -> np.ndarray:
    """Fit the full localization map by per-observation least squares.

    Returns a tensor of shape (n_state, n_state, n_obs) whose column
    ``[:, i, j]`` minimises the mean squared mismatch between the predicted
    and source correlations of the pair (i, j) over all archived samples.
    The design matrix depends only on j, so its normal matrix is factorised
    once per observation and shared by all n_state targets.
    """
    ts = training_set
    n, m = ts.n_state, ts.n_obs
    s = ts.subsets_per_time
    tensor = np.empty((n, n, m))
    for j in range(m):
        design = ts.regressands[:, :, j]
        # A^T B assembled without materialising the repeated targets: group
        # the design rows of one time together, multiply by the unique target
        grouped = design.reshape(ts.n_times, s, n).sum(axis=1)
        rhs = grouped.T @ ts.regressor[:, :, j]
        gram = design.T @ design
        try:
            solution, _, _ = solve_gram(gram, rhs, ridge)
        except np.linalg.LinAlgError as exc:
            raise MapFitError(f"map fit failed for observation column {j}") from exc
        tensor[:, :, j] = solution
    return tensor


def fit_diagonal(training_set: CorrelationTrainingSet) -> np.ndarray:
    """Fit the diagonal map: one multiplicative factor per pair (i, j).

    The factor is sum(r_sub * r_source) / sum(r_sub^2) over all samples.
    Pairs whose subset correlation is identically zero get factor 0 with a
    warning instead of an error.
    """
    ts = training_set
    s = ts.subsets_per_time
    targets = ts.regressor[:, None, :, :]  # broadcast over the subset axis
    samples = ts.regressands.reshape(ts.n_times, s, ts.n_state, ts.n_obs)
    numerator = (samples * targets).sum(axis=(0, 1))
    denominator = (samples * samples).sum(axis=(0, 1))
    zero = denominator == 0.0
    if np.any(zero):
        warnings.warn(
            f"{int(zero.sum())} pair(s) have identically zero subset correlation; "
            "their diagonal factors are set to 0",
            RuntimeWarning,
            stacklevel=2,
        )
    with np.errstate(invalid="ignore", divide="ignore"):
        factors = np.where(zero, 0.0, numerator / np.where(zero, 1.0, denominator))
    return factors


def map_objective(training_set: CorrelationTrainingSet, tensor) -> np.ndarray:
    """Mean squared correlation mismatch of a full map, per pair (i, j)."""
    ts = training_set
    t = np.asarray(tensor, dtype=float)
    s = ts.subsets_per_time
    objective = np.empty((ts.n_state, ts.n_obs))
    for j in range(ts.n_obs):
        predicted = ts.regressands[:, :, j] @ t[:, :, j]  # (samples, n_state)
        targets = np.repeat(ts.regressor[:, :, j], s, axis=0)
        objective[:, j] = ((predicted - targets) ** 2).mean(axis=0)
    return objective


def diagonal_objective(training_set: CorrelationTrainingSet, factors) -> np.ndarray:
    """Mean squared correlation mismatch of a diagonal map, per pair (i, j)."""
    ts = training_set
    d = np.asarray(factors, dtype=float)
    s = ts.subsets_per_time
    samples = ts.regressands.reshape(ts.n_times, s, ts.n_state, ts.n_obs)
    targets = ts.regressor[:, None, :, :]
    return ((samples * d[None, None] - targets) ** 2).mean(axis=(0, 1))


@dataclass
class GCTuningEntry:
    """Winner of one Gaspari-Cohn half-width sweep plus all candidate scores."""

    ensemble_size: int
    obs_stride: int
    n_obs: int
    inflation: float
    half_width: int
    rmse: float
    diverged: bool
    scores: dict = field(default_factory=dict)


def select_best_half_width(scores: dict) -> tuple[int, float, bool]:
    """Argmin of the candidate scores; ties and all-divergent favour smaller width.

    Divergent candidates are scored +inf; when every candidate diverged the
    smallest half-width is returned with ``diverged`` set.
    """
    if not scores:
        raise ValueError("no half-width candidates were scored")
    best = min(scores, key=lambda c: (scores[c], c))
    best_score = scores[best]
    return int(best), float(best_score), not np.isfinite(best_score)


def tune_gc(
    truth_states,
    obs_values,
    operator: observations.ObservationOperator,
    model_config: ModelConfig,
    ensemble_size: int,
    inflation: float,
    half_width_grid,
    steps_per_cycle: int,
    spinup_cycles: int,
    seed: int,
    obs_error_variance: float = 1.0,
) -> GCTuningEntry:
    """Grid search the Gaspari-Cohn half-width on a training segment.

    Every candidate runs the serial filter over the same truth segment and
    observations with identical initial-ensemble draws, and is scored by the
    time-mean analysis RMSE after ``spinup_cycles`` are discarded.  Divergent
    candidates score +inf.
    """
    cycles = np.asarray(obs_values).shape[0]
    if not 0 <= spinup_cycles < cycles:
        raise ValueError(
            f"spinup_cycles {spinup_cycles} must leave a non-empty scoring window "
            f"of the {cycles} cycles"
        )
    scores: dict[int, float] = {}
    for half_width in half_width_grid:
        scheme = LocalizationScheme.for_gaspari_cohn(
            half_width, operator.grid_centers, model_config.n_state
        )
        config = FilterConfig(ensemble_size, inflation, scheme, obs_error_variance)
        run = run_filter(
            truth_states,
            obs_values,
            operator,
            model_config,
            config,
            steps_per_cycle,
            seed,
            method="serial",
        )
        window = run.rmse[spinup_cycles:]
        score = float(np.mean(window))
        if run.diverged or not np.isfinite(score):
            score = float("inf")
        scores[int(half_width)] = score
    best, best_score, diverged = select_best_half_width(scores)
    return GCTuningEntry(
        ensemble_size=ensemble_size,
        obs_stride=steps_per_cycle,
        n_obs=operator.n_obs,
        inflation=inflation,
        half_width=best,
        rmse=best_score,
        diverged=diverged,
        scores=scores,
    )


TUNING_COLUMNS = ("K", "n", "M", "inflation", "half_width", "rmse", "diverged")


def save_tuning_table(entries, csv_path) -> None:
    """Write one CSV row per tuned case."""
    path = Path(csv_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TUNING_COLUMNS)
        for e in entries:
            writer.writerow(
                [
                    e.ensemble_size,
                    e.obs_stride,
                    e.n_obs,
                    repr(float(e.inflation)),
                    e.half_width,
                    repr(float(e.rmse)),
                    str(bool(e.diverged)).lower(),
                ]
            )


def load_tuning_table(csv_path) -> list[GCTuningEntry]:
    path = Path(csv_path)
    if not path.exists():
        raise FileNotFoundError(f"missing tuning table: {path}")
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            entries.append(
                GCTuningEntry(
                    ensemble_size=int(row["K"]),
                    obs_stride=int(row["n"]),
                    n_obs=int(row["M"]),
                    inflation=float(row["inflation"]),
                    half_width=int(row["half_width"]),
                    rmse=float(row["rmse"]),
                    diverged=row["diverged"] == "true",
                )
            )
    return entries
