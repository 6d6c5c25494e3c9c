"""Skill metrics for assimilation runs: RMSE, spread, and window summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stats import Ensemble

# long-run per-component standard deviation of the standard-forcing model
CLIMATOLOGICAL_STD = 3.6
# a time-mean analysis RMSE beyond this classifies the run as diverged
DIVERGENCE_RMSE_THRESHOLD = 10.0
# non-divergent runs whose error sits at climatology carry no information
AT_CLIMATOLOGY_FRACTION = 0.9


def rmse(analysis_mean, truth) -> float:
    """Root-mean-square difference between two states of equal length."""
    a = np.asarray(analysis_mean, dtype=float)
    t = np.asarray(truth, dtype=float)
    if a.shape != t.shape or a.ndim != 1:
        raise ValueError(f"states must share 1-d shape, got {a.shape} and {t.shape}")
    return float(np.sqrt(np.mean((a - t) ** 2)))


def spread(ensemble: Ensemble) -> float:
    """Ensemble spread sqrt(sum of squared deviations / (n_state (size-1))).

    Equals the Frobenius norm of the perturbation matrix scaled by the same
    factor, i.e. the root of the mean sample variance across components.
    """
    deviations = ensemble.members - ensemble.members.mean(axis=1, keepdims=True)
    denom = ensemble.n_state * (ensemble.size - 1)
    return float(np.sqrt((deviations**2).sum() / denom))


@dataclass
class DiagnosticsSeries:
    """Per-cycle analysis RMSE and spread with the scoring window attached.

    ``window`` is a half-open (start, stop) index range into the series;
    cycles before ``start`` are filter spin-up and are never scored.
    ``diverged`` records blow-up during the run itself.
    """

    rmse: np.ndarray
    spread: np.ndarray
    window: tuple[int, int]
    diverged: bool = False

    def __post_init__(self):
        self.rmse = np.asarray(self.rmse, dtype=float)
        self.spread = np.asarray(self.spread, dtype=float)
        if self.rmse.shape != self.spread.shape or self.rmse.ndim != 1:
            raise ValueError("rmse and spread must be 1-d arrays of equal length")
        start, stop = self.window
        if not 0 <= start < stop <= len(self.rmse):
            raise ValueError(
                f"window {self.window} is not a valid range for {len(self.rmse)} cycles"
            )


@dataclass
class Summary:
    """Window-mean skill of one run, optionally normalised by a benchmark."""

    mean_rmse: float
    mean_spread: float
    normalized_rmse: float | None
    diverged: bool
    at_climatology: bool


def aggregate(series: DiagnosticsSeries, benchmark_rmse: float | None = None) -> Summary:
    """Summarise a diagnostics series over its scoring window.

    A run is classified as diverged when it blew up, any scored cycle is
    non-finite, or the window-mean RMSE exceeds the divergence threshold.
    Runs that merely sit at the climatological error level are flagged but
    not classified as diverged.
    """
    start, stop = series.window
    window_rmse = series.rmse[start:stop]
    window_spread = series.spread[start:stop]
    finite = bool(np.all(np.isfinite(window_rmse)))
    mean_rmse = float(np.mean(window_rmse)) if finite else float("inf")
    mean_spread = float(np.mean(window_spread)) if finite else float("inf")
    diverged = series.diverged or not finite or mean_rmse > DIVERGENCE_RMSE_THRESHOLD
    at_climatology = (
        not diverged and mean_rmse >= AT_CLIMATOLOGY_FRACTION * CLIMATOLOGICAL_STD
    )
    normalized = None
    if benchmark_rmse is not None:
        if not benchmark_rmse > 0:
            raise ValueError(f"benchmark RMSE must be positive, got {benchmark_rmse}")
        normalized = mean_rmse / benchmark_rmse
    return Summary(mean_rmse, mean_spread, normalized, bool(diverged), bool(at_climatology))
