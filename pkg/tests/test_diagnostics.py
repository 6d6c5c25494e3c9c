"""Skill metrics and run summaries, including divergence classification."""

import numpy as np
import pytest

from locmap import diagnostics
from locmap.stats import Ensemble


def test_rmse_hand_values():
    assert diagnostics.rmse(np.array([1.0, 1.0]), np.array([0.0, 0.0])) == 1.0
    assert diagnostics.rmse(np.array([3.0, -1.0]), np.array([0.0, 3.0])) == pytest.approx(
        np.sqrt(12.5)
    )
    with pytest.raises(ValueError, match="shape"):
        diagnostics.rmse(np.zeros(3), np.zeros(4))


def test_spread_hand_value():
    ensemble = Ensemble(np.array([[0.0, 2.0]]))
    assert diagnostics.spread(ensemble) == pytest.approx(np.sqrt(2.0))
    # adding a zero-variance component dilutes the mean sample variance
    two = Ensemble(np.array([[0.0, 2.0], [1.0, 1.0]]))
    assert diagnostics.spread(two) == pytest.approx(1.0)


def test_spread_matches_mean_variance(rng):
    members = rng.standard_normal((10, 25))
    expected = np.sqrt(np.mean(np.var(members, axis=1, ddof=1)))
    assert diagnostics.spread(Ensemble(members)) == pytest.approx(expected, abs=1e-12)


def test_series_validation():
    with pytest.raises(ValueError, match="window"):
        diagnostics.DiagnosticsSeries(np.ones(5), np.ones(5), (3, 3))
    with pytest.raises(ValueError, match="window"):
        diagnostics.DiagnosticsSeries(np.ones(5), np.ones(5), (0, 6))
    with pytest.raises(ValueError, match="equal length"):
        diagnostics.DiagnosticsSeries(np.ones(5), np.ones(4), (0, 4))


def test_aggregate_scores_only_the_window():
    rmse = np.array([100.0, 100.0, 1.0, 3.0])
    spread = np.array([0.0, 0.0, 2.0, 4.0])
    series = diagnostics.DiagnosticsSeries(rmse, spread, (2, 4))
    summary = diagnostics.aggregate(series)
    assert summary.mean_rmse == 2.0
    assert summary.mean_spread == 3.0
    assert not summary.diverged
    assert not summary.at_climatology
    assert summary.normalized_rmse is None


def test_aggregate_normalizes_against_benchmark():
    series = diagnostics.DiagnosticsSeries(np.full(4, 2.0), np.full(4, 2.0), (0, 4))
    summary = diagnostics.aggregate(series, benchmark_rmse=0.5)
    assert summary.normalized_rmse == 4.0
    with pytest.raises(ValueError, match="benchmark"):
        diagnostics.aggregate(series, benchmark_rmse=0.0)


def test_aggregate_divergence_classification():
    base = np.full(10, 0.5)
    ran_diverged = diagnostics.DiagnosticsSeries(base, base, (0, 10), diverged=True)
    assert diagnostics.aggregate(ran_diverged).diverged

    with_inf = base.copy()
    with_inf[7] = np.inf
    summary = diagnostics.aggregate(diagnostics.DiagnosticsSeries(with_inf, base, (0, 10)))
    assert summary.diverged
    assert summary.mean_rmse == np.inf
    assert summary.mean_spread == np.inf

    large = diagnostics.DiagnosticsSeries(np.full(10, 11.0), base, (0, 10))
    assert diagnostics.aggregate(large).diverged

    # an inf before the scoring window does not contaminate the summary
    early_inf = base.copy()
    early_inf[0] = np.inf
    ok = diagnostics.aggregate(diagnostics.DiagnosticsSeries(early_inf, base, (2, 10)))
    assert not ok.diverged


def test_aggregate_flags_climatology_band():
    level = 0.95 * diagnostics.CLIMATOLOGICAL_STD
    series = diagnostics.DiagnosticsSeries(np.full(5, level), np.full(5, 1.0), (0, 5))
    summary = diagnostics.aggregate(series)
    assert summary.at_climatology
    assert not summary.diverged
    tracking = diagnostics.DiagnosticsSeries(np.full(5, 0.3), np.full(5, 0.3), (0, 5))
    assert not diagnostics.aggregate(tracking).at_climatology
    # diverged runs are not additionally flagged as at-climatology
    blown = diagnostics.DiagnosticsSeries(np.full(5, level), np.full(5, 1.0), (0, 5), True)
    assert not diagnostics.aggregate(blown).at_climatology
