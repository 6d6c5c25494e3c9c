"""Map fitting on synthetic and archived statistics, plus taper tuning."""

import numpy as np
import pytest

from locmap import filters, model, observations, stats, training
from locmap.localization import LocalizationScheme
from locmap.seeding import substream_seed
from locmap.training import CorrelationTrainingSet


def synthetic_training_set(rng, t=50, n=8, m=3, s=1, generating_map=None):
    """Regressands drawn at random; targets produced by a known linear map."""
    regressands = rng.standard_normal((t * s, n, m)) * 0.5
    if generating_map is None:
        generating_map = rng.standard_normal((n, n, m))
    regressor = np.empty((t, n, m))
    blocks = regressands.reshape(t, s, n, m)
    for j in range(m):
        # consistent targets need the average design row of each time block
        regressor[:, :, j] = blocks[:, :, :, j].mean(axis=1) @ generating_map[:, :, j]
    return (
        CorrelationTrainingSet(
            regressor, regressands, subset_size=5, source_size=50, subsets_per_time=s, seed=0
        ),
        generating_map,
    )


@pytest.fixture(scope="module")
def small_archive():
    """Analysis archive of a short ETKF run on the standard model."""
    config = model.ModelConfig()
    truth = model.nature_run(config, seed=31, spinup_steps=400, n_steps=120)
    operator = observations.ObservationOperator("direct", 10, 40)
    records = observations.generate_observations(truth, operator, 1, seed=32)
    obs = observations.stack_values(records)
    archive = np.empty((120, 40, 30))
    run = filters.run_filter(
        truth.states, obs, operator, config, filters.FilterConfig(30, 0.05),
        1, seed=33, method="etkf", archive_out=archive,
    )
    assert not run.diverged
    return archive, operator


def test_training_set_validation(rng):
    regressor = rng.standard_normal((4, 5, 2))
    with pytest.raises(ValueError, match="does not match"):
        CorrelationTrainingSet(
            regressor, rng.standard_normal((7, 5, 2)),
            subset_size=3, source_size=10, subsets_per_time=2, seed=0,
        )
    ts = CorrelationTrainingSet(
        regressor, rng.standard_normal((8, 5, 2)),
        subset_size=3, source_size=10, subsets_per_time=2, seed=0,
    )
    assert ts.n_times == 4
    assert ts.n_state == 5
    assert ts.n_obs == 2
    assert ts.n_samples == 8


def test_build_training_set_matches_manual_statistics(small_archive):
    archive, operator = small_archive
    ts = training.build_training_set(archive, operator, 5, 2, seed=77, source="test")
    assert ts.regressor.shape == (120, 40, 10)
    assert ts.regressands.shape == (240, 40, 10)
    assert ts.source == "test"
    m = 17
    members = archive[m]
    np.testing.assert_allclose(
        ts.regressor[m],
        stats.correlation_from_members(members, operator.apply(members)),
        atol=1e-12,
    )
    subsets = stats.subsample(
        stats.Ensemble(members), 5, 2, substream_seed(77, "time", m)
    )
    for s, subset in enumerate(subsets):
        np.testing.assert_allclose(
            ts.regressands[m * 2 + s],
            stats.correlation_from_members(subset.members, operator.apply(subset.members)),
            atol=1e-12,
        )


def test_build_training_set_draws_are_count_independent(small_archive):
    archive, operator = small_archive
    one = training.build_training_set(archive[:50], operator, 5, 1, seed=9)
    two = training.build_training_set(archive[:50], operator, 5, 2, seed=9)
    np.testing.assert_array_equal(one.regressands[10], two.regressands[20])


def test_build_training_set_rejects_underdetermined(small_archive):
    archive, operator = small_archive
    with pytest.raises(ValueError, match="underdetermined"):
        training.build_training_set(archive[:40], operator, 5, 1, seed=0)


def test_fit_map_recovers_generating_map(rng):
    ts, true_map = synthetic_training_set(rng, t=60, n=8, m=3)
    fitted = training.fit_map(ts)
    np.testing.assert_allclose(fitted, true_map, atol=1e-6)
    np.testing.assert_allclose(training.map_objective(ts, fitted), 0.0, atol=1e-12)


def test_fit_map_matches_lstsq_with_repeated_targets(rng):
    # grouped normal equations must equal the naive solve in which every
    # subset row carries its time's target explicitly
    ts, _ = synthetic_training_set(rng, t=30, n=6, m=2, s=3)
    fitted = training.fit_map(ts)
    for j in range(2):
        design = ts.regressands[:, :, j]
        targets = np.repeat(ts.regressor[:, :, j], 3, axis=0)
        expected, *_ = np.linalg.lstsq(design, targets, rcond=None)
        np.testing.assert_allclose(fitted[:, :, j], expected, atol=1e-8)


def test_fit_map_identity_when_subsets_equal_source(small_archive):
    archive, operator = small_archive
    ts = training.build_training_set(archive, operator, 30, 1, seed=5)
    np.testing.assert_array_equal(ts.regressands, ts.regressor)
    fitted = training.fit_map(ts)
    identity = np.repeat(np.eye(40)[:, :, None], 10, axis=2)
    np.testing.assert_allclose(fitted, identity, atol=1e-6)
    np.testing.assert_array_equal(training.fit_diagonal(ts), np.ones((40, 10)))


def test_fit_map_ridge_shrinks_coefficients(rng):
    ts, _ = synthetic_training_set(rng, t=40, n=6, m=2)
    plain = training.fit_map(ts)
    ridged = training.fit_map(ts, ridge=5.0)
    assert np.linalg.norm(ridged) < np.linalg.norm(plain)


def test_fit_map_raises_on_non_finite(rng):
    ts, _ = synthetic_training_set(rng, t=40, n=6, m=2)
    ts.regressands[3, 2, 1] = np.nan
    with pytest.raises(training.MapFitError, match="observation column 1"):
        training.fit_map(ts)


def test_fit_diagonal_exact_reciprocal_scaling(rng):
    # regressands exactly alpha times the targets invert to 1 / alpha
    t, n, m = 20, 5, 3
    regressor = rng.standard_normal((t, n, m))
    alpha = 2.0
    ts = CorrelationTrainingSet(
        regressor, alpha * regressor, subset_size=4, source_size=20,
        subsets_per_time=1, seed=0,
    )
    factors = training.fit_diagonal(ts)
    np.testing.assert_array_equal(factors, np.full((n, m), 1.0 / alpha))


def test_fit_diagonal_zero_column_warns(rng):
    ts, _ = synthetic_training_set(rng, t=30, n=5, m=2)
    ts.regressands[:, 2, 0] = 0.0
    with pytest.warns(RuntimeWarning, match="zero subset correlation"):
        factors = training.fit_diagonal(ts)
    assert factors[2, 0] == 0.0
    assert np.all(np.isfinite(factors))


def test_full_map_objective_dominates_diagonal(rng):
    ts, _ = synthetic_training_set(rng, t=60, n=8, m=3, s=2)
    # overwrite targets with noisy data so neither family fits exactly
    ts.regressor += 0.3 * rng.standard_normal(ts.regressor.shape)
    full = training.map_objective(ts, training.fit_map(ts))
    diag = training.diagonal_objective(ts, training.fit_diagonal(ts))
    assert np.all(full <= diag + 1e-12)


def test_select_best_half_width():
    best, score, diverged = training.select_best_half_width({4: 0.5, 2: 0.3, 8: 0.3})
    assert (best, score, diverged) == (2, 0.3, False)
    best, score, diverged = training.select_best_half_width(
        {4: float("inf"), 2: float("inf")}
    )
    assert best == 2
    assert diverged
    with pytest.raises(ValueError, match="candidates"):
        training.select_best_half_width({})


def test_tune_gc_scores_every_candidate(default_model):
    truth = model.nature_run(default_model, seed=41, spinup_steps=400, n_steps=80)
    operator = observations.ObservationOperator("direct", 40, 40)
    records = observations.generate_observations(truth, operator, 1, seed=42)
    obs = observations.stack_values(records)
    entry = training.tune_gc(
        truth.states, obs, operator, default_model,
        ensemble_size=10, inflation=0.05, half_width_grid=(2, 4),
        steps_per_cycle=1, spinup_cycles=20, seed=43,
    )
    assert set(entry.scores) == {2, 4}
    assert entry.half_width in (2, 4)
    assert entry.rmse == min(entry.scores.values())
    assert not entry.diverged
    assert entry.ensemble_size == 10
    assert entry.obs_stride == 1
    assert entry.n_obs == 40
    with pytest.raises(ValueError, match="spinup_cycles"):
        training.tune_gc(
            truth.states, obs, operator, default_model,
            ensemble_size=10, inflation=0.0, half_width_grid=(2,),
            steps_per_cycle=1, spinup_cycles=80, seed=0,
        )


def test_tuning_table_round_trip(tmp_path):
    entries = [
        training.GCTuningEntry(5, 1, 10, 0.05, 3, 0.4321, False),
        training.GCTuningEntry(10, 2, 20, 0.0, 8, float("inf"), True),
    ]
    path = tmp_path / "tuning.csv"
    training.save_tuning_table(entries, path)
    loaded = training.load_tuning_table(path)
    assert len(loaded) == 2
    assert loaded[0].ensemble_size == 5
    assert loaded[0].rmse == 0.4321
    assert loaded[0].inflation == 0.05
    assert not loaded[0].diverged
    assert loaded[1].diverged
    assert np.isinf(loaded[1].rmse)
    assert loaded[1].obs_stride == 2
    with pytest.raises(FileNotFoundError, match="tuning"):
        training.load_tuning_table(tmp_path / "absent.csv")
