"""Assimilation updates: Kalman oracle, ETKF, serial EnKF, and run loops.

The serial filter assimilates scalar observations one at a time.  For each
observation it updates the observation-space mean and deviations exactly as a
scalar Kalman filter would, then regresses the observation increments onto
every state component.  The regression coefficient is assembled from the
sample correlation column, transformed by the configured localization scheme,
and rescaled by the sample standard deviations, so replacing the raw
correlation by a tapered or learned estimate changes only that column.

The ETKF updates all observations jointly with a symmetric square-root
transform in ensemble space.  It serves both as the large-ensemble reference
filter and as the source of training statistics for learned localization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diagnostics, model, observations
from .arrayio import load_array, open_memmap, save_array
from .localization import LocalizationScheme, transform_correlation
from .numerics import symmetric_eig
from .stats import Ensemble, ZeroVarianceError, VARIANCE_FLOOR

# eigenvalues of the ensemble-space system below this are degenerate
_EIGENVALUE_FLOOR = 1.0e-12


@dataclass
class FilterConfig:
    """Ensemble size, multiplicative inflation, localization, and noise level.

    ``inflation`` is the fractional prior-variance increase f; forecast
    perturbations are scaled by sqrt(1 + f) once per cycle before any
    observation is assimilated.  ``obs_error_variance`` is the diagonal
    observation-error variance shared by all scalar observations.
    """

    ensemble_size: int
    inflation: float = 0.0
    localization: LocalizationScheme = field(default_factory=LocalizationScheme.none)
    obs_error_variance: float = 1.0

    def __post_init__(self):
        if self.ensemble_size < 2:
            raise ValueError(f"ensemble_size must be at least 2, got {self.ensemble_size}")
        if self.inflation < 0:
            raise ValueError(f"inflation must be non-negative, got {self.inflation}")
        if not self.obs_error_variance > 0:
            raise ValueError(
                f"obs_error_variance must be positive, got {self.obs_error_variance}"
            )


@dataclass
class LinearGaussianSystem:
    """Exact linear-Gaussian filtering state: dynamics, noise, and forecast belief."""

    transition: np.ndarray  # state transition matrix
    process_cov: np.ndarray
    observation: np.ndarray  # observation matrix
    obs_cov: np.ndarray
    mean: np.ndarray  # forecast mean
    cov: np.ndarray  # forecast covariance

    def __post_init__(self):
        for name in ("transition", "process_cov", "observation", "obs_cov", "mean", "cov"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.mean.shape[0]
        m = self.obs_cov.shape[0]
        if self.transition.shape != (n, n) or self.process_cov.shape != (n, n):
            raise ValueError("transition and process_cov must be (n, n)")
        if self.observation.shape != (m, n) or self.obs_cov.shape != (m, m):
            raise ValueError("observation must be (m, n) and obs_cov (m, m)")
        if self.cov.shape != (n, n):
            raise ValueError("cov must be (n, n)")
        for name in ("process_cov", "obs_cov", "cov"):
            mat = getattr(self, name)
            if not np.allclose(mat, mat.T, rtol=0.0, atol=1.0e-10 * max(1.0, np.abs(mat).max())):
                raise ValueError(f"{name} must be symmetric")


@dataclass
class KalmanUpdate:
    """Analysis moments plus the system propagated to the next forecast."""

    analysis_mean: np.ndarray
    analysis_cov: np.ndarray
    next_system: LinearGaussianSystem


def kalman_step(system: LinearGaussianSystem, obs_values) -> KalmanUpdate:
    """One exact Kalman analysis followed by the forecast propagation.

    Raises ``numpy.linalg.LinAlgError`` when the innovation covariance is
    singular.
    """
    y = np.asarray(obs_values, dtype=float)
    h = system.observation
    pf = system.cov
    innovation_cov = h @ pf @ h.T + system.obs_cov
    gain = np.linalg.solve(innovation_cov, h @ pf).T
    analysis_mean = system.mean + gain @ (y - h @ system.mean)
    analysis_cov = pf - gain @ h @ pf
    analysis_cov = 0.5 * (analysis_cov + analysis_cov.T)
    f = system.transition
    next_mean = f @ analysis_mean
    next_cov = f @ analysis_cov @ f.T + system.process_cov
    next_cov = 0.5 * (next_cov + next_cov.T)
    next_system = LinearGaussianSystem(
        f, system.process_cov, h, system.obs_cov, next_mean, next_cov
    )
    return KalmanUpdate(analysis_mean, analysis_cov, next_system)


def inflate(ensemble: Ensemble, inflation: float) -> Ensemble:
    """Scale deviations about the mean by sqrt(1 + inflation)."""
    if inflation < 0:
        raise ValueError(f"inflation must be non-negative, got {inflation}")
    mean = ensemble.members.mean(axis=1, keepdims=True)
    factor = np.sqrt(1.0 + inflation)
    return Ensemble(mean + factor * (ensemble.members - mean))


def etkf_analysis(
    ensemble: Ensemble, obs_values, operator: observations.ObservationOperator, config: FilterConfig
) -> Ensemble:
    """Joint ensemble-space analysis with the symmetric square-root transform.

    The ensemble-space precision (size-1) I + Y^T R^{-1} Y is
    eigendecomposed once and reused for both the mean weights and the
    perturbation transform.  The update preserves the zero sum of the
    analysis perturbations.
    """
    members = ensemble.members
    k = ensemble.size
    y = np.asarray(obs_values, dtype=float)
    mean = members.mean(axis=1)
    x_pert = members - mean[:, None]
    obs_members = operator.apply(members)
    obs_mean = obs_members.mean(axis=1)
    y_pert = obs_members - obs_mean[:, None]

    precision = (k - 1.0) * np.eye(k) + (y_pert.T @ y_pert) / config.obs_error_variance
    eigenvalues, eigenvectors = symmetric_eig(precision)
    if eigenvalues.min() < _EIGENVALUE_FLOOR:
        raise np.linalg.LinAlgError(
            f"degenerate ensemble-space eigenvalue {eigenvalues.min():.3e}"
        )
    innovation_weights = y_pert.T @ (y - obs_mean) / config.obs_error_variance
    mean_weights = eigenvectors @ ((eigenvectors.T @ innovation_weights) / eigenvalues)
    transform = (
        eigenvectors * np.sqrt((k - 1.0) / eigenvalues)
    ) @ eigenvectors.T
    analysis = mean[:, None] + x_pert @ (mean_weights[:, None] + transform)
    return Ensemble(analysis)


def serial_enkf_analysis(
    ensemble: Ensemble,
    obs_values,
    operator: observations.ObservationOperator,
    config: FilterConfig,
    order: str = "ascending",
) -> Ensemble:
    """Assimilate the scalar observations one at a time.

    Observation priors are recomputed from the partially updated ensemble
    before each scalar update, so every observation sees the information
    already assimilated.  The state regression uses the localization
    transform of the current sample-correlation column.  Raises
    ``ZeroVarianceError`` when an observation prior (or, for transformed
    schemes, a state component) carries no sample variance.
    """
    if order not in ("ascending", "descending"):
        raise ValueError(f"order must be 'ascending' or 'descending', got {order!r}")
    members = ensemble.members.copy()
    k = ensemble.size
    y = np.asarray(obs_values, dtype=float)
    if y.shape != (operator.n_obs,):
        raise ValueError(f"observations have shape {y.shape}, expected ({operator.n_obs},)")
    r_var = config.obs_error_variance
    scheme = config.localization
    indices = range(operator.n_obs)
    if order == "descending":
        indices = reversed(indices)
    for j in indices:
        obs_prior = operator.component(members, j)
        obs_prior_mean = obs_prior.mean()
        obs_dev = obs_prior - obs_prior_mean
        obs_var = (obs_dev @ obs_dev) / (k - 1.0)
        if obs_var < VARIANCE_FLOOR:
            raise ZeroVarianceError(
                f"observation {j} has zero prior sample variance; serial update undefined"
            )
        # scalar observation-space analysis
        analysed_mean = obs_prior_mean + obs_var / (obs_var + r_var) * (y[j] - obs_prior_mean)
        contraction = np.sqrt(r_var / (r_var + obs_var))
        increments = (analysed_mean - obs_prior_mean) + (contraction - 1.0) * obs_dev
        # regression of observation increments onto the state
        state_mean = members.mean(axis=1)
        x_pert = members - state_mean[:, None]
        cross_cov = x_pert @ obs_dev / (k - 1.0)
        obs_std = np.sqrt(obs_var)
        state_var = (x_pert * x_pert).sum(axis=1) / (k - 1.0)
        bad = np.nonzero(state_var < VARIANCE_FLOOR)[0]
        if bad.size:
            raise ZeroVarianceError(
                f"state component {int(bad[0])} has zero sample variance at observation {j}"
            )
        state_std = np.sqrt(state_var)
        correlation = cross_cov / (state_std * obs_std)
        localized = transform_correlation(scheme, correlation, j)
        regression = state_std * localized * obs_std / obs_var
        members += regression[:, None] * increments[None, :]
    return Ensemble(members)


def analysis_order_sensitivity(
    ensemble: Ensemble, obs_values, operator, config: FilterConfig
) -> float:
    """Max absolute member difference between ascending and descending order."""
    forward = serial_enkf_analysis(ensemble, obs_values, operator, config, order="ascending")
    backward = serial_enkf_analysis(ensemble, obs_values, operator, config, order="descending")
    return float(np.abs(forward.members - backward.members).max())


def forecast(ensemble: Ensemble, config: model.ModelConfig, n_steps: int) -> Ensemble:
    """Advance every member ``n_steps`` model steps.

    Blow-up is not raised here; inspect the returned members with
    ``model.is_blown_up`` (the run loop records it as divergence).
    """
    if n_steps < 0:
        raise ValueError(f"n_steps must be non-negative, got {n_steps}")
    return Ensemble(model.advance(ensemble.members, config, n_steps))


@dataclass
class FilterRun:
    """Per-cycle skill of one assimilation run plus divergence bookkeeping.

    ``rmse``/``spread`` hold one entry per assimilation cycle; cycles at and
    after a blow-up keep the +inf placeholder.  ``analysis_means`` rows stay
    NaN after divergence.
    """

    rmse: np.ndarray
    spread: np.ndarray
    analysis_means: np.ndarray
    diverged: bool = False
    diverged_cycle: int | None = None


def run_filter(
    truth_states,
    obs_values,
    operator: observations.ObservationOperator,
    model_config: model.ModelConfig,
    filter_config: FilterConfig,
    steps_per_cycle: int,
    seed: int,
    method: str = "serial",
    archive_out=None,
) -> FilterRun:
    """Cycle a filter against a truth segment and its observations.

    ``truth_states`` has shape (cycles + 1, n_state); row 0 anchors the
    initial ensemble (truth plus independent unit-normal perturbations) and
    row c is the verification target of cycle c.  ``obs_values`` has shape
    (cycles, n_obs).  Each cycle forecasts ``steps_per_cycle`` model steps,
    inflates, and assimilates.  Divergence (blow-up or a degenerate update)
    stops the run and is recorded as data rather than raised.

    ``archive_out``, if given, must be a (cycles, n_state, size) buffer and
    receives the analysis ensemble of every completed cycle.
    """
    if method not in ("serial", "etkf"):
        raise ValueError(f"method must be 'serial' or 'etkf', got {method!r}")
    truth = np.asarray(truth_states, dtype=float)
    obs = np.asarray(obs_values, dtype=float)
    cycles = obs.shape[0]
    if truth.shape[0] != cycles + 1:
        raise ValueError(
            f"truth has {truth.shape[0]} rows; expected cycles + 1 = {cycles + 1}"
        )
    if steps_per_cycle < 1:
        raise ValueError(f"steps_per_cycle must be positive, got {steps_per_cycle}")
    n_state = model_config.n_state
    size = filter_config.ensemble_size
    rng = np.random.default_rng(seed)
    members = truth[0][:, None] + rng.standard_normal((n_state, size))

    rmse_series = np.full(cycles, np.inf)
    spread_series = np.full(cycles, np.inf)
    means = np.full((cycles, n_state), np.nan)
    for c in range(cycles):
        members = model.advance(members, model_config, steps_per_cycle)
        if model.is_blown_up(members):
            return FilterRun(rmse_series, spread_series, means, True, c + 1)
        current = Ensemble(members)
        if filter_config.inflation > 0.0:
            current = inflate(current, filter_config.inflation)
        try:
            if method == "etkf":
                current = etkf_analysis(current, obs[c], operator, filter_config)
            else:
                current = serial_enkf_analysis(current, obs[c], operator, filter_config)
        except (ZeroVarianceError, np.linalg.LinAlgError):
            return FilterRun(rmse_series, spread_series, means, True, c + 1)
        members = current.members
        if model.is_blown_up(members):
            return FilterRun(rmse_series, spread_series, means, True, c + 1)
        if archive_out is not None:
            archive_out[c] = members
        mean = members.mean(axis=1)
        means[c] = mean
        rmse_series[c] = diagnostics.rmse(mean, truth[c + 1])
        spread_series[c] = diagnostics.spread(current)
    return FilterRun(rmse_series, spread_series, means, False, None)


def save_ensemble_archive(payload_path, ensembles, meta: dict) -> None:
    """Persist stacked analysis ensembles (cycles, n_state, size)."""
    array = np.asarray(ensembles, dtype=float)
    if array.ndim != 3:
        raise ValueError("ensemble archive must be a 3-d array")
    header = {"kind": "ensemble_archive"}
    header.update(meta)
    save_array(payload_path, array, header)


def create_ensemble_archive(payload_path, shape, meta: dict) -> np.memmap:
    """Preallocate an on-disk ensemble archive to be filled cycle by cycle."""
    if len(shape) != 3:
        raise ValueError("ensemble archive shape must be (cycles, n_state, size)")
    header = {"kind": "ensemble_archive"}
    header.update(meta)
    return open_memmap(payload_path, shape, header)


def load_ensemble_archive(payload_path, mmap: bool = True):
    array, header = load_array(payload_path, mmap=mmap)
    if header.get("kind") != "ensemble_archive":
        raise ValueError(f"{payload_path} is not an ensemble archive")
    if array.ndim != 3:
        raise ValueError(f"ensemble archive payload has shape {array.shape}, expected 3-d")
    return array, header


def save_mean_archive(payload_path, means, meta: dict) -> None:
    """Persist per-cycle analysis means (cycles, n_state)."""
    array = np.asarray(means, dtype=float)
    if array.ndim != 2:
        raise ValueError("mean archive must be a 2-d array")
    header = {"kind": "mean_archive"}
    header.update(meta)
    save_array(payload_path, array, header)
