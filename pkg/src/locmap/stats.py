"""Ensemble moment estimators, cross-correlations, and member subsampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arrayio import load_array, save_array

# slack allowed beyond |r| = 1 for floating-point rounding
CORRELATION_SLACK = 1.0e-12
# sample variances below this are treated as numerically zero
VARIANCE_FLOOR = 1.0e-14


class ZeroVarianceError(ValueError):
    """A sample variance needed for normalisation is numerically zero."""


@dataclass
class Ensemble:
    """Member states stored column-wise: shape (n_state, size), size >= 2."""

    members: np.ndarray

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=float)
        if self.members.ndim != 2:
            raise ValueError("members must be a 2-d (n_state, size) array")
        if self.members.shape[1] < 2:
            raise ValueError(f"ensemble needs at least 2 members, got {self.members.shape[1]}")

    @property
    def n_state(self) -> int:
        return self.members.shape[0]

    @property
    def size(self) -> int:
        return self.members.shape[1]


def mean_and_perturbations(ensemble: Ensemble):
    """Sample mean and centred member deviations.

    Returns ``(mean, perturbations)`` with shapes (n_state,) and
    (n_state, size); the perturbation rows sum to zero by construction.
    """
    mean = ensemble.members.mean(axis=1)
    return mean, ensemble.members - mean[:, None]


def cross_correlation(x_perturbations, y_perturbations) -> np.ndarray:
    """Sample correlation matrix between centred state and observation rows.

    Both inputs must already be centred (rows summing to zero) and share the
    member dimension.  Entry (i, j) is the sample covariance of row i of
    ``x_perturbations`` with row j of ``y_perturbations`` normalised by both
    sample standard deviations.  A row with vanishing variance makes the
    normalisation undefined and raises ``ZeroVarianceError`` naming the row.
    """
    x = np.asarray(x_perturbations, dtype=float)
    y = np.asarray(y_perturbations, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError(
            f"perturbation shapes {x.shape} and {y.shape} do not share a member axis"
        )
    k = x.shape[1]
    if k < 2:
        raise ValueError("correlations need at least 2 members")
    scale = max(float(np.abs(x).max(initial=0.0)), float(np.abs(y).max(initial=0.0)), 1.0)
    tol = 1.0e-9 * scale * k
    if float(np.abs(x.sum(axis=1)).max(initial=0.0)) > tol or float(
        np.abs(y.sum(axis=1)).max(initial=0.0)
    ) > tol:
        raise ValueError("perturbations must be centred (rows summing to zero)")
    x_var = (x * x).sum(axis=1)
    y_var = (y * y).sum(axis=1)
    for name, var in (("state", x_var), ("observed", y_var)):
        bad = np.nonzero(var < VARIANCE_FLOOR * (k - 1))[0]
        if bad.size:
            raise ZeroVarianceError(
                f"{name} row {int(bad[0])} has zero sample variance; correlation undefined"
            )
    corr = (x @ y.T) / np.sqrt(np.outer(x_var, y_var))
    peak = float(np.abs(corr).max(initial=0.0))
    if peak > 1.0 + CORRELATION_SLACK:
        raise ValueError(f"correlation magnitude {peak} exceeds 1 beyond rounding slack")
    return corr


def correlation_from_members(members, observed) -> np.ndarray:
    """Centre raw member values and observed-member values, then correlate."""
    members = np.asarray(members, dtype=float)
    observed = np.asarray(observed, dtype=float)
    x = members - members.mean(axis=1, keepdims=True)
    y = observed - observed.mean(axis=1, keepdims=True)
    return cross_correlation(x, y)


def subsample(ensemble: Ensemble, size: int, count: int, seed: int) -> list[Ensemble]:
    """Draw ``count`` member subsets of ``size`` without replacement.

    Subsets are independent of each other and are drawn from per-subset
    substreams of ``seed``, so the draw for subset s never depends on how
    many other subsets are requested.  Member order within a subset is
    normalised to ascending index, making ``size == ensemble.size`` return
    the ensemble unchanged.
    """
    total = ensemble.size
    if not 2 <= size <= total:
        raise ValueError(f"subset size must lie in [2, {total}], got {size}")
    if count < 1:
        raise ValueError(f"count must be positive, got {count}")
    if count > math.comb(total, size):
        raise ValueError(
            f"cannot draw {count} distinct-size subsets: only C({total},{size}) exist"
        )
    subsets = []
    for s in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), s]))
        indices = np.sort(rng.choice(total, size=size, replace=False))
        # contiguous copy so downstream matrix products round identically
        # whether the statistics come from the subset or the full ensemble
        subsets.append(Ensemble(np.ascontiguousarray(ensemble.members[:, indices])))
    return subsets


def save_correlation_archive(payload_path, correlations, meta: dict) -> None:
    """Persist stacked correlation matrices (n_samples, n_state, n_obs)."""
    corr = np.asarray(correlations, dtype=float)
    if corr.ndim != 3:
        raise ValueError("correlation archive must be a 3-d array")
    header = {"kind": "correlation_archive"}
    header.update(meta)
    save_array(payload_path, corr, header)


def load_correlation_archive(payload_path, mmap: bool = False):
    array, header = load_array(payload_path, mmap=mmap)
    if header.get("kind") != "correlation_archive":
        raise ValueError(f"{payload_path} is not a correlation archive")
    if array.ndim != 3:
        raise ValueError(f"correlation archive payload has shape {array.shape}, expected 3-d")
    return array, header
