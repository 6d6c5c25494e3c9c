"""Observation operators for the Lorenz-96 twin experiments.

Three operator families are supported, all on a periodic grid of ``n_state``
points with ``n_obs`` scalar observations:

* ``direct``: observation j reads the state at grid point j * (n_state/n_obs).
* ``indirect_linear``: observation j sums the seven grid points centred on
  2j (offsets -3..3); requires n_obs = n_state / 2.
* ``nonlinear_indirect``: observation j sums the seven points centred on
  j * (n_state/n_obs), each weighted by a state-dependent raised-cosine
  factor whose support is set by the data extrema (a, b).

Observation errors are unit-variance Gaussian, drawn independently per
component and per record.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import Trajectory

KINDS = ("direct", "indirect_linear", "nonlinear_indirect")

# raised-cosine amplitude per stencil offset -3..3; the centre point itself
# carries zero weight
WEIGHT_PROFILE = (1.0, 0.8, 0.4, 0.0, 0.4, 0.8, 1.0)
STENCIL_OFFSETS = np.arange(-3, 4)


@dataclass(frozen=True)
class NonlinearObsParams:
    """Support bounds and amplitude profile of the raised-cosine weights.

    ``a`` and ``b`` are the extrema of the data being observed; the cosine
    weight peaks at the midpoint (a + b) / 2 and vanishes at both bounds.
    """

    a: float
    b: float
    c: tuple = WEIGHT_PROFILE

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"extrema must satisfy a < b, got a={self.a}, b={self.b}")
        c = tuple(float(v) for v in self.c)
        if len(c) != 7:
            raise ValueError("weight profile must have 7 entries (offsets -3..3)")
        if c != tuple(reversed(c)):
            raise ValueError("weight profile must be symmetric about the centre")
        if c[0] != 1.0 or c[3] != 0.0:
            raise ValueError("weight profile must have unit ends and zero centre")
        object.__setattr__(self, "c", c)


@dataclass
class ObservationOperator:
    """Maps a state (or stack of member columns) to observation space."""

    kind: str
    n_obs: int
    n_state: int
    nonlinear_params: NonlinearObsParams | None = None
    _stencil: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown observation kind {self.kind!r}")
        if not 1 <= self.n_obs <= self.n_state:
            raise ValueError(f"n_obs must lie in [1, n_state], got {self.n_obs}")
        if self.n_state % self.n_obs != 0:
            raise ValueError(
                f"n_state {self.n_state} must be a multiple of n_obs {self.n_obs}"
            )
        if self.kind == "indirect_linear" and 2 * self.n_obs != self.n_state:
            raise ValueError(
                "indirect_linear requires n_obs = n_state / 2, got "
                f"n_obs={self.n_obs}, n_state={self.n_state}"
            )
        if self.kind == "nonlinear_indirect" and self.nonlinear_params is None:
            raise ValueError("nonlinear_indirect requires nonlinear_params")
        self._stencil = (self.grid_centers[:, None] + STENCIL_OFFSETS[None, :]) % self.n_state

    @property
    def stride(self) -> int:
        return self.n_state // self.n_obs

    @property
    def grid_centers(self) -> np.ndarray:
        """Grid point each observation is anchored at (j * stride)."""
        return np.arange(self.n_obs) * self.stride

    def _cosine_weights(self, values):
        p = self.nonlinear_params
        c = np.asarray(p.c)
        shape = (1, 7) + (1,) * (values.ndim - 2)
        phase = (2.0 * np.pi / (p.b - p.a)) * (values - 0.5 * (p.a + p.b))
        return 0.5 * c.reshape(shape) * (1.0 + np.cos(phase))

    def apply(self, state):
        """Evaluate h(x) for one state (n_state,) or member columns (n_state, k)."""
        x = np.asarray(state, dtype=float)
        if x.shape[0] != self.n_state:
            raise ValueError(
                f"state has leading dimension {x.shape[0]}, expected {self.n_state}"
            )
        if self.kind == "direct":
            return x[self.grid_centers]
        values = x[self._stencil]  # (n_obs, 7) or (n_obs, 7, k)
        if self.kind == "indirect_linear":
            return values.sum(axis=1)
        return (self._cosine_weights(values) * values).sum(axis=1)

    def component(self, state, j: int):
        """Evaluate the single observation ``j``; cheap path for serial updates."""
        x = np.asarray(state, dtype=float)
        if self.kind == "direct":
            return x[self.grid_centers[j]]
        values = x[self._stencil[j]]  # (7,) or (7, k)
        if self.kind == "indirect_linear":
            return values.sum(axis=0)
        p = self.nonlinear_params
        c = np.asarray(p.c).reshape((7,) + (1,) * (values.ndim - 1))
        phase = (2.0 * np.pi / (p.b - p.a)) * (values - 0.5 * (p.a + p.b))
        return (0.5 * c * (1.0 + np.cos(phase)) * values).sum(axis=0)

    def as_matrix(self) -> np.ndarray:
        """Dense matrix of a linear operator; rejects the nonlinear kind."""
        if self.kind == "nonlinear_indirect":
            raise ValueError("nonlinear_indirect has no matrix representation")
        h = np.zeros((self.n_obs, self.n_state))
        if self.kind == "direct":
            h[np.arange(self.n_obs), self.grid_centers] = 1.0
        else:
            for j in range(self.n_obs):
                np.add.at(h[j], self._stencil[j], 1.0)
        return h


@dataclass(frozen=True)
class ObservationRecord:
    """One observation vector taken at trajectory time index ``time_index``."""

    time_index: int
    values: np.ndarray


def compute_extrema(trajectory: Trajectory) -> tuple[float, float]:
    """Global (min, max) over all stored states and components."""
    states = trajectory.states
    return float(states.min()), float(states.max())


def generate_observations(
    truth: Trajectory,
    operator: ObservationOperator,
    obs_stride: int,
    seed: int,
    noise_std: float = 1.0,
) -> list[ObservationRecord]:
    """Observe the truth at every ``obs_stride``-th stored step with unit noise.

    Records are taken at steps obs_stride, 2 * obs_stride, ... and carry the
    observation-time index m (step m * obs_stride).  ``noise_std=0`` disables
    the noise for testing.
    """
    if obs_stride < 1:
        raise ValueError(f"obs_stride must be positive, got {obs_stride}")
    if truth.n_steps < obs_stride:
        raise ValueError(
            f"trajectory with {truth.n_steps} steps is too short for obs_stride {obs_stride}"
        )
    rng = np.random.default_rng(seed)
    records = []
    for m in range(1, truth.n_steps // obs_stride + 1):
        clean = operator.apply(truth.states[m * obs_stride])
        noise = noise_std * rng.standard_normal(operator.n_obs)
        records.append(ObservationRecord(m, clean + noise))
    return records


def stack_values(records: list[ObservationRecord]) -> np.ndarray:
    """Stack record values into a (n_records, n_obs) array in record order."""
    return np.array([r.values for r in records])


def save_observations(records, csv_path, meta: dict) -> None:
    """Write records as CSV (time_index, y_0..y_{M-1}) plus a JSON sidecar."""
    path = Path(csv_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_obs = len(records[0].values) if records else int(meta.get("n_obs", 0))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_index"] + [f"y_{j}" for j in range(n_obs)])
        for record in records:
            writer.writerow([record.time_index] + [repr(float(v)) for v in record.values])
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(dict(meta), indent=2, sort_keys=True) + "\n")


def load_observations(csv_path) -> tuple[list[ObservationRecord], dict]:
    path = Path(csv_path)
    if not path.exists():
        raise FileNotFoundError(f"missing observation file: {path}")
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        raise FileNotFoundError(f"missing sidecar for {path}: {sidecar}")
    meta = json.loads(sidecar.read_text())
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_obs = len(header) - 1
        for row in reader:
            records.append(
                ObservationRecord(int(row[0]), np.array([float(v) for v in row[1 : n_obs + 1]]))
            )
    return records, meta
