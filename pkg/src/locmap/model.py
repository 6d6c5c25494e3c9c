"""Lorenz-96 dynamics, fixed-step RK4 integration, and nature runs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arrayio import load_array, save_array

# States with entries beyond this magnitude are treated as numerically blown
# up; divergence is reported as data rather than raised.
BLOWUP_LIMIT = 1.0e6


@dataclass(frozen=True)
class ModelConfig:
    """Size, forcing, and time step of the periodic Lorenz-96 model."""

    n_state: int = 40
    forcing: float = 8.0
    dt: float = 0.05

    def __post_init__(self):
        # the advection stencil uses j-2, j-1 and j+1, which must be distinct
        if self.n_state < 4:
            raise ValueError(f"n_state must be at least 4, got {self.n_state}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


def tendency(state, config: ModelConfig):
    """Time derivative (x_{j+1} - x_{j-2}) x_{j-1} - x_j + F, periodic in j.

    ``state`` may be a single state of shape (n_state,) or a stack of column
    states of shape (n_state, k); the stencil always acts along axis 0.
    """
    x = np.asarray(state, dtype=float)
    if x.shape[0] != config.n_state:
        raise ValueError(
            f"state has leading dimension {x.shape[0]}, expected {config.n_state}"
        )
    xp1 = np.roll(x, -1, axis=0)
    xm1 = np.roll(x, 1, axis=0)
    xm2 = np.roll(x, 2, axis=0)
    return (xp1 - xm2) * xm1 - x + config.forcing


def rk4_step(state, config: ModelConfig):
    """Advance one classical fourth-order Runge-Kutta step of length dt."""
    dt = config.dt
    k1 = tendency(state, config)
    k2 = tendency(state + 0.5 * dt * k1, config)
    k3 = tendency(state + 0.5 * dt * k2, config)
    k4 = tendency(state + dt * k3, config)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def advance(state, config: ModelConfig, n_steps: int):
    """Apply ``n_steps`` RK4 steps, ignoring overflow in already-blown-up runs."""
    x = np.asarray(state, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(n_steps):
            x = rk4_step(x, config)
    return x


def is_blown_up(state) -> bool:
    """True when any entry is non-finite or beyond the blow-up limit."""
    x = np.asarray(state)
    return bool(np.any(~np.isfinite(x)) or np.any(np.abs(x) > BLOWUP_LIMIT))


@dataclass
class Trajectory:
    """Uniformly spaced model states, one row per stored step.

    ``states`` has shape (n_steps + 1, n_state); ``dt`` is the spacing of the
    stored rows, which for subsampled trajectories is a multiple of the model
    step.  ``meta`` carries run details (seed, forcing, ...) into the on-disk
    sidecar.
    """

    states: np.ndarray
    dt: float
    start_time: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[0] < 1:
            raise ValueError("states must be a (n_steps + 1, n_state) array")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def n_state(self) -> int:
        return self.states.shape[1]

    @property
    def diverged(self) -> bool:
        return is_blown_up(self.states)


def nature_run(
    config: ModelConfig, seed: int, spinup_steps: int = 1000, n_steps: int = 0
) -> Trajectory:
    """Integrate a truth trajectory from a random initial condition.

    The initial state is standard normal per component.  ``spinup_steps``
    steps are integrated and discarded to reach the attractor, after which
    ``n_steps + 1`` states (including the post-spinup state) are recorded.
    The run is deterministic for a given seed.  Blow-up, which does not occur
    for the standard forcing, is reported through ``Trajectory.diverged``.
    """
    if spinup_steps < 0 or n_steps < 0:
        raise ValueError("spinup_steps and n_steps must be non-negative")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(config.n_state)
    x = advance(x, config, spinup_steps)
    states = np.empty((n_steps + 1, config.n_state))
    states[0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_steps):
            x = rk4_step(x, config)
            states[i + 1] = x
    meta = {
        "seed": int(seed),
        "forcing": config.forcing,
        "spinup_steps": int(spinup_steps),
    }
    return Trajectory(states, config.dt, meta=meta)


def save_trajectory(trajectory: Trajectory, payload_path) -> None:
    """Persist a trajectory as float64 rows plus a JSON sidecar."""
    header = {
        "kind": "trajectory",
        "n_state": trajectory.n_state,
        "dt": trajectory.dt,
        "n_steps": trajectory.n_steps,
        "start_time": trajectory.start_time,
    }
    header.update(trajectory.meta)
    save_array(payload_path, trajectory.states, header)


def load_trajectory(payload_path) -> Trajectory:
    states, header = load_array(payload_path)
    if header.get("kind") != "trajectory":
        raise ValueError(f"{payload_path} is not a trajectory file")
    if states.ndim != 2 or states.shape[1] != int(header["n_state"]):
        raise ValueError(f"trajectory payload shape {states.shape} disagrees with sidecar")
    meta = {
        k: v
        for k, v in header.items()
        if k not in ("kind", "n_state", "dt", "n_steps", "start_time", "shape")
    }
    return Trajectory(states, float(header["dt"]), float(header.get("start_time", 0.0)), meta)
