"""Localization of sample correlations before regression onto the state.

Four interchangeable schemes transform the sample correlation column
r(., j) between the state and observation j prior to the serial filter's
regression step:

* ``none``        -- identity, the unlocalised filter;
* ``gaspari_cohn``-- entrywise taper by the compactly supported fifth-order
                     piecewise-rational function of distance from the
                     observation's anchor grid point;
* ``full_map``    -- learned linear map: the transformed entry for state i is
                     the inner product of the whole column with the trained
                     regression vector for the pair (i, j);
* ``diagonal_map``-- learned entrywise factors, the diagonal restriction of
                     the full map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

VARIANTS = ("none", "gaspari_cohn", "full_map", "diagonal_map")


def circular_distance(i, g, n_points: int):
    """Shortest distance between grid points on a ring of ``n_points``."""
    d = np.abs(np.asarray(i) - np.asarray(g))
    return np.minimum(d, n_points - d)


def gaspari_cohn(distance, half_width: float):
    """Fifth-order piecewise-rational taper with support ``2 * half_width``.

    The taper equals 1 at distance 0, 5/24 at the half-width, and 0 at and
    beyond twice the half-width; it is monotonically non-increasing.
    """
    if not half_width > 0:
        raise ValueError(f"half_width must be positive, got {half_width}")
    z = np.abs(np.asarray(distance, dtype=float)) / half_width
    result = np.zeros_like(z)
    inner = z <= 1.0
    zi = z[inner]
    result[inner] = -0.25 * zi**5 + 0.5 * zi**4 + 0.625 * zi**3 - (5.0 / 3.0) * zi**2 + 1.0
    outer = (z > 1.0) & (z < 2.0)
    zo = z[outer]
    result[outer] = (
        (1.0 / 12.0) * zo**5
        - 0.5 * zo**4
        + 0.625 * zo**3
        + (5.0 / 3.0) * zo**2
        - 5.0 * zo
        + 4.0
        - (2.0 / 3.0) / zo
    )
    if result.ndim == 0:
        return float(result)
    return result


@dataclass
class LocalizationScheme:
    """Tagged union over the four correlation transforms.

    Use the classmethod constructors; the payload fields populated depend on
    the variant.  ``tensor`` has shape (n_state, n_state, n_obs) with
    ``tensor[:, i, j]`` the regression vector for the pair (i, j);
    ``diagonal`` has shape (n_state, n_obs); Gaspari-Cohn schemes carry the
    half-width and the anchor grid point of every observation.
    """

    variant: str
    n_state: int | None = None
    n_obs: int | None = None
    half_width: float | None = None
    centers: np.ndarray | None = None
    tensor: np.ndarray | None = None
    diagonal: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    _weights: np.ndarray | None = field(default=None, init=False, repr=False)
    _per_obs: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown localization variant {self.variant!r}")
        if self.variant == "gaspari_cohn":
            if self.half_width is None or self.centers is None or self.n_state is None:
                raise ValueError("gaspari_cohn needs half_width, centers, and n_state")
            self.centers = np.asarray(self.centers, dtype=int)
            self.n_obs = len(self.centers)
            grid = np.arange(self.n_state)
            dist = circular_distance(grid[:, None], self.centers[None, :], self.n_state)
            self._weights = gaspari_cohn(dist, self.half_width)
        elif self.variant == "full_map":
            t = np.asarray(self.tensor, dtype=float)
            if t.ndim != 3 or t.shape[0] != t.shape[1]:
                raise ValueError(f"map tensor must be (n, n, m), got {t.shape}")
            self.tensor = t
            self.n_state, _, self.n_obs = t.shape
            # contiguous per-observation transposes for fast column transforms
            self._per_obs = np.ascontiguousarray(np.transpose(t, (2, 1, 0)))
        elif self.variant == "diagonal_map":
            d = np.asarray(self.diagonal, dtype=float)
            if d.ndim != 2:
                raise ValueError(f"diagonal map must be (n, m), got {d.shape}")
            self.diagonal = d
            self.n_state, self.n_obs = d.shape

    @classmethod
    def none(cls) -> "LocalizationScheme":
        return cls("none")

    @classmethod
    def for_gaspari_cohn(cls, half_width, centers, n_state, meta=None) -> "LocalizationScheme":
        return cls(
            "gaspari_cohn",
            n_state=int(n_state),
            half_width=float(half_width),
            centers=centers,
            meta=dict(meta or {}),
        )

    @classmethod
    def for_full_map(cls, tensor, meta=None) -> "LocalizationScheme":
        return cls("full_map", tensor=tensor, meta=dict(meta or {}))

    @classmethod
    def for_diagonal_map(cls, diagonal, meta=None) -> "LocalizationScheme":
        return cls("diagonal_map", diagonal=diagonal, meta=dict(meta or {}))

    def transform(self, correlation_column, obs_index: int):
        return transform_correlation(self, correlation_column, obs_index)


def transform_correlation(scheme: LocalizationScheme, correlation_column, obs_index: int):
    """Apply the scheme's transform to one sample-correlation column.

    ``correlation_column`` is the length-n_state correlation between every
    state component and observation ``obs_index``.
    """
    column = np.asarray(correlation_column, dtype=float)
    if scheme.variant == "none":
        return column
    if scheme.n_state is not None and column.shape != (scheme.n_state,):
        raise ValueError(
            f"correlation column has shape {column.shape}, expected ({scheme.n_state},)"
        )
    if not 0 <= obs_index < scheme.n_obs:
        raise ValueError(f"obs_index {obs_index} out of range for {scheme.n_obs} observations")
    if scheme.variant == "gaspari_cohn":
        return scheme._weights[:, obs_index] * column
    if scheme.variant == "full_map":
        return scheme._per_obs[obs_index] @ column
    return scheme.diagonal[:, obs_index] * column


def save_scheme(scheme: LocalizationScheme, json_path) -> None:
    """Persist a scheme as a JSON header plus, for maps, a sibling payload.

    The payload file shares the header's stem with a ``.bin`` suffix and
    round-trips bitwise.
    """
    path = Path(json_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header: dict = {"variant": scheme.variant, "meta": scheme.meta}
    if scheme.variant == "gaspari_cohn":
        header.update(
            n_state=scheme.n_state,
            half_width=scheme.half_width,
            centers=[int(c) for c in scheme.centers],
        )
        path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
        return
    payload = path.with_suffix(".bin")
    array = scheme.tensor if scheme.variant == "full_map" else scheme.diagonal
    data = np.ascontiguousarray(array, dtype="<f8")
    header.update(
        n_state=scheme.n_state,
        n_obs=scheme.n_obs,
        payload=payload.name,
        shape=list(data.shape),
    )
    payload.write_bytes(data.tobytes())
    path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def load_scheme(json_path) -> LocalizationScheme:
    path = Path(json_path)
    if not path.exists():
        raise FileNotFoundError(f"missing localization scheme file: {path}")
    header = json.loads(path.read_text())
    variant = header.get("variant")
    meta = header.get("meta", {})
    if variant == "none":
        return LocalizationScheme.none()
    if variant == "gaspari_cohn":
        return LocalizationScheme.for_gaspari_cohn(
            header["half_width"], header["centers"], header["n_state"], meta
        )
    if variant in ("full_map", "diagonal_map"):
        payload = path.parent / header["payload"]
        if not payload.exists():
            raise FileNotFoundError(f"missing map payload for {path}: {payload}")
        shape = tuple(int(s) for s in header["shape"])
        expected = (
            (header["n_state"], header["n_state"], header["n_obs"])
            if variant == "full_map"
            else (header["n_state"], header["n_obs"])
        )
        if shape != expected:
            raise ValueError(f"map header shape {shape} disagrees with dimensions {expected}")
        n_bytes = int(np.prod(shape)) * 8
        if payload.stat().st_size != n_bytes:
            raise ValueError(
                f"map payload {payload} holds {payload.stat().st_size} bytes, "
                f"expected {n_bytes} for shape {shape}"
            )
        array = np.fromfile(payload, dtype="<f8").reshape(shape)
        if variant == "full_map":
            return LocalizationScheme.for_full_map(array, meta)
        return LocalizationScheme.for_diagonal_map(array, meta)
    raise ValueError(f"unknown localization variant {variant!r} in {path}")
