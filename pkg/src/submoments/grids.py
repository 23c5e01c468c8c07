"""Uniform trajectory grids, counter-based random streams, sub-sampling views.

Conventions
-----------
A trajectory holds samples of an r-dimensional process on a uniform grid:
sample ``n`` (1-based) sits at time ``n * delta``.  A sub-sampling scheme
selects every ``stride``-th sample, so the coarse step is
``big_delta = stride * delta`` and the coarse sequence again follows the
1-based convention on its own grid.

Random streams are counter-based: a ``(master_seed, replication_index,
stream_role)`` triple fully determines the stream, independent of creation
order, so replications can run in any order or in parallel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InsufficientData, ParameterDomain, SchemeGridMismatch

_HEADER = struct.Struct("<qdq")  # dim, delta, n_samples


def _as_samples(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, order="C")
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ParameterDomain(f"samples must be 1-d or 2-d, got ndim={arr.ndim}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TrajectoryGrid:
    """Samples of a process on a uniform time grid.

    Parameters
    ----------
    samples : array, shape (L, r)
        Row ``n-1`` holds the state at time ``n * delta``.  A 1-d array is
        promoted to shape (L, 1).  The array is frozen after construction.
    delta : float
        Grid step.  Construction is permissive; use :func:`validate_grid`
        to check the full invariants.
    """

    samples: np.ndarray
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_samples(self.samples))
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def times(self) -> np.ndarray:
        """Grid times ``delta, 2*delta, ..., L*delta``."""
        return self.delta * np.arange(1, self.n_samples + 1)


@dataclass(frozen=True)
class GridValidation:
    """Outcome of :func:`validate_grid`; ``index`` is the first bad row."""

    ok: bool
    reason: str | None = None
    index: int | None = None


def validate_grid(grid: TrajectoryGrid) -> GridValidation:
    """Check grid invariants, reporting the first violation found.

    Invariants: at least one sample, positive finite step, every entry
    finite.  Returns a result value instead of raising so callers can
    report the offending sample index.
    """
    if grid.n_samples < 1:
        return GridValidation(False, "trajectory holds no samples")
    if not np.isfinite(grid.delta) or grid.delta <= 0.0:
        return GridValidation(False, f"grid step must be positive, got {grid.delta}")
    finite = np.isfinite(grid.samples).all(axis=1)
    if not finite.all():
        bad = int(np.argmin(finite))
        return GridValidation(False, "non-finite sample", index=bad)
    return GridValidation(True)


class StreamRole(str, Enum):
    """Which source of randomness a stream feeds."""

    PROCESS_NOISE = "process_noise"
    AUXILIARY_NOISE = "auxiliary_noise"


_ROLE_CODE = {StreamRole.PROCESS_NOISE: 0, StreamRole.AUXILIARY_NOISE: 1}


@dataclass(frozen=True)
class RandomStreamSpec:
    """Addressable random stream for one replication and role.

    The generator is Philox keyed on ``(master_seed, replication_index,
    role)``, so equal triples reproduce identical draws and distinct
    triples are statistically independent regardless of creation order.
    """

    master_seed: int
    replication_index: int = 0
    stream_role: StreamRole = StreamRole.PROCESS_NOISE

    def __post_init__(self):
        object.__setattr__(self, "stream_role", StreamRole(self.stream_role))
        if self.master_seed < 0 or self.replication_index < 0:
            raise ParameterDomain("seed and replication index must be non-negative")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(
            self.master_seed,
            spawn_key=(self.replication_index, _ROLE_CODE[self.stream_role]),
        )
        return np.random.Generator(np.random.Philox(seq))

    def replication(self, index: int) -> "RandomStreamSpec":
        return RandomStreamSpec(self.master_seed, index, self.stream_role)

    def role(self, role: StreamRole | str) -> "RandomStreamSpec":
        return RandomStreamSpec(self.master_seed, self.replication_index, StreamRole(role))


@dataclass(frozen=True)
class SubsamplingScheme:
    """Sub-sampling plan: keep ``n_obs`` samples spaced ``stride`` apart.

    ``stride`` may be None for a plan produced from asymptotic rules before
    a concrete grid is known; :func:`resolve_stride` pins it to a grid.
    ``big_delta`` is the coarse step; when resolved it must equal
    ``stride * delta`` of the grid it is applied to.
    """

    n_obs: int
    big_delta: float
    stride: int | None = None

    def __post_init__(self):
        if self.n_obs < 1:
            raise ParameterDomain(f"n_obs must be >= 1, got {self.n_obs}")
        if not np.isfinite(self.big_delta) or self.big_delta <= 0.0:
            raise ParameterDomain(f"big_delta must be positive, got {self.big_delta}")
        if self.stride is not None and self.stride < 1:
            raise ParameterDomain(f"stride must be >= 1, got {self.stride}")

    @classmethod
    def from_stride(cls, n_obs: int, stride: int, delta: float) -> "SubsamplingScheme":
        """Build a resolved scheme on a grid of step ``delta``."""
        return cls(n_obs=n_obs, big_delta=stride * delta, stride=stride)

    @property
    def is_resolved(self) -> bool:
        return self.stride is not None

    @property
    def span(self) -> float:
        """Observation span ``n_obs * big_delta``."""
        return self.n_obs * self.big_delta


def resolve_stride(scheme: SubsamplingScheme, delta: float) -> SubsamplingScheme:
    """Pin an asymptotic scheme to a concrete grid step.

    The stride is ``big_delta / delta`` rounded to the nearest positive
    integer and the coarse step is recomputed as ``stride * delta`` so the
    exact commensurability invariant holds afterwards.
    """
    if delta <= 0.0 or not np.isfinite(delta):
        raise ParameterDomain(f"grid step must be positive, got {delta}")
    stride = max(1, int(round(scheme.big_delta / delta)))
    return SubsamplingScheme(n_obs=scheme.n_obs, big_delta=stride * delta, stride=stride)


def _check_commensurate(grid: TrajectoryGrid, scheme: SubsamplingScheme) -> int:
    if not scheme.is_resolved:
        raise SchemeGridMismatch("scheme has no stride; resolve it against the grid first")
    expect = scheme.stride * grid.delta
    if not np.isclose(expect, scheme.big_delta, rtol=1e-12, atol=0.0):
        raise SchemeGridMismatch(
            f"big_delta {scheme.big_delta} != stride*delta {expect}"
        )
    return scheme.stride


def subsample_view(grid: TrajectoryGrid, scheme: SubsamplingScheme, offset: int = 0) -> np.ndarray:
    """Strided view of the coarse samples (no copy).

    Selects rows at 1-based fine indices ``offset + n*stride`` for
    ``n = 1..n_obs``.  Raises ``InsufficientData`` when the grid is too
    short and ``SchemeGridMismatch`` when the scheme does not sit on the
    grid.
    """
    if offset < 0:
        raise ParameterDomain(f"offset must be >= 0, got {offset}")
    stride = _check_commensurate(grid, scheme)
    need = offset + scheme.n_obs * stride
    if need > grid.n_samples:
        raise InsufficientData(
            f"need {need} samples for n_obs={scheme.n_obs} stride={stride} "
            f"offset={offset}, grid has {grid.n_samples}"
        )
    start = offset + stride - 1
    return grid.samples[start : offset + scheme.n_obs * stride : stride]


def subsample_sequence(
    grid: TrajectoryGrid, scheme: SubsamplingScheme, n_extra: int = 0, offset: int = 0
) -> np.ndarray:
    """Coarse samples plus ``n_extra`` trailing ones for lagged statistics.

    Lagged covariances at integer shift ``kappa`` consume ``n_obs + kappa``
    coarse samples; this returns that longer strided view.
    """
    if n_extra < 0:
        raise ParameterDomain(f"n_extra must be >= 0, got {n_extra}")
    wider = SubsamplingScheme(
        n_obs=scheme.n_obs + n_extra, big_delta=scheme.big_delta, stride=scheme.stride
    )
    return subsample_view(grid, wider, offset=offset)


def write_binary(grid: TrajectoryGrid, path) -> None:
    """Write the compact binary form: little-endian header then column-major data.

    Header fields are 64-bit: dim (int), delta (float), sample count (int).
    """
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(grid.dim, grid.delta, grid.n_samples))
        fh.write(np.ascontiguousarray(grid.samples.T).tobytes())


def read_binary(path) -> TrajectoryGrid:
    """Read a trajectory written by :func:`write_binary`."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise InsufficientData(f"{path}: truncated header")
        dim, delta, count = _HEADER.unpack(head)
        if dim < 1 or count < 1:
            raise ParameterDomain(f"{path}: bad header dim={dim} count={count}")
        flat = np.fromfile(fh, dtype="<f8", count=dim * count)
    if flat.size != dim * count:
        raise InsufficientData(f"{path}: expected {dim * count} values, got {flat.size}")
    samples = flat.reshape(dim, count).T
    return TrajectoryGrid(samples, delta)


def write_csv(grid: TrajectoryGrid, path) -> None:
    """Write the text form: header row, then one row per time point."""
    cols = ",".join(f"x{i}" for i in range(grid.dim))
    times = grid.times
    with open(path, "w") as fh:
        fh.write(f"time,{cols}\n")
        for t, row in zip(times, grid.samples):
            vals = ",".join(repr(float(v)) for v in row)
            fh.write(f"{float(t)!r},{vals}\n")


def read_csv(path) -> TrajectoryGrid:
    """Read a trajectory written by :func:`write_csv`.

    The step is recovered from the first time entry (time = delta by the
    1-based convention) and cross-checked against the spacing.
    """
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] < 1 or data.shape[1] < 2:
        raise InsufficientData(f"{path}: no samples")
    times, samples = data[:, 0], data[:, 1:]
    delta = float(times[0])
    if delta <= 0.0:
        raise ParameterDomain(f"{path}: first time must be positive, got {delta}")
    if len(times) > 1:
        steps = np.diff(times)
        if not np.allclose(steps, delta, rtol=1e-9, atol=1e-12):
            raise SchemeGridMismatch(f"{path}: rows are not uniformly spaced")
    return TrajectoryGrid(samples, delta)
