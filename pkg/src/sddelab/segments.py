"""
History segments and sampled paths
==================================

The state of a delay system at time t is the history segment
``x_t(u) = x(t + u)`` for ``u`` in ``[-tau, 0]``.  Everything here lives on a
uniform grid whose step divides the delay, so delayed lookups are exact reads
of stored samples.

Arrays of samples always have shape ``(n_nodes, d)``; a segment has
``n_tau + 1`` nodes, a path on ``[-tau, T]`` has ``n_tau + n_steps + 1``.
"""
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GridError

_GRID_RTOL = 1e-9


def _as_integer_ratio(value, step, what):
    ratio = value / step
    k = int(round(ratio))
    if abs(ratio - k) > _GRID_RTOL * max(1.0, abs(ratio)):
        raise GridError(f"{what}={value!r} is not a multiple of step={step!r}")
    return k


def _frozen(values):
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GridSpec:
    """Uniform time grid on ``[-tau, horizon]`` with ``step`` dividing ``tau``."""

    tau: float
    step: float
    horizon: float = 0.0
    n_tau: int = field(init=False, repr=False)
    n_steps: int = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.tau > 0 and self.step > 0):
            raise GridError("tau and step must be positive")
        if self.horizon < 0:
            raise GridError("horizon must be nonnegative")
        n_tau = _as_integer_ratio(self.tau, self.step, "tau")
        if n_tau < 1:
            raise GridError("step must not exceed tau")
        object.__setattr__(self, "n_tau", n_tau)
        object.__setattr__(self, "n_steps", _as_integer_ratio(self.horizon, self.step, "horizon"))

    @classmethod
    def from_nodes(cls, tau, n_tau, n_steps=0):
        """Grid with ``step = tau / n_tau`` and ``n_steps`` steps after time 0."""
        step = tau / n_tau
        return cls(tau, step, n_steps * step)

    def with_horizon(self, horizon):
        return GridSpec(self.tau, self.step, horizon)

    def with_steps(self, n_steps):
        return GridSpec(self.tau, self.step, n_steps * self.step)

    def refined(self, factor=2):
        return GridSpec(self.tau, self.step / factor, self.horizon)

    @property
    def n_nodes(self):
        return self.n_tau + self.n_steps + 1

    def times(self):
        return (np.arange(self.n_nodes) - self.n_tau) * self.step

    def segment_times(self):
        return (np.arange(self.n_tau + 1) - self.n_tau) * self.step

    def index_of(self, t):
        """Step index ``k`` with ``t = k * step``; raises for off-grid or out-of-range t."""
        k = _as_integer_ratio(t, self.step, "t")
        if not 0 <= k <= self.n_steps:
            raise GridError(f"t={t!r} outside [0, {self.horizon!r}]")
        return k

    def same_segment_grid(self, other):
        return self.n_tau == other.n_tau and np.isclose(self.step, other.step, rtol=1e-12, atol=0)


@dataclass(frozen=True, eq=False)
class HistorySegment:
    """Samples of a continuous function on ``[-tau, 0]`` at the grid nodes."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] != self.grid.n_tau + 1:
            raise GridError(
                f"segment needs {self.grid.n_tau + 1} samples, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise GridError("segment samples must be finite")
        object.__setattr__(self, "values", _frozen(vals))

    @classmethod
    def constant(cls, grid, value):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(value, (grid.n_tau + 1, 1)))

    @classmethod
    def from_function(cls, grid, fn):
        """Sample ``fn(u)`` (scalar or vector valued) at the segment nodes."""
        u = grid.segment_times()
        vals = np.array([np.atleast_1d(fn(s)) for s in u], dtype=float)
        return cls(grid, vals)

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def now(self):
        """Current value ``phi(0)``."""
        return self.values[-1]

    @property
    def delayed(self):
        """Delayed value ``phi(-tau)``."""
        return self.values[0]

    def norm(self):
        """Sampled uniform norm."""
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def __add__(self, other):
        if isinstance(other, HistorySegment):
            _check_same(self, other)
            other = other.values
        return HistorySegment(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, HistorySegment):
            _check_same(self, other)
            other = other.values
        return HistorySegment(self.grid, self.values - other)

    def __mul__(self, scalar):
        return HistorySegment(self.grid, self.values * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class PathGrid:
    """Samples of a path on ``[-tau, T]``."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] != self.grid.n_nodes:
            raise GridError(f"path needs {self.grid.n_nodes} samples, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise GridError("path samples must be finite")
        object.__setattr__(self, "values", _frozen(vals))

    @classmethod
    def from_segment(cls, seg, continuation):
        """Concatenate an initial segment with samples at ``h, 2h, ...``."""
        continuation = np.asarray(continuation, dtype=float).reshape(-1, seg.dim)
        grid = seg.grid.with_steps(continuation.shape[0])
        return cls(grid, np.vstack([seg.values, continuation]))

    @property
    def dim(self):
        return self.values.shape[1]

    def times(self):
        return self.grid.times()

    @property
    def initial(self):
        return HistorySegment(self.grid, self.values[: self.grid.n_tau + 1])

    @property
    def final(self):
        return HistorySegment(self.grid, self.values[-(self.grid.n_tau + 1):])

    def windows(self):
        """Read-only view of all segments ``x_{t_k}``, shape ``(n_steps + 1, n_tau + 1, d)``."""
        view = sliding_window_view(self.values, self.grid.n_tau + 1, axis=0)
        return np.moveaxis(view, -1, 1)

    def norm(self, upto=None):
        """Sampled uniform norm on ``[-tau, upto]`` (whole path by default)."""
        stop = self.grid.n_nodes if upto is None else self.grid.n_tau + self.grid.index_of(upto) + 1
        return float(np.max(np.linalg.norm(self.values[:stop], axis=1)))

    def restrict(self, t):
        """Path restricted to ``[-tau, t]``."""
        k = self.grid.index_of(t)
        return PathGrid(self.grid.with_steps(k), self.values[: self.grid.n_tau + k + 1])

    def shifted(self, s):
        """Time-shifted remainder ``x^s(t) = x(s + t)`` on ``[-tau, T - s]``."""
        k = self.grid.index_of(s)
        return PathGrid(self.grid.with_steps(self.grid.n_steps - k), self.values[k:])


def segment_at(path, t):
    """Segment ``x_t`` of a sampled path at grid time ``t``."""
    k = path.grid.index_of(t)
    return HistorySegment(path.grid, path.values[k: k + path.grid.n_tau + 1])


def _check_same(a, b):
    if not a.grid.same_segment_grid(b.grid) or a.values.shape != b.values.shape:
        raise GridError("segments live on different grids")


def sup_distance(a, b):
    """Sampled uniform distance ``max_u |a(u) - b(u)|``."""
    _check_same(a, b)
    return float(np.max(np.linalg.norm(a.values - b.values, axis=1)))


@dataclass(frozen=True, eq=False)
class Orbit:
    """Orbit of a periodic DDE solution, stored as grid-shifted segments.

    ``samples`` holds ``n_segments + n_tau`` consecutive samples of the
    periodic solution; segment ``j`` is ``samples[j : j + n_tau + 1]``.  An
    equilibrium is the single constant segment.
    """

    grid: GridSpec
    samples: np.ndarray
    period: float
    is_equilibrium: bool = False
    slowly_oscillating: bool = None

    def __post_init__(self):
        vals = np.asarray(self.samples, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] < self.grid.n_tau + 1:
            raise GridError("orbit needs at least one segment")
        if not self.period > 0:
            raise GridError("orbit period must be positive")
        if self.is_equilibrium and vals.shape[0] != self.grid.n_tau + 1:
            raise GridError("equilibrium orbit has exactly one segment")
        object.__setattr__(self, "samples", _frozen(vals))

    @classmethod
    def equilibrium(cls, grid, value, period=1.0):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(value, (grid.n_tau + 1, 1)), period, True)

    @property
    def n_segments(self):
        return self.samples.shape[0] - self.grid.n_tau

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def center(self):
        """Equilibrium value (only meaningful for equilibria)."""
        return self.samples[-1]

    def windows(self):
        view = sliding_window_view(self.samples, self.grid.n_tau + 1, axis=0)
        return np.moveaxis(view, -1, 1)

    @property
    def segments(self):
        return [HistorySegment(self.grid, w) for w in self.windows()]

    def segment(self, j):
        j = j % self.n_segments
        return HistorySegment(self.grid, self.samples[j: j + self.grid.n_tau + 1])

    def value_at(self, offset):
        """Periodic solution at ``offset`` grid steps after the end of segment 0."""
        offset = np.asarray(offset)
        return self.samples[self.grid.n_tau + offset % self.n_segments]


def distances_to_orbit_segments(seg, orbit, chunk=256):
    """Sup distance from ``seg`` to every stored orbit segment."""
    if not seg.grid.same_segment_grid(orbit.grid) or seg.dim != orbit.dim:
        raise GridError("segment and orbit live on different grids")
    wins = orbit.windows()
    out = np.empty(orbit.n_segments)
    for start in range(0, orbit.n_segments, chunk):
        block = wins[start: start + chunk]
        diff = np.linalg.norm(block - seg.values[None], axis=2)
        out[start: start + chunk] = diff.max(axis=1)
    return out


def distance_to_orbit(seg, orbit):
    """Minimum over stored orbit segments of :func:`sup_distance`."""
    if orbit is None or orbit.n_segments < 1:
        raise ValueError("orbit has no segments")
    return float(distances_to_orbit_segments(seg, orbit).min())
