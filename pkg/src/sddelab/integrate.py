"""
Integrating delay equations
===========================

All schemes are explicit Euler / Euler-Maruyama on a grid whose step divides
the delay, so ``x(t - tau)`` is always a stored sample.  One step reads

    X[k+1] = X[k] + h b(X_k) + sqrt(eps h) sigma(X_k) xi_k + h sigma(X_k) v_k

with ``xi_k`` standard normal and ``v_k`` an optional control.  Setting
``eps = 0`` and ``v = 0`` reproduces the deterministic scheme bit for bit.

Batches of trials are integrated together; every trial owns a Philox stream
(see :mod:`sddelab.rng`) so batching never changes a trial's outcome.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BlowUpError, DetectionFailure, GridError
from .rng import PLAIN_STREAM, PROBE_STREAM, NormalBlocks, trial_generator
from .segments import (GridSpec, HistorySegment, Orbit, PathGrid,
                       distances_to_orbit_segments)


@dataclass(frozen=True, eq=False)
class Control:
    """Piecewise-constant control, ``values[k]`` acting on ``[t_k, t_{k+1})``."""

    grid: GridSpec
    values: np.ndarray
    norm_bound: Optional[float] = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != self.grid.n_steps:
            raise GridError(f"control needs {self.grid.n_steps} values, got {vals.shape[0]}")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.norm_bound is not None and self.sq_norm() > self.norm_bound * (1 + 1e-12):
            raise ValueError(f"control norm {self.sq_norm()} exceeds bound {self.norm_bound}")

    @classmethod
    def zeros(cls, grid, dim=1):
        return cls(grid, np.zeros((grid.n_steps, dim)))

    @classmethod
    def constant(cls, grid, value):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(value, (grid.n_steps, 1)))

    @property
    def dim(self):
        return self.values.shape[1]

    def sq_norm(self):
        """Discrete squared L2 norm ``sum |u_k|^2 h``."""
        return float(np.sum(self.values ** 2) * self.grid.step)

    def fit(self, horizon):
        """Truncate or zero-pad (at the end) to a new horizon."""
        grid = self.grid.with_horizon(horizon)
        n = grid.n_steps
        vals = np.zeros((n, self.dim))
        keep = min(n, self.grid.n_steps)
        vals[:keep] = self.values[:keep]
        return Control(grid, vals)


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """Ball ``B(O, radius)`` around an equilibrium or a periodic orbit."""

    kind: str
    center: Orbit
    radius: float

    def __post_init__(self):
        if self.kind not in ("equilibrium", "orbit"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if not self.radius > 0:
            raise ValueError("domain radius must be positive")
        if (self.kind == "equilibrium") != bool(self.center.is_equilibrium):
            raise ValueError("domain kind does not match its center orbit")

    @classmethod
    def ball(cls, orbit, radius):
        return cls("equilibrium" if orbit.is_equilibrium else "orbit", orbit, radius)

    @property
    def grid(self):
        return self.center.grid

    def distance(self, seg):
        return float(distances_to_orbit_segments(seg, self.center).min())

    def contains(self, seg):
        return self.distance(seg) < self.radius


@dataclass
class ExitRecord:
    epsilon: float
    exit_time: float
    censored: bool
    exit_segment: HistorySegment
    steps_used: int
    log_weight: float = 0.0


# ---------------------------------------------------------------------------
# integration kernel


def _matvec(s, v):
    """``sigma @ v`` for batched or shared ``sigma`` (..., d, m) and ``v`` (..., m)."""
    return np.einsum("...dm,...m->...d", s, v)


def _step(model, w, grid, x_cur, noise_scale, xi, v):
    x_new = x_cur + grid.step * model.drift(w, grid)
    if noise_scale or v is not None:
        s = model.constant_sigma if model.constant_sigma is not None else model.diffusion(w, grid)
        if noise_scale:
            x_new = x_new + noise_scale * _matvec(s, xi)
        if v is not None:
            x_new = x_new + grid.step * _matvec(s, v)
    return x_new


def _check_phi(model, phi, grid):
    if not phi.grid.same_segment_grid(grid):
        raise GridError("initial segment does not live on the integration grid")
    if phi.dim != model.dim_state:
        raise GridError(f"segment has dimension {phi.dim}, model expects {model.dim_state}")


def _block_length(model, grid):
    """Steps whose drift reads only already-known samples (method of steps)."""
    nodes = model.nodes(grid)
    newest = int(nodes.max()) if nodes.size else 0
    return grid.n_tau - newest + 1


def _integrate(model, init, grid, noise_scale=0.0, normals=None, control=None):
    """Integrate a batch of initial windows ``init`` (B, n_tau + 1, d) over ``grid``.

    Steps are taken in blocks whose coefficients depend only on known history;
    the per-step increments are interleaved and summed by a sequential
    ``cumsum`` so the rounding matches a step-by-step loop exactly.
    """
    n, N, h = grid.n_steps, grid.n_tau, grid.step
    B, _, d = init.shape
    X = np.empty((B, N + n + 1, d))
    X[:, : N + 1] = init
    L = _block_length(model, grid)
    k = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while k < n:
            ell = min(L, n - k)
            win = np.moveaxis(sliding_window_view(X[:, k: k + ell + N], N + 1, axis=1), -1, 2)
            incs = [h * model.drift(win, grid)]
            if noise_scale or control is not None:
                s = model.constant_sigma if model.constant_sigma is not None \
                    else model.diffusion(win, grid)
                if noise_scale:
                    incs.append(noise_scale * _matvec(s, normals[:, k: k + ell]))
                if control is not None:
                    incs.append(np.broadcast_to(h * _matvec(s, control[k: k + ell]),
                                                incs[0].shape))
            q = len(incs)
            stacked = np.stack(incs, axis=2).reshape(B, ell * q, d)
            acc = np.cumsum(np.concatenate([X[:, N + k][:, None], stacked], axis=1), axis=1)
            X[:, N + k + 1: N + k + 1 + ell] = acc[:, q::q]
            if not np.all(np.isfinite(X[:, N + k + 1: N + k + 1 + ell])):
                bad = np.flatnonzero(~np.all(np.isfinite(X[:, N + k + 1: N + k + 1 + ell]),
                                             axis=(0, 2)))[0]
                raise BlowUpError(f"state became non-finite at t={(k + bad + 1) * h:g}",
                                  time=(k + bad + 1) * h)
            k += ell
    return X


def solve_dde(model, phi, grid):
    """Explicit Euler solution of the deterministic DDE on ``[-tau, grid.horizon]``."""
    _check_phi(model, phi, grid)
    X = _integrate(model, phi.values[None], grid)
    return PathGrid(grid, X[0])


def _control_values(control, grid, m):
    if control.grid.n_steps != grid.n_steps or not np.isclose(control.grid.step, grid.step):
        raise GridError("control grid does not match the integration grid")
    if control.dim != m:
        raise GridError(f"control has dimension {control.dim}, model noise dimension is {m}")
    return control.values


def solve_controlled(model, phi, control, grid):
    """Controlled skeleton ``x' = b(x_t) + sigma(x_t) u(t)`` by explicit Euler."""
    _check_phi(model, phi, grid)
    u = _control_values(control, grid, model.dim_noise)
    X = _integrate(model, phi.values[None], grid, control=u)
    return PathGrid(grid, X[0])


def _normals(seed, n, m, trial=0, stream=PLAIN_STREAM):
    return trial_generator(seed, trial, stream).standard_normal((n, m))


def simulate_sdde(model, phi, epsilon, grid, rng_seed, trial=0):
    """Euler-Maruyama sample path with noise scale ``sqrt(epsilon)``."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    _check_phi(model, phi, grid)
    if epsilon == 0:
        return solve_dde(model, phi, grid)
    xi = _normals(rng_seed, grid.n_steps, model.dim_noise, trial)
    X = _integrate(model, phi.values[None], grid, np.sqrt(epsilon) * np.sqrt(grid.step), xi[None])
    return PathGrid(grid, X[0])


def girsanov_log_weight(control_values, normals, epsilon, step):
    """Log of dP/dQ along one controlled trajectory (rows of ``control_values``)."""
    v = np.asarray(control_values)
    xi = np.asarray(normals)[: v.shape[0]]
    return float(-np.sum(v * xi) * np.sqrt(step) / np.sqrt(epsilon)
                 - np.sum(v * v) * step / (2.0 * epsilon))


def simulate_controlled_sdde(model, phi, epsilon, control, grid, rng_seed, trial=0):
    """Controlled Euler-Maruyama path and its Girsanov log-likelihood ratio.

    ``exp(log_weight)`` times a payoff of the controlled path is an unbiased
    estimate of the payoff's expectation under the uncontrolled law.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    _check_phi(model, phi, grid)
    v = _control_values(control, grid, model.dim_noise)
    xi = _normals(rng_seed, grid.n_steps, model.dim_noise, trial)
    X = _integrate(model, phi.values[None], grid, np.sqrt(epsilon) * np.sqrt(grid.step),
                   xi[None], control=v)
    return PathGrid(grid, X[0]), girsanov_log_weight(v, xi, epsilon, grid.step)


# ---------------------------------------------------------------------------
# exit times


def _exit_batch(model, phi, epsilon, domain, n_max, grid, seed, trials, control, stream, block):
    N, h, d, m = grid.n_tau, grid.step, model.dim_state, model.dim_noise
    B = len(trials)
    noise_scale = np.sqrt(epsilon) * np.sqrt(h)
    # controls: (K, n_ctrl, m); trial t is driven by component t % K
    V = None if control is None else np.stack([c.values for c in control])
    n_ctrl = 0 if V is None else V.shape[1]
    if V is not None:
        K = V.shape[0]
        comp = np.asarray(trials) % K
        lik = np.zeros((B, K))               # log dQ_e/dP along each path
        rate = np.sqrt(h / epsilon)
    blocks = NormalBlocks(seed, trials, m, block=block, stream=stream)

    exit_step = np.full(B, -1, dtype=np.int64)
    log_w = np.zeros(B)
    exit_win = np.empty((B, N + 1, d))
    slots = np.arange(B)                     # result slot of each buffer row
    alive = np.ones(B, dtype=bool)
    buf = np.empty((B, N + 1 + block, d))
    buf[:, : N + 1] = phi.values
    center = domain.center.center
    pos = N
    xi_blk = None
    k = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while k < n_max and slots.size:
            j = k % block
            if j == 0:
                keep = alive
                slots, buf, alive = slots[keep], buf[keep], alive[keep]
                if not slots.size:
                    break
                buf[:, : N + 1] = buf[:, pos - N: pos + 1].copy()
                pos = N
                xi_blk = blocks.next_block(slots)
            xi = xi_blk[:, j]
            v = V[comp[slots], k] if k < n_ctrl else None
            v_comp = V[:, k] if k < n_ctrl else None
            x_new = _step(model, buf[:, pos - N: pos + 1], grid, buf[:, pos], noise_scale, xi, v)
            pos += 1
            buf[:, pos] = x_new
            k += 1
            if v is not None:
                xi_plain = xi + rate * v
                step_lik = rate * xi_plain @ v_comp.T - 0.5 * rate ** 2 * np.sum(v_comp ** 2, axis=1)
                lik[slots] += np.where(alive[:, None], step_lik, 0.0)
            if not np.all(np.isfinite(x_new[alive])):
                raise BlowUpError(f"state became non-finite at t={k * h:g}", time=k * h)
            if domain.kind == "equilibrium":
                out = np.linalg.norm(x_new - center, axis=1) >= domain.radius
            else:
                out = np.array([
                    distances_to_orbit_segments(
                        HistorySegment(grid, buf[r, pos - N: pos + 1]), domain.center).min()
                    >= domain.radius if alive[r] else False for r in range(slots.size)])
            hit = out & alive
            if np.any(hit):
                rows = np.flatnonzero(hit)
                exit_step[slots[rows]] = k
                exit_win[slots[rows]] = buf[rows, pos - N: pos + 1]
                alive[rows] = False
    if slots.size:
        rows = np.flatnonzero(alive)
        exit_win[slots[rows]] = buf[rows, pos - N: pos + 1]
    if V is not None:
        # dP/dQ for the equal-weight mixture of the component laws
        top = lik.max(axis=1, keepdims=True)
        log_w = -(top[:, 0] + np.log(np.mean(np.exp(lik - top), axis=1)))
    return exit_step, log_w, exit_win


def first_exit_batch(model, phi, epsilon, domain, t_max, grid, rng_seed, trials,
                     control=None, stream=PLAIN_STREAM, block=512, workers=1):
    """First exit times of independent trials (list of trial indices).

    Returns arrays ``(exit_time, censored, log_weight, exit_windows)`` ordered
    like ``trials``.  Censored trials report ``exit_time = t_max``.

    ``control`` may be one :class:`Control` or a sequence of them.  With ``K``
    controls, trial ``t`` is driven by control ``t % K`` and ``log_weight`` is
    the log density of the plain law against the equal-weight mixture of the
    controlled laws, accumulated up to the exit step.
    """
    if epsilon < 0 or (control is not None and not epsilon > 0):
        raise ValueError("epsilon must be positive (nonnegative without control)")
    _check_phi(model, phi, grid)
    if not domain.contains(phi):
        raise ValueError("initial segment is not inside the domain")
    if control is not None:
        control = [control] if isinstance(control, Control) else list(control)
        for c in control:
            if not np.isclose(c.grid.step, grid.step):
                raise GridError("control step does not match the grid step")
            if c.dim != model.dim_noise:
                raise GridError("control dimension does not match the noise dimension")
        if len({c.grid.n_steps for c in control}) != 1:
            raise GridError("mixture controls need a common horizon")
    trials = np.asarray(list(trials), dtype=np.int64)
    n_max = int(np.ceil(t_max / grid.step - 1e-9))

    def run(part):
        return _exit_batch(model, phi, epsilon, domain, n_max, grid, rng_seed, part,
                           control, stream, block)

    parts = [trials] if workers <= 1 else [p for p in np.array_split(trials, workers) if p.size]
    if len(parts) == 1:
        results = [run(parts[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(parts)) as pool:
            results = list(pool.map(run, parts))
    steps = np.concatenate([r[0] for r in results])
    log_w = np.concatenate([r[1] for r in results])
    wins = np.concatenate([r[2] for r in results])
    censored = steps < 0
    times = np.where(censored, n_max * grid.step, steps * grid.step)
    return times, censored, log_w, wins


def first_exit(model, phi, epsilon, domain, t_max, grid, rng_seed, control=None, trial=0):
    """First grid time at which the (possibly controlled) segment leaves ``domain``."""
    times, cens, log_w, wins = first_exit_batch(
        model, phi, epsilon, domain, t_max, grid, rng_seed, [trial], control=control)
    steps = int(round(times[0] / grid.step))
    return ExitRecord(epsilon=epsilon, exit_time=float(times[0]), censored=bool(cens[0]),
                      exit_segment=HistorySegment(grid, wins[0]), steps_used=steps,
                      log_weight=float(log_w[0]))


# ---------------------------------------------------------------------------
# periodic orbits and attraction


@dataclass
class OrbitSettings:
    """Budget and tolerances for :func:`detect_periodic_orbit`."""

    transient: float = 100.0
    max_time: float = 2000.0
    tolerance: float = 1e-6
    amplitude_tolerance: float = 1e-8
    level: float = 0.0
    chunk_time: float = 50.0


def _crossings(x, level, t0, h, upward=True):
    y = x - level
    if upward:
        idx = np.flatnonzero((y[:-1] < 0) & (y[1:] >= 0))
    else:
        idx = np.flatnonzero((y[:-1] > 0) & (y[1:] <= 0))
    frac = y[idx] / (y[idx] - y[idx + 1])
    return idx, t0 + (idx + frac) * h


def detect_periodic_orbit(model, phi, settings=None):
    """Locate a periodic orbit (or equilibrium) of a scalar DDE from ``phi``.

    The solution is integrated past ``settings.transient``; up-crossings of
    ``settings.level`` give period estimates, accepted once two consecutive
    gaps agree within ``settings.tolerance``.  If the oscillation amplitude
    decays below ``settings.amplitude_tolerance`` an equilibrium orbit is
    returned instead.

    Raises
    ------
    DetectionFailure
        Neither happened before ``settings.max_time``.
    """
    settings = settings or OrbitSettings()
    if model.dim_state != 1:
        raise ValueError("periodic-orbit detection is implemented for d = 1")
    grid0 = phi.grid
    N, h = grid0.n_tau, grid0.step
    chunk = max(1, int(round(settings.chunk_time / h)))
    values = [phi.values[:, 0]]
    seg = phi
    t_end = 0.0
    n_transient = int(round(settings.transient / h))
    gaps = []
    while t_end < settings.max_time:
        path = solve_dde(model, seg, grid0.with_steps(chunk))
        values.append(path.values[N + 1:, 0])
        seg = path.final
        t_end += chunk * h
        if t_end < settings.transient + 2 * grid0.tau:
            continue
        x = np.concatenate(values)          # x[i] is the value at time (i - N) h
        tail = x[-(2 * N + 1):]
        if np.ptp(tail) < settings.amplitude_tolerance:
            return Orbit.equilibrium(grid0, [float(np.mean(tail))], period=grid0.tau)
        start = N + n_transient
        idx, times = _crossings(x[start:], settings.level, (start - N) * h, h)
        idx = idx + start
        if times.size < 4:
            continue
        gaps = np.diff(times)
        if abs(gaps[-1] - gaps[-2]) > settings.tolerance:
            continue
        period = float(gaps[-1])
        K = int(round(period / h))
        k0 = int(idx[-3]) + 1               # first node at or above the level
        samples = x[k0 - N: k0 + K][:, None]
        down_idx, down_t = _crossings(x[k0: k0 + K + 1], settings.level, (k0 - N) * h, h,
                                      upward=False)
        z0, z2 = times[-3], times[-2]
        sops = None
        if down_t.size == 1:
            z1 = down_t[0]
            sops = bool(z1 - z0 > grid0.tau and z2 - z1 > grid0.tau)
        return Orbit(grid0, samples, period, False, sops)
    raise DetectionFailure(
        "no periodic regime detected within the time budget",
        {"t_end": t_end, "last_gaps": list(np.asarray(gaps)[-3:])})


@dataclass
class AttractionReport:
    success: bool
    t_delta: Optional[float]
    max_distance_after: float
    final_distance: float
    probe_count: int
    distances: np.ndarray = field(repr=False, default=None)


def random_ball_probes(domain, count, rng_seed, fill=0.99, knots=6):
    """Random piecewise-linear segments strictly inside ``domain``."""
    grid = domain.grid
    rng = trial_generator(rng_seed, 0, PROBE_STREAM)
    u = grid.segment_times()
    kt = np.linspace(-grid.tau, 0.0, knots)
    d = domain.center.dim
    out = []
    for _ in range(count):
        base = domain.center.segment(int(rng.integers(domain.center.n_segments))).values
        dirs = rng.normal(size=(knots, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        kv = dirs * (fill * domain.radius * rng.uniform(size=(knots, 1)))
        pert = np.column_stack([np.interp(u, kt, kv[:, i]) for i in range(d)])
        out.append(HistorySegment(grid, base + pert))
    return out


def _distance_series(domain, X, grid, stride=1):
    """``d_0(O, x_t)`` at every ``stride``-th grid time for a batch of paths."""
    N = grid.n_tau
    if domain.kind == "equilibrium":
        pt = np.linalg.norm(X - domain.center.center, axis=2)
        return sliding_window_view(pt, N + 1, axis=1).max(axis=2)[:, ::stride]
    steps = range(0, grid.n_steps + 1, stride)
    return np.array([[distances_to_orbit_segments(HistorySegment(grid, x[k: k + N + 1]),
                                                  domain.center).min() for k in steps]
                     for x in X])


def check_uniform_attraction(model, domain, orbit, delta, horizon, probe_count, rng_seed,
                             probes=None, stride=1):
    """Integrate probe segments from ``domain`` and test ``d_0(O, x_t) <= delta`` for late t.

    ``t_delta`` is the smallest grid time after which every probe stays within
    ``delta`` of ``orbit`` up to ``horizon``.
    """
    if probe_count < 1:
        raise ValueError("probe_count must be at least 1")
    grid = orbit.grid.with_horizon(horizon)
    target = DomainSpec.ball(orbit, domain.radius) if orbit is not domain.center else domain
    if probes is None:
        probes = random_ball_probes(domain, probe_count, rng_seed)
    init = np.stack([p.values for p in probes])
    try:
        X = _integrate(model, init, grid)
    except BlowUpError:
        return AttractionReport(False, None, np.inf, np.inf, len(probes))
    dist = _distance_series(target, X, grid, stride)
    worst = dist.max(axis=0)
    bad = np.flatnonzero(worst > delta)
    if bad.size and bad[-1] == worst.size - 1:
        return AttractionReport(False, None, float(worst[-1]), float(worst[-1]), len(probes), dist)
    first_ok = 0 if not bad.size else bad[-1] + 1
    return AttractionReport(True, first_ok * stride * grid.step, float(worst[first_ok:].max()),
                            float(worst[-1]), len(probes), dist)
