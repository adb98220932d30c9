"""
Quasipotential by path-space minimization
=========================================

``V(psi)`` is the infimum of the action over horizons ``T`` and paths whose
initial segment lies on the attracting orbit and whose final segment is
``psi``.  Exit thresholds replace the pinned final segment by a terminal point
on the sphere ``|x(T) - center| = r``: the first touch of the boundary is
where an exit path can be cut without raising its action.

Minimization runs over the free node values with L-BFGS.  The free nodes are
re-expressed through scaled increments ``z_i = (x_i - x_{i-1}) / sqrt(h)``,
which turns the dominant ``sum |dx|^2 / 2h`` part of the action into a
well-conditioned quadratic; gradients are still exact.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .action import _value_and_gradient, path_action
from .errors import ConvergenceError, GridError
from .optimize import OptimizerSettings, lbfgs
from .rng import trial_generator
from .segments import PathGrid, distances_to_orbit_segments

_RESTART_STREAM = 7


@dataclass(frozen=True)
class PinnedSegment:
    """Terminal condition ``x_T = psi``."""

    psi: object


@dataclass(frozen=True)
class BoundaryHit:
    """Terminal condition ``|x(T) - center| = radius``.

    With ``center=None`` the center is the orbit point reached at time ``T``
    from the chosen starting phase (a heuristic for periodic orbits).
    """

    radius: float
    center: Optional[np.ndarray] = None


@dataclass
class ActionMinimum:
    path: PathGrid
    value: float
    converged: bool
    iterations: int
    gradient_norm: float
    start_index: int
    direction: Optional[np.ndarray]
    restart_values: list = field(default_factory=list)
    initial_value: float = np.inf

    def __iter__(self):
        yield self.path
        yield self.value


@dataclass
class QuasipotentialResult:
    value: float
    path: Optional[PathGrid]
    horizon: Optional[float]
    per_horizon: dict
    diagnostics: dict = field(default_factory=dict)


@dataclass
class ThresholdEstimate:
    """One exit threshold: per-eta minima and the eta -> 0 extrapolation."""

    value: float
    per_eta: dict
    radii: dict
    results: dict
    monotone: bool

    @property
    def best(self):
        eta = min(self.results)
        return self.results[eta]


# ---------------------------------------------------------------------------
# initial paths


def connect_to_orbit_path(orbit, phi, grid):
    """Low-action path from ``phi`` onto ``orbit``.

    Starting from the orbit segment nearest ``phi``, the endpoint discrepancy
    ``x*(t*) - phi(0)`` is blended out linearly over one time unit while the
    path follows the orbit's motion; afterwards the path is the orbit itself.
    """
    if not phi.grid.same_segment_grid(orbit.grid) or not grid.same_segment_grid(orbit.grid):
        raise GridError("orbit, segment and grid are incompatible")
    j = int(np.argmin(distances_to_orbit_segments(phi, orbit)))
    N, n = grid.n_tau, grid.n_steps
    unit = max(1, int(round(1.0 / grid.step)))
    i = np.arange(1, n + 1)
    follow = orbit.value_at(j + i)
    anchor = orbit.value_at(j)
    t = np.minimum(i / unit, 1.0)[:, None]
    blend = (1 - t) * phi.values[-1] + t * anchor + follow - anchor
    values = np.vstack([phi.values, np.where(i[:, None] <= unit, blend, follow)])
    return PathGrid(grid, values)


def _outward_initial(orbit, j, n, N, target):
    """Follow the orbit from segment ``j``, then ramp straight to ``target`` over the last window."""
    follow = orbit.value_at(j + np.arange(1, n + 1))
    ramp = min(N, n)
    base = follow[n - ramp - 1] if n > ramp else orbit.value_at(j)
    s = (np.arange(1, ramp + 1) / ramp)[:, None]
    follow[n - ramp:] = (1 - s) * base + s * target
    return np.vstack([orbit.segment(j).values, follow])


def _pinned_initial(orbit, j, n, N, psi, unit):
    follow = orbit.value_at(j + np.arange(1, n - N))
    F = follow.shape[0]
    R = min(unit, F)
    if R:
        s = (np.arange(1, R + 1) / (R + 1))[:, None]
        follow[F - R:] = (1 - s) * follow[F - R:] + s * psi.values[0]
    return np.vstack([orbit.segment(j).values, follow, psi.values])


# ---------------------------------------------------------------------------
# single minimization


class _Problem:
    """Free-node parametrization for one (start, terminal, horizon) subproblem."""

    def __init__(self, model, grid, X0, n_free, sphere=None):
        self.model, self.grid = model, grid
        self.N, self.h = grid.n_tau, grid.step
        self.X = np.array(X0, dtype=float)
        self.F = n_free
        self.sphere = sphere        # (center, radius) for d >= 2 terminal points
        self.d = self.X.shape[1]

    def encode(self, X):
        N, F = self.N, self.F
        z = (np.diff(X[N: N + F + 1], axis=0) / np.sqrt(self.h)).ravel()
        if self.sphere is not None:
            c, r = self.sphere
            z = np.concatenate([z, (X[N + self.grid.n_steps] - c) / r])
        return z

    def decode(self, z):
        N, F, d = self.N, self.F, self.d
        X = self.X.copy()
        if F:
            X[N + 1: N + F + 1] = X[N] + np.sqrt(self.h) * np.cumsum(z[: F * d].reshape(F, d), axis=0)
        if self.sphere is not None:
            c, r = self.sphere
            w = z[F * d:]
            X[N + self.grid.n_steps] = c + r * w / np.linalg.norm(w)
        return X

    def __call__(self, z):
        N, F, d = self.N, self.F, self.d
        X = self.decode(z)
        value, gX = _value_and_gradient(self.model, X, self.grid)
        gfree = gX[N + 1: N + F + 1]
        gz = np.sqrt(self.h) * np.cumsum(gfree[::-1], axis=0)[::-1]
        parts = [gz.ravel()]
        crit = float(np.max(np.abs(gfree))) if F else 0.0
        if self.sphere is not None:
            c, r = self.sphere
            w = z[F * d:]
            nw = np.linalg.norm(w)
            unit = w / nw
            g_end = gX[N + self.grid.n_steps]
            tangent = g_end - (g_end @ unit) * unit
            parts.append(r * tangent / nw)
            crit = max(crit, float(np.max(np.abs(tangent))))
        return value, np.concatenate(parts), crit


def _directions(d):
    if d == 1:
        return [np.array([1.0]), np.array([-1.0])]
    eye = np.eye(d)
    return [s * e for e in eye for s in (1.0, -1.0)]


def _subproblems(model, start, terminal, grid, settings):
    N, n = grid.n_tau, grid.n_steps
    stride = 1 if start.is_equilibrium else max(1, settings.phase_stride)
    unit = max(1, int(round(1.0 / grid.step)))
    jobs = []
    for j in range(0, start.n_segments, stride):
        if isinstance(terminal, PinnedSegment):
            if n < N + 1:
                continue
            X0 = _pinned_initial(start, j, n, N, terminal.psi, unit)
            jobs.append((j, None, X0, n - N - 1, None))
        else:
            center = (np.asarray(terminal.center, dtype=float) if terminal.center is not None
                      else start.value_at(j + n))
            for direction in _directions(model.dim_state):
                target = center + terminal.radius * direction
                X0 = _outward_initial(start, j, n, N, target)
                sphere = (center, terminal.radius) if model.dim_state > 1 else None
                jobs.append((j, direction, X0, n - 1, sphere))
    return jobs


def _solve_job(model, grid, settings, job, amplitude, salt):
    j, direction, X0, n_free, sphere = job
    runs = []
    for r in range(settings.restarts + 1):
        prob = _Problem(model, grid, X0, n_free, sphere)
        X_init = X0.copy()
        if r > 0 and n_free:
            rng = trial_generator(settings.seed, salt * 1000 + r, _RESTART_STREAM)
            X_init[grid.n_tau + 1: grid.n_tau + 1 + n_free] += amplitude * rng.standard_normal(
                (n_free, X0.shape[1]))
        z0 = prob.encode(X_init)
        res = lbfgs(prob, z0, settings)
        runs.append((res, prob.decode(res.x), prob(z0)[0]))
    return j, direction, runs


def _run_jobs(model, start, terminal, T, grid, settings):
    if not model.is_square:
        raise ValueError("quasipotential needs dim_noise == dim_state")
    grid = grid.with_horizon(T)
    if isinstance(terminal, PinnedSegment):
        amplitude = settings.restart_amplitude * max(
            float(distances_to_orbit_segments(terminal.psi, start).min()), 1e-3)
    else:
        amplitude = settings.restart_amplitude * terminal.radius
    jobs = _subproblems(model, start, terminal, grid, settings)
    if not jobs:
        raise GridError(f"horizon T={T} is too short for the terminal condition")
    salts = range(len(jobs))
    if settings.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(settings.workers) as pool:
            solved = list(pool.map(lambda a: _solve_job(model, grid, settings, a[0], amplitude, a[1]),
                                   zip(jobs, salts)))
    else:
        solved = [_solve_job(model, grid, settings, job, amplitude, s) for job, s in zip(jobs, salts)]
    return grid, solved


def _reduce(model, grid, solved, T):
    """Lowest converged run (first in job order on ties)."""
    best = best_any = None
    for j, direction, runs in solved:
        values = [res.fun for res, _, _ in runs]
        for res, X, init_value in runs:
            cand = ActionMinimum(PathGrid(grid, X), res.fun, res.converged, res.iterations,
                                 res.criterion, j, direction, values, runs[0][2])
            if best_any is None or cand.value < best_any.value:
                best_any = cand
            if res.converged and (best is None or cand.value < best.value):
                best = cand
    if best is None:
        raise ConvergenceError(f"no restart converged at T={T}", best=best_any,
                               diagnostics={"gradient_norm": best_any.gradient_norm})
    best.value = path_action(model, best.path).value
    return best


def minimize_action(model, start, terminal, T, grid, settings=None):
    """Minimize the discrete action from ``start`` (an :class:`Orbit`) to ``terminal`` in time ``T``.

    Every stored orbit segment (every ``phase_stride``-th for periodic orbits)
    is tried as the initial segment; for boundary-hit terminals both signs
    (``+-e_i`` directions when ``d > 1``) are tried.  Each subproblem is
    restarted ``settings.restarts`` times from Gaussian perturbations.

    Raises
    ------
    ConvergenceError
        No run met the gradient tolerance; ``best`` carries the lowest iterate.
    """
    settings = settings or OptimizerSettings()
    grid, solved = _run_jobs(model, start, terminal, T, grid, settings)
    return _reduce(model, grid, solved, T)


def boundary_minimizers(model, start, terminal, T, grid, settings=None):
    """Best boundary-hit minimizer for each initial sphere direction (``+-e_i``).

    Used to build tilt mixtures for two-sided exit problems.  Directions
    without a converged run are omitted.
    """
    settings = settings or OptimizerSettings()
    if not isinstance(terminal, BoundaryHit):
        raise TypeError("boundary_minimizers needs a BoundaryHit terminal")
    grid, solved = _run_jobs(model, start, terminal, T, grid, settings)
    out = []
    for direction in _directions(model.dim_state):
        part = [job for job in solved if np.array_equal(job[1], direction)]
        try:
            out.append(_reduce(model, grid, part, T))
        except ConvergenceError:
            continue
    return out


# ---------------------------------------------------------------------------
# horizon search and thresholds


def _horizon_search(model, orbit, terminal, settings):
    per_horizon, best, failures = {}, None, []
    iterations = 0
    for T in settings.horizons(orbit.grid.tau):
        try:
            res = minimize_action(model, orbit, terminal, T, orbit.grid, settings)
        except ConvergenceError as exc:
            failures.append(T)
            per_horizon[T] = np.inf
            continue
        except GridError:
            per_horizon[T] = np.inf
            continue
        iterations += res.iterations
        per_horizon[T] = res.value
        if best is None or res.value < best.value:       # strict: smallest T wins ties
            best = res
    if best is None:
        raise ConvergenceError("optimization failed at every horizon",
                               diagnostics={"failed_horizons": failures})
    rv = np.asarray(best.restart_values)
    diagnostics = {
        "iterations": iterations,
        "gradient_norm": best.gradient_norm,
        "restart_dispersion": float(rv.max() - rv.min()) if rv.size else 0.0,
        "failed_horizons": failures,
        "start_index": best.start_index,
        "initial_value": best.initial_value,
        "heuristic_terminal_phase": (not orbit.is_equilibrium
                                     and isinstance(terminal, BoundaryHit)
                                     and terminal.center is None),
    }
    return QuasipotentialResult(best.value, best.path, best.path.grid.horizon, per_horizon,
                                diagnostics)


def quasipotential_at(model, orbit, psi, settings=None):
    """``V(psi)``: minimal action from ``orbit`` to the segment ``psi`` over the horizon grid."""
    settings = settings or OptimizerSettings()
    return _horizon_search(model, orbit, PinnedSegment(psi), settings)


def boundary_quasipotential(model, orbit, radius, settings=None, center=None):
    """Minimal action from ``orbit`` to the sphere of ``radius`` (boundary-hit problem)."""
    settings = settings or OptimizerSettings()
    if center is None and orbit.is_equilibrium:
        center = orbit.center
    return _horizon_search(model, orbit, BoundaryHit(radius, center), settings)


def _extrapolate(etas, values):
    etas, values = np.asarray(etas, float), np.asarray(values, float)
    if etas.size == 1:
        return float(values[0])
    # quadratic through three or more margins: V(r) is smooth in the radius
    coef = np.polyfit(etas, values, min(2, etas.size - 1))
    return float(coef[-1])


def exit_thresholds(model, orbit, domain, eta_sequence, settings=None, tolerance=1e-3):
    """Estimate the upper threshold ``V_bar`` and the lower threshold ``V_lower``.

    For each ``eta`` the boundary-hit problem is solved on the sphere of
    radius ``delta + eta`` (outside the closed ball) and ``delta - eta``
    (inside the eta-neighbourhood of the complement).  Both sequences are
    extrapolated to ``eta = 0`` by a least-squares polynomial
    (quadratic once three or more margins are given).

    Returns
    -------
    (ThresholdEstimate, ThresholdEstimate)
        Upper and lower threshold.
    """
    settings = settings or OptimizerSettings()
    if domain.kind not in ("equilibrium", "orbit"):
        raise ValueError("thresholds are implemented for ball domains")
    etas = sorted((float(e) for e in eta_sequence), reverse=True)
    if not etas or not all(0 < e < domain.radius for e in etas):
        raise ValueError("eta values must lie in (0, radius)")
    center = orbit.center if orbit.is_equilibrium else None
    estimates = []
    for sign in (1.0, -1.0):
        results, per_eta, radii = {}, {}, {}
        for eta in etas:
            r = domain.radius + sign * eta
            res = boundary_quasipotential(model, orbit, r, settings, center)
            results[eta], per_eta[eta], radii[eta] = res, res.value, r
        vals = [per_eta[e] for e in etas]        # eta decreasing
        if sign > 0:
            monotone = all(b <= a + 1e-8 for a, b in zip(vals, vals[1:]))
        else:
            monotone = all(b >= a - 1e-8 for a, b in zip(vals, vals[1:]))
        estimates.append(ThresholdEstimate(_extrapolate(etas, vals), per_eta, radii, results,
                                           monotone))
    upper, lower = estimates
    if lower.value > upper.value + tolerance * max(abs(upper.value), 1e-12):
        raise ConvergenceError(
            f"lower threshold {lower.value:.6g} exceeds upper threshold {upper.value:.6g}",
            diagnostics={"upper": upper.per_eta, "lower": lower.per_eta})
    return upper, lower
