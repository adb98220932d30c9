"""
Exit-time experiments
=====================

Monte Carlo estimates of the mean first exit time across noise levels,
compared with the exit thresholds through ``eps * log E[rho]``, plus
Girsanov-tilted estimates of the exit probability before a fixed horizon.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import UnusableEstimateError
from .integrate import Control, _distance_series, first_exit_batch, solve_dde
from .rng import PLAIN_STREAM, TILTED_STREAM

_Z95 = 1.959963984540054


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    trials: int
    censored_fraction: float
    mean_exit: float
    mean_ci_low: float
    mean_ci_high: float
    eps_log_mean: float
    window_hits: float = np.nan


@dataclass
class SweepTable:
    rows: list
    thresholds: tuple           # (V_lower, V_bar)
    alpha: float
    errors: dict = field(default_factory=dict)
    slope: float = np.nan
    terminal_in_band: bool = False

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])


@dataclass
class ImportanceReport:
    plain_estimate: float
    plain_variance: float
    tilted_estimate: float
    tilted_variance: float
    variance_ratio: float
    trials: int
    degenerate_tilt: bool = False

    @property
    def plain_stderr(self):
        return float(np.sqrt(self.plain_variance / self.trials))

    @property
    def tilted_stderr(self):
        return float(np.sqrt(self.tilted_variance / self.trials))


def stays_inside(model, phi, domain, grid, probe_time):
    """Whether the deterministic solution from ``phi`` keeps its segments in ``domain``."""
    g = grid.with_horizon(probe_time)
    path = solve_dde(model, phi, g)
    return bool(np.all(_distance_series(domain, path.values[None], g) < domain.radius))


def _row(epsilon, times, censored, window=None):
    n = times.size
    cens = float(np.mean(censored))
    if cens > 0.5:
        raise UnusableEstimateError(
            f"eps={epsilon:g}: {cens:.0%} of trials censored; raise t_max or epsilon")
    done = times[~censored]
    mean = float(np.mean(done))
    half = _Z95 * float(np.std(done, ddof=1)) / np.sqrt(done.size) if done.size > 1 else np.inf
    hits = np.nan
    if window is not None:
        lo, hi = window
        hits = float(np.mean((times > lo) & (times < hi) & ~censored))
    return SweepRow(float(epsilon), int(n), cens, mean, mean - half, mean + half,
                    float(epsilon * np.log(mean)), hits)


def estimate_mean_exit(model, phi, epsilon, domain, trials, t_max, grid, seed,
                       probe_time=None, workers=1):
    """Mean first exit time over ``trials`` independent runs.

    The mean and its normal-approximation 95% interval use the uncensored
    trials only; the censored fraction is reported alongside.

    Raises
    ------
    ValueError
        The deterministic flow from ``phi`` leaves the domain.
    UnusableEstimateError
        More than half of the trials hit ``t_max``.
    """
    probe_time = probe_time if probe_time is not None else 10 * grid.tau
    if not stays_inside(model, phi, domain, grid, probe_time):
        raise ValueError("deterministic flow from phi leaves the domain")
    times, cens, _, _ = first_exit_batch(model, phi, epsilon, domain, t_max, grid, seed,
                                         range(trials), workers=workers)
    return _row(epsilon, times, cens)


def epsilon_sweep(model, phi, domain, epsilons, trials, t_max, grid, seed, thresholds,
                  alpha=None, workers=1, check_t_max=True):
    """Mean exit times over decreasing noise levels, compared with ``(V_lower, V_bar)``.

    ``t_max`` is a number or a callable ``eps -> t_max``.  Each row also holds
    the fraction of trials with ``rho`` in ``(e^{(V_lower-alpha)/eps},
    e^{(V_bar+alpha)/eps})``; ``alpha`` defaults to ``0.3 * V_bar``.  A row
    whose estimate is unusable is recorded in ``errors`` and skipped.
    """
    eps = [float(e) for e in epsilons]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be strictly decreasing")
    v_lo, v_bar = (float(t) for t in thresholds)
    alpha = 0.3 * v_bar if alpha is None else float(alpha)
    rows, errors = [], {}
    if not stays_inside(model, phi, domain, grid, 10 * grid.tau):
        raise ValueError("deterministic flow from phi leaves the domain")
    for e in eps:
        tm = t_max(e) if callable(t_max) else float(t_max)
        lo, hi = np.exp((v_lo - alpha) / e), np.exp((v_bar + alpha) / e)
        if check_t_max and tm <= hi:
            raise ValueError(f"eps={e:g}: t_max={tm:g} does not exceed the window edge {hi:.6g}")
        times, cens, _, _ = first_exit_batch(model, phi, e, domain, tm, grid, seed, range(trials),
                                             workers=workers)
        try:
            rows.append(_row(e, times, cens, (lo, hi)))
        except UnusableEstimateError as exc:
            errors[e] = str(exc)
    table = SweepTable(rows, (v_lo, v_bar), alpha, errors)
    if len(rows) >= 2:
        table.slope = float(np.polyfit(table.column("epsilon"), table.column("eps_log_mean"), 1)[0])
    if rows:
        last = rows[-1].eps_log_mean
        table.terminal_in_band = bool(0.75 * v_lo <= last <= 1.25 * v_bar)
    return table


def _estimate(samples):
    return float(np.mean(samples)), float(np.var(samples, ddof=1)) if samples.size > 1 else 0.0


def importance_sampled_exit_prob(model, phi, epsilon, domain, horizon, tilt, trials, seed,
                                 workers=1):
    """Plain and Girsanov-tilted estimates of ``P(rho <= horizon)``.

    ``tilt`` is a :class:`Control` or a sequence of them; a sequence is used
    as an equal-weight mixture (one minimizer per exit direction keeps
    two-sided exits in reach).  Tilts are fitted to ``[0, horizon]``
    (truncated or zero-padded) and the likelihood ratio is accumulated up to
    the exit step, which keeps the estimator unbiased by optional stopping.
    Plain and tilted runs draw from different streams.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    tilts = [tilt] if isinstance(tilt, Control) else list(tilt)
    if not tilts:
        raise ValueError("need at least one tilt")
    tilts = [t.fit(horizon) for t in tilts]
    grid = tilts[0].grid
    t_p, c_p, _, _ = first_exit_batch(model, phi, epsilon, domain, horizon, grid=grid,
                                      rng_seed=seed, trials=range(trials), stream=PLAIN_STREAM,
                                      workers=workers)
    t_q, c_q, log_w, _ = first_exit_batch(model, phi, epsilon, domain, horizon, grid=grid,
                                          rng_seed=seed, trials=range(trials), control=tilts,
                                          stream=TILTED_STREAM, workers=workers)
    plain = (~c_p).astype(float)
    tilted = np.where(c_q, 0.0, np.exp(log_w))
    p_est, p_var = _estimate(plain)
    q_est, q_var = _estimate(tilted)
    degenerate = bool(np.all(c_q))
    if degenerate:
        warnings.warn("no tilted trial exited before the horizon; the tilt is degenerate",
                      RuntimeWarning, stacklevel=2)
    ratio = p_var / q_var if p_var > 0 and q_var > 0 else np.nan
    return ImportanceReport(p_est, p_var, q_est, q_var, ratio, int(trials), degenerate)
