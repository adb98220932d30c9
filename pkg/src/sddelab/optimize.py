"""Limited-memory BFGS with Armijo backtracking."""
from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerSettings:
    """Knobs for the path-space minimization.

    ``horizon_grid`` holds candidate horizons as multiples of the delay;
    ``None`` means the geometric default ``tau * 2**k`` from 1 to 32.
    """

    max_iterations: int = 5000
    gradient_tolerance: float = 1e-6
    memory: int = 20
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    horizon_grid: tuple = None
    restarts: int = 2
    restart_amplitude: float = 0.1
    phase_stride: int = 1
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.max_iterations < 1 or self.memory < 1 or self.restarts < 0:
            raise ValueError("max_iterations and memory must be positive, restarts nonnegative")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")
        if not 0 < self.sufficient_decrease < 1:
            raise ValueError("sufficient_decrease must lie in (0, 1)")

    def horizons(self, tau):
        if self.horizon_grid is None:
            return [tau * 2.0 ** k for k in range(6)]
        return [float(t) * tau for t in self.horizon_grid]


@dataclass
class LBFGSResult:
    x: np.ndarray
    fun: float
    criterion: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


def lbfgs(fun, x0, settings, max_backtracks=60):
    """Minimize ``fun(x) -> (value, gradient, criterion)``.

    ``criterion`` is the stopping measure (a gradient sup-norm, possibly in
    other coordinates than ``x``); the run stops once it is at most
    ``settings.gradient_tolerance``.  Every accepted step satisfies the Armijo
    condition, so the returned value never exceeds ``fun(x0)``.
    """
    x = np.array(x0, dtype=float)
    f, g, crit = fun(x)
    s_hist, y_hist = deque(maxlen=settings.memory), deque(maxlen=settings.memory)
    history = [f]
    it = 0
    while crit > settings.gradient_tolerance and it < settings.max_iterations:
        it += 1
        q = g.copy()
        alphas = []
        for s, y in reversed(list(zip(s_hist, y_hist))):
            rho = 1.0 / (y @ s)
            a = rho * (s @ q)
            q -= a * y
            alphas.append((rho, a))
        if s_hist:
            s, y = s_hist[-1], y_hist[-1]
            q *= (s @ y) / (y @ y)
        else:
            q *= 1.0 / max(1.0, np.max(np.abs(g)))
        for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
            q += s * (a - rho * (y @ q))
        p = -q
        slope = g @ p
        if not slope < 0:
            s_hist.clear()
            y_hist.clear()
            p = -g / max(1.0, np.max(np.abs(g)))
            slope = g @ p
        step = 1.0
        for _ in range(max_backtracks):
            x_new = x + step * p
            f_new, g_new, crit_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + settings.sufficient_decrease * step * slope:
                break
            step *= settings.shrink
        else:
            if s_hist:
                s_hist.clear()
                y_hist.clear()
                continue
            break
        s_vec, y_vec = x_new - x, g_new - g
        if s_vec @ y_vec > 1e-16 * np.sqrt((s_vec @ s_vec) * (y_vec @ y_vec)):
            s_hist.append(s_vec)
            y_hist.append(y_vec)
        x, f, g, crit = x_new, f_new, g_new, crit_new
        history.append(f)
    return LBFGSResult(x, f, crit, it, crit <= settings.gradient_tolerance, history)
