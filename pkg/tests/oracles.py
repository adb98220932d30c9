"""Reference computations that share no code with the package under test."""
import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate


def linear_method_of_steps(B, tau, phi0, t, intervals=8):
    """Exact solution of ``x' = -B x(t - tau)`` with constant history ``phi0``.

    Built interval by interval with exact polynomial integration.
    """
    pieces = [Polynomial([float(phi0)])]
    start = float(phi0)
    for _ in range(intervals):
        integ = (-B * pieces[-1]).integ()
        p = integ - integ(0.0) + start
        start = float(p(tau))
        pieces.append(p)
    t = np.asarray(t, dtype=float)
    out = np.full(t.shape, float(phi0))
    for k in range(1, intervals + 1):
        sel = (t > (k - 1) * tau) & (t <= k * tau + 1e-15)
        out[sel] = pieces[k](t[sel] - (k - 1) * tau)
    if np.any(t > intervals * tau + 1e-12):
        raise ValueError("not enough intervals for the requested times")
    return out


def euler_impulse_variance(A, B, tau, h, steps=400000):
    """``h * sum G_k^2`` for the Euler impulse response of ``x' = -A x - B x(t - tau)``."""
    N = int(round(tau / h))
    G = np.zeros(steps + N + 1)
    G[N] = 1.0
    for k in range(N, steps + N):
        G[k + 1] = G[k] - h * (A * G[k] + B * G[k - N])
    return h * float(np.sum(G[N:] ** 2))


def stationary_variance(A, B, tau):
    """Stationary variance of ``dx = (-A x - B x(t - tau)) dt + dW`` by spectral quadrature."""
    def density(w):
        z = 1j * w + A + B * np.exp(-1j * w * tau)
        return 1.0 / abs(z) ** 2

    val, _ = integrate.quad(density, 0.0, np.inf, limit=2000)
    return val / np.pi


def stationary_variance_closed(B, tau):
    """Closed form for ``A = 0``: ``(1 + sin(B tau)) / (2 B cos(B tau))``."""
    return (1.0 + np.sin(B * tau)) / (2.0 * B * np.cos(B * tau))


def ou_exit_dp(rate, delta, dt, horizon, cells=800):
    """Minimal discrete action for ``x' = -rate x + u`` from 0 to ``|x| = delta``.

    Forward min-plus dynamic programming on a uniform state mesh of ``[-delta, delta]``
    with move cost ``0.5 * ((x_j - x_i)/dt + rate x_i)^2 dt``.
    """
    x = np.linspace(-delta, delta, 2 * cells + 1)
    cost = 0.5 * ((x[None, :] - x[:, None]) / dt + rate * x[:, None]) ** 2 * dt
    C = np.full(x.size, np.inf)
    C[cells] = 0.0
    best = np.inf
    for _ in range(int(round(horizon / dt))):
        C = np.min(C[:, None] + cost, axis=0)
        best = min(best, C[0], C[-1])
    return float(best)


def laplacian_gradient(values, h):
    """Gradient of ``sum (x_{k+1} - x_k)^2 / (2 h)`` w.r.t. every node (1-D)."""
    v = np.asarray(values, dtype=float)
    g = np.zeros_like(v)
    d = np.diff(v) / h
    g[1:] += d
    g[:-1] -= d
    return g


def brownian_interval_exit_mean(delta, sigma2=1.0):
    """Mean exit time of ``sqrt(sigma2) W`` started at 0 from ``(-delta, delta)``."""
    return delta * delta / sigma2
