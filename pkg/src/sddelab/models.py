"""
Coefficient models
==================

A :class:`CoefficientModel` bundles the drift ``b`` and diffusion ``sigma``
of a stochastic delay equation together with the constants it declares:

* ``kappa1`` -- Lipschitz constant, ``|b(f)-b(g)|^2 + |s(f)-s(g)|^2 <= kappa1 |f-g|^2``
* ``kappa2`` -- growth constant, ``|b(f)|^2 + |s(f)|^2 <= kappa2 (1 + |f|^2)``
* ``ellipticity_c`` -- lower bound of ``nu' a(f) nu / |nu|^2`` with ``a = s s'``

Coefficients act on *batches of windows*: arrays of shape ``(..., n_tau + 1, d)``
whose node ``0`` is ``phi(-tau)`` and node ``-1`` is ``phi(0)``.  They also get
the :class:`GridSpec` so fixed lags can be turned into node indices.

The module also carries the stability analysis of the scalar linear equation
``x'(t) = -A x(t) - B x(t - tau)``.
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ModelContractError, NumericalFailure
from .segments import HistorySegment


@dataclass(frozen=True, eq=False)
class CoefficientModel:
    """Drift/diffusion pair acting on history segments.

    Parameters
    ----------
    dim_state, dim_noise : int
        ``d`` and ``m``.
    drift : callable ``(windows, grid) -> (..., d)``
    diffusion : callable ``(windows, grid) -> (..., d, m)``
    kappa1, kappa2 : float
        Declared Lipschitz and growth constants.
    ellipticity_c : float or None
        Declared ellipticity bound; ``None`` when there is none (e.g. ``m != d``).
    drift_jacobian, diffusion_jacobian : callable, optional
        Analytic derivatives with respect to window samples, shapes
        ``(..., d, n_tau + 1, d)`` and ``(..., d, m, n_tau + 1, d)``.
        Finite differences are used when absent.
    dependency : callable ``grid -> node indices``, optional
        Window nodes the coefficients actually read; all nodes when absent.
    constant_sigma : ndarray, optional
        Set when the diffusion does not depend on the state.
    """

    dim_state: int
    dim_noise: int
    drift: Callable
    diffusion: Callable
    kappa1: float
    kappa2: float
    ellipticity_c: Optional[float] = None
    drift_jacobian: Optional[Callable] = None
    diffusion_jacobian: Optional[Callable] = None
    dependency: Optional[Callable] = None
    constant_sigma: Optional[np.ndarray] = None
    name: str = "model"

    def b(self, seg):
        """Drift at a single :class:`HistorySegment`."""
        return np.asarray(self.drift(seg.values, seg.grid), dtype=float)

    def sigma(self, seg):
        return np.asarray(self.diffusion(seg.values, seg.grid), dtype=float)

    def a(self, seg):
        s = self.sigma(seg)
        return s @ s.T

    def nodes(self, grid):
        if self.dependency is None:
            return np.arange(grid.n_tau + 1)
        return np.unique(np.asarray(self.dependency(grid), dtype=int) % (grid.n_tau + 1))

    @property
    def is_square(self):
        return self.dim_state == self.dim_noise


def constant_diffusion(sigma, d):
    """Diffusion callable returning the fixed matrix ``sigma`` for every window."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim == 0:
        sigma = sigma * np.eye(d)
    sigma = sigma.reshape(d, -1)

    def diffusion(w, grid):
        return np.broadcast_to(sigma, np.shape(w)[:-2] + sigma.shape)

    return diffusion, sigma


# ---------------------------------------------------------------------------
# linear delay equation


@dataclass(frozen=True)
class LinearDelayParams:
    """Parameters of ``dx = (-A x(t) - B x(t - tau)) dt + sqrt(eps) sigma0 dW``."""

    A: float
    B: float
    sigma0: float = 1.0

    def __post_init__(self):
        if not (self.B > self.A >= 0):
            raise ValueError(f"need B > A >= 0, got A={self.A}, B={self.B}")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")


def linear_delay_model(A, B, sigma0=1.0, name=None):
    """Scalar linear model without the ``B > A`` restriction (e.g. ``B = 0`` for OU)."""
    A, B, sigma0 = float(A), float(B), float(sigma0)

    def drift(w, grid):
        w = np.asarray(w)
        return -A * w[..., -1, :] - B * w[..., 0, :]

    def jac(w, grid):
        w = np.asarray(w)
        out = np.zeros(w.shape[:-2] + (1, grid.n_tau + 1, 1))
        out[..., 0, 0, 0] -= B
        out[..., 0, -1, 0] -= A
        return out

    diffusion, sig = constant_diffusion(sigma0, 1)
    kappa1 = 2.0 * (A * A + B * B)
    return CoefficientModel(
        dim_state=1, dim_noise=1, drift=drift, diffusion=diffusion,
        kappa1=kappa1, kappa2=max(kappa1, sigma0 * sigma0),
        ellipticity_c=sigma0 * sigma0 if sigma0 > 0 else None,
        drift_jacobian=jac, dependency=lambda grid: [0, grid.n_tau],
        constant_sigma=sig, name=name or f"linear(A={A:g},B={B:g})")


def build_linear_model(params, tau):
    """Linear delay model; ``tau`` is checked but the model itself is delay-agnostic."""
    if not isinstance(params, LinearDelayParams):
        params = LinearDelayParams(*params)
    if not tau > 0:
        raise ValueError("tau must be positive")
    return linear_delay_model(params.A, params.B, params.sigma0)


def build_ou_model(rate, sigma0=1.0):
    """Delay-free Ornstein-Uhlenbeck drift ``-rate * x(t)``."""
    return linear_delay_model(rate, 0.0, sigma0, name=f"ou(rate={rate:g})")


# ---------------------------------------------------------------------------
# negative feedback  x'(t) = f(x(t - tau))

_PROBES = np.concatenate([-np.logspace(-6, 3, 200), np.logspace(-6, 3, 200)])


def neg_tanh(r):
    return -np.tanh(r)


def neg_tanh_prime(r):
    return np.tanh(r) ** 2 - 1.0


def build_negative_feedback_model(shape=neg_tanh, tau=1.0, sigma0=1.0, shape_prime=None):
    """Scalar model ``b(phi) = shape(phi(-tau))`` with additive noise ``sigma0``.

    ``shape`` must satisfy ``r * shape(r) < 0`` for ``r != 0``; this is checked on
    a log-spaced probe set and violations raise :class:`ModelContractError`.
    ``kappa1`` and ``kappa2`` are estimated from the same probes (a lower
    estimate of the true suprema).
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    sigma0 = float(sigma0)
    if sigma0 < 0:
        raise ValueError("sigma0 must be nonnegative")
    vals = np.asarray(shape(_PROBES), dtype=float)
    if not np.all(np.isfinite(vals)) or np.any(_PROBES * vals >= 0):
        bad = _PROBES[~(_PROBES * vals < 0)][:3]
        raise ModelContractError(f"feedback shape violates r f(r) < 0 at r = {bad}")
    if shape is neg_tanh and shape_prime is None:
        shape_prime = neg_tanh_prime
    if shape_prime is None:
        def shape_prime(r, _f=shape):
            dr = 1e-6 * (1.0 + np.abs(r))
            return (_f(r + dr) - _f(r - dr)) / (2 * dr)

    dense = np.linspace(-50.0, 50.0, 20001)
    lip = float(np.max(np.abs(shape_prime(dense))) ** 2)
    bound = float(np.max(np.abs(shape(dense))) ** 2)

    def drift(w, grid):
        w = np.asarray(w)
        return shape(w[..., 0, :])

    def jac(w, grid):
        w = np.asarray(w)
        out = np.zeros(w.shape[:-2] + (1, grid.n_tau + 1, 1))
        out[..., 0, 0, 0] = shape_prime(w[..., 0, 0])
        return out

    diffusion, sig = constant_diffusion(sigma0, 1)
    return CoefficientModel(
        dim_state=1, dim_noise=1, drift=drift, diffusion=diffusion,
        kappa1=lip, kappa2=bound + sigma0 ** 2,
        ellipticity_c=sigma0 ** 2 if sigma0 > 0 else None,
        drift_jacobian=jac, dependency=lambda grid: [0],
        constant_sigma=sig, name="negative_feedback")


# ---------------------------------------------------------------------------
# stability of the scalar linear equation


def _check_ab(A, B):
    if not (B > A >= 0):
        raise ValueError(f"need B > A >= 0, got A={A}, B={B}")


def _theta0(A, B):
    """``theta0`` in ``[pi/2, pi)`` with ``cos(theta0) = -A/B``."""
    _check_ab(A, B)
    return float(np.arccos(-A / B))


def critical_delay(A, B):
    """Delay at which the rightmost root of ``lambda + A + B e^{-lambda tau}`` crosses the axis.

    At the crossing ``lambda = i omega`` with ``omega = sqrt(B^2 - A^2)`` and
    ``omega tau0 = theta0``, so ``tau0 = theta0 / sqrt(B^2 - A^2)``.  For
    ``A = 0`` this is ``pi / (2B)``.
    """
    return _theta0(A, B) / np.sqrt((B - A) * (B + A))


def sufficient_stability_delay(A, B):
    """``theta0 / sqrt(A^2 + B^2)``: a delay below which the zero solution is stable.

    Never larger than :func:`critical_delay`, and equal to it only for ``A = 0``.
    """
    return _theta0(A, B) / np.hypot(A, B)


def characteristic_roots(A, B, tau, n_re=24, n_im=48, tol=1e-12, max_iter=100):
    """Roots of ``lambda + A + B exp(-lambda tau) = 0`` in the upper half plane.

    Newton's method is seeded on a coarse grid over
    ``[-(A+B)-1, B+1] x [0, 2 pi / tau + A + B]``; converged roots are
    residual-checked and deduplicated.  Returned sorted by decreasing real part.
    """
    re = np.linspace(-(A + B) - 1.0, B + 1.0, n_re)
    im = np.linspace(0.0, 2 * np.pi / tau + A + B, n_im)
    lam = (re[:, None] + 1j * im[None, :]).ravel()
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(max_iter):
            e = B * np.exp(-lam * tau)
            step = (lam + A + e) / (1.0 - tau * e)
            lam = lam - step
            if np.all(~np.isfinite(step) | (np.abs(step) < tol)):
                break
        resid = np.abs(lam + A + B * np.exp(-lam * tau))
    ok = np.isfinite(lam) & (resid < 1e-10)
    if not np.any(ok):
        raise NumericalFailure(
            "Newton iteration failed from every seed",
            {"A": A, "B": B, "tau": tau, "min_residual": float(np.nanmin(resid))})
    roots = lam[ok]
    roots = roots[np.argsort(-roots.real, kind="stable")]
    unique = []
    for r in roots:
        r = complex(r.real, abs(r.imag))
        if all(abs(r - u) > 1e-8 * max(1.0, abs(u)) for u in unique):
            unique.append(r)
    return np.array(unique)


def rightmost_root(A, B, tau):
    _check_ab(A, B)
    if not tau > 0:
        raise ValueError("tau must be positive")
    return characteristic_roots(A, B, tau)[0]


def rightmost_root_real_part(A, B, tau):
    """Real part of the rightmost characteristic root; negative means stable."""
    return float(rightmost_root(A, B, tau).real)


# ---------------------------------------------------------------------------
# runtime contract checks


@dataclass
class ContractReport:
    lipschitz_quotient: float
    sigma_lipschitz_quotient: float
    kappa1: float
    growth_quotient: float
    kappa2: float
    min_rayleigh: Optional[float]
    ellipticity_c: Optional[float]
    n_pairs: int

    @property
    def lipschitz_ok(self):
        return self.lipschitz_quotient <= self.kappa1 * (1 + 1e-12)

    @property
    def growth_ok(self):
        return self.growth_quotient <= self.kappa2 * (1 + 1e-12)

    @property
    def ellipticity_ok(self):
        if self.ellipticity_c is None:
            return True
        return self.min_rayleigh >= self.ellipticity_c * (1 - 1e-12)

    @property
    def violations(self):
        out = []
        if not self.lipschitz_ok:
            out.append("kappa1")
        if not self.growth_ok:
            out.append("kappa2")
        if not self.ellipticity_ok:
            out.append("ellipticity_c")
        return out

    @property
    def ok(self):
        return not self.violations


def random_probe_pairs(grid, dim, count, scale=1.0, rng=None):
    """Random piecewise-linear segment pairs for :func:`validate_model`."""
    rng = np.random.default_rng(rng)
    u = grid.segment_times()
    knots = np.linspace(-grid.tau, 0.0, 6)
    pairs = []
    for _ in range(count):
        segs = []
        for _ in range(2):
            kv = rng.normal(scale=scale, size=(knots.size, dim))
            vals = np.column_stack([np.interp(u, knots, kv[:, i]) for i in range(dim)])
            segs.append(HistorySegment(grid, vals))
        pairs.append(tuple(segs))
    return pairs


def validate_model(model, probes):
    """Spot-check declared ``kappa1``, ``kappa2`` and ``ellipticity_c`` on probe pairs."""
    probes = list(probes)
    if not probes:
        raise ValueError("need at least one probe pair")
    lip = lip_sigma = growth = 0.0
    rayleigh = np.inf
    d, m = model.dim_state, model.dim_noise
    for phi, psi in probes:
        bp, bq = model.b(phi), model.b(psi)
        sp, sq = model.sigma(phi), model.sigma(psi)
        if bp.shape != (d,) or sp.shape != (d, m):
            raise ModelContractError(f"coefficient shapes {bp.shape}, {sp.shape} do not match ({d},{m})")
        if not (np.all(np.isfinite(bp)) and np.all(np.isfinite(sp))):
            raise ModelContractError("non-finite coefficient values")
        dist2 = np.max(np.sum((phi.values - psi.values) ** 2, axis=1))
        if dist2 > 0:
            ds2 = np.sum((sp - sq) ** 2)
            lip = max(lip, (np.sum((bp - bq) ** 2) + ds2) / dist2)
            lip_sigma = max(lip_sigma, ds2 / dist2)
        for seg, bb, ss in ((phi, bp, sp), (psi, bq, sq)):
            growth = max(growth, (bb @ bb + np.sum(ss ** 2)) / (1.0 + seg.norm() ** 2))
            rayleigh = min(rayleigh, float(np.linalg.eigvalsh(ss @ ss.T)[0]))
    return ContractReport(
        lipschitz_quotient=float(lip), sigma_lipschitz_quotient=float(lip_sigma),
        kappa1=model.kappa1, growth_quotient=float(growth), kappa2=model.kappa2,
        min_rayleigh=float(rayleigh), ellipticity_c=model.ellipticity_c, n_pairs=len(probes))
