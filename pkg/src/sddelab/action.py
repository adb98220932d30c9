"""
Discretized action functional
=============================

For a sampled path with ``m = d`` and uniformly elliptic diffusion the action
is evaluated in explicit form,

    I_T(x) = sum_k  Lambda(x_{t_k}, (x_{k+1} - x_k) / h) * h,
    Lambda(phi, nu) = 1/2 (b(phi) - nu)' a(phi)^{-1} (b(phi) - nu),

i.e. forward differences with a left-endpoint rule, the same discretization
as the Euler scheme.  ``a^{-1}`` is never formed; each step solves
``a w = b - nu`` instead.
"""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import EllipticityError, GridError
from .integrate import Control


@dataclass
class ActionReport:
    value: float
    per_step: np.ndarray
    control: Control


def _require_square(model):
    if not model.is_square:
        raise ValueError("explicit action needs dim_noise == dim_state")


def _windows(values, N, n):
    return np.moveaxis(sliding_window_view(values[: N + n], N + 1, axis=0), -1, 1)


def _sigma(model, win, grid):
    if model.constant_sigma is not None:
        return np.broadcast_to(model.constant_sigma, win.shape[:-2] + model.constant_sigma.shape)
    return model.diffusion(win, grid)


def _solve(mat, rhs):
    try:
        out = np.linalg.solve(mat, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        raise EllipticityError("diffusion matrix is singular") from None
    if not np.all(np.isfinite(out)):
        raise EllipticityError("diffusion matrix is singular")
    return out


def _local_terms(model, values, grid):
    """Per-step pieces shared by the action, control recovery and gradient."""
    N, n, h = grid.n_tau, grid.n_steps, grid.step
    win = _windows(values, N, n)
    b = model.drift(win, grid)
    vel = (values[N + 1:] - values[N:-1]) / h
    s = _sigma(model, win, grid)
    a = np.einsum("kdm,kem->kde", s, s)
    r = b - vel
    w = _solve(a, r)
    lam = 0.5 * np.einsum("kd,kd->k", r, w)
    return win, b, vel, s, r, w, lam


def local_rate(model, seg, nu):
    """``Lambda(phi, nu)`` for one segment and velocity."""
    _require_square(model)
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    r = model.b(seg) - nu
    w = _solve(model.a(seg)[None], r[None])[0]
    return float(0.5 * r @ w)


def path_action(model, path):
    """Discrete action of ``path`` with per-step contributions and recovered control."""
    _require_square(model)
    grid = path.grid
    if grid.n_steps == 0:
        return ActionReport(0.0, np.zeros(0), Control(grid, np.zeros((0, model.dim_noise))))
    win, b, vel, s, r, w, lam = _local_terms(model, np.asarray(path.values), grid)
    per_step = lam * grid.step
    u = _solve(s, vel - b)
    return ActionReport(float(np.sum(per_step)), per_step, Control(grid, u))


def recover_control(model, path):
    """Control ``u_k`` solving ``sigma(x_{t_k}) u_k = xdot_k - b(x_{t_k})``."""
    return path_action(model, path).control


def _fd_jacobian(fn, win, grid, nodes):
    """One-sided finite differences of ``fn`` w.r.t. the samples at ``nodes``."""
    base = fn(win, grid)
    jac = np.zeros(base.shape + (grid.n_tau + 1, win.shape[-1]))
    work = np.array(win, dtype=float)
    for i in nodes:
        for c in range(win.shape[-1]):
            orig = work[:, i, c].copy()
            step = 1e-7 * (1.0 + np.abs(orig))
            work[:, i, c] = orig + step
            pert = fn(work, grid)
            work[:, i, c] = orig
            jac[..., i, c] = (pert - base) / step.reshape((-1,) + (1,) * (base.ndim - 1))
    return jac


def _value_and_gradient(model, values, grid):
    """Action and its exact gradient with respect to every node value."""
    N, n, h = grid.n_tau, grid.n_steps, grid.step
    values = np.asarray(values, dtype=float)
    grad = np.zeros_like(values)
    if n == 0:
        return 0.0, grad
    win, b, vel, s, r, w, lam = _local_terms(model, values, grid)
    value = float(np.sum(lam * grid.step))
    # velocity terms: d(Lambda h)/d x_{k+1} = -w_k, d/d x_k = +w_k
    grad[N + 1:] -= w
    grad[N:-1] += w
    nodes = model.nodes(grid)
    if model.drift_jacobian is not None:
        jb = model.drift_jacobian(win, grid)
    else:
        jb = _fd_jacobian(model.drift, win, grid, nodes)
    seg_grad = h * np.einsum("kd,kdie->kie", w, jb)
    if model.constant_sigma is None:
        if model.diffusion_jacobian is not None:
            js = model.diffusion_jacobian(win, grid)
        else:
            js = _fd_jacobian(model.diffusion, win, grid, nodes)
        # dLambda/dsigma = -w w' sigma
        dsig = -np.einsum("kd,ke,kem->kdm", w, w, s)
        seg_grad += h * np.einsum("kdm,kdmie->kie", dsig, js)
    for i in nodes:                     # fixed order for reproducibility
        grad[i: i + n] += seg_grad[:, i]
    return value, grad


def action_gradient(model, path, free_mask):
    """Gradient of :func:`path_action` over the nodes selected by ``free_mask``.

    ``free_mask`` is a boolean array over path nodes; nodes of the pinned
    initial segment may not be selected.  Returns shape ``(n_free, d)``.
    """
    _require_square(model)
    mask = np.asarray(free_mask, dtype=bool)
    if mask.shape != (path.grid.n_nodes,):
        raise GridError(f"free_mask needs {path.grid.n_nodes} entries")
    if np.any(mask[: path.grid.n_tau + 1]):
        raise ValueError("free_mask touches the pinned initial segment")
    _, grad = _value_and_gradient(model, path.values, path.grid)
    return grad[mask]


def concat_action_split(model, path, split_time):
    """Actions of ``path`` on ``[-tau, S]`` and of the shifted remainder ``x^S``."""
    k = path.grid.index_of(split_time)
    if not 0 < k < path.grid.n_steps:
        raise GridError(f"split time {split_time} must lie strictly inside (0, T)")
    left = path_action(model, path.restrict(split_time)).value
    right = path_action(model, path.shifted(split_time)).value
    return left, right
