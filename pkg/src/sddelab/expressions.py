"""
Expression-defined coefficient models.

Users describe ``b`` and ``sigma`` with a tiny arithmetic vocabulary instead
of loading code:

``x``
    current value ``phi(0)``
``xd``
    delayed value ``phi(-tau)``
``lag(u)``
    ``phi(-u)`` for a numeric constant ``0 <= u <= tau`` on the grid

plus numeric constants, named parameters, ``pi``, ``e``, the operators
``+ - * / **`` and the functions listed in :data:`FUNCTIONS`.  In one
dimension ``x`` is a scalar; for ``d > 1`` components are ``x[0]``, ``x[1]``...

Example::

    drift = ["-0.5 * x - tanh(xd) + 0.1 * lag(0.25)"]
    diffusion = "1.0"
"""
import ast

import numpy as np

from .errors import ConfigError, GridError
from .models import CoefficientModel

FUNCTIONS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan,
    "sinh": np.sinh, "cosh": np.cosh, "tanh": np.tanh,
    "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "abs": np.abs,
    "arctan": np.arctan, "atan": np.arctan,
}
CONSTANTS = {"pi": np.pi, "e": np.e}

_ALLOWED = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
    ast.Constant, ast.Subscript, ast.Index if hasattr(ast, "Index") else ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)


class _Compiled:
    def __init__(self, source, params):
        try:
            tree = ast.parse(str(source).strip(), mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {source!r}: {exc.msg}") from None
        self.source = source
        self.lags = set()
        self.uses_now = self.uses_delayed = False
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED):
                raise ConfigError(f"{type(node).__name__} not allowed in {source!r}")
            if isinstance(node, ast.Call):
                fname = getattr(node.func, "id", None)
                if fname == "lag":
                    if (len(node.args) != 1 or node.keywords
                            or not isinstance(node.args[0], ast.Constant)):
                        raise ConfigError(f"lag() takes one numeric constant in {source!r}")
                    self.lags.add(float(node.args[0].value))
                elif fname not in FUNCTIONS or node.keywords:
                    raise ConfigError(f"unknown function {fname!r} in {source!r}")
            elif isinstance(node, ast.Name):
                if node.id == "x":
                    self.uses_now = True
                elif node.id == "xd":
                    self.uses_delayed = True
                elif node.id not in FUNCTIONS and node.id not in CONSTANTS \
                        and node.id not in params and node.id != "lag":
                    raise ConfigError(f"unknown name {node.id!r} in {source!r}")
            elif isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
                raise ConfigError(f"only numeric constants allowed in {source!r}")
        self.code = compile(tree, "<expression>", "eval")

    def __call__(self, env):
        return eval(self.code, {"__builtins__": {}}, env)


def _lag_index(u, grid):
    if not 0 <= u <= grid.tau * (1 + 1e-12):
        raise GridError(f"lag {u} outside [0, tau]")
    k = u / grid.step
    if abs(k - round(k)) > 1e-9 * max(1.0, k):
        raise GridError(f"lag {u} is not a multiple of step {grid.step}")
    return grid.n_tau - int(round(k))


def build_expression_model(drift, diffusion, dim_noise=None, params=None,
                           kappa1=None, kappa2=None, ellipticity_c=None, name="expression"):
    """Compile drift/diffusion expressions into a :class:`CoefficientModel`.

    ``drift`` is a list of ``d`` expressions.  ``diffusion`` is a scalar
    expression (times the identity) or a ``d x m`` nested list.  The declared
    constants are required; :func:`sddelab.models.validate_model` spot-checks them.
    """
    params = dict(params or {})
    if isinstance(drift, str):
        drift = [drift]
    d = len(drift)
    if kappa1 is None or kappa2 is None:
        raise ConfigError("expression models must declare kappa1 and kappa2")
    drift_c = [_Compiled(s, params) for s in drift]
    if isinstance(diffusion, (list, tuple)):
        rows = [list(r) if isinstance(r, (list, tuple)) else [r] for r in diffusion]
        if len(rows) != d or len({len(r) for r in rows}) != 1:
            raise ConfigError("diffusion must be a d x m table")
        diff_c = [[_Compiled(s, params) for s in r] for r in rows]
        scalar_diff = False
    else:
        diff_c = [[_Compiled(diffusion, params)]]
        scalar_diff = True
    m = d if scalar_diff else len(diff_c[0])
    if dim_noise is not None and dim_noise != m:
        raise ConfigError(f"diffusion has {m} noise columns, dim_noise={dim_noise}")
    every = drift_c + [c for r in diff_c for c in r]
    lags = set().union(*(c.lags for c in every))

    def env(w, grid):
        w = np.asarray(w, dtype=float)
        if d == 1:
            comp = lambda arr: arr[..., 0]
        else:
            comp = lambda arr: np.moveaxis(arr, -1, 0)
        out = dict(FUNCTIONS)
        out.update(CONSTANTS)
        out.update(params)
        out["x"] = comp(w[..., -1, :])
        out["xd"] = comp(w[..., 0, :])
        out["lag"] = lambda u: comp(w[..., _lag_index(u, grid), :])
        return out, w.shape[:-2]

    def drift_fn(w, grid):
        e, batch = env(w, grid)
        return np.stack([np.broadcast_to(np.asarray(c(e), float), batch) for c in drift_c], axis=-1)

    def diffusion_fn(w, grid):
        e, batch = env(w, grid)
        if scalar_diff:
            s = np.broadcast_to(np.asarray(diff_c[0][0](e), float), batch)
            return s[..., None, None] * np.eye(d)
        return np.stack([np.stack([np.broadcast_to(np.asarray(c(e), float), batch) for c in r],
                                  axis=-1) for r in diff_c], axis=-2)

    def dependency(grid):
        nodes = [_lag_index(u, grid) for u in lags]
        if any(c.uses_now for c in every):
            nodes.append(grid.n_tau)
        if any(c.uses_delayed for c in every):
            nodes.append(0)
        return nodes

    const_sigma = None
    if not any(c.uses_now or c.uses_delayed or c.lags for r in diff_c for c in r):
        probe_env = dict(FUNCTIONS, **CONSTANTS, **params)
        if scalar_diff:
            const_sigma = float(diff_c[0][0](probe_env)) * np.eye(d)
        else:
            const_sigma = np.array([[float(c(probe_env)) for c in r] for r in diff_c])

    return CoefficientModel(
        dim_state=d, dim_noise=m, drift=drift_fn, diffusion=diffusion_fn,
        kappa1=float(kappa1), kappa2=float(kappa2),
        ellipticity_c=None if ellipticity_c is None else float(ellipticity_c),
        dependency=dependency, constant_sigma=const_sigma, name=name)
