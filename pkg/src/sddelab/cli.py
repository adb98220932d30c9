"""
Command line entry point
========================

::

    sddelab <command> --config <path> [--out <dir>] [--seed <u64>] [--threads <n>]

Commands: ``stability``, ``orbit``, ``action``, ``quasipotential``, ``sweep``
and ``full`` (all of the above in sequence).  The thread count defaults to
the ``SDDELAB_THREADS`` environment variable, then 1.
"""
import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .action import path_action, recover_control
from .artifacts import (provenance_line, read_path_csv, write_csv, write_path_csv,
                        write_svg)
from .config import COMMANDS, load_config
from .errors import ConfigError, SDDELabError
from .exitlab import epsilon_sweep, importance_sampled_exit_prob
from .expressions import FUNCTIONS, _Compiled, build_expression_model
from .integrate import DomainSpec, OrbitSettings, detect_periodic_orbit
from .models import (LinearDelayParams, build_linear_model, build_negative_feedback_model,
                     critical_delay, neg_tanh, rightmost_root)
from .optimize import OptimizerSettings
from .quasipotential import BoundaryHit, boundary_minimizers, exit_thresholds
from .segments import GridSpec, HistorySegment, Orbit

THREADS_ENV = "SDDELAB_THREADS"


class PipelineError(SDDELabError):
    """An error raised inside one pipeline stage, tagged with the stage name."""


class Pipeline:
    """State shared by the command implementations for one invocation."""

    def __init__(self, cfg, out, seed, threads):
        self.cfg, self.out, self.seed, self.threads = cfg, Path(out), int(seed), int(threads)
        self.stage = "config"
        self.files = []
        self._orbit = self._thresholds = None
        self._qp = None
        self.model, self.tau = self._model()
        step = cfg.get("grid", "step", kind=float, required=True)
        try:
            self.grid = GridSpec(self.tau, step)
        except ValueError as exc:
            cfg.fail("grid", "step", str(exc))
        formats = cfg.get("output", "formats", ["csv", "svg"])
        self.svg = "svg" in formats

    # -- construction -----------------------------------------------------

    def _model(self):
        cfg = self.cfg
        kind = cfg.get("model", "kind", kind=str, required=True)
        tau = cfg.get("model", "tau", kind=float, required=True)
        if not tau > 0:
            cfg.fail("model", "tau", "tau must be positive")
        sigma0 = cfg.get("model", "sigma0", 1.0, kind=float)
        try:
            if kind == "linear":
                params = LinearDelayParams(cfg.get("model", "A", 0.0, kind=float),
                                           cfg.get("model", "B", required=True, kind=float), sigma0)
                return build_linear_model(params, tau), tau
            if kind == "negative_feedback":
                src = cfg.get("model", "shape", None, kind=str)
                if src is None:
                    shape = neg_tanh
                else:
                    params = dict(cfg.get("model", "params", {}))
                    expr = _Compiled(src, {**params, "r": None})

                    def shape(r, _e=expr, _p=params):
                        env = dict(FUNCTIONS, **_p, r=r)
                        env.update({"pi": np.pi, "e": np.e})
                        return np.asarray(_e(env), dtype=float) + 0 * r
                return build_negative_feedback_model(shape, tau, sigma0), tau
            if kind == "expression":
                drift = cfg.get("model", "drift", required=True)
                return build_expression_model(
                    drift, cfg.get("model", "diffusion", "1.0"),
                    params=cfg.get("model", "params", {}),
                    kappa1=cfg.get("model", "kappa1", kind=float, required=True),
                    kappa2=cfg.get("model", "kappa2", kind=float, required=True),
                    ellipticity_c=cfg.get("model", "ellipticity_c", None, kind=float),
                    name=cfg.get("model", "name", "expression", kind=str)), tau
        except ConfigError:
            raise
        except ValueError as exc:
            cfg.fail("model", "kind", str(exc))
        cfg.fail("model", "kind", f"unknown model kind {kind!r}")

    def settings(self):
        cfg, q = self.cfg, "quasipotential"
        horizons = cfg.floats("grid", "horizons", None)
        try:
            return OptimizerSettings(
                max_iterations=cfg.get(q, "max_iterations", 5000, kind=int),
                gradient_tolerance=cfg.get(q, "gradient_tolerance", 1e-6, kind=float),
                memory=cfg.get(q, "memory", 20, kind=int),
                shrink=cfg.get(q, "shrink", 0.5, kind=float),
                sufficient_decrease=cfg.get(q, "sufficient_decrease", 1e-4, kind=float),
                horizon_grid=tuple(horizons) if horizons else None,
                restarts=cfg.get(q, "restarts", 2, kind=int),
                restart_amplitude=cfg.get(q, "restart_amplitude", 0.1, kind=float),
                phase_stride=cfg.get(q, "phase_stride", 1, kind=int),
                seed=self.seed, workers=self.threads)
        except ValueError as exc:
            raise ConfigError(f"[quasipotential] {exc}") from None

    def comment(self, command):
        return provenance_line(command, self.cfg.digest, self.seed)

    def path(self, name):
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        self.files.append(p)
        return p

    # -- shared pipeline pieces -------------------------------------------

    def detect_orbit(self):
        cfg = self.cfg
        init = cfg.get("orbit", "initial", 1.0)
        values = np.atleast_1d(np.asarray(init, dtype=float))
        phi = HistorySegment.constant(self.grid, values)
        settings = OrbitSettings(
            transient=cfg.get("orbit", "transient", 100.0, kind=float),
            max_time=cfg.get("orbit", "max_time", 2000.0, kind=float),
            tolerance=cfg.get("orbit", "tolerance", 1e-6, kind=float),
            amplitude_tolerance=cfg.get("orbit", "amplitude_tolerance", 1e-8, kind=float),
            level=cfg.get("orbit", "level", 0.0, kind=float))
        return detect_periodic_orbit(self.model, phi, settings)

    def orbit(self):
        if self._orbit is None:
            kind = self.cfg.get("domain", "kind", "equilibrium", kind=str)
            if kind == "equilibrium":
                center = self.cfg.get("domain", "center", [0.0] * self.model.dim_state)
                center = np.atleast_1d(np.asarray(center, dtype=float))
                if center.shape != (self.model.dim_state,):
                    self.cfg.fail("domain", "center", "center has the wrong dimension")
                self._orbit = Orbit.equilibrium(self.grid, center)
            elif kind == "orbit":
                self.stage = "orbit"
                self._orbit = self.detect_orbit()
                if self._orbit.is_equilibrium:
                    raise PipelineError("orbit: detected an equilibrium but domain kind is 'orbit'")
            else:
                self.cfg.fail("domain", "kind", f"unknown domain kind {kind!r}")
        return self._orbit

    def domain(self):
        radius = self.cfg.get("domain", "radius", kind=float, required=True)
        try:
            return DomainSpec.ball(self.orbit(), radius)
        except ValueError as exc:
            self.cfg.fail("domain", "radius", str(exc))

    def thresholds(self):
        if self._thresholds is None:
            given = self.cfg.floats("sweep", "thresholds", None)
            if given is not None and self._qp is None:
                if len(given) != 2:
                    self.cfg.fail("sweep", "thresholds", "thresholds = [V_lower, V_bar]")
                self._thresholds = (given[0], given[1])
            else:
                up, lo = self.quasipotential_results()
                self._thresholds = (lo.value, up.value)
        return self._thresholds

    def quasipotential_results(self):
        if self._qp is None:
            domain = self.domain()
            self.stage = "quasipotential"
            etas = self.cfg.floats("quasipotential", "eta_sequence",
                                   [0.1 * domain.radius, 0.05 * domain.radius,
                                    0.02 * domain.radius])
            tol = self.cfg.get("quasipotential", "threshold_tolerance", 1e-3, kind=float)
            self._qp = exit_thresholds(self.model, self.orbit(), domain, etas, self.settings(),
                                       tolerance=tol)
        return self._qp

    # -- commands ---------------------------------------------------------

    def cmd_stability(self):
        self.stage = "stability"
        cfg = self.cfg
        if cfg.get("model", "kind") != "linear":
            cfg.fail("model", "kind", "stability analysis needs the linear model")
        A = cfg.get("model", "A", 0.0, kind=float)
        B = cfg.get("model", "B", kind=float)
        tau0 = critical_delay(A, B)
        taus = cfg.floats("stability", "taus", None)
        if taus is None:
            lo = cfg.get("stability", "tau_min", 0.5 * tau0, kind=float)
            hi = cfg.get("stability", "tau_max", 1.5 * tau0, kind=float)
            count = cfg.get("stability", "count", 11, kind=int)
            taus = list(np.linspace(lo, hi, count))
        rows = []
        for t in taus:
            lam = rightmost_root(A, B, t)
            rows.append([t, lam.real, lam.imag, tau0, bool(lam.real < 0)])
        write_csv(self.path("stability.csv"), self.comment("stability"),
                  ["tau", "rightmost_real", "rightmost_imag", "tau0", "stable"], rows)

    def cmd_orbit(self):
        self.stage = "orbit"
        orbit = self.orbit() if self.cfg.get("domain", "kind") == "orbit" else self.detect_orbit()
        N, h = self.grid.n_tau, self.grid.step
        t = (np.arange(orbit.samples.shape[0]) - N) * h
        sops = "" if orbit.slowly_oscillating is None else orbit.slowly_oscillating
        rows = [[ti, orbit.period, orbit.is_equilibrium, sops, *xi]
                for ti, xi in zip(t, orbit.samples)]
        header = ["t", "period", "is_equilibrium", "slowly_oscillating"] + \
            [f"x{i}" for i in range(orbit.dim)]
        write_csv(self.path("orbit.csv"), self.comment("orbit"), header, rows)

    def _action_table(self, path, command="action"):
        rep = path_action(self.model, path)
        t = path.grid.times()[path.grid.n_tau: -1]
        cum = np.cumsum(rep.per_step)
        rows = [[k, tk, c, s, *u] for k, (tk, c, s, u) in
                enumerate(zip(t, rep.per_step, cum, rep.control.values))]
        header = ["k", "t", "contribution", "cumulative"] + \
            [f"u{i}" for i in range(rep.control.dim)]
        write_csv(self.path("action.csv"), self.comment(command), header, rows)
        return rep

    def cmd_action(self, path=None):
        self.stage = "action"
        if path is None:
            src = Path(self.cfg.get("action", "path", kind=str, required=True))
            if not src.is_absolute() and self.cfg.path is not None:
                src = self.cfg.path.parent / src
            path = read_path_csv(src, self.grid)
        return self._action_table(path)

    def cmd_quasipotential(self):
        up, lo = self.quasipotential_results()
        self.stage = "quasipotential"
        rows = []
        for label, est in (("upper", up), ("lower", lo)):
            for eta in sorted(est.results, reverse=True):
                res = est.results[eta]
                dg = res.diagnostics
                for T in sorted(res.per_horizon):
                    rows.append([label, eta, est.radii[eta], T, res.per_horizon[T],
                                 T == res.horizon, dg["iterations"], dg["gradient_norm"],
                                 dg["restart_dispersion"], est.monotone])
            rows.append([label, 0.0, self.domain().radius, "", est.value, True, "", "", "",
                         est.monotone])
        header = ["threshold", "eta", "radius", "horizon", "value", "selected", "iterations",
                  "gradient_norm", "restart_dispersion", "monotone"]
        write_csv(self.path("quasipotential.csv"), self.comment("quasipotential"), header, rows)
        best = up.best
        write_path_csv(self.path("minimizing_path.csv"), self.comment("quasipotential"), best.path)
        return best.path

    def cmd_sweep(self):
        cfg = self.cfg
        domain = self.domain()
        v_lo, v_bar = self.thresholds()
        self.stage = "sweep"
        eps = cfg.floats("sweep", "epsilons", required=True)
        trials = cfg.get("sweep", "trials", required=True, kind=int)
        alpha = cfg.get("sweep", "alpha", 0.3 * v_bar, kind=float)
        fixed = cfg.get("sweep", "t_max", None, kind=float)
        factor = cfg.get("sweep", "t_max_factor", 2.0, kind=float)

        def t_max(e):
            return fixed if fixed is not None else factor * np.exp((v_bar + alpha) / e)

        phi = self._initial(domain)
        table = epsilon_sweep(self.model, phi, domain, eps, trials, t_max, self.grid, self.seed,
                              (v_lo, v_bar), alpha=alpha, workers=self.threads)
        header = ["epsilon", "trials", "censored_fraction", "mean_exit", "mean_ci_low",
                  "mean_ci_high", "eps_log_mean", "window_hits", "t_max", "V_lower", "V_bar",
                  "status"]
        rows, by_eps = [], {r.epsilon: r for r in table.rows}
        for e in eps:
            r = by_eps.get(e)
            if r is None:
                rows.append([e, trials, "", "", "", "", "", "", t_max(e), v_lo, v_bar, "unusable"])
            else:
                rows.append([r.epsilon, r.trials, r.censored_fraction, r.mean_exit,
                             r.mean_ci_low, r.mean_ci_high, r.eps_log_mean, r.window_hits,
                             t_max(e), v_lo, v_bar, "ok"])
        write_csv(self.path("sweep.csv"), self.comment("sweep"), header, rows)
        if self.svg:
            x = table.column("epsilon")
            ends = np.array([min(eps), max(eps)])
            write_svg(self.path("sweep.svg"),
                      {"eps log E[rho]": (x, table.column("eps_log_mean")),
                       "V_bar": (ends, [v_bar, v_bar]),
                       "V_lower": (ends, [v_lo, v_lo])},
                      "epsilon", "eps log E[rho]", "Exit-time scaling",
                      comment=self.comment("sweep"))
        return table

    def _initial(self, domain):
        init = self.cfg.get("sweep", "initial", None)
        if init is None:
            return domain.center.segment(0)
        return HistorySegment.constant(self.grid, np.atleast_1d(np.asarray(init, dtype=float)))

    def cmd_importance(self):
        domain = self.domain()
        self.stage = "importance"
        cfg = self.cfg
        eps = cfg.get("importance", "epsilon", required=True, kind=float)
        horizon = cfg.get("importance", "horizon", required=True, kind=float)
        trials = cfg.get("importance", "trials", 10000, kind=int)
        center = domain.center.center if domain.kind == "equilibrium" else None
        mins = boundary_minimizers(self.model, domain.center, BoundaryHit(domain.radius, center),
                                   horizon, self.grid, self.settings())
        if not mins:
            raise PipelineError("importance: no converged tilt")
        tilts = [recover_control(self.model, m.path) for m in mins]
        rep = importance_sampled_exit_prob(self.model, self._initial(domain), eps, domain,
                                           horizon, tilts, trials, self.seed, self.threads)
        header = ["epsilon", "horizon", "trials", "plain_estimate", "plain_variance",
                  "tilted_estimate", "tilted_variance", "variance_ratio", "degenerate_tilt"]
        write_csv(self.path("importance.csv"), self.comment("importance"), header,
                  [[eps, horizon, rep.trials, rep.plain_estimate, rep.plain_variance,
                    rep.tilted_estimate, rep.tilted_variance, rep.variance_ratio,
                    rep.degenerate_tilt]])
        return rep

    def cmd_full(self):
        if self.cfg.get("model", "kind") == "linear" and self.cfg.has("stability"):
            self.cmd_stability()
        if self.cfg.has("orbit") or self.cfg.get("domain", "kind") == "orbit":
            self.cmd_orbit()
        path = self.cmd_quasipotential()
        self.cmd_action(path)
        self.cmd_sweep()
        if self.cfg.has("importance"):
            self.cmd_importance()

    def run(self, command):
        self.cfg.require(command)
        getattr(self, f"cmd_{command}")()
        return self.files


def _threads(value):
    if value is None:
        value = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"thread count must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigError("thread count must be at least 1")
    return n


def run(command, config_path, out=None, seed=None, threads=None):
    """Execute ``command`` with the config at ``config_path``; returns the written files."""
    cfg = load_config(config_path)
    cfg.require(command)
    if seed is None:
        seed = cfg.get("sweep", "seed", 0, kind=int)
    if seed < 0 or seed >= 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if out is None:
        out = cfg.get("output", "directory", "sddelab-out", kind=str)
        if cfg.path is not None and not Path(out).is_absolute():
            out = cfg.path.parent / out
    pipe = Pipeline(cfg, out, seed, _threads(threads))
    try:
        return pipe.run(command)
    except (ConfigError, PipelineError):
        raise
    except (SDDELabError, ValueError, ArithmeticError) as exc:
        raise PipelineError(f"{pipe.stage}: {exc}") from exc


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sddelab", description="Small-noise delay equations: actions, quasipotentials "
                                    "and exit-time experiments.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="TOML experiment config")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="master seed (u64)")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${THREADS_ENV} or 1)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        files = run(args.command, args.config, args.out, args.seed, args.threads)
    except ConfigError as exc:
        print(f"sddelab: config error: {exc}", file=sys.stderr)
        return 2
    except SDDELabError as exc:
        print(f"sddelab: error: {exc}", file=sys.stderr)
        return 1
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
