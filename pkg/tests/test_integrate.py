import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from oracles import linear_method_of_steps
from sddelab.errors import BlowUpError, GridError
from sddelab.integrate import (Control, DomainSpec, OrbitSettings, check_uniform_attraction,
                               detect_periodic_orbit, first_exit, first_exit_batch,
                               girsanov_log_weight, simulate_controlled_sdde, simulate_sdde,
                               solve_controlled, solve_dde)
from sddelab.models import (LinearDelayParams, build_linear_model, build_negative_feedback_model,
                            critical_delay, linear_delay_model)
from sddelab.segments import GridSpec, HistorySegment, Orbit, distance_to_orbit, segment_at

BROWNIAN = linear_delay_model(0.0, 0.0, 1.0)
LINEAR = build_linear_model(LinearDelayParams(0.0, 1.0), 1.0)


def test_zero_drift_keeps_last_value():
    g = GridSpec(1.0, 0.125, 3.0)
    phi = HistorySegment.from_function(g, lambda u: np.sin(3 * u))
    path = solve_dde(BROWNIAN, phi, g)
    assert np.array_equal(path.values[: g.n_tau + 1], phi.values)
    assert np.all(path.values[g.n_tau:] == phi.now)


def test_zero_history_is_an_equilibrium():
    g = GridSpec(1.0, 0.125, 5.0)
    path = solve_dde(LINEAR, HistorySegment.constant(g, 0.0), g)
    assert np.all(path.values == 0.0)


def test_linear_first_interval():
    g = GridSpec(1.0, 1 / 64, 1.0)
    path = solve_dde(LINEAR, HistorySegment.constant(g, 1.0), g)
    t = path.times()[g.n_tau:]
    # constant history: the first interval is exact for Euler
    assert np.allclose(path.values[g.n_tau:, 0], 1 - t, atol=1e-13)


def test_solve_dde_is_first_order():
    errs = []
    for h in (1 / 32, 1 / 64, 1 / 128):
        g = GridSpec(1.0, h, 2.0)
        path = solve_dde(LINEAR, HistorySegment.constant(g, 1.0), g)
        t = path.times()[g.n_tau:]
        exact = linear_method_of_steps(1.0, 1.0, 1.0, t)
        errs.append(np.max(np.abs(path.values[g.n_tau:, 0] - exact)))
    for e0, e1 in zip(errs, errs[1:]):
        assert 1.7 <= e0 / e1 <= 2.3


def test_blow_up_has_time_stamp():
    m = linear_delay_model(-800.0, 0.0)
    g = GridSpec(1.0, 0.5, 200.0)
    with pytest.raises(BlowUpError) as info:
        solve_dde(m, HistorySegment.constant(g, 1.0), g)
    assert info.value.time > 0


def test_segment_grid_mismatch():
    g = GridSpec(1.0, 0.25, 1.0)
    phi = HistorySegment.constant(GridSpec(1.0, 0.5), 0.0)
    with pytest.raises(GridError):
        solve_dde(LINEAR, phi, g)


def test_controlled_skeleton_examples():
    g = GridSpec(1.0, 0.125, 2.0)
    phi = HistorySegment.constant(g, 0.3)
    a = solve_controlled(LINEAR, phi, Control.zeros(g), g)
    assert np.array_equal(a.values, solve_dde(LINEAR, phi, g).values)
    ramp = solve_controlled(BROWNIAN, HistorySegment.constant(g, 0.0), Control.constant(g, 1.0), g)
    assert np.allclose(ramp.values[g.n_tau:, 0], ramp.times()[g.n_tau:], atol=1e-13)
    with pytest.raises(GridError):
        solve_controlled(LINEAR, phi, Control.zeros(g.with_horizon(1.0)), g)


def test_control_norm_bound():
    g = GridSpec(1.0, 0.25, 1.0)
    c = Control.constant(g, 2.0)
    assert c.sq_norm() == pytest.approx(4.0)
    with pytest.raises(ValueError):
        Control(g, np.full(4, 2.0), norm_bound=3.9)
    assert Control(g, np.full(4, 2.0), norm_bound=4.0).fit(2.0).sq_norm() == pytest.approx(4.0)


def test_sdde_without_noise_is_bitwise_dde():
    g = GridSpec(1.0, 1 / 32, 10.0)
    phi = HistorySegment.from_function(g, lambda u: 0.5 + u)
    for model in (LINEAR, build_negative_feedback_model(tau=1.0)):
        assert np.array_equal(simulate_sdde(model, phi, 0.0, g, 3).values,
                              solve_dde(model, phi, g).values)


def test_blocked_integration_matches_stepwise_loop():
    m = build_negative_feedback_model(tau=1.0, sigma0=0.7)
    g = GridSpec(1.0, 1 / 16, 6.0)
    phi = HistorySegment.constant(g, 0.4)
    eps = 0.3
    path = simulate_sdde(m, phi, eps, g, 11, trial=5)
    from sddelab.rng import trial_generator
    xi = trial_generator(11, 5).standard_normal((g.n_steps, 1))
    x = list(phi.values[:, 0])
    N, h = g.n_tau, g.step
    for k in range(g.n_steps):
        w = np.array(x[k: k + N + 1])[:, None]
        x.append(x[-1] + h * m.drift(w, g)[0] + (np.sqrt(eps) * np.sqrt(h)) * (0.7 * xi[k, 0]))
    assert np.array_equal(path.values[:, 0], np.array(x))


def test_brownian_terminal_variance():
    g = GridSpec(0.25, 0.05, 2.0)
    phi = HistorySegment.constant(g, 0.0)
    eps = 0.3
    ends = np.array([simulate_sdde(BROWNIAN, phi, eps, g, 2024, trial=i).values[-1, 0]
                     for i in range(10_000)])
    assert np.var(ends, ddof=1) == pytest.approx(eps * 2.0, rel=0.05)


def test_simulation_is_reproducible():
    g = GridSpec(1.0, 1 / 16, 4.0)
    phi = HistorySegment.constant(g, 0.1)
    a = simulate_sdde(LINEAR, phi, 0.2, g, 99, trial=3)
    b = simulate_sdde(LINEAR, phi, 0.2, g, 99, trial=3)
    c = simulate_sdde(LINEAR, phi, 0.2, g, 99, trial=4)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_zero_tilt_matches_plain_simulation():
    g = GridSpec(1.0, 1 / 16, 4.0)
    phi = HistorySegment.constant(g, 0.1)
    path, logw = simulate_controlled_sdde(LINEAR, phi, 0.2, Control.zeros(g), g, 5, trial=2)
    assert logw == 0.0
    assert np.array_equal(path.values, simulate_sdde(LINEAR, phi, 0.2, g, 5, trial=2).values)


def test_girsanov_weight_has_unit_mean():
    g = GridSpec(0.25, 0.05, 1.0)
    phi = HistorySegment.constant(g, 0.0)
    eps = 1.0
    w = np.exp([simulate_controlled_sdde(BROWNIAN, phi, eps, Control.constant(g, 1.0), g, 17,
                                         trial=i)[1] for i in range(10_000)])
    se = w.std(ddof=1) / np.sqrt(w.size)
    assert abs(w.mean() - 1.0) < 3 * se


def test_girsanov_formula_by_hand():
    v = np.array([[1.0], [-0.5]])
    xi = np.array([[0.2], [0.1], [9.0]])
    h, eps = 0.25, 0.5
    expect = -(1.0 * 0.2 - 0.5 * 0.1) * np.sqrt(h / eps) - (1.0 + 0.25) * h / (2 * eps)
    assert girsanov_log_weight(v, xi, eps, h) == pytest.approx(expect, abs=1e-15)


def test_large_noise_dwarfs_a_fixed_tilt():
    g = GridSpec(1.0, 1 / 16, 2.0)
    phi = HistorySegment.constant(g, 0.0)
    plain = simulate_sdde(LINEAR, phi, 1e6, g, 1).values
    tilted = simulate_controlled_sdde(LINEAR, phi, 1e6, Control.constant(g, 1.0), g, 1)[0].values
    assert np.max(np.abs(tilted - plain)) / np.max(np.abs(plain)) < 1e-2


def _eq_ball(grid, radius):
    return DomainSpec.ball(Orbit.equilibrium(grid, 0.0), radius)


def test_stable_equilibrium_never_exits_without_noise():
    g = GridSpec(1.0, 1 / 16)
    rec = first_exit(LINEAR, HistorySegment.constant(g, 0.1), 0.0, _eq_ball(g, 0.5), 20.0, g, 1)
    assert rec.censored and rec.exit_time == pytest.approx(20.0)
    assert rec.log_weight == 0.0


def test_tiny_ball_exits_at_first_step():
    g = GridSpec(1.0, 1 / 16)
    times, cens, _, _ = first_exit_batch(BROWNIAN, HistorySegment.constant(g, 0.0), 0.5,
                                         _eq_ball(g, 1e-6), 1.0, g, 3, range(200))
    assert not cens.any()
    assert np.mean(times == g.step) > 0.99


def test_start_outside_domain_is_rejected():
    g = GridSpec(1.0, 1 / 16)
    with pytest.raises(ValueError):
        first_exit(LINEAR, HistorySegment.constant(g, 0.6), 0.1, _eq_ball(g, 0.5), 1.0, g, 0)


def test_brownian_mean_exit_time():
    g = GridSpec(1 / 16, 1 / 2048)
    times, cens, _, wins = first_exit_batch(BROWNIAN, HistorySegment.constant(g, 0.0), 1.0,
                                            _eq_ball(g, 1.0), 50.0, g, 8, range(10_000))
    assert not cens.any()
    assert np.mean(times) == pytest.approx(1.0, rel=0.05)
    assert np.all(np.abs(wins[:, -1, 0]) >= 1.0)
    assert np.all(np.abs(wins[:, -2, 0]) < 1.0)


def test_exit_times_are_grid_nodes_and_batch_invariant():
    g = GridSpec(0.5, 1 / 32)
    phi = HistorySegment.constant(g, 0.0)
    dom = _eq_ball(g, 0.5)
    m = build_linear_model(LinearDelayParams(0.0, 1.0), 0.5)
    t_all, *_ = first_exit_batch(m, phi, 0.2, dom, 30.0, g, 4, range(40), block=64)
    t_one = [first_exit(m, phi, 0.2, dom, 30.0, g, 4, trial=i).exit_time for i in (0, 17, 39)]
    assert np.allclose(t_all / g.step, np.round(t_all / g.step))
    assert np.array_equal(t_all[[0, 17, 39]], t_one)
    t_par, *_ = first_exit_batch(m, phi, 0.2, dom, 30.0, g, 4, range(40), workers=3)
    assert np.array_equal(t_par, t_all)


def test_two_exit_batches_share_one_law():
    g = GridSpec(0.5, 1 / 32)
    phi = HistorySegment.constant(g, 0.0)
    dom = _eq_ball(g, 0.5)
    m = build_linear_model(LinearDelayParams(0.0, 1.0), 0.5)
    a = first_exit_batch(m, phi, 0.2, dom, 200.0, g, 1, range(2000))[0]
    b = first_exit_batch(m, phi, 0.2, dom, 200.0, g, 2, range(2000))[0]
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_mixture_weights_reduce_to_single_tilt():
    g = GridSpec(0.5, 1 / 32, 1.0)
    phi = HistorySegment.constant(g, 0.0)
    dom = _eq_ball(g, 0.5)
    m = build_linear_model(LinearDelayParams(0.0, 1.0), 0.5)
    c = Control.constant(g, 0.4)
    single = first_exit_batch(m, phi, 0.2, dom, 1.0, g, 6, range(30), control=c)
    double = first_exit_batch(m, phi, 0.2, dom, 1.0, g, 6, range(30), control=[c, c])
    assert np.array_equal(single[0], double[0])
    assert np.allclose(single[2], double[2], atol=1e-12)
    # the single-tilt weight equals the explicit Girsanov sum up to the exit step
    from sddelab.rng import trial_generator
    for t in (0, 7):
        steps = int(round(single[0][t] / g.step))
        xi = trial_generator(6, t).standard_normal((steps, 1))
        assert single[2][t] == pytest.approx(
            girsanov_log_weight(c.values[:steps], xi, 0.2, g.step), abs=1e-10)


def test_orbit_detection_equilibrium_below_critical_delay():
    tau = 1.0
    assert tau < critical_delay(0.0, 1.0)
    g = GridSpec(tau, 1 / 32)
    orb = detect_periodic_orbit(LINEAR, HistorySegment.constant(g, 0.1),
                                OrbitSettings(transient=50.0, max_time=400.0,
                                              amplitude_tolerance=1e-8))
    assert orb.is_equilibrium
    assert abs(orb.center[0]) < 1e-8


@pytest.fixture(scope="module")
def sops():
    m = build_negative_feedback_model(tau=3.0, sigma0=0.0)
    g = GridSpec(3.0, 0.01)
    return m, g, detect_periodic_orbit(m, HistorySegment.constant(g, 1.0),
                                       OrbitSettings(transient=100.0, max_time=1000.0))


def test_sops_orbit(sops):
    m, g, orb = sops
    assert not orb.is_equilibrium
    assert orb.period > 2 * g.tau
    assert orb.slowly_oscillating
    K = orb.n_segments
    path = solve_dde(m, orb.segment(0), g.with_steps(K))
    assert distance_to_orbit(segment_at(path, K * g.step), orb) < 1e-3
    assert np.max(np.abs(path.values[-(g.n_tau + 1):] - orb.segment(0).values)) < 1e-3


def test_sops_attracts_perturbations(sops):
    m, g, orb = sops
    phi = HistorySegment(g, orb.segment(0).values + 0.1)
    rep = check_uniform_attraction(m, DomainSpec.ball(orb, 0.5), orb, 0.01, 200.0, 1, 0,
                                   probes=[phi], stride=25)
    assert rep.success and rep.final_distance < 0.01


def test_attraction_below_and_above_critical_delay():
    g_ok = GridSpec(1.0, 1 / 32)
    ok = check_uniform_attraction(LINEAR, _eq_ball(g_ok, 1.0), Orbit.equilibrium(g_ok, 0.0),
                                  0.05, 40.0, 32, 1)
    assert ok.success and ok.t_delta is not None and ok.max_distance_after <= 0.05
    g_bad = GridSpec(2.0, 1 / 32)
    bad = check_uniform_attraction(LINEAR, _eq_ball(g_bad, 1.0), Orbit.equilibrium(g_bad, 0.0),
                                   0.05, 40.0, 32, 1)
    assert not bad.success and bad.t_delta is None


def test_orbit_point_stays_on_orbit():
    g = GridSpec(1.0, 1 / 32)
    eq = Orbit.equilibrium(g, 0.0)
    rep = check_uniform_attraction(LINEAR, _eq_ball(g, 1.0), eq, 1e-12, 10.0, 1, 0,
                                   probes=[eq.segment(0)])
    assert rep.success and rep.t_delta == 0.0 and rep.max_distance_after == 0.0


def test_attraction_needs_probes():
    g = GridSpec(1.0, 1 / 32)
    with pytest.raises(ValueError):
        check_uniform_attraction(LINEAR, _eq_ball(g, 1.0), Orbit.equilibrium(g, 0.0),
                                 0.05, 10.0, 0, 1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.01, 0.5))
def test_closeness_bound_for_small_controls(seed, size):
    """Sampled sup distance to the free solution obeys the growth bound at every grid time."""
    m = build_linear_model(LinearDelayParams(0.5, 1.0), 1.0)
    g = GridSpec(1.0, 1 / 16, 3.0)
    phi = HistorySegment.constant(g, 0.2)
    u = size * np.random.default_rng(seed).normal(size=(g.n_steps, 1))
    x = solve_controlled(m, phi, Control(g, u), g).values[:, 0]
    free = solve_dde(m, phi, g).values[:, 0]
    N, h = g.n_tau, g.step
    for k in range(1, g.n_steps + 1):
        t = k * h
        action = 0.5 * np.sum(u[:k] ** 2) * h
        gap = np.max(np.abs(x[: N + k + 1] - free[: N + k + 1])) ** 2
        xnorm = np.max(np.abs(x[: N + k + 1])) ** 2
        assert gap <= 4 * action * m.kappa2 * (1 + xnorm) * t * np.exp(2 * m.kappa1 * t * t)
