"""
Mean exit times and importance sampling
=======================================

As the noise shrinks, ``eps * log E[rho]`` climbs toward the quasipotential
of the ball.  Exit within a short horizon is a rare event at small noise;
tilting the noise along the minimizing control makes it frequent, and the
Girsanov weight corrects the estimate.
"""
# %%
import numpy as np

from sddelab import (BoundaryHit, DomainSpec, GridSpec, LinearDelayParams, OptimizerSettings,
                     Orbit, boundary_minimizers, build_linear_model, epsilon_sweep,
                     importance_sampled_exit_prob, recover_control)

model = build_linear_model(LinearDelayParams(0.0, 1.0), 0.5)
grid = GridSpec(0.5, 1 / 64)
eq = Orbit.equilibrium(grid, 0.0)
ball = DomainSpec.ball(eq, 0.5)
v_bar = v_lower = 0.146975          # thresholds from 03_quasipotential.py

# %%
table = epsilon_sweep(model, eq.segment(0), ball, [0.2, 0.15, 0.1], 2000,
                      lambda e: 2 * np.exp(1.3 * v_bar / e), grid, 1, (v_lower, v_bar))
for row in table.rows:
    print(f"eps = {row.epsilon:4.2f}  E[rho] = {row.mean_exit:8.3f} "
          f"[{row.mean_ci_low:.3f}, {row.mean_ci_high:.3f}]  eps log E[rho] = "
          f"{row.eps_log_mean:.4f}  censored {row.censored_fraction:.1%}")

# %% [markdown]
# Probability of leaving the ball before T = 1 at eps = 0.05, with one tilt
# per exit direction.

# %%
mins = boundary_minimizers(model, eq, BoundaryHit(0.5, np.zeros(1)), 1.0, grid,
                           OptimizerSettings(restarts=0))
tilts = [recover_control(model, m.path) for m in mins]
rep = importance_sampled_exit_prob(model, eq.segment(0), 0.05, ball, 1.0, tilts, 5000, 3)
print(f"plain  {rep.plain_estimate:.3e} +- {rep.plain_stderr:.1e}")
print(f"tilted {rep.tilted_estimate:.3e} +- {rep.tilted_stderr:.1e}")
print(f"variance ratio {rep.variance_ratio:.1f}")
