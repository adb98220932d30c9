"""
Quasipotential of an equilibrium ball
=====================================

The cost of leaving a ball around a stable equilibrium is the smallest action
of a path that starts at rest and touches the boundary.  For the
Ornstein-Uhlenbeck drift ``-x`` the answer is ``delta^2``; the delayed linear
equation needs the optimizer.
"""
# %%
import numpy as np

from sddelab import (BoundaryHit, DomainSpec, GridSpec, LinearDelayParams, OptimizerSettings,
                     Orbit, build_linear_model, build_ou_model, exit_thresholds, minimize_action)

# %% [markdown]
# Ornstein-Uhlenbeck: the value of the discrete chain is (2 - h)/2 for h = 1/128.

# %%
grid = GridSpec(1.0, 1 / 128)
res = minimize_action(build_ou_model(1.0), Orbit.equilibrium(grid, 0.0),
                      BoundaryHit(1.0, np.zeros(1)), 8.0, grid, OptimizerSettings(restarts=0))
print(f"V = {res.value:.6f}, chain value {(2 - grid.step) / 2:.6f}")

# %% [markdown]
# The delayed equation x' = -x(t - 1/2): both thresholds, approached from
# outside and inside the ball, agree as the margin shrinks.

# %%
model = build_linear_model(LinearDelayParams(0.0, 1.0), 0.5)
grid = GridSpec(0.5, 1 / 64)
eq = Orbit.equilibrium(grid, 0.0)
upper, lower = exit_thresholds(model, eq, DomainSpec.ball(eq, 0.5), [0.05, 0.025, 0.01],
                               OptimizerSettings(restarts=0))
for eta in sorted(upper.per_eta, reverse=True):
    print(f"eta = {eta:5.3f}   outside {upper.per_eta[eta]:.6f}   inside {lower.per_eta[eta]:.6f}")
print(f"extrapolated: V_bar = {upper.value:.6f}, V_lower = {lower.value:.6f}")
best = upper.best
print(f"minimizer horizon T = {best.horizon}, endpoint x(T) = {best.path.values[-1, 0]:+.4f}")
