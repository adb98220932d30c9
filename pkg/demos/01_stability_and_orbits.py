"""
Stability of a delayed feedback loop
====================================

The scalar equation ``x'(t) = -A x(t) - B x(t - tau)`` is stable for small
delays and loses stability when the rightmost root of
``lambda + A + B exp(-lambda tau)`` reaches the imaginary axis.  A nonlinear
negative feedback ``x'(t) = -tanh(x(t - tau))`` settles instead on a slowly
oscillating periodic solution.
"""
# %%
import numpy as np

from sddelab import (GridSpec, HistorySegment, OrbitSettings, build_linear_model,
                     build_negative_feedback_model, critical_delay, detect_periodic_orbit,
                     rightmost_root_real_part, LinearDelayParams)

# %% [markdown]
# The crossing delay for A = 0, B = 1 is pi/2.  Scan a few delays around it.

# %%
A, B = 0.0, 1.0
tau0 = critical_delay(A, B)
print(f"tau0 = {tau0:.12f}")
for tau in np.linspace(0.5 * tau0, 1.5 * tau0, 7):
    print(f"tau = {tau:6.3f}   Re(rightmost root) = {rightmost_root_real_part(A, B, tau):+.5f}")

# %% [markdown]
# Below tau0 a perturbed history decays to the equilibrium.

# %%
grid = GridSpec(1.0, 1 / 32)
orbit = detect_periodic_orbit(build_linear_model(LinearDelayParams(A, B), 1.0),
                              HistorySegment.constant(grid, 0.1),
                              OrbitSettings(transient=50.0, max_time=400.0))
print("equilibrium found:", orbit.is_equilibrium, "at", orbit.center)

# %% [markdown]
# Negative feedback with a long delay: the solution from a constant history
# converges to a periodic orbit whose half-periods both exceed the delay.

# %%
model = build_negative_feedback_model(tau=3.0, sigma0=0.0)
grid = GridSpec(3.0, 0.01)
orbit = detect_periodic_orbit(model, HistorySegment.constant(grid, 1.0))
print(f"period = {orbit.period:.4f} (2 tau = 6), slowly oscillating: {orbit.slowly_oscillating}")
print(f"amplitude = {np.ptp(orbit.samples):.4f}")
