"""
The action of a sampled path
============================

The action measures how much control a noisy trajectory needs to follow a
given path.  Along a solution of the deterministic equation it vanishes; any
deviation costs half the squared L2 norm of the control that produces it.
"""
# %%
import numpy as np

from sddelab import (Control, GridSpec, HistorySegment, LinearDelayParams, PathGrid,
                     action_gradient, build_linear_model, concat_action_split, path_action,
                     recover_control, solve_controlled, solve_dde)

model = build_linear_model(LinearDelayParams(0.0, 1.0), 1.0)
grid = GridSpec(1.0, 1 / 64, 3.0)
phi = HistorySegment.constant(grid, 0.5)

# %% [markdown]
# A deterministic path has zero action.

# %%
free = solve_dde(model, phi, grid)
print("action of the free solution:", path_action(model, free).value)

# %% [markdown]
# Push the path with a smooth control.  The action equals half the squared
# norm of the control recovered from the path, and it splits exactly at any
# grid time.

# %%
t = grid.times()[grid.n_tau: -1]
control = Control(grid, 0.4 * np.sin(2 * t))
pushed = solve_controlled(model, phi, control, grid)
report = path_action(model, pushed)
print(f"action = {report.value:.10f}")
print(f"1/2 |u|^2 = {0.5 * recover_control(model, pushed).sq_norm():.10f}")
left, right = concat_action_split(model, pushed, 1.5)
print(f"split at t = 1.5: {left:.6f} + {right:.6f} = {left + right:.10f}")

# %% [markdown]
# The exact gradient over the free nodes drives the minimizers; compare one
# entry with a central difference.

# %%
mask = np.zeros(grid.n_nodes, dtype=bool)
mask[grid.n_tau + 1:] = True
grad = action_gradient(model, pushed, mask)
i = grid.n_tau + 40
bump = np.zeros_like(pushed.values)
bump[i] = 1e-6
fd = (path_action(model, PathGrid(grid, pushed.values + bump)).value
      - path_action(model, PathGrid(grid, pushed.values - bump)).value) / 2e-6
print(f"gradient {grad[i - grid.n_tau - 1, 0]:.8f} vs central difference {fd:.8f}")
