# %% [markdown]
# # Grid oracle for the fixed-step value
#
# For atomic noise the one-turn averaging operator can be iterated on a
# grid.  Its fixed point is the value of the discrete game, which we compare
# with Monte Carlo at one point.

# %%
import numpy as np

from noisytug.dpp import solve_dpp
from noisytug.engine import GameConfig
from noisytug.estimator import estimate_value
from noisytug.geometry import Ball, linear_function
from noisytug.noise import two_point
from noisytug.strategy import ConstantField, GradientStrategy

# %%
disc = Ball(np.zeros(2), 1.0)
F = linear_function([1.0, 0.0])
x0 = np.array([0.3, 0.2])
field = solve_dpp(disc, F, two_point(), 0.1, x0=x0, estimate_grid_error=True)
print(f"oracle {field.value_at(x0):.5f}  grid error {field.grid_error:.2e}  "
      f"iterations {field.iterations}  frozen-policy solves {field.solves}")

# %%
S_I = GradientStrategy(grad=ConstantField([1.0, 0.0]), exit="greedy")
S_II = GradientStrategy(grad=ConstantField([1.0, 0.0]), sign=-1.0, exit="greedy")
est = estimate_value(GameConfig(disc, two_point(), 0.1, F, x0), S_I, S_II, 50_000, seed=2, threads=0)
lo, hi = est.ci(0.99)
print(f"Monte Carlo {est.mean:.5f}, 99% interval [{lo:.5f}, {hi:.5f}]")
