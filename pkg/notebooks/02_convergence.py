# %% [markdown]
# # Convergence of the game value as the step shrinks
#
# On the annulus 1 < |x| < 2 the radial function `|x|^c` (or `log|x|`) is
# p-harmonic.  With both players following its gradient and the same
# function as boundary payoff, the Monte Carlo mean at `x0` should approach
# the function value linearly in the step.  Sample sizes here are small so
# the script runs in about a minute; the catalog entries use 2e5 plays.

# %%
import numpy as np

from noisytug.calculus import radial_reference
from noisytug.engine import GameConfig
from noisytug.estimator import convergence_sweep
from noisytug.geometry import Annulus
from noisytug.noise import measure_for_p
from noisytug.strategy import radial_reference_strategy

# %%
p, d = 3.0, 2
dom = Annulus(np.zeros(d), 1.0, 2.0)
ref = lambda y: radial_reference(d, p, y)
game = GameConfig(dom, measure_for_p(p, d), 0.04, ref, np.array([1.2, 0.0]))
tab = convergence_sweep(game, [0.08, 0.04, 0.02], radial_reference_strategy(d, p),
                        radial_reference_strategy(d, p, maximize=False), ref, n=40_000, seed=1, threads=0)
for r in tab.rows:
    print(f"eps={r['eps']:.3f}  mean={r['mean']:.4f}  error={r['error']:.4f}  se={r['std_error']:.4f}")
print("fitted slope", round(tab.meta["slope"], 3))

# %% [markdown]
# The starting point sits close to the inner circle on purpose.  Farther out
# the exit corrections from the two boundary circles nearly cancel and the
# error is buried in sampling noise.
