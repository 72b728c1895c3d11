# %% [markdown]
# # Boundary regularity and small boundary sets
#
# A lone boundary point in the plane is invisible to the game when p <= 2:
# player I cannot force the play to end there.  For p > 2 the point is
# reachable with positive probability.  The probe below pulls toward the
# puncture of the disc against a small panel of opponents.

# %%
import numpy as np

from noisytug.estimator import CantorSpec, porous_measure_decay, regularity_probe
from noisytug.geometry import PuncturedBall

# %%
dom = PuncturedBall(np.zeros(2), 1.0)
for p in (2.0, 3.0):
    thetas = [regularity_probe(dom, [0.0, 0.0], 0.5, eps, 5000, seed=3, p=p, threads=0).theta
              for eps in (0.04, 0.02, 0.01)]
    print(f"p={p}: success probability by eps", np.round(thetas, 3))

# %% [markdown]
# A porous set on the boundary has small p-harmonic measure: the value with
# payoff the indicator of its delta-neighbourhood decays like a power of delta.
# Here the set is a middle-thirds Cantor set on a quarter of the circle.

# %%
spec = CantorSpec(depth=10)
tab = porous_measure_decay(spec, 2.0, None, [3.0 ** -k for k in (2, 3, 4)], 1000, seed=4, threads=0)
for r in tab.rows:
    print(f"delta={r['delta']:.4f}  estimate={r['estimate']:.4f}  harmonic measure={r['harmonic_measure']:.4f}")
print("fitted exponent", round(tab.meta["c_hat"], 3), "interval", np.round(tab.meta["c_ci95"], 3))
