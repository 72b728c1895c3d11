# %% [markdown]
# # Noise measures and the constants they induce
#
# A noise measure is a mean-zero, axially symmetric law on R^d.  Its
# covariance fixes the exponent `p` the game approximates.  This script builds
# a few measures, reads their constants, and checks the covariance of the
# rotated, scaled noise against sampling.

# %%
import numpy as np

from noisytug.noise import (
    derive_constants,
    measure_for_p,
    pushforward_covariance,
    sample_noise_batch,
    two_point,
    uniform_sphere_orthogonal,
)

# %%
for label, mu in [
    ("two-point, e2 axis", two_point()),
    ("sphere orthogonal to e1, d=3", uniform_sphere_orthogonal(3, 1.0)),
    ("tuned for p=3, d=2", measure_for_p(3.0, 2)),
    ("tuned for p=3, d=2, alternating", measure_for_p(3.0, 2, "alternating")),
]:
    mode = "alternating" if "alternating" in label else "random"
    c = derive_constants(mu, mode)
    print(f"{label:<34} p={c.p:6.3f} q={c.q:6.3f} beta={c.beta:6.3f} alpha={c.alpha:5.3f}")

# %% [markdown]
# The noise for a move `v` is the base measure rotated so that `e1` points
# along `v` and scaled by `|v|`.  Its covariance has one value along `v`
# and another across it.

# %%
rng = np.random.default_rng(0)
mu = measure_for_p(3.0, 2)
v = np.array([0.03, -0.04])
z = sample_noise_batch(mu, np.tile(v, (200_000, 1)), rng)
print("sampled covariance\n", z.T @ z / len(z))
print("closed form\n", pushforward_covariance(derive_constants(mu), v))
