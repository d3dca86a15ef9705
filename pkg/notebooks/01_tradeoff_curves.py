# %% [markdown]
# # Trade-off curves
#
# A trade-off curve gives the smallest type II error an adversary can reach
# at each type I error when telling two neighboring datasets apart. The
# Gaussian curve `G_mu` is the reference; everything below lives on a
# uniform grid of type I errors.

# %%
import numpy as np

from dpfmix import tradeoff as tf

mu = 1.0
g = tf.gaussian_tradeoff(mu, grid_size=2001)
for a in (0.0, 0.01, 0.05, 0.1, 0.5):
    print(f"G_{mu}({a}) = {float(g(a)):.6f}")

# %% [markdown]
# Poisson subsampling at rate p mixes the curve with the identity. The
# mixture is only valid in one direction; `symmetrize` closes it under
# both by taking the convex minorant of `min(f, f^-1)`.

# %%
mixed = tf.subsample_mixture(g, 0.3)
sym = tf.symmetrize(mixed)
print("asymmetry before:", mixed.sup_distance(tf.invert(mixed)))
print("asymmetry after, at grid resolution:", sym.sup_distance(tf.invert(sym)))
print("sup gap to the mixture:", sym.sup_distance(mixed))

# %% [markdown]
# Converting between a GDP budget and (eps, delta).

# %%
for eps in (0.5, 1.0, 2.0, 4.0):
    d = tf.mu_to_epsdelta(0.5016, eps).delta
    print(f"mu=0.5016 eps={eps}: delta={d:.3e}, round trip mu={tf.epsdelta_to_mu(eps, d):.10f}")
