# %% [markdown]
# # The optimal mixup degree in linear regression
#
# Least squares on a private mixup release. Larger m shrinks the noise
# (sensitivity C/m) but blurs the signal; the error is minimized at an
# interior m* that grows like n^((2 - gamma)/2) when T = 2 n^gamma.
# A reduced run here (three sizes, ten repeats); the CLI `sweep` command
# does the full one. Fewer repeats leave the flat minimum noisy.

# %%
import math

from dpfmix import regression as G

gamma = 1.0
points = []
for n in (1024, 2048, 4096):
    res = G.sweep_m(n, gamma, repeats=10, m_grid=G.fine_grid(n, gamma), seed=0)
    points.append((math.log2(n), math.log2(res.m_star)))
    print(f"n={n}: T={res.T}, m*={res.m_star}")
    for m, err, sd in res.rows()[::4]:
        print(f"   m={m:4d}  error {err:.3f} +- {sd:.3f}")

fit = G.fit_slope(points)
print(f"slope {fit.slope:.3f} (target {(2 - gamma) / 2}), r2 {fit.r2:.3f}")
