# %% [markdown]
# # Accounting for T mixup releases
#
# Each released record samples rows with probability m/n and adds
# Gaussian noise. The exact composition of T such steps is computed with a
# discretized privacy loss distribution; for large T it approaches `G_mu`.

# %%
import math

from dpfmix import accountant as A
from dpfmix.tradeoff import gaussian_tradeoff

mu, sigma = 0.5016, 0.8441
for row in A.clt_convergence_table([10, 50, 200], mu, sigma, grid_size=20001):
    print(f"T={row.T:4d}  sup gap {row.linf_err:.4e}  l2 gap {row.l2_err:.4e}")

# %% [markdown]
# The noise needed for a target (eps, delta) under the GDP limit and under
# Poisson-subsampled RDP. GDP accounting is tighter at every m.

# %%
rows = A.noise_vs_m_table(50000, 50000, 1.0, 1e-5, [1, 16, 256, 4096])
for r in rows:
    print(f"m={r.m:5d}  gdp {r.gdp_noise:.4e}  rdp {r.rdp_noise:.4e}  ratio {r.rdp_noise / r.gdp_noise:.2f}")

# %% [markdown]
# The closed-form noise for the typical setting.

# %%
scales = A.calibrate_noise(50000, 64, 50000, 0.5016)
print(scales)
print("mu back from the noise:", A.clt_mu(50000, 64, 50000, scales.sigma_x, scales.sigma_y))
