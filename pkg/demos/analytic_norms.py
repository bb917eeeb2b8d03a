"""
Analytic norms with a singular weight
=====================================

The power law (r + theta)^(-alpha) has weighted derivative sup-norms equal
to the Pochhammer symbols (alpha)_k, so its factorially weighted series
sums to 2 (1 - lam)^(-alpha).  The majorant system shrinks the radius lam
fast enough that this energy never grows.
"""

import numpy as np

from singular_euler.norms import (
    integrate_majorant,
    power_law_majorant,
    power_law_oracle,
    series_norm,
    majorant_bound_check,
    weighted_sups,
)
from singular_euler.sector import make_sector_config

cfg = make_sector_config(m=3, alpha=0.5)
power = power_law_oracle(0.5)

# %%
print("f_k:", [round(weighted_sups(power, k, cfg=cfg).f, 6) for k in range(6)])
for lam in (0.1, 0.5, 0.7):
    rep = series_norm(power, lam, cfg=cfg)
    print(f"lam = {lam}: E = {rep.E:.12f}, closed form {2 * (1 - lam) ** -0.5:.12f}, K = {rep.K}")

# %%
# Majorant flow from lam = 0.5 until the radius is used up.
st = power_law_majorant(0.5, 0.5)
E0 = st.energies()[0]
horizon = 2 * 0.5 * 0.25 / (st.C_lambda * E0)
tr = integrate_majorant(st, horizon, horizon / 800)
v = majorant_bound_check(tr)
print(f"stop: {tr.stop_reason} at t = {tr.times[-1]:.5f}; max dE/dt = {np.max(tr.dEdt):.3f}")
print(f"lam lower bound holds: {v.lam_bound} (margin {v.lam_margin:.2e}); E <= E(0): {v.norm_bound}")
