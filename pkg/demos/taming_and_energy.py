"""
Taming and the energy balance
=============================

The taming term only switches on where |u|^2 exceeds N. Below that level the
drift pairs with u to minus the enstrophy; above it the taming adds a quartic
dissipation. This script walks one field through both regimes.
"""

import numpy as np

from tamedns.dynamics import drift_A
from tamedns.spectral import build_mode_set, dealias_floor, pairing, random_field, sobolev_norm, to_physical
from tamedns.taming import TamingConfig, blend_max_slope, taming_g

modes = build_mode_set(2)
G = dealias_floor(modes)
cfg = TamingConfig(N=1.0)
print(f"{modes.n} modes, grid {G}^3, steepest taming slope {blend_max_slope():.4f}")

# the taming function is zero up to N and linear past N + 1
r = np.array([0.5, 1.0, 1.25, 1.5, 1.75, 2.0, 3.0])
for ri, gi in zip(r, taming_g(r, cfg)):
    print(f"  g({ri:4.2f}) = {gi:.5f}")

# scale one field so that its peak |u|^2 sweeps across the threshold
u = random_field(modes, np.random.default_rng(0))
peak = np.max(np.sum(to_physical(u, G).values ** 2, axis=0))
print("\n peak|u|^2      <A(u),u>     -|grad u|^2   taming part")
for target in (0.25, 1.0, 4.0, 25.0):
    v = u * np.sqrt(target / peak)
    pair = pairing(drift_A(v, cfg, G), v)
    grad2 = sobolev_norm(v, 1, "homogeneous") ** 2
    print(f" {target:9.2f} {pair:14.6e} {-grad2:14.6e} {-(pair + grad2):12.4e}")
