"""Temperature control of a synthetic four-room building.

The outdoor temperature enters as correlated noise with a daily mean
profile, and two wall conductances are uncertain. The robust controller
is compared with a stochastic MPC that ignores the conductance mismatch:
the price of robustness is a small increase of the closed-loop cost.

Run: python3 demos/04_building_temperature.py   (about two minutes)
"""

# %%
import numpy as np

from rsmpc.experiments import load_config, run_cell, sweep_config
from rsmpc.sim import cost_increase_stats, empirical_satisfaction

# as in the sweep, the input chance constraints use the same level as the
# state constraints
cfg = sweep_config(load_config("building").with_overrides(
    cache={"dir": ".rsmpc_cache", "enabled": True}))
seeds = range(20)

# %%
for p in (0.8, 0.95):
    syn, rob = run_cell(cfg, 1.0, p, seeds)
    _, base = run_cell(cfg, 1.0, p, seeds, kind="smpc")
    faces = [empirical_satisfaction(rob, rows=r).N_c
             for r in range(syn.sys.F.shape[0])]
    st = cost_increase_stats(rob, base)
    print(f"p={p}: per-face N_c min {min(faces):.1f} %, cost increase "
          f"{st['mean']:.2e} % (+/- 2 std: [{st['lower']:.2e}, "
          f"{st['upper']:.2e}])")
    print("   tightening of the room bands at k=1:",
          np.round(syn.tightening.f[1][:4], 3))
