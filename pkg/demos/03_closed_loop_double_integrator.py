"""Closed-loop comparison on the double integrator.

The true actuator gain differs from the one used by the controllers. The
robust controller keeps the chance constraint |x_2| <= 3 at the requested
level, while a stochastic MPC that trusts the estimate violates it more
often. Uses a handful of seeds; the acceptance suite runs 200.

Run: python3 demos/03_closed_loop_double_integrator.py
"""

# %%
import numpy as np

from rsmpc.experiments import load_config, run_cell
from rsmpc.sim import empirical_satisfaction

cfg = load_config("illustrative").with_overrides(
    cache={"dir": ".rsmpc_cache", "enabled": True})
seeds = range(20)

# %%
for kind in ("rsmpc", "smpc"):
    syn, traces = run_cell(cfg, 0.4, 0.8, seeds, kind=kind)
    res = empirical_satisfaction(traces)
    costs = [t.total_cost for t in traces if not t.halted]
    print(f"{kind}: N_c = {res.N_c:.1f} % over {res.n_used} runs "
          f"({res.n_halted} halted), mean cost {np.mean(costs):.1f}")

# %% [markdown]
# One trajectory in detail: the planned tube scaling alpha_0 and the
# position of the true state relative to the constraint.

# %%
_, traces = run_cell(cfg, 0.4, 0.8, [0])
tr = traces[0]
for k in range(0, 25, 4):
    print(f"k={k:3d} x={np.round(tr.x_true[k], 3)} u={tr.u_true[k, 0]: .3f} "
          f"alpha_0={tr.alpha0[k]:.3f}")
