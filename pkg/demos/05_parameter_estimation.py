"""Projected recursive least squares inside the closed loop.

The estimate only enters the cost, so the controller remains feasible and
safe while it learns. The estimate is projected onto the uncertainty set
at every step.

Run: python3 demos/05_parameter_estimation.py
"""

# %%
import numpy as np

from rsmpc.experiments import load_config, make_controller, synthesize
from rsmpc.sim import ProjectedRLS, run_closed_loop, sample_noise

cfg = load_config("illustrative").with_overrides(
    cache={"dir": ".rsmpc_cache", "enabled": True})
syn = synthesize(cfg, 0.4, 0.8)
ctl = make_controller(cfg, syn)

# %%
theta_true = np.array([-0.1])
est = ProjectedRLS(syn.sys, prior=[-0.4])
tr = run_closed_loop(syn.sys, theta_true, ctl, est, sample_noise(syn.noise, 3),
                     40, np.array([-18.0, 0.0]))
for k in (0, 1, 2, 5, 10, 20, 39):
    print(f"k={k:2d} estimate {tr.theta_bar[k, 0]: .4f}")
print("true parameter:", theta_true[0], "halted:", tr.halted)
