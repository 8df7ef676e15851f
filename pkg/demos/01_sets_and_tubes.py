"""Polytopes, homothetic tubes and robust containment.

Builds the double-integrator model with an uncertain actuator gain, picks
a base set that the uncertain closed loop contracts, and checks one tube
transition both with the dual multipliers used inside the controller and
with an explicit vertex enumeration.

Run: python3 demos/01_sets_and_tubes.py
"""

# %%
import numpy as np

from rsmpc import Polytope, pontryagin_diff
from rsmpc.experiments import build_system, load_config
from rsmpc.model import lqr_gain
from rsmpc.tube import (containment_check, containment_dual,
                        containment_margin, contraction_factor,
                        optimized_parallelotope)

# %% [markdown]
# Halfspace polytopes: vertices, support function, set difference.

# %%
square = Polytope.box([-1.0, -1.0], [1.0, 1.0])
small = Polytope.box([-0.25, -0.1], [0.25, 0.1])
diff = pontryagin_diff(square, small)
print("vertices of square minus small box:\n", diff.vertices())
print("support of the square in direction (1, 2):", square.support([1.0, 2.0]))

# %% [markdown]
# The uncertain system x+ = A x + (B0 + theta B1) u + w with theta in
# [-0.4, 0], and a gain designed at the estimate theta_bar = -0.4.

# %%
cfg = load_config("illustrative")
sys_ = build_system(cfg, alpha=0.4, p=0.8)
K = lqr_gain(sys_.A(-0.4), sys_.B(-0.4), np.eye(2), np.eye(1))
print("K =", K)
A_list = sys_.vertex_closed_loops(K)
Zbar = optimized_parallelotope(A_list, restarts=10, seed=0)
print("contraction factor of the optimized base set:",
      contraction_factor(Zbar, A_list))

# %% [markdown]
# One tube transition: from {s} + a Zbar with input offset v, the smallest
# next scaling that covers every successor is the containment margin
# evaluated at a zero next scaling.

# %%
Zi, v = (np.array([1.0, -0.5]), 0.3), np.array([0.2])
need = containment_margin(Zi, v, (np.zeros(2), 0.0), sys_, K, Zbar)
print(f"minimal next scaling around the origin: {need:.4f}")
for a_next in (0.9 * need, 1.1 * need):
    primal = containment_check(Zi, v, (np.zeros(2), a_next), sys_, K, Zbar)
    dual = containment_dual(Zi, v, (np.zeros(2), a_next), sys_, K, Zbar)
    print(f"alpha_next = {a_next:.4f}: vertex check {primal}, "
          f"dual certificate {'found' if dual is not None else 'none'}")
