"""Synthetic four-room RC thermal network.

The rooms sit on a 2x2 grid: room 1 touches rooms 2 and 3, room 4 touches
rooms 2 and 3. Each room exchanges heat with its neighbors through
conductances ``k_ij``, with the outside through ``k_out[i]``, and has a
heater/cooler of power ``u_i`` (kW). Explicit Euler with step ``dt`` hours
gives

``T+ = A0 T + B u + B_w T_out``,  ``A0 = I - dt C^-1 (L + diag(k_out))``,

where ``L`` is the Laplacian of the conductance graph.

Uncertainty in ``k_12`` and ``k_13`` enters as ``A(theta) = A0 + theta_1 A1
+ theta_2 A2``. ``A1`` and ``A2`` are the Laplacian contributions of 10% of
those conductances, so every row of ``A1`` and ``A2`` sums to zero. A
uniform temperature offset is therefore unaffected by ``theta``, which keeps
the deviation model around the reference temperature parameter-affine with a
parameter-free constant term.

All numbers are synthetic; the building used for the published results is
not available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EDGES = ((0, 1), (0, 2), (1, 3), (2, 3))


@dataclass(frozen=True)
class RCNetwork:
    """Physical parameters of the network.

    Attributes
    ----------
    capacity : tuple of float
        Thermal capacities (kWh/K).
    k_rooms : tuple of float
        Conductances (kW/K) for the edges 1-2, 1-3, 2-4, 3-4.
    k_out : tuple of float
        Conductances to the outside (kW/K).
    dt : float
        Sampling time (hours).
    perturbation : float
        Relative size of the uncertain part of ``k_12`` and ``k_13``.
    """

    capacity: tuple = (10.0, 8.0, 8.0, 12.0)
    k_rooms: tuple = (0.6, 0.5, 0.4, 0.4)
    k_out: tuple = (0.30, 0.20, 0.20, 0.10)
    dt: float = 3.0
    perturbation: float = 0.1

    def laplacian(self, weights=None) -> np.ndarray:
        w = self.k_rooms if weights is None else weights
        L = np.zeros((4, 4))
        for (i, j), k in zip(EDGES, w):
            L[i, i] += k
            L[j, j] += k
            L[i, j] -= k
            L[j, i] -= k
        return L

    def matrices(self):
        """``A0, [A1, A2], B, B_w`` of the discrete-time model."""
        Cinv = np.diag(1.0 / np.asarray(self.capacity))
        dt = self.dt
        A0 = np.eye(4) - dt * Cinv @ (self.laplacian() + np.diag(self.k_out))
        pert = []
        for e in (0, 1):
            w = np.zeros(4)
            w[e] = self.perturbation * self.k_rooms[e]
            pert.append(-dt * Cinv @ self.laplacian(w))
        B = dt * Cinv
        Bw = dt * Cinv @ np.asarray(self.k_out)[:, None]
        return A0, pert, B, Bw

    def deviation_offset(self, T_ref) -> np.ndarray:
        """Constant ``(A0 - I) 1 T_ref`` of the model in deviation
        coordinates ``x = T - T_ref 1`` (independent of ``theta``)."""
        A0 = self.matrices()[0]
        return (A0 - np.eye(4)) @ np.full(4, float(T_ref))


def steady_input(net: RCNetwork, T_ref, T_out) -> np.ndarray:
    """Heater powers holding every room at ``T_ref`` for a constant
    outdoor temperature: ``u_ss = k_out (T_ref - T_out)``."""
    return np.asarray(net.k_out) * (float(T_ref) - float(T_out))


def building_config(net: RCNetwork | None = None, T_ref=21.0, band=1.0,
                    u_max=4.5, T_out_mean=10.0, T_out_amplitude=3.0,
                    T_out_std=1.0, T_out_rho=0.7, process_std=0.02,
                    T=10, N=4, p_x=0.9, p_u=0.99, seeds=200) -> dict:
    """Experiment config for the synthetic building in deviation coordinates.

    State ``x = T_rooms - T_ref``, input ``u = P - u_ss`` where ``u_ss``
    holds the reference at the mean outdoor temperature. The deterministic
    disturbance is ``B_w (T_out(k) - T_out_mean)`` with a daily sinusoid,
    and the stochastic part is an AR(1) outdoor-temperature deviation plus
    small independent process noise per room.
    """
    net = RCNetwork() if net is None else net
    A0, (A1, A2), B, Bw = net.matrices()
    u_ss = steady_input(net, T_ref, T_out_mean)
    if np.any(np.abs(u_ss) >= u_max):
        raise ValueError("operating point violates the input bounds")
    I4 = np.eye(4)
    X = {"H": np.vstack([I4, -I4]) / band, "h": np.ones(8)}
    Hu = np.vstack([I4 / (u_max - u_ss)[:, None], -I4 / (u_max + u_ss)[:, None]])
    U = {"H": Hu, "h": np.ones(8)}
    steps_per_day = 24.0 / net.dt
    Z = np.zeros((4, 4))
    raw = {
        "name": "building",
        "description": (
            "Synthetic 4-room RC thermal network (labelled synthetic: the "
            "published building matrices are unavailable). Deviation "
            f"coordinates around {T_ref} C in every room with steady heater "
            f"powers u_ss = {np.round(u_ss, 6).tolist()} kW at the mean "
            f"outdoor temperature {T_out_mean} C; sampling time {net.dt} h. "
            "Uncertain conductances 1-2 and 1-3 (+-10% per unit theta); "
            f"state band +-{band} K, heater power within +-{u_max} kW."),
        "system": {"A": [A0.tolist(), A1.tolist(), A2.tolist()],
                   "B": [B.tolist(), Z.tolist(), Z.tolist()],
                   "Theta": {"H": np.vstack([np.eye(2), -np.eye(2)]).tolist(),
                             "h": [1.0, 1.0, 1.0, 1.0]},
                   "X": {k: np.asarray(v).tolist() for k, v in X.items()},
                   "U": {k: np.asarray(v).tolist() for k, v in U.items()}},
        "noise": {"family": "gaussian",
                  "exogenous": {"B_w": Bw.tolist(), "std": T_out_std,
                                "rho": T_out_rho,
                                "mean": {"type": "sinusoid", "offset": 0.0,
                                         "amplitude": T_out_amplitude,
                                         "period": steps_per_day,
                                         "phase": steps_per_day / 2.0},
                                "process_Sigma": (process_std ** 2 * I4).tolist()}},
        "controller": {"N": N, "Q": (50.0 * I4).tolist(), "R": Z.tolist(),
                       "input_l1": 1.0, "input_offset": u_ss.tolist(),
                       "tube_weight": 1e-3,
                       "gain": {"type": "lqr", "at": "estimate",
                                "Q": I4.tolist(), "R": (0.2 * I4).tolist()},
                       "base_set": {"type": "constraint_box"},
                       "rprs": {"shape": "halfspaces", "family": "gaussian",
                                "objective": "trace"},
                       "terminal": {"max_iter": 50}},
        "estimator": {"type": "constant", "theta_bar": [0.0, 0.0]},
        "theta_true": [0.0, 0.0],
        "x0": [0.0, 0.0, 0.0, 0.0],
        "T": T, "alpha": 1.0, "p_x": p_x, "p_u": p_u,
        "seeds": {"start": 0, "count": seeds},
        "sweep": {"alpha": [0.2, 0.6, 1.0],
                  "p": [0.8, 0.85, 0.9, 0.92, 0.95, 0.97], "baseline": True,
                  "p_u": "same"},
        "baseline": {"theta": [0.0, 0.0], "theta_true": [0.0, 0.0]},
        "output_dir": "rsmpc_output/building",
        "cache": {"dir": ".rsmpc_cache", "enabled": True},
    }
    return raw
