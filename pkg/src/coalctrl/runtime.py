"""One closed-loop time step: plant propagation, dynamic control law,
per-coalition observer, and the ellipsoid-radius recursion.

Masked gains make every operation coalition-local: a perturbation confined to
one coalition's slices cannot change any other coalition's outputs (off-mask
entries are exact zeros, so the unchanged terms are bit-identical).
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SimState:
    """Closed-loop state bundle owned by the simulation driver.

    x is the true plant state; agent-facing code must only read x_hat and u.
    rho maps topology index -> scoring ellipsoid radius (updated lazily at
    switch instants); rho_certified is the per-step certified radius along
    the executed topology sequence.
    """

    x: np.ndarray
    u: np.ndarray
    x_hat: np.ndarray
    rho: dict = field(default_factory=dict)
    rho_certified: float = 0.0
    k: int = 0
    topology_index: int = 0


def plant_step(plant, x, u):
    return plant.A @ x + plant.B @ u


def measure(plant, x):
    return plant.C @ x


def control_update(gains, x_hat, u):
    """u+ = K_x x_hat + K_u u. Masked gains keep each coalition's slice of
    the result a function of that coalition's slices only."""
    return gains.K_x @ x_hat + gains.K_u @ u


def observer_step(plant_split, obs, x_hat, u, y):
    """x_hat+ = A_coal x_hat + B_coal u + L (C x_hat - y).

    plant_split is (A_coal, B_coal, C) of the active topology. The innovation
    carries the closed-loop matrix's sign convention, so the estimation error
    e = x_hat - x evolves as (A_coal + L C) e - E w.
    """
    a_coal, b_coal, c = plant_split
    return a_coal @ x_hat + b_coal @ u + obs.L @ (c @ x_hat - y)


def rho_step(rho, beta, sigma, steps=1):
    """Radius recursion applied `steps` times, in closed form:
    beta^steps * rho + (1 - beta^steps) / (1 - beta) * sigma."""
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    if sigma < 0 or rho < 0:
        raise ValueError("sigma and rho must be nonnegative")
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    if steps == 0:
        return float(rho)
    decay = beta ** steps
    return float(decay * rho + (1.0 - decay) / (1.0 - beta) * sigma)
