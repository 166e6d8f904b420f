"""Topology selection at switch instants.

The agents cannot evaluate the certified quadratic at the (unknown) true
state, so each candidate topology is scored by the worst case over the
tightest axis-aligned box containing the current estimation ellipsoid, plus
a communication charge per enabled link:

    r = max over box vertices of [x_v; u; x_hat - x_v]' P [.] + kappa*c*|links|

The minimizer wins; ties prefer the incumbent, then fewer links, then the
lower topology index.
"""

from dataclasses import dataclass

import numpy as np


class WorstCaseBudgetError(RuntimeError):
    """State dimension too large for exhaustive vertex enumeration."""


@dataclass(frozen=True)
class SwitchDecision:
    chosen: int                  # topology index attaining the minimal score
    scores: dict                 # topology index -> r value
    rho_bar: dict                # topology index -> worst-case quadratic
    x_bar: dict                  # topology index -> arg-max state vertex
    e_bar: dict                  # topology index -> arg-max error vertex
    k: int


def ellipsoid_box(P_obs, x_hat, rho):
    """Per-axis half-widths of the tightest axis-aligned box containing the
    ellipsoid {x : (x - x_hat)' P_obs (x - x_hat) <= rho}: sqrt(rho *
    diag(P_obs^-1))."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    P_obs = np.asarray(P_obs, dtype=float)
    diag_inv = np.diag(np.linalg.inv(P_obs))
    if np.any(diag_inv <= 0):
        raise ValueError("P_obs must be positive definite")
    return np.sqrt(rho * diag_inv)


def _sign_patterns(n):
    # vertex v takes +1 on axis j iff bit j of v is set; v = 0 is all -1
    return ((np.arange(1 << n)[:, None] >> np.arange(n)[None, :]) & 1) * 2.0 - 1.0


def worst_case(P_cert, x_hat, u, half_widths, budget_exponent=20):
    """Maximize [x_v; u; x_hat - x_v]' P_cert [.] over all 2^n_x box vertices
    x_v = x_hat + signs * half_widths.

    Returns (rho_bar, x_bar, e_bar); ties resolve to the first vertex in
    binary-counting order.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    u = np.asarray(u, dtype=float)
    n_x = x_hat.size
    if n_x > budget_exponent:
        raise WorstCaseBudgetError(
            f"2^{n_x} vertices exceed the exhaustive search budget 2^{budget_exponent}")
    signs = _sign_patterns(n_x)
    x_v = x_hat[None, :] + signs * np.asarray(half_widths, dtype=float)[None, :]
    e_v = x_hat[None, :] - x_v
    xi = np.hstack([x_v, np.tile(u, (len(x_v), 1)), e_v])
    vals = np.einsum("ij,jk,ik->i", xi, np.asarray(P_cert, dtype=float), xi)
    best = int(np.argmax(vals))  # argmax returns the first maximizer
    return float(vals[best]), x_v[best], e_v[best]


def topology_cost(rho_bar, kappa_steps, link_cost, n_links):
    """r = rho_bar + kappa_steps * link_cost * n_links."""
    if min(rho_bar, kappa_steps, link_cost, n_links) < 0:
        raise ValueError("all cost ingredients must be nonnegative")
    return float(rho_bar + kappa_steps * link_cost * n_links)


def select_topology(candidates, current, x_hat, u, P_obs, kappa_steps,
                    link_cost, k=0, budget_exponent=20):
    """Score every certified topology with its own certificate and its own
    (already updated) radius; return the minimizer.

    candidates: mapping topology index -> (topology, P_cert, rho).
    Tie-break order: current topology first, then fewer links, then lower index.
    """
    if not candidates:
        raise ValueError("no certified topologies to select from")
    if current not in candidates:
        raise ValueError(f"current topology {current} is not certified")
    scores, rho_bars, x_bars, e_bars = {}, {}, {}, {}
    best_key, best_idx = None, None
    for idx in sorted(candidates):
        topology, P_cert, rho = candidates[idx]
        half = ellipsoid_box(P_obs, x_hat, rho)
        rho_bar, x_bar, e_bar = worst_case(P_cert, x_hat, u, half, budget_exponent)
        r = topology_cost(rho_bar, kappa_steps, link_cost, topology.n_links)
        scores[idx] = r
        rho_bars[idx] = rho_bar
        x_bars[idx] = x_bar
        e_bars[idx] = e_bar
        key = (r, idx != current, topology.n_links, idx)
        if best_key is None or key < best_key:
            best_key, best_idx = key, idx
    return SwitchDecision(chosen=best_idx, scores=scores, rho_bar=rho_bars,
                          x_bar=x_bars, e_bar=e_bars, k=k)
