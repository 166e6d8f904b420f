"""Experiment orchestration: offline design of every topology, then online
closed-loop execution with periodic topology switching.

Offline, per topology: controller SDP, observer SDP, closed-loop assembly,
certificate SDP. Topologies failing any stage are dropped from the certified
set; the grand coalition failing is fatal (the stabilizability assumption is
violated in practice).

Online, per step k: at switch instants (k mod T = 0) every certified
topology's scoring radius advances by the elapsed interval, worst cases over
the estimation ellipsoid are evaluated and the cheapest topology wins;
otherwise communication stays coalition-local. Then the loop applies u,
updates the observer and the control law, and advances.
"""

from dataclasses import dataclass

import numpy as np

from ..model import (coalitions_of, enumerate_topologies, split_dynamics,
                     extended_state_mask, check_stabilizable_detectable)
from ..synthesis import (InfeasibleTopologyError, SolverFailureError,
                         certify_topology, closed_loop_matrix, synth_controller,
                         synth_observer)
from ..runtime import SimState, control_update, measure, observer_step, \
    plant_step, rho_step
from ..supervisor import select_topology
from .store import GainStore, TopologyRecord
from .trace import Trace


class FatalSynthesisError(RuntimeError):
    """The grand coalition (or the plant itself) cannot be stabilized."""


class NumericalAbortError(RuntimeError):
    """Online execution overflowed; carries the trace up to the last valid step."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def synthesize_all(config, progress=None):
    """Design gains and certificates for every topology of the universe.

    Returns a GainStore with one record per topology; infeasible ones carry
    the failing stage as their reason. Raises FatalSynthesisError if the
    plant fails the stabilizability/detectability gate or the grand coalition
    does not survive.
    """
    plant = config.plant
    report = check_stabilizable_detectable(plant)
    if not report.ok:
        raise FatalSynthesisError(
            f"plant fails the stabilizability/detectability gate: {report.failures}")
    store = GainStore(link_universe=config.link_universe,
                      agent_dims=plant.agent_dims, dt=plant.dt,
                      shape_matrix=config.shape_matrix)
    grand_index = store.n_topologies - 1
    for topology in enumerate_topologies(config.link_universe):
        idx = topology.index
        partition = coalitions_of(topology, plant.n_agents)
        rec = TopologyRecord(topology=topology, partition=partition,
                             feasible=False)
        try:
            rec.controller = synth_controller(plant, partition, config.q_x,
                                              config.r, config.options)
            rec.observer = synth_observer(plant, partition, config.shape_matrix,
                                          config.omega_box, config.epsilon,
                                          config.options)
            closed = closed_loop_matrix(plant, partition, rec.controller,
                                        rec.observer)
            rec.certificate = certify_topology(
                closed, config.q_full, extended_state_mask(partition, plant),
                config.options)
            if rec.certificate.feasible:
                rec.feasible = True
            else:
                rec.reason = "certificate infeasible"
        except InfeasibleTopologyError as err:
            rec.reason = f"infeasible: {err}"
        except SolverFailureError as err:
            rec.reason = f"solver failure: {err}"
        store.records[idx] = rec
        if progress is not None:
            progress(idx, rec)
        if idx == grand_index and not rec.feasible:
            raise FatalSynthesisError(
                f"grand coalition failed synthesis ({rec.reason}); "
                "the stabilizability assumption does not hold in practice")
    return store


def _check_store_matches(config, store):
    if tuple(store.link_universe) != tuple(config.link_universe):
        raise ValueError("gain store was built for a different link universe")
    if tuple(store.agent_dims) != tuple(config.plant.agent_dims):
        raise ValueError("gain store was built for different agent dimensions")
    if not np.array_equal(store.shape_matrix, config.shape_matrix):
        raise ValueError("gain store was built for a different shape matrix")


def run(config, store, forced_topology=None):
    """Execute the closed loop over the configured horizon.

    forced_topology pins the topology and bypasses the supervisor (used for
    the fixed-topology baselines). Raises NumericalAbortError on overflow,
    with the truncated trace attached.
    """
    _check_store_matches(config, store)
    plant = config.plant
    certified = store.certified()
    if not certified:
        raise ValueError("gain store certifies no topology")
    if forced_topology is not None:
        if forced_topology not in certified:
            raise ValueError(f"forced topology {forced_topology} is not certified")
        start_index = forced_topology
    else:
        start_index = config.initial_topology
        if start_index not in certified:
            start_index = max(certified)   # grand coalition survives by gate
    rho0 = float((config.x_hat0 - config.x0)
                 @ config.shape_matrix @ (config.x_hat0 - config.x0))
    state = SimState(x=config.x0.copy(), u=np.zeros(plant.n_u),
                     x_hat=config.x_hat0.copy(),
                     rho={idx: rho0 for idx in certified},
                     rho_certified=rho0, k=0, topology_index=start_index)
    splits = {idx: split_dynamics(plant, rec.partition)
              for idx, rec in certified.items()}

    n_steps = config.horizon_steps
    trace = Trace(dt=config.dt, switch_steps=config.switch_steps,
                  kappa_steps=config.kappa_steps, link_cost=config.link_cost,
                  n_topologies=store.n_topologies)
    k_arr = np.zeros(n_steps, dtype=int)
    x_arr = np.zeros((n_steps, plant.n_x))
    u_arr = np.zeros((n_steps, plant.n_u))
    xh_arr = np.zeros((n_steps, plant.n_x))
    topo_arr = np.zeros(n_steps, dtype=int)
    nlinks_arr = np.zeros(n_steps, dtype=int)
    cx_arr = np.zeros(n_steps)
    ce_arr = np.zeros(n_steps)
    fc_arr = np.zeros(n_steps, dtype=bool)
    rhoc_arr = np.zeros(n_steps)

    last_eval = 0
    recorded = 0
    aborted = False
    for k in range(n_steps):
        switch_instant = k % config.switch_steps == 0
        if switch_instant and forced_topology is None:
            elapsed = k - last_eval
            last_eval = k
            for idx, rec in certified.items():
                state.rho[idx] = rho_step(state.rho[idx], rec.observer.beta,
                                          rec.observer.sigma, elapsed)
            decision = select_topology(
                {idx: (rec.topology, rec.certificate.P, state.rho[idx])
                 for idx, rec in certified.items()},
                current=state.topology_index, x_hat=state.x_hat, u=state.u,
                P_obs=config.shape_matrix, kappa_steps=config.kappa_steps,
                link_cost=config.link_cost, k=k,
                budget_exponent=config.options.worst_case_exponent)
            state.topology_index = decision.chosen
            trace.switches.append(decision)

        rec = certified[state.topology_index]
        a_coal, b_coal, _, _ = splits[state.topology_index]
        err = state.x_hat - state.x
        cost_x = float(state.x @ config.q_x @ state.x
                       + state.u @ config.r @ state.u)
        cost_e = float(err @ config.q_e @ err)

        k_arr[k] = k
        x_arr[k] = state.x
        u_arr[k] = state.u
        xh_arr[k] = state.x_hat
        topo_arr[k] = state.topology_index
        nlinks_arr[k] = rec.topology.n_links
        cx_arr[k] = cost_x
        ce_arr[k] = cost_e
        fc_arr[k] = switch_instant
        rhoc_arr[k] = state.rho_certified
        recorded = k + 1

        y = measure(plant, state.x)
        x_next = plant_step(plant, state.x, state.u)
        x_hat_next = observer_step((a_coal, b_coal, plant.C), rec.observer,
                                   state.x_hat, state.u, y)
        u_next = control_update(rec.controller, state.x_hat, state.u)
        if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(x_hat_next))
                and np.all(np.isfinite(u_next))):
            aborted = True
            break
        state.x, state.x_hat, state.u = x_next, x_hat_next, u_next
        state.rho_certified = rho_step(state.rho_certified, rec.observer.beta,
                                       rec.observer.sigma, 1)
        state.k = k + 1

    trace.k = k_arr[:recorded]
    trace.x = x_arr[:recorded]
    trace.u = u_arr[:recorded]
    trace.x_hat = xh_arr[:recorded]
    trace.e = trace.x_hat - trace.x
    trace.topology_index = topo_arr[:recorded]
    trace.n_links = nlinks_arr[:recorded]
    trace.cost_x = cx_arr[:recorded]
    trace.cost_e = ce_arr[:recorded]
    trace.full_comm = fc_arr[:recorded]
    trace.rho_certified = rhoc_arr[:recorded]
    trace.aborted = aborted
    if aborted:
        raise NumericalAbortError(
            f"state overflowed at step {recorded}; trace truncated", trace)
    return trace
