"""Versioned gain-store file: one record per topology with masks, gains,
observer (beta, sigma), certificate and solve statistics, serialized as JSON
with full-precision decimal floats so runs can execute without re-solving."""

import json
from dataclasses import dataclass, field

import numpy as np

from ..model import (Topology, Partition, mask_for, mask_from_owners, _owners)
from ..synthesis import (ControllerGains, ObserverGains, TopologyCertificate,
                         SolveStats)

FORMAT_TAG = "coalctrl-gains/v1"


class StoreError(ValueError):
    pass


@dataclass(eq=False)
class TopologyRecord:
    topology: Topology
    partition: Partition
    feasible: bool
    reason: str = None
    controller: ControllerGains = None
    observer: ObserverGains = None
    certificate: TopologyCertificate = None


@dataclass(eq=False)
class GainStore:
    link_universe: tuple
    agent_dims: tuple              # (n_x_i, n_u_i, n_y_i) per agent
    dt: float
    shape_matrix: np.ndarray
    records: dict = field(default_factory=dict)

    def certified(self):
        return {idx: rec for idx, rec in self.records.items() if rec.feasible}

    @property
    def n_agents(self):
        return len(self.agent_dims)

    @property
    def n_topologies(self):
        return 1 << len(self.link_universe)

    def masks_for(self, record):
        """(gain, observer, extended-state) masks of a topology record."""
        state = tuple(d[0] for d in self.agent_dims)
        inp = tuple(d[1] for d in self.agent_dims)
        out = tuple(d[2] for d in self.agent_dims)
        z_own = np.concatenate([_owners(state), _owners(inp)])
        xi_own = np.concatenate([_owners(state), _owners(inp), _owners(state)])
        return (mask_from_owners(record.partition, _owners(inp), z_own),
                mask_for(record.partition, state, out),
                mask_from_owners(record.partition, xi_own, xi_own))


def _mat(arr):
    return np.asarray(arr, dtype=float).tolist()


def _stats_dict(stats):
    if stats is None:
        return None
    return {"status": stats.status, "objective": stats.objective,
            "solve_time": stats.solve_time, "attempts": stats.attempts,
            "extra": dict(stats.extra)}


def _stats_from(d):
    if d is None:
        return None
    return SolveStats(status=d["status"], objective=d["objective"],
                      solve_time=d["solve_time"], attempts=d["attempts"],
                      extra=dict(d.get("extra", {})))


def save_gains(store, path):
    doc = {
        "format": FORMAT_TAG,
        "link_universe": [list(l) for l in store.link_universe],
        "agent_dims": [list(d) for d in store.agent_dims],
        "dt": store.dt,
        "shape_matrix": _mat(store.shape_matrix),
        "topologies": [],
    }
    for idx in sorted(store.records):
        rec = store.records[idx]
        entry = {
            "index": idx,
            "links": [list(l) for l in rec.topology.links],
            "coalitions": [list(c) for c in rec.partition.coalitions],
            "feasible": rec.feasible,
            "reason": rec.reason,
        }
        if rec.feasible:
            m_gain, m_obs, m_ext = store.masks_for(rec)
            entry["masks"] = {
                "gain": m_gain.allowed.astype(int).tolist(),
                "observer": m_obs.allowed.astype(int).tolist(),
                "extended": m_ext.allowed.astype(int).tolist(),
            }
            entry["controller"] = {
                "K_x": _mat(rec.controller.K_x), "K_u": _mat(rec.controller.K_u),
                "P_ctrl": _mat(rec.controller.P_ctrl), "W": _mat(rec.controller.W),
                "Y": _mat(rec.controller.Y),
                "spectral_radius": rec.controller.spectral_radius,
                "stats": _stats_dict(rec.controller.stats),
            }
            entry["observer"] = {
                "L": _mat(rec.observer.L), "beta": rec.observer.beta,
                "sigma": rec.observer.sigma, "Y_obs": _mat(rec.observer.Y_obs),
                "stats": _stats_dict(rec.observer.stats),
            }
            entry["certificate"] = {
                "P": _mat(rec.certificate.P), "margin": rec.certificate.margin,
                "stats": _stats_dict(rec.certificate.stats),
            }
        doc["topologies"].append(entry)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_gains(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT_TAG:
        raise StoreError(f"unsupported gain-store format {doc.get('format')!r}; "
                         f"expected {FORMAT_TAG}")
    universe = tuple(tuple(l) for l in doc["link_universe"])
    store = GainStore(link_universe=universe,
                      agent_dims=tuple(tuple(d) for d in doc["agent_dims"]),
                      dt=doc["dt"],
                      shape_matrix=np.asarray(doc["shape_matrix"], dtype=float))
    for entry in doc["topologies"]:
        topology = Topology(links=tuple(tuple(l) for l in entry["links"]),
                            link_universe=universe)
        partition = Partition(coalitions=tuple(tuple(c) for c in entry["coalitions"]),
                              n_agents=store.n_agents)
        rec = TopologyRecord(topology=topology, partition=partition,
                             feasible=entry["feasible"],
                             reason=entry.get("reason"))
        if rec.feasible:
            c = entry["controller"]
            rec.controller = ControllerGains(
                K_x=np.asarray(c["K_x"], float), K_u=np.asarray(c["K_u"], float),
                P_ctrl=np.asarray(c["P_ctrl"], float), W=np.asarray(c["W"], float),
                Y=np.asarray(c["Y"], float),
                spectral_radius=c["spectral_radius"], stats=_stats_from(c["stats"]))
            o = entry["observer"]
            rec.observer = ObserverGains(
                L=np.asarray(o["L"], float), beta=o["beta"], sigma=o["sigma"],
                P_obs=store.shape_matrix, Y_obs=np.asarray(o["Y_obs"], float),
                stats=_stats_from(o["stats"]))
            p = entry["certificate"]
            rec.certificate = TopologyCertificate(
                P=np.asarray(p["P"], float), feasible=True, margin=p["margin"],
                stats=_stats_from(p["stats"]))
        store.records[entry["index"]] = rec
    return store
