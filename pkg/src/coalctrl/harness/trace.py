"""Time-indexed simulation results, summary metrics and CSV persistence.

Per-step CSV columns (exact order):
    k, t_seconds, topology_index, x1..xn_x, u1..un_u, xhat1..xn_x, stage_cost
Per-switch CSV columns:
    k, r_0..r_{M-1} (empty cell for decertified topologies), chosen_index,
    rho_bar_chosen
Floats are written with repr (shortest round-trip), so re-ingesting a file
reproduces every value bit-exactly.
"""

import csv
import json
import os
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np


Metrics = namedtuple("Metrics", ["J_x", "J_e", "J_total", "comm_cost"])


@dataclass(eq=False)
class Trace:
    dt: float
    switch_steps: int
    kappa_steps: float
    link_cost: float
    n_topologies: int
    k: np.ndarray = None
    x: np.ndarray = None
    u: np.ndarray = None
    x_hat: np.ndarray = None
    e: np.ndarray = None
    topology_index: np.ndarray = None
    n_links: np.ndarray = None
    cost_x: np.ndarray = None          # x'Q_x x + u'R u per step
    cost_e: np.ndarray = None          # e'Q_e e per step
    full_comm: np.ndarray = None       # network-wide sharing happened this step
    rho_certified: np.ndarray = None   # certified containment radius per step
    switches: list = field(default_factory=list)
    aborted: bool = False

    @property
    def n_steps(self):
        return 0 if self.k is None else len(self.k)

    @property
    def stage_cost(self):
        return self.cost_x + self.cost_e

    def dwell_steps(self):
        out = {}
        for idx in self.topology_index:
            out[int(idx)] = out.get(int(idx), 0) + 1
        return out


def metrics(trace):
    """(J_x, J_e, J_total, comm_cost): quadratic state/input cost, estimation
    cost, their total plus the communication charge, and the charge itself
    (kappa_steps * link_cost * |links| per switch interval)."""
    if trace.n_steps == 0:
        raise ValueError("trace is empty")
    J_x = float(np.sum(trace.cost_x))
    J_e = float(np.sum(trace.cost_e))
    starts = trace.k % trace.switch_steps == 0
    comm = float(trace.kappa_steps * trace.link_cost
                 * np.sum(trace.n_links[starts]))
    return Metrics(J_x=J_x, J_e=J_e, J_total=J_x + J_e + comm, comm_cost=comm)


def _fmt(value):
    return repr(float(value))


def steps_header(n_x, n_u):
    return (["k", "t_seconds", "topology_index"]
            + [f"x{i + 1}" for i in range(n_x)]
            + [f"u{i + 1}" for i in range(n_u)]
            + [f"xhat{i + 1}" for i in range(n_x)]
            + ["stage_cost"])


def export_trace(trace, out_dir):
    """Write steps.csv, switches.csv and summary.json into out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    n_x = trace.x.shape[1]
    n_u = trace.u.shape[1]
    with open(os.path.join(out_dir, "steps.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(steps_header(n_x, n_u))
        for i in range(trace.n_steps):
            row = [str(int(trace.k[i])), _fmt(trace.k[i] * trace.dt),
                   str(int(trace.topology_index[i]))]
            row += [_fmt(v) for v in trace.x[i]]
            row += [_fmt(v) for v in trace.u[i]]
            row += [_fmt(v) for v in trace.x_hat[i]]
            row.append(_fmt(trace.cost_x[i] + trace.cost_e[i]))
            writer.writerow(row)
    with open(os.path.join(out_dir, "switches.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k"] + [f"r_{j}" for j in range(trace.n_topologies)]
                        + ["chosen_index", "rho_bar_chosen"])
        for dec in trace.switches:
            row = [str(int(dec.k))]
            for j in range(trace.n_topologies):
                row.append(_fmt(dec.scores[j]) if j in dec.scores else "")
            row += [str(int(dec.chosen)), _fmt(dec.rho_bar[dec.chosen])]
            writer.writerow(row)
    summary = metrics(trace)._asdict()
    summary.update(n_steps=trace.n_steps, dt=trace.dt,
                   dwell_steps={str(k): v for k, v in trace.dwell_steps().items()},
                   aborted=trace.aborted)
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")


def load_steps(path):
    """Re-ingest a steps.csv file; returns a dict of arrays keyed like the
    Trace fields (x, u, x_hat, k, t_seconds, topology_index, stage_cost)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader]
    n_x = sum(1 for h in header if h.startswith("x") and not h.startswith("xhat"))
    n_u = sum(1 for h in header if h.startswith("u"))
    data = np.array([[float(v) for v in row] for row in rows])
    cols = {name: i for i, name in enumerate(header)}
    x0 = cols["x1"]
    u0 = cols["u1"]
    xh0 = cols["xhat1"]
    return {
        "k": data[:, cols["k"]].astype(int),
        "t_seconds": data[:, cols["t_seconds"]],
        "topology_index": data[:, cols["topology_index"]].astype(int),
        "x": data[:, x0:x0 + n_x],
        "u": data[:, u0:u0 + n_u],
        "x_hat": data[:, xh0:xh0 + n_x],
        "stage_cost": data[:, cols["stage_cost"]],
    }
