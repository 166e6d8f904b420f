"""Static result figures: per-car state evolutions and the topology-sequence
step plot. Works from an exported steps/switches CSV pair so plots can be
regenerated without re-running."""

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .trace import load_steps


_STATE_FIGS = (
    ("distance_error.png", "distance error [m]", 0),
    ("relative_speed.png", "relative speed [m/s]", 1),
    ("acceleration.png", "acceleration [m/s^2]", 2),
)


def _plot_channel(t, x, channel, n_agents, ylabel, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    for i in range(n_agents):
        ax.plot(t, x[:, 3 * i + channel], label=f"car {i + 1}")
    ax.set_xlabel("time [s]")
    ax.set_ylabel(ylabel)
    ax.axhline(0.0, color="k", linewidth=0.6, alpha=0.5)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _plot_states_generic(t, x, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    for j in range(x.shape[1]):
        ax.plot(t, x[:, j], label=f"x{j + 1}")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("state")
    ax.grid(True, alpha=0.3)
    if x.shape[1] <= 12:
        ax.legend(ncol=2, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_topology_sequence(t, topology_index, n_topologies, path):
    fig, ax = plt.subplots(figsize=(7, 2.6))
    ax.step(t, topology_index, where="post")
    ax.set_xlabel("time [s]")
    ax.set_yticks(range(n_topologies))
    ax.set_yticklabels([f"$\\Lambda_{{{j}}}$" for j in range(n_topologies)])
    ax.set_ylim(-0.5, n_topologies - 0.5)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_result_dir(out_dir, n_topologies=None):
    """Render figures from out_dir/steps.csv into out_dir; returns the list
    of files written. Plants with three states per agent get the platoon
    channel figures, anything else a combined state plot."""
    data = load_steps(os.path.join(out_dir, "steps.csv"))
    t = data["t_seconds"]
    x = data["x"]
    if n_topologies is None:
        n_topologies = int(np.max(data["topology_index"])) + 1
    written = []
    if x.shape[1] % 3 == 0:
        n_agents = x.shape[1] // 3
        for fname, ylabel, channel in _STATE_FIGS:
            path = os.path.join(out_dir, fname)
            _plot_channel(t, x, channel, n_agents, ylabel, path)
            written.append(path)
    else:
        path = os.path.join(out_dir, "states.png")
        _plot_states_generic(t, x, path)
        written.append(path)
    path = os.path.join(out_dir, "topology_sequence.png")
    plot_topology_sequence(t, data["topology_index"], n_topologies, path)
    written.append(path)
    return written
