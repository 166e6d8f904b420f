import dataclasses
from importlib import resources

import numpy as np
import pytest
import scipy.linalg
import yaml

from coalctrl.harness import load_config, resolve_config, synthesize_all, run


def bundled_config_path():
    return resources.files("coalctrl.harness") / "configs" / "platoon.cfg"


def bundled_raw():
    with resources.as_file(bundled_config_path()) as path:
        with open(path, "r", encoding="utf-8") as fh:
            return yaml.safe_load(fh)


@pytest.fixture(scope="session")
def platoon_config():
    with resources.as_file(bundled_config_path()) as path:
        return load_config(path)


@pytest.fixture(scope="session")
def platoon_store(platoon_config):
    return synthesize_all(platoon_config)


@pytest.fixture(scope="session")
def benchmark_trace(platoon_config, platoon_store):
    return run(platoon_config, platoon_store)


@pytest.fixture(scope="session")
def forced_traces(platoon_config, platoon_store):
    grand = platoon_store.n_topologies - 1
    return {grand: run(platoon_config, platoon_store, forced_topology=grand),
            0: run(platoon_config, platoon_store, forced_topology=0)}


@pytest.fixture(scope="session")
def mc_setup():
    """Platoon config with coupling bounds wide enough to contain every
    trajectory started inside the initial estimation ellipsoid (radius 20),
    so the containment theorem's premise holds along all Monte Carlo runs."""
    raw = bundled_raw()
    raw["observer"]["state_bounds"] = 40.0
    raw["observer"]["input_bounds"] = 160.0
    raw["timing"]["horizon_seconds"] = 10.0
    config = resolve_config(raw)
    return config, synthesize_all(config)


def sample_inside_ellipsoid(rng, shape_matrix, center, rho, margin=1e-9):
    """Uniform-in-volume sample of {x : (x-c)' P (x-c) <= rho}, pulled a hair
    inside the boundary so float roundoff cannot push it out."""
    n = center.size
    direction = rng.standard_normal(n)
    direction /= np.linalg.norm(direction)
    radius = np.sqrt(rho) * (1.0 - margin) * rng.random() ** (1.0 / n)
    half_inv = np.linalg.inv(scipy.linalg.sqrtm(shape_matrix).real)
    return center + half_inv @ (radius * direction)


def replace_config(config, **kwargs):
    return dataclasses.replace(config, **kwargs)


def decoupled_raw(n_agents=3, a=0.8):
    """Stable decoupled scalar agents: no coupling, so every topology's
    observer has E = 0 and communication never buys anything."""
    eye = [[a if i == j else 0.0 for j in range(n_agents)] for i in range(n_agents)]
    return {
        "plant": {
            "type": "explicit",
            "time_domain": "discrete",
            "a": eye,
            "b": [[1.0 if i == j else 0.0 for j in range(n_agents)]
                  for i in range(n_agents)],
            "c": [[1.0 if i == j else 0.0 for j in range(n_agents)]
                  for i in range(n_agents)],
            "agent_dims": [[1, 1, 1]] * n_agents,
        },
        "links": [[i + 1, i + 2] for i in range(n_agents - 1)],
        "weights": {"q_x": 1.0, "r": 0.1, "q_e": 0.1},
        "supervisor": {"link_cost": 2.4, "kappa_seconds": 1.0},
        "observer": {"epsilon": 0.01, "state_bounds": 5.0, "input_bounds": 5.0},
        "timing": {"dt": 0.5, "switch_interval_seconds": 1.0,
                   "horizon_seconds": 10.0},
        "initial": {"state": [0.0] * n_agents},
        "seed": 0,
    }


@pytest.fixture(scope="session")
def decoupled_setup():
    config = resolve_config(decoupled_raw())
    return config, synthesize_all(config)
