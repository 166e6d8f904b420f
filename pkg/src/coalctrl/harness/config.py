"""Experiment configuration: a YAML document with nested sections, validated
strictly (unknown keys rejected, field-level messages) and resolved into
concrete matrices, step counts and solver options.

Agent indices in the config file are 1-based; everything internal is 0-based.
"""

from dataclasses import dataclass, field

import numpy as np
import yaml

from ..model import (ModelError, PlantModel, PlatoonParams, build_platoon,
                     zoh_discretize, _owners)
from ..synthesis import SynthOptions, _check_spd


class ConfigError(ValueError):
    """Invalid configuration; message names the offending field."""


_PLANT_KEYS = {"type", "n_cars", "headway", "engine_tau", "standstill",
               "time_domain", "a", "b", "c", "agent_dims"}
_TOP_KEYS = {"plant", "links", "weights", "supervisor", "observer", "timing",
             "initial", "solver", "seed"}
_WEIGHT_KEYS = {"q_x", "r", "q_e"}
_SUP_KEYS = {"link_cost", "kappa_seconds"}
_OBS_KEYS = {"epsilon", "shape_matrix", "state_bounds", "input_bounds"}
_TIMING_KEYS = {"dt", "switch_interval_seconds", "horizon_seconds"}
_INITIAL_KEYS = {"state", "estimate", "estimation_error", "topology"}
_SOLVER_KEYS = {"strictness", "w_max", "beta_min", "mask_snap_tol",
                "vertex_budget", "worst_case_exponent"}


@dataclass(frozen=True, eq=False)
class SimConfig:
    plant: PlantModel
    link_universe: tuple
    q_x: np.ndarray
    r: np.ndarray
    q_e: np.ndarray
    link_cost: float
    kappa_seconds: float
    kappa_steps: float
    epsilon: float
    shape_matrix: np.ndarray
    omega_box: np.ndarray          # per-component bounds over [x; u]
    dt: float
    switch_steps: int
    horizon_steps: int
    x0: np.ndarray
    x_hat0: np.ndarray
    initial_topology: int
    options: SynthOptions
    seed: int
    resolved: dict = field(repr=False, default_factory=dict)

    @property
    def q_full(self):
        """diag(q_x, r, q_e) over the extended vector [x; u; e]."""
        n_x, n_u = self.plant.n_x, self.plant.n_u
        out = np.zeros((2 * n_x + n_u, 2 * n_x + n_u))
        out[:n_x, :n_x] = self.q_x
        out[n_x:n_x + n_u, n_x:n_x + n_u] = self.r
        out[n_x + n_u:, n_x + n_u:] = self.q_e
        return out


def _require_keys(section, allowed, path):
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(section).__name__}")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")


def _number(section, key, path, default=None, minimum=None, strict_min=None):
    if key not in section:
        if default is None:
            raise ConfigError(f"{path}.{key}: required")
        return default
    val = section[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number")
    val = float(val)
    if minimum is not None and val < minimum:
        raise ConfigError(f"{path}.{key}: must be >= {minimum}")
    if strict_min is not None and val <= strict_min:
        raise ConfigError(f"{path}.{key}: must be > {strict_min}")
    return val


def _matrix(value, shape, path):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a nested numeric array") from None
    if arr.shape != shape:
        raise ConfigError(f"{path}: expected shape {shape}, got {arr.shape}")
    return arr


def _weight(value, dim, path):
    """Scalar -> scale * identity; nested array -> full matrix. SPD required."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if value <= 0:
            raise ConfigError(f"{path}: scalar weight must be positive")
        return float(value) * np.eye(dim)
    mat = _matrix(value, (dim, dim), path)
    try:
        return _check_spd(mat, path)
    except ValueError as err:
        raise ConfigError(str(err)) from None


def _bounds(value, dim, path):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if value < 0:
            raise ConfigError(f"{path}: bound must be nonnegative")
        return np.full(dim, float(value))
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size != dim:
        raise ConfigError(f"{path}: expected {dim} bounds, got {arr.size}")
    if np.any(arr < 0):
        raise ConfigError(f"{path}: bounds must be nonnegative")
    return arr


def _stacked_vector(value, dims, path):
    """Flat list of sum(dims) entries, or one list per agent."""
    total = sum(dims)
    if isinstance(value, (list, tuple)) and len(value) == len(dims) \
            and all(isinstance(v, (list, tuple)) for v in value):
        flat = []
        for i, (v, d) in enumerate(zip(value, dims)):
            if len(v) != d:
                raise ConfigError(f"{path}[{i}]: expected {d} values, got {len(v)}")
            flat.extend(float(x) for x in v)
        return np.array(flat)
    try:
        arr = np.asarray(value, dtype=float).ravel()
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected numeric data") from None
    if arr.size != total:
        raise ConfigError(f"{path}: expected {total} values (flat or per-agent)")
    return arr


def _integer_ratio(numer, denom, path):
    ratio = numer / denom
    steps = round(ratio)
    if steps < 1 or abs(ratio - steps) > 1e-9 * max(1.0, abs(ratio)):
        raise ConfigError(f"{path}: {numer} must be an integer multiple (>= 1) of dt={denom}")
    return int(steps)


def _build_plant(section, dt):
    _require_keys(section, _PLANT_KEYS, "plant")
    kind = section.get("type")
    if kind == "platoon":
        extra = set(section) & {"time_domain", "a", "b", "c", "agent_dims"}
        if extra:
            raise ConfigError(f"plant: keys {sorted(extra)} not valid for type=platoon")
        params = PlatoonParams(
            n_cars=int(_number(section, "n_cars", "plant", minimum=2)),
            headway=_number(section, "headway", "plant", strict_min=0.0),
            engine_tau=_number(section, "engine_tau", "plant", strict_min=0.0),
            standstill=_number(section, "standstill", "plant", default=10.0,
                               strict_min=0.0),
            dt=dt)
        return build_platoon(params)
    if kind == "explicit":
        extra = set(section) & {"n_cars", "headway", "engine_tau", "standstill"}
        if extra:
            raise ConfigError(f"plant: keys {sorted(extra)} not valid for type=explicit")
        for key in ("a", "b", "c", "agent_dims"):
            if key not in section:
                raise ConfigError(f"plant.{key}: required for type=explicit")
        dims = tuple(tuple(int(v) for v in d) for d in section["agent_dims"])
        n_x = sum(d[0] for d in dims)
        n_u = sum(d[1] for d in dims)
        n_y = sum(d[2] for d in dims)
        a = _matrix(section["a"], (n_x, n_x), "plant.a")
        b = _matrix(section["b"], (n_x, n_u), "plant.b")
        c = _matrix(section["c"], (n_y, n_x), "plant.c")
        domain = section.get("time_domain", "discrete")
        if domain not in ("discrete", "continuous"):
            raise ConfigError("plant.time_domain: must be 'discrete' or 'continuous'")
        if domain == "continuous":
            a, b = zoh_discretize(a, b, dt)
        try:
            return PlantModel(A=a, B=b, C=c, agent_dims=dims, dt=dt)
        except ModelError as err:
            raise ConfigError(f"plant: {err}") from None
    raise ConfigError("plant.type: must be 'platoon' or 'explicit'")


def _parse_links(raw, n_agents):
    links = []
    for i, pair in enumerate(raw):
        if not hasattr(pair, "__len__") or len(pair) != 2:
            raise ConfigError(f"links[{i}]: expected an agent pair")
        a, b = int(pair[0]), int(pair[1])
        if not (1 <= a <= n_agents and 1 <= b <= n_agents):
            raise ConfigError(f"links[{i}]: agents must be in 1..{n_agents}")
        if a == b:
            raise ConfigError(f"links[{i}]: self-loops not allowed")
        links.append((min(a, b) - 1, max(a, b) - 1))
    if len(set(links)) != len(links):
        raise ConfigError("links: duplicate pairs")
    return tuple(links)


def _check_block_diagonal(mat, dims, path):
    offsets = np.cumsum([0] + list(dims))
    owner = _owners(dims)
    same = owner[:, None] == owner[None, :]
    if np.any(mat[~same] != 0.0):
        raise ConfigError(f"{path}: must be block-diagonal per agent "
                          f"(blocks of sizes {tuple(dims)} at offsets {offsets[:-1].tolist()})")


def resolve_config(raw):
    """Validate a parsed config mapping and resolve it into a SimConfig."""
    _require_keys(raw, _TOP_KEYS, "config")
    for key in ("plant", "timing"):
        if key not in raw:
            raise ConfigError(f"config.{key}: required section")

    timing = raw["timing"]
    _require_keys(timing, _TIMING_KEYS, "timing")
    dt = _number(timing, "dt", "timing", strict_min=0.0)
    switch_s = _number(timing, "switch_interval_seconds", "timing", strict_min=0.0)
    horizon_s = _number(timing, "horizon_seconds", "timing", strict_min=0.0)
    switch_steps = _integer_ratio(switch_s, dt, "timing.switch_interval_seconds")
    horizon_steps = _integer_ratio(horizon_s, dt, "timing.horizon_seconds")

    plant = _build_plant(raw["plant"], dt)
    n_x, n_u = plant.n_x, plant.n_u

    if "links" in raw:
        universe = _parse_links(raw["links"], plant.n_agents)
    elif raw["plant"].get("type") == "platoon":
        universe = tuple((i, i + 1) for i in range(plant.n_agents - 1))
    else:
        raise ConfigError("config.links: required for explicit plants")

    weights = raw.get("weights", {})
    _require_keys(weights, _WEIGHT_KEYS, "weights")
    q_x = _weight(weights.get("q_x", 1.0), n_x, "weights.q_x")
    r_w = _weight(weights.get("r", 0.1), n_u, "weights.r")
    q_e = _weight(weights.get("q_e", 0.1), n_x, "weights.q_e")

    sup = raw.get("supervisor", {})
    _require_keys(sup, _SUP_KEYS, "supervisor")
    link_cost = _number(sup, "link_cost", "supervisor", default=2.4, minimum=0.0)
    kappa_s = _number(sup, "kappa_seconds", "supervisor", default=1.0,
                      strict_min=0.0)
    if kappa_s / dt < 1.0 - 1e-9:
        raise ConfigError("supervisor.kappa_seconds: kappa/dt must be >= 1")
    kappa_steps = kappa_s / dt

    obs = raw.get("observer", {})
    _require_keys(obs, _OBS_KEYS, "observer")
    epsilon = _number(obs, "epsilon", "observer", default=0.01, strict_min=0.0)
    shape_raw = obs.get("shape_matrix", 1.0)
    if isinstance(shape_raw, (int, float)) and not isinstance(shape_raw, bool):
        if shape_raw <= 0:
            raise ConfigError("observer.shape_matrix: scalar must be positive")
        shape = float(shape_raw) * np.eye(n_x)
    else:
        shape = _matrix(shape_raw, (n_x, n_x), "observer.shape_matrix")
        try:
            shape = _check_spd(shape, "observer.shape_matrix")
        except ValueError as err:
            raise ConfigError(str(err)) from None
        _check_block_diagonal(shape, plant.state_dims(), "observer.shape_matrix")
    omega_box = np.concatenate([
        _bounds(obs.get("state_bounds", 10.0), n_x, "observer.state_bounds"),
        _bounds(obs.get("input_bounds", 50.0), n_u, "observer.input_bounds"),
    ])

    initial = raw.get("initial", {})
    _require_keys(initial, _INITIAL_KEYS, "initial")
    if "state" in initial:
        x0 = _stacked_vector(initial["state"], plant.state_dims(), "initial.state")
    else:
        x0 = np.zeros(n_x)
    if "estimate" in initial and "estimation_error" in initial:
        raise ConfigError("initial: give either estimate or estimation_error, not both")
    if "estimate" in initial:
        x_hat0 = _stacked_vector(initial["estimate"], plant.state_dims(),
                                 "initial.estimate")
    elif "estimation_error" in initial:
        err0 = _stacked_vector(initial["estimation_error"], plant.state_dims(),
                               "initial.estimation_error")
        x_hat0 = x0 + err0
    else:
        x_hat0 = x0.copy()
    n_topologies = 1 << len(universe)
    init_topo = initial.get("topology", n_topologies - 1)
    if not isinstance(init_topo, int) or not 0 <= init_topo < n_topologies:
        raise ConfigError(f"initial.topology: must be an index in 0..{n_topologies - 1}")

    solver = raw.get("solver", {})
    _require_keys(solver, _SOLVER_KEYS, "solver")
    options = SynthOptions(
        strictness=_number(solver, "strictness", "solver", default=1e-6,
                           strict_min=0.0),
        w_max=_number(solver, "w_max", "solver", default=1e6, strict_min=0.0),
        beta_min=_number(solver, "beta_min", "solver", default=1e-3,
                         strict_min=0.0),
        mask_snap_tol=_number(solver, "mask_snap_tol", "solver", default=1e-7,
                              strict_min=0.0),
        vertex_budget=int(_number(solver, "vertex_budget", "solver",
                                  default=4096, minimum=1)),
        worst_case_exponent=int(_number(solver, "worst_case_exponent", "solver",
                                        default=20, minimum=1)),
    )

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("config.seed: must be a nonnegative integer")

    resolved = {
        "plant": dict(raw["plant"]),
        "links": [[i + 1, j + 1] for i, j in universe],
        "weights": {"q_x": weights.get("q_x", 1.0), "r": weights.get("r", 0.1),
                    "q_e": weights.get("q_e", 0.1)},
        "supervisor": {"link_cost": link_cost, "kappa_seconds": kappa_s},
        "observer": {"epsilon": epsilon, "shape_matrix": shape_raw,
                     "state_bounds": obs.get("state_bounds", 10.0),
                     "input_bounds": obs.get("input_bounds", 50.0)},
        "timing": {"dt": dt, "switch_interval_seconds": switch_s,
                   "horizon_seconds": horizon_s},
        "initial": {"state": x0.tolist(), "estimate": x_hat0.tolist(),
                    "topology": init_topo},
        "solver": {"strictness": options.strictness, "w_max": options.w_max,
                   "beta_min": options.beta_min,
                   "mask_snap_tol": options.mask_snap_tol,
                   "vertex_budget": options.vertex_budget,
                   "worst_case_exponent": options.worst_case_exponent},
        "seed": seed,
    }
    return SimConfig(plant=plant, link_universe=universe, q_x=q_x, r=r_w,
                     q_e=q_e, link_cost=link_cost, kappa_seconds=kappa_s,
                     kappa_steps=kappa_steps, epsilon=epsilon,
                     shape_matrix=shape, omega_box=omega_box, dt=dt,
                     switch_steps=switch_steps, horizon_steps=horizon_steps,
                     x0=x0, x_hat0=x_hat0, initial_topology=init_topo,
                     options=options, seed=seed, resolved=resolved)


def load_config(path):
    """Parse and resolve a config file; raises ConfigError with a field-level
    message on any schema violation."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as err:
            raise ConfigError(f"config parse error: {err}") from None
    if raw is None:
        raise ConfigError("config file is empty")
    return resolve_config(raw)


def echo_config(config, path):
    """Write the fully-resolved configuration (defaults filled in) as YAML."""
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config.resolved, fh, sort_keys=False)
