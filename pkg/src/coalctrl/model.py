"""Networked LTI plant, communication topologies, coalition structure and the
platoon benchmark model.

Agents are indexed 0..N-1. A communication topology is a subset of an ordered
universe of undirected links; the coalitions it induces are the connected
components of the link graph. Block-structure masks derived from a coalition
partition constrain every synthesized gain so that no matrix entry couples
variables of different coalitions.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm


class ModelError(ValueError):
    """Invalid plant, topology or partition data."""


def _as_matrix(m, name):
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2:
        raise ModelError(f"{name} must be a 2-d matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class PlantModel:
    """Discrete-time LTI system x+ = A x + B u, y = C x with per-agent dims.

    agent_dims lists (n_x_i, n_u_i, n_y_i) per agent; stacked vectors are
    ordered agent by agent. C must be block-diagonal w.r.t. agent_dims: each
    agent measures only its own states.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    agent_dims: tuple
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "A", _as_matrix(self.A, "A"))
        object.__setattr__(self, "B", _as_matrix(self.B, "B"))
        object.__setattr__(self, "C", _as_matrix(self.C, "C"))
        object.__setattr__(self, "agent_dims",
                           tuple((int(a), int(b), int(c)) for a, b, c in self.agent_dims))
        if self.dt <= 0:
            raise ModelError("dt must be positive")
        nx, nu, ny = (sum(d[i] for d in self.agent_dims) for i in range(3))
        if self.A.shape != (nx, nx):
            raise ModelError(f"A has shape {self.A.shape}, agent dims need ({nx},{nx})")
        if self.B.shape != (nx, nu):
            raise ModelError(f"B has shape {self.B.shape}, agent dims need ({nx},{nu})")
        if self.C.shape != (ny, nx):
            raise ModelError(f"C has shape {self.C.shape}, agent dims need ({ny},{nx})")
        # each agent's output rows may only read that agent's state columns
        blocks = np.zeros_like(self.C, dtype=bool)
        rx = np.cumsum([0] + [d[0] for d in self.agent_dims])
        ry = np.cumsum([0] + [d[2] for d in self.agent_dims])
        for i in range(self.n_agents):
            blocks[ry[i]:ry[i + 1], rx[i]:rx[i + 1]] = True
        if np.any(self.C[~blocks] != 0.0):
            raise ModelError("C must be block-diagonal w.r.t. agent_dims")

    @property
    def n_agents(self):
        return len(self.agent_dims)

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]

    @property
    def n_y(self):
        return self.C.shape[0]

    def state_dims(self):
        return tuple(d[0] for d in self.agent_dims)

    def input_dims(self):
        return tuple(d[1] for d in self.agent_dims)

    def output_dims(self):
        return tuple(d[2] for d in self.agent_dims)


def _norm_link(link):
    i, j = int(link[0]), int(link[1])
    if i == j:
        raise ModelError(f"self-loop link ({i},{j}) not allowed")
    return (min(i, j), max(i, j))


@dataclass(frozen=True)
class Topology:
    """A set of enabled links drawn from an ordered universe of allowed links."""

    links: tuple
    link_universe: tuple

    def __post_init__(self):
        uni = tuple(_norm_link(l) for l in self.link_universe)
        if len(set(uni)) != len(uni):
            raise ModelError("link universe contains duplicate links")
        enabled = tuple(sorted(set(_norm_link(l) for l in self.links)))
        missing = [l for l in enabled if l not in uni]
        if missing:
            raise ModelError(f"links {missing} not in the link universe")
        object.__setattr__(self, "links", enabled)
        object.__setattr__(self, "link_universe", uni)

    @property
    def index(self):
        """Binary-counting index over the ordered universe (empty set = 0)."""
        return sum(1 << b for b, l in enumerate(self.link_universe) if l in self.links)

    @property
    def n_links(self):
        return len(self.links)

    def __str__(self):
        return f"Topology_{self.index}{{{','.join(f'{i}-{j}' for i, j in self.links)}}}"


@dataclass(frozen=True)
class Partition:
    """Disjoint nonempty coalitions covering agents 0..n_agents-1."""

    coalitions: tuple
    n_agents: int

    def __post_init__(self):
        coals = tuple(tuple(sorted(set(int(a) for a in c))) for c in self.coalitions)
        coals = tuple(sorted(coals, key=lambda c: c[0]))
        object.__setattr__(self, "coalitions", coals)
        if not coals or any(len(c) == 0 for c in coals):
            raise ModelError("coalitions must be nonempty")
        members = [a for c in coals for a in c]
        if sorted(members) != list(range(self.n_agents)):
            raise ModelError("coalitions must partition the agent set exactly")

    def coalition_id(self):
        """Array mapping agent index -> coalition index."""
        cid = np.empty(self.n_agents, dtype=int)
        for k, c in enumerate(self.coalitions):
            for a in c:
                cid[a] = k
        return cid


@dataclass(frozen=True, eq=False)
class StructMask:
    """Boolean block pattern: allowed[r, c] is True iff the agent owning row r
    and the agent owning column c share a coalition."""

    allowed: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "allowed", np.asarray(self.allowed, dtype=bool))

    @property
    def shape(self):
        return self.allowed.shape

    def violation(self, matrix):
        """Largest |entry| outside the allowed pattern (0.0 if none)."""
        off = np.asarray(matrix)[~self.allowed]
        return float(np.max(np.abs(off))) if off.size else 0.0

    def project(self, matrix):
        """Zero out all off-pattern entries."""
        return np.where(self.allowed, np.asarray(matrix, dtype=float), 0.0)


@dataclass(frozen=True)
class PlatoonParams:
    """Parameters of the vehicle-platoon benchmark (spacing policy
    d_r = standstill + headway * v, first-order engine lag)."""

    n_cars: int
    headway: float
    engine_tau: float
    standstill: float
    dt: float

    def __post_init__(self):
        if self.n_cars < 2:
            raise ModelError("platoon needs at least 2 cars")
        for name in ("headway", "engine_tau", "standstill", "dt"):
            if getattr(self, name) <= 0:
                raise ModelError(f"{name} must be strictly positive")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def enumerate_topologies(link_universe):
    """All 2^|universe| topologies, ordered by binary counting over the
    ordered universe: topology j enables link b iff bit b of j is set."""
    uni = tuple(_norm_link(l) for l in link_universe)
    if len(set(uni)) != len(uni):
        raise ModelError("link universe contains duplicate links")
    out = []
    for j in range(1 << len(uni)):
        links = tuple(uni[b] for b in range(len(uni)) if j >> b & 1)
        out.append(Topology(links=links, link_universe=uni))
    return out


def coalitions_of(topology, n_agents):
    """Coalitions = connected components of the enabled-link graph; isolated
    agents form singletons. Components are listed by smallest member."""
    for i, j in topology.links:
        if not (0 <= i < n_agents and 0 <= j < n_agents):
            raise ModelError(f"link ({i},{j}) outside agent range 0..{n_agents - 1}")
    parent = list(range(n_agents))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in topology.links:
        parent[find(i)] = find(j)
    groups = {}
    for a in range(n_agents):
        groups.setdefault(find(a), []).append(a)
    return Partition(coalitions=tuple(tuple(g) for g in groups.values()),
                     n_agents=n_agents)


def _owners(dims):
    """Agent index owning each entry of a stacked vector with per-agent dims."""
    return np.repeat(np.arange(len(dims)), dims)


def mask_from_owners(partition, row_owners, col_owners):
    """Mask over arbitrary row/column ownership vectors (agent index per entry)."""
    cid = partition.coalition_id()
    r = cid[np.asarray(row_owners, dtype=int)]
    c = cid[np.asarray(col_owners, dtype=int)]
    return StructMask(allowed=r[:, None] == c[None, :])


def mask_for(partition, row_dims, col_dims):
    """Block pattern for a matrix whose rows/columns are stacked agent by
    agent with the given per-agent sizes."""
    if len(row_dims) != partition.n_agents or len(col_dims) != partition.n_agents:
        raise ModelError("row/col dims must have one entry per agent")
    return mask_from_owners(partition, _owners(row_dims), _owners(col_dims))


def input_state_mask(partition, plant):
    """Mask over the lifted vector [x; u] (used by W, P_ctrl)."""
    own = np.concatenate([_owners(plant.state_dims()), _owners(plant.input_dims())])
    return mask_from_owners(partition, own, own)


def gain_mask(partition, plant):
    """Mask for the stacked feedback gain [K_x K_u]: input rows, [x; u] columns."""
    rows = _owners(plant.input_dims())
    cols = np.concatenate([_owners(plant.state_dims()), _owners(plant.input_dims())])
    return mask_from_owners(partition, rows, cols)


def observer_mask(partition, plant):
    """Mask for the observer gain (state rows, output columns)."""
    return mask_for(partition, plant.state_dims(), plant.output_dims())


def extended_state_mask(partition, plant):
    """Mask over the extended vector [x; u; e] (used by the certificate P)."""
    own = np.concatenate([_owners(plant.state_dims()),
                          _owners(plant.input_dims()),
                          _owners(plant.state_dims())])
    return mask_from_owners(partition, own, own)


def split_dynamics(plant, partition):
    """Split A, B into the within-coalition part and the remainder:
    A_coal keeps exactly the mask-allowed entries, A_rest = A - A_coal
    (bit-exact), and likewise for B."""
    if partition.n_agents != plant.n_agents:
        raise ModelError("partition does not match the plant's agent count")
    m_xx = mask_for(partition, plant.state_dims(), plant.state_dims())
    m_xu = mask_for(partition, plant.state_dims(), plant.input_dims())
    a_coal = np.where(m_xx.allowed, plant.A, 0.0)
    b_coal = np.where(m_xu.allowed, plant.B, 0.0)
    return a_coal, b_coal, plant.A - a_coal, plant.B - b_coal


def zoh_discretize(A_c, B_c, dt):
    """Exact zero-order-hold discretization via the augmented matrix
    exponential: A_d = exp(A_c dt), B_d = (integral of exp(A_c s)) B_c."""
    A_c = _as_matrix(A_c, "A_c")
    B_c = _as_matrix(B_c, "B_c")
    if A_c.shape[0] != A_c.shape[1]:
        raise ModelError("A_c must be square")
    if B_c.shape[0] != A_c.shape[0]:
        raise ModelError("B_c row count must match A_c")
    if dt <= 0:
        raise ModelError("dt must be positive")
    n, m = A_c.shape[0], B_c.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A_c
    aug[:n, n:] = B_c
    phi = expm(aug * dt)
    return phi[:n, :n], phi[:n, n:]


def platoon_continuous(params):
    """Stacked continuous-time platoon matrices (before discretization).

    Per-car state x_i = [distance error, relative velocity, acceleration].
    The predecessor's acceleration enters car i's relative-velocity dynamics,
    which is the only inter-car coupling; a lead "car 0" with zero
    acceleration and input closes the boundary, so car 1 is self-contained.
    """
    n, h, tau = params.n_cars, params.headway, params.engine_tau
    A = np.zeros((3 * n, 3 * n))
    B = np.zeros((3 * n, n))
    for i in range(n):
        r = 3 * i
        A[r, r + 1] = 1.0
        A[r, r + 2] = -h
        A[r + 1, r + 2] = -1.0
        A[r + 2, r + 2] = -1.0 / tau
        B[r + 2, i] = 1.0 / tau
        if i > 0:
            A[r + 1, r - 1] = 1.0  # predecessor acceleration
    return A, B


def build_platoon(params):
    """Discrete-time platoon plant: ZOH-sampled stack of per-car models.

    Each car measures its distance error and relative velocity; acceleration
    is unmeasured and must be estimated.
    """
    A_c, B_c = platoon_continuous(params)
    A_d, B_d = zoh_discretize(A_c, B_c, params.dt)
    n = params.n_cars
    C = np.zeros((2 * n, 3 * n))
    for i in range(n):
        C[2 * i, 3 * i] = 1.0
        C[2 * i + 1, 3 * i + 1] = 1.0
    return PlantModel(A=A_d, B=B_d, C=C,
                      agent_dims=tuple((3, 1, 2) for _ in range(n)),
                      dt=params.dt)


@dataclass(frozen=True)
class StabilizabilityReport:
    ok: bool
    failures: tuple = field(default_factory=tuple)  # (kind, eigenvalue) pairs

    def __bool__(self):
        return self.ok


def check_stabilizable_detectable(plant, tol=1e-9):
    """PBH rank test at every eigenvalue with |lambda| >= 1 (discrete time),
    for stabilizability of (A, B) and detectability of (A, C)."""
    A, B, C = plant.A, plant.B, plant.C
    n = A.shape[0]
    eigs = np.linalg.eigvals(A)
    checked = []
    failures = []
    for lam in eigs:
        if abs(lam) < 1.0 - tol:
            continue
        if any(abs(lam - seen) <= 1e-8 for seen in checked):
            continue
        checked.append(lam)
        pencil = lam * np.eye(n) - A
        if np.linalg.matrix_rank(np.hstack([pencil, B]), tol=1e-8) < n:
            failures.append(("unstabilizable", complex(lam)))
        if np.linalg.matrix_rank(np.vstack([pencil, C]), tol=1e-8) < n:
            failures.append(("undetectable", complex(lam)))
    return StabilizabilityReport(ok=not failures, failures=tuple(failures))
