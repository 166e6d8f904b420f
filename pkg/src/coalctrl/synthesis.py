"""Structured controller/observer synthesis and closed-loop certification.

Three semidefinite programs, solved per topology under block-structure
constraints derived from the coalition partition:

* controller: maximize trace(W) subject to a contraction LMI over the lifted
  vector [x; u], recovering the dynamic feedback u+ = K_x x_hat + K_u u;
* observer: minimize sigma + eps*beta subject to an ellipsoid-propagation LMI
  instantiated at every vertex of the coupling hypercube, recovering the
  innovation gain L and the radius recursion rho+ <= beta*rho + sigma;
* certificate: find a structured P > 0 with A_cl' P A_cl - P < -Q, proving
  per-step decrease of the extended-state quadratic and the infinite-horizon
  stage-cost bound.

All mask constraints are structural: off-pattern entries never exist as
decision variables. Derived products (K = Y W^-1, L = -P^-1 Y, P_ctrl = W^-1)
are snapped to exact zeros below the snap tolerance; larger leakage is a
solver failure, not something to round away.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import cvxpy as cp
import scipy.linalg

from .model import (StructMask, split_dynamics, input_state_mask, gain_mask,
                    observer_mask)


class SynthesisError(RuntimeError):
    pass


class InfeasibleTopologyError(SynthesisError):
    """The SDP is infeasible for this topology; drop it from the certified set."""


class SolverFailureError(SynthesisError):
    """The solver failed numerically or returned an unusable point."""


class VertexBudgetError(SynthesisError):
    """Too many coupling vertices; use coarser bounds or merge coalitions."""


@dataclass(frozen=True)
class SynthOptions:
    strictness: float = 1e-6       # mu: strict inequalities become >= mu*scale*I
    w_max: float = 1e6             # trust-region cap W <= w_max*I
    beta_min: float = 1e-3         # beta constrained to [beta_min, 1-beta_min]
    mask_snap_tol: float = 1e-7    # off-mask entries below this snap to zero
    vertex_budget: int = 4096      # max coupling vertices per observer SDP
    worst_case_exponent: int = 20  # max n_x for the 2^n_x supervisor search


@dataclass(frozen=True)
class SolveStats:
    status: str
    objective: float
    solve_time: float
    attempts: int
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class ControllerGains:
    K_x: np.ndarray
    K_u: np.ndarray
    P_ctrl: np.ndarray    # inverse of W, certifies the ideal-loop cost bound
    W: np.ndarray
    Y: np.ndarray
    spectral_radius: float
    stats: SolveStats


@dataclass(frozen=True, eq=False)
class ObserverGains:
    L: np.ndarray         # error dynamics contract with A_coal + L C
    beta: float
    sigma: float
    P_obs: np.ndarray
    Y_obs: np.ndarray
    stats: SolveStats

    @property
    def rho_fixed_point(self):
        return self.sigma / (1.0 - self.beta)


@dataclass(frozen=True, eq=False)
class TopologyCertificate:
    P: np.ndarray
    feasible: bool
    margin: float
    stats: SolveStats = None


# ---------------------------------------------------------------------------
# SdpSpec: uniform interface to the conic solver
# ---------------------------------------------------------------------------

_SOLVER_LADDER = (
    dict(tol_gap_abs=1e-8, tol_gap_rel=1e-8, tol_feas=1e-8,
         reduced_tol_gap_abs=1e-4, reduced_tol_gap_rel=1e-4,
         reduced_tol_feas=1e-5, reduced_tol_ktratio=1e-4, max_iter=400),
    dict(tol_gap_abs=1e-6, tol_gap_rel=1e-6, tol_feas=1e-7,
         reduced_tol_gap_abs=1e-3, reduced_tol_gap_rel=1e-3,
         reduced_tol_feas=1e-4, reduced_tol_ktratio=1e-3, max_iter=400),
)


def _dense_value(var):
    try:
        sv = var.value_sparse
    except Exception:
        sv = None
    if sv is not None:
        return np.asarray(sv.toarray(), dtype=float)
    return np.asarray(var.value, dtype=float)


class SdpSpec:
    """A semidefinite program: masked matrix variables, scalar variables,
    affine expressions required positive definite with a strictness margin,
    and a linear objective."""

    def __init__(self, margin):
        if margin <= 0:
            raise ValueError("strictness margin must be positive")
        self.margin = float(margin)
        self.constraints = []
        self.objective = None
        self._vars = []

    def matrix_var(self, shape, mask=None, symmetric=False):
        if mask is not None and mask.shape != tuple(shape):
            raise ValueError("mask shape does not match variable shape")
        if mask is None or mask.allowed.all():
            var = cp.Variable(shape, symmetric=True) if symmetric else cp.Variable(shape)
        else:
            rows, cols = np.nonzero(mask.allowed)
            var = cp.Variable(shape, sparsity=(list(rows), list(cols)))
            if symmetric:
                self.constraints.append(var == var.T)
        self._vars.append(var)
        return var

    def scalar_var(self, lower=None, upper=None):
        var = cp.Variable()
        if lower is not None:
            self.constraints.append(var >= lower)
        if upper is not None:
            self.constraints.append(var <= upper)
        self._vars.append(var)
        return var

    def require_pd(self, expr):
        """Strict inequality expr > 0, enforced as expr >= margin*I."""
        n = expr.shape[0]
        self.constraints.append(expr >> self.margin * np.eye(n))

    def require(self, constraint):
        self.constraints.append(constraint)

    def minimize(self, expr):
        self.objective = cp.Minimize(expr)

    def maximize(self, expr):
        self.objective = cp.Maximize(expr)

    def solve(self):
        """Run the solver ladder; returns SolveStats on success.

        Raises InfeasibleTopologyError on a certified-infeasible problem and
        SolverFailureError when no rung produces a usable point.
        """
        if self.objective is None:
            self.objective = cp.Minimize(0)
        prob = cp.Problem(self.objective, self.constraints)
        t0 = time.perf_counter()
        last_error = None
        for attempt, settings in enumerate(_SOLVER_LADDER, start=1):
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    prob.solve(solver=cp.CLARABEL, **settings)
            except cp.error.SolverError as err:
                last_error = err
                continue
            status = prob.status
            if status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
                return SolveStats(status=status, objective=float(prob.value),
                                  solve_time=time.perf_counter() - t0,
                                  attempts=attempt)
            if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
                raise InfeasibleTopologyError(f"SDP infeasible (status {status})")
            last_error = SynthesisError(f"unexpected solver status {status}")
        raise SolverFailureError(f"conic solver failed: {last_error}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def psd_sqrt(mat):
    w, v = np.linalg.eigh(np.asarray(mat, dtype=float))
    if np.min(w) < -1e-12 * max(1.0, np.max(np.abs(w))):
        raise ValueError("matrix is not positive semidefinite")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _check_spd(mat, name):
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(mat, mat.T, atol=1e-12 * max(1.0, np.abs(mat).max())):
        raise ValueError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(mat)) <= 0:
        raise ValueError(f"{name} must be positive definite")
    return 0.5 * (mat + mat.T)


def _margin(options, *weight_mats):
    scale = max([1.0] + [float(np.linalg.norm(m, 2)) for m in weight_mats])
    return options.strictness * scale


def _snap(mat, mask, tol, what):
    leak = mask.violation(mat)
    if leak > tol:
        raise SolverFailureError(
            f"{what} violates the topology mask by {leak:.3e} (> {tol:.1e})")
    return mask.project(mat)


def spectral_radius(mat):
    return float(np.max(np.abs(np.linalg.eigvals(mat))))


def lifted_dynamics(plant):
    """A_lift = [[A, B], [0, 0]], B_lift = [[0], [I]] over z = [x; u]."""
    n_x, n_u = plant.n_x, plant.n_u
    A_lift = np.block([[plant.A, plant.B],
                       [np.zeros((n_u, n_x)), np.zeros((n_u, n_u))]])
    B_lift = np.vstack([np.zeros((n_x, n_u)), np.eye(n_u)])
    return A_lift, B_lift


# ---------------------------------------------------------------------------
# controller synthesis
# ---------------------------------------------------------------------------

def synth_controller(plant, partition, q_x, r, options=None):
    """Solve max trace(W) s.t. the 3x3 contraction LMI over [x; u] with W, Y
    masked to the topology; recover K = Y W^-1 split into (K_x, K_u).

    On success the lifted closed loop A_lift + B_lift K has spectral radius
    below one and P_ctrl = W^-1 upper-bounds the ideal loop's weighted cost.
    """
    options = options or SynthOptions()
    q_x = _check_spd(q_x, "q_x")
    r = _check_spd(r, "r")
    n_x, n_u = plant.n_x, plant.n_u
    if q_x.shape[0] != n_x or r.shape[0] != n_u:
        raise ValueError("weight dimensions do not match the plant")
    n_z = n_x + n_u
    A_lift, B_lift = lifted_dynamics(plant)
    q_sqrt = np.block([[psd_sqrt(q_x), np.zeros((n_x, n_u))],
                       [np.zeros((n_u, n_x)), psd_sqrt(r)]])
    m_w = input_state_mask(partition, plant)
    m_k = gain_mask(partition, plant)

    sdp = SdpSpec(margin=_margin(options, q_x, r))
    W = sdp.matrix_var((n_z, n_z), mask=m_w, symmetric=True)
    Y = sdp.matrix_var((n_u, n_z), mask=m_k)
    G = A_lift @ W + B_lift @ Y
    Z = np.zeros((n_z, n_z))
    sdp.require_pd(cp.bmat([[W, G.T, W @ q_sqrt],
                            [G, W, Z],
                            [q_sqrt @ W, Z, np.eye(n_z)]]))
    sdp.require(W << options.w_max * np.eye(n_z))
    sdp.maximize(cp.trace(W))
    stats = sdp.solve()

    W_val = 0.5 * (_dense_value(W) + _dense_value(W).T)
    Y_val = _dense_value(Y)
    W_inv = np.linalg.inv(W_val)
    K = _snap(Y_val @ W_inv, m_k, options.mask_snap_tol, "feedback gain")
    P_ctrl = _snap(0.5 * (W_inv + W_inv.T), m_w, options.mask_snap_tol, "P_ctrl")
    if np.min(np.linalg.eigvalsh(P_ctrl)) <= 0:
        raise SolverFailureError("recovered P_ctrl is not positive definite")
    sr = spectral_radius(A_lift + B_lift @ K)
    if sr >= 1.0:
        raise SolverFailureError(
            f"recovered gain does not stabilize the lifted loop (rho={sr:.6f})")
    return ControllerGains(K_x=K[:, :n_x], K_u=K[:, n_x:], P_ctrl=P_ctrl,
                           W=W_val, Y=Y_val, spectral_radius=sr, stats=stats)


# ---------------------------------------------------------------------------
# observer synthesis
# ---------------------------------------------------------------------------

def coupling_vertices(E, omega_box, vertex_budget=4096):
    """Vertices of the coupling hypercube restricted to components whose
    columns in E are not identically zero; zero-column components stay 0.

    Vertex v (binary counting) takes +bound on the k-th active component iff
    bit k of v is set. Returns an array of shape (2^s, n_components).
    """
    E = np.asarray(E, dtype=float)
    omega_box = np.asarray(omega_box, dtype=float)
    if omega_box.ndim != 1 or omega_box.size != E.shape[1]:
        raise ValueError("omega_box must give one bound per column of E")
    if np.any(omega_box < 0):
        raise ValueError("omega_box bounds must be nonnegative")
    active = np.flatnonzero(np.any(E != 0.0, axis=0))
    s = len(active)
    if 2 ** s > vertex_budget:
        raise VertexBudgetError(
            f"2^{s} coupling vertices exceed the budget {vertex_budget}; "
            "use coarser bounds or merge coalitions")
    signs = ((np.arange(2 ** s)[:, None] >> np.arange(s)[None, :]) & 1) * 2.0 - 1.0
    verts = np.zeros((2 ** s, E.shape[1]))
    verts[:, active] = signs * omega_box[active]
    return verts


def _certify_observer(M, P_obs, E, vertices, beta_raw, sigma_raw, beta_min):
    """Tightest (beta, sigma) certified for the returned L in floating point.

    beta is floored at the largest generalized eigenvalue of (M'PM, P); sigma
    at the exact Schur-complement requirement per coupling vertex. A hair of
    slack keeps the per-step bound e+'Pe+ <= beta e'Pe + sigma valid under
    roundoff.
    """
    H = M.T @ P_obs @ M
    beta_floor = float(np.max(scipy.linalg.eigh(H, P_obs, eigvals_only=True)))
    beta = max(beta_raw, beta_floor * (1 + 1e-9) + 1e-12, beta_min)
    if beta >= 1.0:
        raise SolverFailureError(
            f"certified beta {beta:.6f} >= 1; observer contraction lost")
    S = beta * P_obs - H
    sigma = max(sigma_raw, 0.0)
    for w in vertices:
        g = P_obs @ (E @ w)
        h12 = M.T @ g
        h22 = float(w @ E.T @ g)
        req = h22 + float(h12 @ np.linalg.solve(S, h12))
        sigma = max(sigma, req * (1 + 1e-9) + 1e-12)
    return beta, sigma


def synth_observer(plant, partition, P_obs, omega_box, eps, options=None):
    """Minimize sigma + eps*beta subject to the ellipsoid-propagation LMI at
    every coupling vertex, with Y masked and the shape matrix P_obs fixed.

    The recovered gain L = -P_obs^-1 Y makes the error dynamics matrix
    A_coal + L C (the closed-loop convention), and (beta, sigma) are
    post-certified so the radius recursion is exact for the returned L.
    """
    options = options or SynthOptions()
    P_obs = _check_spd(P_obs, "P_obs")
    if eps <= 0:
        raise ValueError("eps must be positive")
    n_x, n_y = plant.n_x, plant.n_y
    A_coal, B_coal, A_rest, B_rest = split_dynamics(plant, partition)
    E = np.hstack([A_rest, B_rest])
    vertices = coupling_vertices(E, omega_box, options.vertex_budget)
    m_l = observer_mask(partition, plant)

    sdp = SdpSpec(margin=_margin(options, P_obs))
    Y = sdp.matrix_var((n_x, n_y), mask=m_l)
    beta = sdp.scalar_var(lower=options.beta_min, upper=1.0 - options.beta_min)
    sigma = sdp.scalar_var(lower=0.0)
    M_top = P_obs @ A_coal - Y @ plant.C
    z_col = np.zeros((n_x, 1))
    sigma_blk = cp.reshape(sigma, (1, 1), order="C")
    for w in vertices:
        pe = (P_obs @ (E @ w)).reshape(n_x, 1)
        sdp.require_pd(cp.bmat([[beta * P_obs, z_col, M_top.T],
                                [z_col.T, sigma_blk, pe.T],
                                [M_top, pe, P_obs]]))
    sdp.minimize(sigma + eps * beta)
    stats = sdp.solve()

    Y_val = _dense_value(Y)
    L = _snap(-np.linalg.solve(P_obs, Y_val), m_l, options.mask_snap_tol,
              "observer gain")
    M = A_coal + L @ plant.C
    beta_c, sigma_c = _certify_observer(M, P_obs, E, vertices,
                                        float(beta.value), float(sigma.value),
                                        options.beta_min)
    stats = SolveStats(status=stats.status, objective=stats.objective,
                       solve_time=stats.solve_time, attempts=stats.attempts,
                       extra={"beta_raw": float(beta.value),
                              "sigma_raw": float(sigma.value),
                              "n_vertices": len(vertices)})
    return ObserverGains(L=L, beta=beta_c, sigma=sigma_c, P_obs=P_obs,
                         Y_obs=Y_val, stats=stats)


# ---------------------------------------------------------------------------
# closed loop and certification
# ---------------------------------------------------------------------------

def closed_loop_matrix(plant, partition, ctrl, obs):
    """Combined dynamics of plant, dynamic controller and observer over the
    extended vector xi = [x; u; e]:

        [ A            B            0          ]
        [ K_x          K_u          K_x        ]
        [ A_coal - A   B_coal - B   A_coal + LC]
    """
    n_x, n_u = plant.n_x, plant.n_u
    if ctrl.K_x.shape != (n_u, n_x) or ctrl.K_u.shape != (n_u, n_u):
        raise ValueError("controller gain dimensions do not match the plant")
    if obs.L.shape != (n_x, plant.n_y):
        raise ValueError("observer gain dimensions do not match the plant")
    A_coal, B_coal, _, _ = split_dynamics(plant, partition)
    Z = np.zeros((n_x, n_x))
    return np.block([
        [plant.A, plant.B, Z],
        [ctrl.K_x, ctrl.K_u, ctrl.K_x],
        [A_coal - plant.A, B_coal - plant.B, A_coal + obs.L @ plant.C],
    ])


def certify_topology(closed_loop, q_full, mask_xi, options=None):
    """Feasibility SDP: find P > 0, masked over xi-coordinates, with
    A' P A - P <= -q_full (strict, with margin); minimize trace(P) for a
    canonical solution. The margin field reports the post-solve smallest
    eigenvalue of -(A' P A - P + q_full)."""
    options = options or SynthOptions()
    closed_loop = np.asarray(closed_loop, dtype=float)
    q_full = _check_spd(q_full, "q_full")
    n = closed_loop.shape[0]
    if closed_loop.shape != (n, n) or q_full.shape != (n, n):
        raise ValueError("closed-loop matrix and q_full must be square and conformal")
    if mask_xi.shape != (n, n):
        raise ValueError("mask_xi must match the extended-state dimension")

    mu = _margin(options, q_full)
    sdp = SdpSpec(margin=mu)
    P = sdp.matrix_var((n, n), mask=mask_xi, symmetric=True)
    sdp.require_pd(P)
    sdp.require_pd(-(closed_loop.T @ P @ closed_loop - P + q_full))
    sdp.minimize(cp.trace(P))
    try:
        stats = sdp.solve()
    except InfeasibleTopologyError:
        return TopologyCertificate(P=None, feasible=False, margin=-np.inf,
                                   stats=SolveStats(status="infeasible",
                                                    objective=np.nan,
                                                    solve_time=0.0, attempts=0))
    P_val = 0.5 * (_dense_value(P) + _dense_value(P).T)
    P_val = _snap(P_val, mask_xi, options.mask_snap_tol, "certificate P")
    decrease = closed_loop.T @ P_val @ closed_loop - P_val + q_full
    margin_post = -float(np.max(np.linalg.eigvalsh(decrease)))
    if margin_post <= 0 or np.min(np.linalg.eigvalsh(P_val)) <= 0:
        raise SolverFailureError(
            f"certificate failed post-verification (margin {margin_post:.3e})")
    return TopologyCertificate(P=P_val, feasible=True, margin=margin_post,
                               stats=stats)
