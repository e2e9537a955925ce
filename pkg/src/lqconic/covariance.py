"""Primal-side constructions: closed-loop signals, covariance trajectories,
objective and residual evaluation, and a Monte Carlo cost oracle.

The primal variable is a PSD-valued function Sigma(t) of size (n+m) pairing
state and input. Deterministic runs produce the rank-one outer product of
the stacked signal [x; u]; stochastic runs propagate the closed-loop
state covariance and complete the blocks through the feedback law. A primal
trajectory certifies optimality when it satisfies the descriptor dynamics
and is aligned (trace-orthogonal) with the dual's residual matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._num import fd_derivative, trapz
from .dlmi import _assemble_raw, _dre_rhs
from .model import (CostData, QuadForm, StateSpace, TimeGrid, apply_Aop,
                    coeff_at)
from .riccati import MatTrajectory
from .symmat import sym_factor

__all__ = [
    "CovTrajectory",
    "Gain",
    "RankTooHigh",
    "gain_from_dual",
    "closed_loop_simulate",
    "deterministic_covariance",
    "stochastic_covariance",
    "primal_objective",
    "descriptor_residual",
    "alignment_residual",
    "extract_rank_one_factor",
    "monte_carlo_cost",
]


class RankTooHigh(ValueError):
    """The matrix has numerical rank above one, so no single factor exists."""


@dataclass(frozen=True)
class CovTrajectory:
    """PSD-valued trajectory of stacked state/input second moments."""

    sigma: MatTrajectory
    kind: str  # "deterministic" or "stochastic"


class Gain:
    """Feedback gain trajectory; the control law is u = -K(t) x."""

    __slots__ = ("grid", "K")

    def __init__(self, grid: TimeGrid, K):
        k = np.asarray(K, dtype=float)
        if k.ndim == 2:
            k = np.repeat(k[None], grid.steps + 1, axis=0)
        if k.ndim != 3 or k.shape[0] != grid.steps + 1:
            raise ValueError(
                f"gain samples {k.shape} do not fit a grid with "
                f"{grid.steps + 1} nodes")
        k.flags.writeable = False
        self.grid = grid
        self.K = k

    @classmethod
    def constant(cls, K, grid: TimeGrid) -> "Gain":
        return cls(grid, np.atleast_2d(np.asarray(K, dtype=float)))

    @property
    def m(self) -> int:
        return self.K.shape[1]

    @property
    def n(self) -> int:
        return self.K.shape[2]

    def at(self, t: float) -> np.ndarray:
        return coeff_at(self.K, t, self.grid)

    def node(self, k: int) -> np.ndarray:
        return self.K[k]


def gain_from_dual(lambda_bar: MatTrajectory, sys: StateSpace,
                   cost: CostData) -> Gain:
    """K(t) = R^{-1} (N^T + B^T Lam(t)), the feedback that closes the
    duality gap when Lam is the backward Riccati extremal."""
    if not np.isfinite(lambda_bar.values).all():
        raise ValueError("dual trajectory has invalid nodes; no gain exists")
    grid = lambda_bar.grid
    kvals = np.empty((grid.steps + 1, sys.m, sys.n))
    for k, t in enumerate(grid.times()):
        _, b = sys.ab_at(t, grid)
        _, nmat, r = cost.at(t, grid)
        kvals[k] = np.linalg.solve(r, nmat.T + b.T @ lambda_bar.node(k))
    return Gain(grid, kvals)


def closed_loop_simulate(sys: StateSpace, gain: Gain, x_i,
                         grid: TimeGrid):
    """RK4 integration of dx/dt = (A - B K(t)) x from x(0); returns node
    samples (x, u) with u = -K x."""
    x0 = np.asarray(x_i, dtype=float).reshape(-1)
    if x0.size != sys.n:
        raise ValueError(f"initial state has {x0.size} entries, expected {sys.n}")
    h = grid.h
    times = grid.times()
    x = np.empty((grid.steps + 1, sys.n))
    x[0] = x0

    def f(t, xv):
        a, b = sys.ab_at(t, grid)
        return (a - b @ gain.at(t)) @ xv

    for k in range(grid.steps):
        t = times[k]
        y = x[k]
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t + h, y + h * k3)
        x[k + 1] = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    u = np.empty((grid.steps + 1, gain.m))
    for k in range(grid.steps + 1):
        u[k] = -gain.node(k) @ x[k]
    return x, u


def deterministic_covariance(x, u, grid: TimeGrid) -> CovTrajectory:
    """Rank-one outer product of the stacked signal at every node."""
    xv = np.asarray(x, dtype=float)
    uv = np.asarray(u, dtype=float)
    if xv.ndim == 1:
        xv = xv[:, None]
    if uv.ndim == 1:
        uv = uv[:, None]
    if xv.shape[0] != uv.shape[0]:
        raise ValueError("state and input have different sample counts")
    z = np.hstack([xv, uv])
    values = np.einsum("ki,kj->kij", z, z)
    return CovTrajectory(MatTrajectory(grid, values, meta="rank-one"),
                         kind="deterministic")


def stochastic_covariance(sys: StateSpace, gain: Gain, W, X_i,
                          grid: TimeGrid) -> CovTrajectory:
    """Forward closed-loop second-moment propagation.

    The state block solves dS/dt = (A-BK) S + S (A-BK)^T + W from X_i; the
    cross and input blocks follow from u = -Kx as S_xu = -S K^T and
    S_uu = K S K^T, so the full matrix is [I; -K] S [I; -K]^T and stays PSD.
    """
    n, m = sys.n, gain.m
    w = np.asarray(W, dtype=float)
    if w.ndim == 0:
        w = w.reshape(1, 1)
    xi = np.asarray(X_i, dtype=float).reshape(n, n)
    h = grid.h
    times = grid.times()

    def f(t, s):
        a, b = sys.ab_at(t, grid)
        fcl = a - b @ gain.at(t)
        return fcl @ s + s @ fcl.T + coeff_at(w, t, grid)

    sxx = np.empty((grid.steps + 1, n, n))
    sxx[0] = 0.5 * (xi + xi.T)
    for k in range(grid.steps):
        t = times[k]
        y = sxx[k]
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t + h, y + h * k3)
        nxt = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        sxx[k + 1] = 0.5 * (nxt + nxt.T)

    values = np.empty((grid.steps + 1, n + m, n + m))
    for k in range(grid.steps + 1):
        kk = gain.node(k)
        s = sxx[k]
        cross = -s @ kk.T
        values[k, :n, :n] = s
        values[k, :n, n:] = cross
        values[k, n:, :n] = cross.T
        values[k, n:, n:] = kk @ s @ kk.T
    return CovTrajectory(MatTrajectory(grid, values, meta="second-moment"),
                         kind="stochastic")


def primal_objective(sigma: CovTrajectory, quadform: QuadForm) -> float:
    """Trapezoidal quadrature of the trace pairing of the stacked cost with
    the covariance trajectory."""
    traj = sigma.sigma
    if quadform.grid != traj.grid:
        raise ValueError("covariance and quadratic form use different grids")
    vals = np.array([
        float(np.sum(quadform.at(t) * traj.node(k)))
        for k, t in enumerate(traj.grid.times())
    ])
    return trapz(vals, traj.grid.h)


def descriptor_residual(sigma: CovTrajectory, sys: StateSpace,
                        W=None) -> float:
    """Max violation of the covariance dynamics over interior nodes.

    Checks the top-left block of d(Sigma)/dt (centered differences) against
    the dynamics image of Sigma plus the noise intensity.
    """
    traj = sigma.sigma
    grid = traj.grid
    n = sys.n
    sdot = fd_derivative(traj.values, grid.h)
    w = None
    if W is not None:
        w = np.asarray(W, dtype=float)
        if w.ndim == 0:
            w = w.reshape(1, 1)
    times = grid.times()
    worst = 0.0
    for k in range(1, grid.steps):
        t = times[k]
        a, b = sys.ab_at(t, grid)
        r = sdot[k][:n, :n] - apply_Aop(traj.node(k), a, b)
        if w is not None:
            r = r - coeff_at(w, t, grid)
        worst = max(worst, float(np.max(np.abs(r))))
    return worst


def alignment_residual(sigma: CovTrajectory, lambda_bar: MatTrajectory,
                       sys: StateSpace, cost: CostData, quadform: QuadForm,
                       lambda_dot_mode: str = "dre") -> float:
    """Trapezoidal quadrature of the trace pairing between the dual residual
    matrix M(Lam) and the primal covariance.

    With the Riccati-substituted derivative (mode "dre") M(Lam) is exactly
    PSD along the extremal, so the integrand is nonnegative and the value
    bounds the duality gap from above.
    """
    traj = sigma.sigma
    grid = traj.grid
    if lambda_bar.grid != grid or quadform.grid != grid:
        raise ValueError("primal, dual, and cost grids must agree")
    n = sys.n
    if lambda_dot_mode == "fd":
        lam_dot = fd_derivative(lambda_bar.values, grid.h)
    elif lambda_dot_mode == "dre":
        lam_dot = None
    else:
        raise ValueError(f"unknown lambda_dot_mode {lambda_dot_mode!r}")

    vals = np.empty(grid.steps + 1)
    for k, t in enumerate(grid.times()):
        a, b = sys.ab_at(t, grid)
        lam = lambda_bar.node(k)
        if lam_dot is None:
            q, nmat, r = cost.at(t, grid)
            ld = _dre_rhs(lam, a, b, q, nmat, np.linalg.inv(r))
        else:
            ld = lam_dot[k]
        m = _assemble_raw(lam, ld, a, b, quadform.at(t))
        vals[k] = float(np.sum(m * traj.node(k)))
    return trapz(vals, grid.h)


def extract_rank_one_factor(sigma_sample, tol: float = 1e-9,
                            prev=None) -> np.ndarray:
    """Vector z with z z^T equal to the given rank-one PSD sample.

    Sign convention: first entry of largest magnitude is positive, unless a
    previous node's factor is supplied, in which case the sign matching that
    neighbor is kept (continuity across a trajectory).
    """
    s = np.asarray(getattr(sigma_sample, "mat", sigma_sample), dtype=float)
    if s.ndim == 0:
        s = s.reshape(1, 1)
    s = 0.5 * (s + s.T)
    w, v = np.linalg.eigh(s)
    scale = tol * max(1.0, float(np.abs(w).max()))
    if w[0] < -scale:
        raise RankTooHigh(
            f"sample has negative eigenvalue {w[0]:.3e}; not PSD")
    if w.size > 1 and w[-2] > scale:
        raise RankTooHigh(
            f"second eigenvalue {w[-2]:.3e} exceeds the rank-one threshold")
    top = float(w[-1])
    if top <= scale:
        return np.zeros(s.shape[0])
    z = np.sqrt(top) * v[:, -1]
    if prev is not None:
        p = np.asarray(prev, dtype=float).reshape(-1)
        if float(z @ p) < 0.0:
            z = -z
    else:
        lead = int(np.argmax(np.abs(z)))
        if z[lead] < 0.0:
            z = -z
    return z


def monte_carlo_cost(sys: StateSpace, gain: Gain, cost: CostData, W, X_i,
                     grid: TimeGrid, n_paths: int, seed: int):
    """Sample mean and standard error of the quadratic cost under the
    feedback u = -K(t) x, by Euler-Maruyama at the grid step.

    The initial state is drawn through a symmetric factor of X_i with
    independent unit-variance sign flips, which reproduces the requested
    covariance exactly and makes a rank-one point mass exact pathwise.
    """
    if n_paths < 2:
        raise ValueError("need at least two paths for a standard error")
    rng = np.random.default_rng(seed)
    n = sys.n
    h = grid.h
    times = grid.times()

    xi = np.asarray(X_i, dtype=float).reshape(n, n)
    fx = sym_factor(xi)
    if fx.r:
        signs = rng.integers(0, 2, size=(fx.r, n_paths)) * 2.0 - 1.0
        x = fx.U @ signs
    else:
        x = np.zeros((n, n_paths))

    w = np.asarray(W, dtype=float)
    if w.ndim == 0:
        w = w.reshape(1, 1)
    const_noise = w.ndim == 2
    fw = sym_factor(w) if const_noise else None

    integrand = np.empty((grid.steps + 1, n_paths))

    def node_cost(k, t, xs):
        q, nmat, r = cost.at(t, grid)
        us = -(gain.node(k) @ xs)
        return (np.sum(xs * (q @ xs), axis=0)
                + 2.0 * np.sum(xs * (nmat @ us), axis=0)
                + np.sum(us * (r @ us), axis=0))

    sqrt_h = np.sqrt(h)
    for k in range(grid.steps):
        t = times[k]
        integrand[k] = node_cost(k, t, x)
        a, b = sys.ab_at(t, grid)
        fcl = a - b @ gain.node(k)
        x = x + h * (fcl @ x)
        fw_k = fw if const_noise else sym_factor(coeff_at(w, t, grid))
        if fw_k.r:
            x = x + fw_k.U @ (sqrt_h * rng.standard_normal((fw_k.r, n_paths)))
    integrand[-1] = node_cost(grid.steps, times[-1], x)

    costs = trapz(integrand, h)
    mean = float(np.mean(costs))
    stderr = float(np.std(costs, ddof=1) / np.sqrt(n_paths))
    return mean, stderr
