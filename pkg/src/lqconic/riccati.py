"""Differential Lyapunov and Riccati solvers with finite-escape handling.

Backward (final-value) and forward (initial-value) integration of the
quadratic matrix flow

    d(Lam)/dt + A^T Lam + Lam A - (N + Lam B) R^{-1} (N + Lam B)^T + Q = H

by classical fixed-step RK4 on a uniform grid. H=0 gives the Riccati
equation whose final-value solution is the maximal solution of the matching
differential matrix inequality (and whose initial-value solution is the
minimal one); H is a positive semidefinite forcing used to sample the
inequality's other solutions. Solutions may escape in finite time: escape is
an outcome, not an error, detected by a cap on the largest singular value
and refined by bisecting the last step.

R may be positive or negative definite (it only needs to be invertible with
fixed sign); the regulator-level validation is stricter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._num import fd_derivative
from .model import CostData, StateSpace, TimeGrid, coeff_at

__all__ = [
    "MatTrajectory",
    "DreSolution",
    "DriSample",
    "LoewnerVerdict",
    "transition_matrix",
    "solve_lyapunov_final",
    "solve_dre_final",
    "solve_dre_initial",
    "sample_dri_solution",
    "sample_dri_solution_initial",
    "loewner_compare",
    "riccati_residual",
    "forcing_amplitude",
]

ESCAPE_CAP = 1e9
ESCAPE_REFINE_ITERS = 40


class MatTrajectory:
    """Symmetric-matrix-valued function sampled on a uniform grid.

    ``values`` has shape (steps+1, n, n); invalid nodes (beyond a finite
    escape) hold NaN. Linear interpolation between nodes; node evaluations
    reproduce stored samples exactly.
    """

    __slots__ = ("grid", "values", "meta")

    def __init__(self, grid: TimeGrid, values, meta: str = ""):
        v = np.asarray(values, dtype=float)
        if v.ndim != 3 or v.shape[1] != v.shape[2]:
            raise ValueError(f"expected (nodes, n, n) samples, got {v.shape}")
        if v.shape[0] != grid.steps + 1:
            raise ValueError(
                f"{v.shape[0]} samples do not fit a grid with {grid.steps + 1} nodes"
            )
        v.flags.writeable = False
        self.grid = grid
        self.values = v
        self.meta = meta

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def at(self, t: float) -> np.ndarray:
        return coeff_at(self.values, t, self.grid)

    def node(self, k: int) -> np.ndarray:
        return self.values[k]

    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.values).all(axis=(1, 2))

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class DreSolution:
    """Riccati-equation solution with escape diagnostics.

    For a final-value (backward) solve, an escape at time t* leaves nodes
    with t <= t* invalid; for an initial-value (forward) solve, nodes with
    t >= t*. residual_max is a post-hoc finite-difference residual sweep over
    the valid nodes, independent of the integrator.
    """

    lam: MatTrajectory
    escaped: bool
    escape_time: Optional[float]
    residual_max: float
    direction: str  # "final" (backward) or "initial" (forward)

    def as_trajectory(self) -> MatTrajectory:
        if self.escaped:
            raise ValueError(
                f"solution escaped at t={self.escape_time:.6g}; "
                "no complete trajectory exists"
            )
        return self.lam


@dataclass(frozen=True)
class DriSample:
    """One forced Riccati-inequality solution: trajectory plus its PSD
    forcing (piecewise constant, sampled at nodes)."""

    lam: MatTrajectory
    forcing: MatTrajectory
    escaped: bool
    escape_time: Optional[float]
    residual_max: float


class _RicFlow:
    """Evaluates the Riccati right-hand side, batched over solutions."""

    def __init__(self, sys: StateSpace, cost: CostData, grid: TimeGrid):
        self.sys = sys
        self.cost = cost
        self.grid = grid
        self.const = sys.A.ndim == 2 and sys.B.ndim == 2 and \
            cost.Q.ndim == 2 and cost.N.ndim == 2 and cost.R.ndim == 2
        if self.const:
            self._data = self._prep(sys.A, sys.B, cost.Q, cost.N, cost.R)

    @staticmethod
    def _prep(A, B, Q, N, R):
        return (A.T.copy(), B, 0.5 * (Q + Q.T), N, np.linalg.inv(R))

    def data_at(self, t: float):
        if self.const:
            return self._data
        g = self.grid
        return self._prep(
            coeff_at(self.sys.A, t, g), coeff_at(self.sys.B, t, g),
            coeff_at(self.cost.Q, t, g), coeff_at(self.cost.N, t, g),
            coeff_at(self.cost.R, t, g),
        )

    def dlam_dt(self, t: float, lam: np.ndarray, forcing=None) -> np.ndarray:
        """Time derivative of a (S, n, n) batch of solutions."""
        At, B, Q, N, Rinv = self.data_at(t)
        lin = np.matmul(At, lam)
        shifted = N + np.matmul(lam, B)
        quad = np.matmul(np.matmul(shifted, Rinv), shifted.transpose(0, 2, 1))
        out = quad - lin - lin.transpose(0, 2, 1) - Q
        if forcing is not None:
            out = out + forcing
        return out


def _rk4_step(flow: _RicFlow, t: float, y: np.ndarray, dt: float, forcing):
    k1 = flow.dlam_dt(t, y, forcing)
    k2 = flow.dlam_dt(t + 0.5 * dt, y + (0.5 * dt) * k1, forcing)
    k3 = flow.dlam_dt(t + 0.5 * dt, y + (0.5 * dt) * k2, forcing)
    k4 = flow.dlam_dt(t + dt, y + dt * k3, forcing)
    out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return 0.5 * (out + out.transpose(0, 2, 1))


def _batch_sigma_max(y: np.ndarray) -> np.ndarray:
    s = y.shape[0]
    norms = np.full(s, np.inf)
    finite = np.isfinite(y).all(axis=(1, 2))
    if finite.any():
        norms[finite] = np.abs(np.linalg.eigvalsh(y[finite])).max(axis=1)
    return norms


def _refine_escape(flow, t_good, y_good, h, sign, cap, forcing) -> float:
    """Bisect the step size at which a single RK4 step first exceeds the cap."""
    lo, hi = 0.0, h
    for _ in range(ESCAPE_REFINE_ITERS):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        with np.errstate(over="ignore", invalid="ignore"):
            trial = _rk4_step(flow, t_good, y_good, sign * mid, forcing)
        if _batch_sigma_max(trial)[0] > cap:
            hi = mid
        else:
            lo = mid
    return t_good + sign * 0.5 * (lo + hi)


def _sweep(flow: _RicFlow, lam0: np.ndarray, grid: TimeGrid, direction: str,
           cap: float, forcings=None):
    """Integrate a batch of Riccati flows across the grid.

    forcings: None, or per-step forcing lookup ``forcings(step_index)``
    returning a (S, n, n) array for the step between nodes step_index and
    step_index+1.

    Returns (values (S, K+1, n, n) with NaN beyond escape, escaped (S,),
    escape_time (S,)).
    """
    s, n = lam0.shape[0], lam0.shape[1]
    k_steps = grid.steps
    h = grid.h
    times = grid.times()
    values = np.full((s, k_steps + 1, n, n), np.nan)
    escaped = np.zeros(s, dtype=bool)
    escape_time = np.full(s, np.nan)

    if direction == "final":
        start_node, step_order, sign = k_steps, range(k_steps, 0, -1), -1.0
    elif direction == "initial":
        start_node, step_order, sign = 0, range(0, k_steps), 1.0
    else:
        raise ValueError(f"direction must be 'final' or 'initial', got {direction!r}")

    y = 0.5 * (lam0 + lam0.transpose(0, 2, 1))
    values[:, start_node] = y
    active = np.ones(s, dtype=bool)

    for k in step_order:
        t = times[k]
        target = k - 1 if direction == "final" else k + 1
        step_idx = k - 1 if direction == "final" else k
        forcing = forcings(step_idx) if forcings is not None else None
        with np.errstate(over="ignore", invalid="ignore"):
            y_new = _rk4_step(flow, t, y, sign * h, forcing)
        norms = _batch_sigma_max(y_new)
        blew = active & (norms > cap)
        if blew.any():
            for i in np.nonzero(blew)[0]:
                fi = forcing[i:i + 1] if forcing is not None else None
                escape_time[i] = _refine_escape(
                    flow, t, y[i:i + 1], h, sign, cap, fi)
            escaped |= blew
            active &= ~blew
            if not active.any():
                break
        ok = active
        values[ok, target] = y_new[ok]
        y = np.where(active[:, None, None], y_new, y)

    return values, escaped, escape_time


def _node_forcing_lookup(forcing_values: np.ndarray, bounds: np.ndarray):
    """Map a step index to its interval's forcing, batched over samples."""
    steps = bounds[-1]
    step_to_interval = np.searchsorted(bounds, np.arange(steps), side="right") - 1

    def lookup(step_idx: int) -> np.ndarray:
        return forcing_values[:, step_to_interval[step_idx]]

    return lookup, step_to_interval


def forcing_amplitude(cost: CostData) -> float:
    """Default scale for random forcing draws: 0.5 * (1 + largest singular
    value of the state weight)."""
    q = cost.Q if cost.Q.ndim == 3 else cost.Q[None]
    qnorm = max(float(np.abs(np.linalg.eigvalsh(0.5 * (qk + qk.T))).max())
                for qk in q)
    return 0.5 * (1.0 + qnorm)


def draw_forcing(n: int, switch_points: int, seed: int, amplitude: float) -> np.ndarray:
    """Piecewise-constant PSD forcing: one G G^T per switch interval, with G
    entries standard normal scaled by ``amplitude``. Reproducible per seed."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((switch_points, n, n)) * amplitude
    return np.matmul(g, g.transpose(0, 2, 1))


def switch_bounds(steps: int, switch_points: int) -> np.ndarray:
    """Node indices delimiting the forcing intervals, snapped to the grid."""
    if switch_points < 1:
        raise ValueError("need at least one forcing interval")
    if switch_points > steps:
        raise ValueError(f"{switch_points} intervals do not fit {steps} steps")
    bounds = np.round(np.linspace(0, steps, switch_points + 1)).astype(int)
    if np.any(np.diff(bounds) < 1):
        raise ValueError("grid too coarse for the requested switch count")
    return bounds


def _stencil_steps(j: int, idx: np.ndarray) -> tuple:
    """Step indices touched by the finite-difference stencil at segment
    position j (segment nodes idx are contiguous)."""
    if j == 0:
        return (idx[0], idx[0] + 1)
    if j == idx.size - 1:
        return (idx[-1] - 2, idx[-1] - 1)
    return (idx[j] - 1, idx[j])


def _residual_sweep(lam_values: np.ndarray, flow: _RicFlow, grid: TimeGrid,
                    forcing_nodes=None, step_interval=None) -> float:
    """Max finite-difference residual over valid nodes. For forced samples
    the stored forcing is subtracted, and nodes whose difference stencil
    straddles a forcing switch are skipped (the derivative there mixes two
    constant pieces and says nothing about integration accuracy)."""
    valid = np.isfinite(lam_values).all(axis=(1, 2))
    idx = np.nonzero(valid)[0]
    if idx.size < 3:
        return float("nan")
    seg = lam_values[idx]
    ldot = fd_derivative(seg, grid.h)
    times = grid.times()[idx]
    worst = 0.0
    for j, t in enumerate(times):
        if step_interval is not None:
            s0, s1 = _stencil_steps(j, idx)
            if step_interval[s0] != step_interval[s1]:
                continue
        r = _riccati_operator(flow, t, seg[j], ldot[j])
        if forcing_nodes is not None:
            r = r - forcing_nodes[idx[j]]
        worst = max(worst, float(np.max(np.abs(r))))
    return worst


def _riccati_operator(flow: _RicFlow, t: float, lam: np.ndarray,
                      lam_dot: np.ndarray) -> np.ndarray:
    # lam_dot + A^T lam + lam A - (N + lam B) R^{-1} (N + lam B)^T + Q
    return lam_dot - flow.dlam_dt(t, lam[None])[0]


def _solve_dre(sys, cost, lam_bc, grid, direction, escape_cap, meta):
    flow = _RicFlow(sys, cost, grid)
    lam0 = np.asarray(lam_bc, dtype=float)
    if lam0.ndim == 0:
        lam0 = lam0.reshape(1, 1)
    if lam0.shape != (sys.n, sys.n):
        raise ValueError(f"boundary value has shape {lam0.shape}, expected "
                         f"({sys.n}, {sys.n})")
    values, escaped, escape_time = _sweep(
        flow, lam0[None], grid, direction, escape_cap)
    traj = MatTrajectory(grid, values[0], meta=meta)
    residual = _residual_sweep(values[0], flow, grid)
    return DreSolution(
        lam=traj,
        escaped=bool(escaped[0]),
        escape_time=float(escape_time[0]) if escaped[0] else None,
        residual_max=residual,
        direction=direction,
    )


def solve_dre_final(sys: StateSpace, cost: CostData, lambda_f, grid: TimeGrid,
                    escape_cap: float = ESCAPE_CAP) -> DreSolution:
    """Backward Riccati solve from the final value; maximal solution of the
    final-value differential matrix inequality."""
    return _solve_dre(sys, cost, lambda_f, grid, "final", escape_cap, "dre-final")


def solve_dre_initial(sys: StateSpace, cost: CostData, lambda_i, grid: TimeGrid,
                      escape_cap: float = ESCAPE_CAP) -> DreSolution:
    """Forward Riccati solve from the initial value; minimal solution of the
    initial-value differential matrix inequality."""
    return _solve_dre(sys, cost, lambda_i, grid, "initial", escape_cap, "dre-initial")


def _sample_dri(sys, cost, lam_bc, grid, direction, switch_points, seed,
                amplitude, escape_cap):
    flow = _RicFlow(sys, cost, grid)
    if amplitude is None:
        amplitude = forcing_amplitude(cost)
    hvals = draw_forcing(sys.n, switch_points, seed, amplitude)[None]
    bounds = switch_bounds(grid.steps, switch_points)
    lookup, step_to_interval = _node_forcing_lookup(hvals, bounds)
    lam0 = np.asarray(lam_bc, dtype=float)
    if lam0.ndim == 0:
        lam0 = lam0.reshape(1, 1)
    values, escaped, escape_time = _sweep(
        flow, lam0[None], grid, direction, escape_cap, forcings=lookup)

    node_interval = np.append(step_to_interval, step_to_interval[-1])
    forcing_nodes = hvals[0][node_interval]
    lam_traj = MatTrajectory(grid, values[0], meta="dri-sample")
    forcing_traj = MatTrajectory(grid, forcing_nodes, meta="dri-forcing")
    residual = _residual_sweep(values[0], flow, grid,
                               forcing_nodes=forcing_nodes,
                               step_interval=step_to_interval)
    return DriSample(
        lam=lam_traj,
        forcing=forcing_traj,
        escaped=bool(escaped[0]),
        escape_time=float(escape_time[0]) if escaped[0] else None,
        residual_max=residual,
    )


def sample_dri_solution(sys: StateSpace, cost: CostData, lambda_f,
                        grid: TimeGrid, switch_points: int = 10,
                        seed: int = 0, amplitude: Optional[float] = None,
                        escape_cap: float = ESCAPE_CAP) -> DriSample:
    """Draw one final-value Riccati-inequality solution via a random
    piecewise-constant PSD forcing subtracted from the state-weight side."""
    return _sample_dri(sys, cost, lambda_f, grid, "final", switch_points,
                       seed, amplitude, escape_cap)


def sample_dri_solution_initial(sys: StateSpace, cost: CostData, lambda_i,
                                grid: TimeGrid, switch_points: int = 10,
                                seed: int = 0, amplitude: Optional[float] = None,
                                escape_cap: float = ESCAPE_CAP) -> DriSample:
    """Forward analogue of sample_dri_solution from an initial value."""
    return _sample_dri(sys, cost, lambda_i, grid, "initial", switch_points,
                       seed, amplitude, escape_cap)


class TransitionEvaluator:
    """State-transition matrix between grid nodes for dx/dt = F(t) x."""

    def __init__(self, grid: TimeGrid, cumulative: np.ndarray):
        self.grid = grid
        self._cum = cumulative  # (steps+1, n, n), cum[k] = Phi(t_k, 0)

    def _node(self, t: float) -> int:
        pos = t / self.grid.h
        k = int(round(pos))
        if not (0 <= k <= self.grid.steps) or abs(pos - k) > 1e-9 * (self.grid.steps + 1):
            raise ValueError(f"time {t} is not a grid node")
        return k

    def __call__(self, t_to: float, t_from: float) -> np.ndarray:
        i, j = self._node(t_to), self._node(t_from)
        # Phi(t_i, t_j) = cum[i] cum[j]^{-1}
        return np.linalg.solve(self._cum[j].T, self._cum[i].T).T


def transition_matrix(F, grid: TimeGrid) -> TransitionEvaluator:
    """Build a node-to-node transition-matrix evaluator by stepping the
    matrix ODE dPhi/dt = F(t) Phi with RK4 across each grid interval."""
    fc = np.asarray(F, dtype=float)
    if fc.ndim == 0:
        fc = fc.reshape(1, 1)
    n = fc.shape[-1]
    h = grid.h
    times = grid.times()
    cum = np.empty((grid.steps + 1, n, n))
    cum[0] = np.eye(n)
    for k in range(grid.steps):
        t = times[k]
        y = cum[k]
        k1 = coeff_at(fc, t, grid) @ y
        k2 = coeff_at(fc, t + 0.5 * h, grid) @ (y + 0.5 * h * k1)
        k3 = coeff_at(fc, t + 0.5 * h, grid) @ (y + 0.5 * h * k2)
        k4 = coeff_at(fc, t + h, grid) @ (y + h * k3)
        cum[k + 1] = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return TransitionEvaluator(grid, cum)


def solve_lyapunov_final(F, H, X_T, grid: TimeGrid) -> MatTrajectory:
    """Backward RK4 integration of -dX/dt = F^T X + X F + H from X(T)=X_T.

    Linear flow: cannot escape on a finite horizon with bounded data. For
    X_T = 0 and H PSD the solution is PSD for all t.
    """
    fc = np.asarray(F, dtype=float)
    hc = np.asarray(H, dtype=float)
    if fc.ndim == 0:
        fc = fc.reshape(1, 1)
    if hc.ndim == 0:
        hc = hc.reshape(1, 1)
    xt = np.asarray(X_T, dtype=float)
    if xt.ndim == 0:
        xt = xt.reshape(1, 1)
    n = fc.shape[-1]
    h = grid.h
    times = grid.times()
    values = np.empty((grid.steps + 1, n, n))
    values[-1] = 0.5 * (xt + xt.T)

    def rhs(t, x):
        f = coeff_at(fc, t, grid)
        forcing = coeff_at(hc, t, grid)
        return -(f.T @ x + x @ f + forcing)

    for k in range(grid.steps, 0, -1):
        t = times[k]
        y = values[k]
        k1 = rhs(t, y)
        k2 = rhs(t - 0.5 * h, y - 0.5 * h * k1)
        k3 = rhs(t - 0.5 * h, y - 0.5 * h * k2)
        k4 = rhs(t - h, y - h * k3)
        nxt = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        values[k - 1] = 0.5 * (nxt + nxt.T)
    return MatTrajectory(grid, values, meta="lyapunov-final")


@dataclass(frozen=True)
class LoewnerVerdict:
    """Nodewise semidefinite-order comparison of two trajectories."""

    a_ge_b: bool
    b_ge_a: bool
    verdict: str           # "both", "a_ge_b", "b_ge_a", "incomparable"
    margin_ab: float       # min over shared nodes of min-eig(a - b)
    margin_ba: float
    shared_nodes: int


def loewner_compare(a: MatTrajectory, b: MatTrajectory,
                    tol: float = 1e-9) -> LoewnerVerdict:
    """Compare two trajectories in the semidefinite order at every node both
    have valid samples."""
    if a.grid != b.grid or a.n != b.n:
        raise ValueError("trajectories must share grid and dimension")
    shared = a.valid_mask() & b.valid_mask()
    count = int(np.count_nonzero(shared))
    if count == 0:
        return LoewnerVerdict(False, False, "incomparable",
                              float("nan"), float("nan"), 0)
    diff = a.values[shared] - b.values[shared]
    diff = 0.5 * (diff + diff.transpose(0, 2, 1))
    eigs = np.linalg.eigvalsh(diff)
    margin_ab = float(eigs[:, 0].min())
    margin_ba = float((-eigs[:, -1]).min())
    a_ge = margin_ab >= -tol
    b_ge = margin_ba >= -tol
    if a_ge and b_ge:
        verdict = "both"
    elif a_ge:
        verdict = "a_ge_b"
    elif b_ge:
        verdict = "b_ge_a"
    else:
        verdict = "incomparable"
    return LoewnerVerdict(a_ge, b_ge, verdict, margin_ab, margin_ba, count)


def riccati_residual(lam: MatTrajectory, sys: StateSpace,
                     cost: CostData) -> MatTrajectory:
    """Evaluate the Riccati operator along a sampled trajectory, with the
    time derivative taken by centered finite differences (one-sided at the
    endpoints) so the check is independent of any integrator."""
    flow = _RicFlow(sys, cost, lam.grid)
    valid = lam.valid_mask()
    out = np.full_like(lam.values, np.nan)
    idx = np.nonzero(valid)[0]
    if idx.size >= 3:
        seg = lam.values[idx]
        ldot = fd_derivative(seg, lam.grid.h)
        times = lam.grid.times()[idx]
        for j, t in enumerate(times):
            out[idx[j]] = _riccati_operator(flow, t, seg[j], ldot[j])
    return MatTrajectory(lam.grid, out, meta="riccati-residual")
