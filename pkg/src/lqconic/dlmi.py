"""Differential linear matrix inequality assembly and certification.

The object of interest is the (n+m)-dimensional symmetric matrix function

    M(Lam)(t) = QF(t) + embed(dLam/dt) + adjoint_dynamics(Lam)(t)
              = [[Q + dLam/dt + A^T Lam + Lam A,  N + Lam B],
                 [(N + Lam B)^T,                  R        ]]

built from a stacked quadratic form QF and a symmetric trajectory Lam.
Feasibility means M(Lam)(t) is positive semidefinite on the horizon with the
required final value. Along the backward Riccati extremal the inequality is
tight: M factors exactly as U U^T with U of width m, the minimal possible
rank. That factorization and its residual checks (classical Lur'e equations)
live here, as does the dual objective read off a trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ._num import fd_derivative, trapz
from .model import QuadForm, StateSpace, coeff_at
from .riccati import MatTrajectory
from .symmat import M22NotPDError, SymFactor, SymMat, eps_rank

__all__ = [
    "DlmiCertificate",
    "ResidualTooLarge",
    "assemble_M",
    "feasibility",
    "extremal_factorization",
    "lure_residuals",
    "dual_objective",
]

BOUNDARY_TOL = 1e-9


class ResidualTooLarge(ValueError):
    """The supplied matrix does not satisfy the Riccati equation at the
    requested time, so the rank-m factorization identity would not hold."""


@dataclass(frozen=True)
class DlmiCertificate:
    """Nodewise feasibility record for M(Lam) >= 0 with a final condition.

    min_eig holds the smallest eigenvalue of M at every node; feasible
    requires both the eigenvalue floor (psd_ok) and the final-value match
    (boundary_ok).
    """

    min_eig: np.ndarray
    feasible: bool
    psd_ok: bool
    boundary_ok: bool
    worst_node: float
    rank_trace: np.ndarray
    tol: float
    factor: Optional[List[SymFactor]] = None


def _blocks_from_quadform(qmat: np.ndarray, n: int):
    return qmat[:n, :n], qmat[:n, n:], qmat[n:, n:]


def _assemble_raw(lam: np.ndarray, lam_dot: np.ndarray, a: np.ndarray,
                  b: np.ndarray, qmat: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    out = np.array(qmat, dtype=float)
    shifted = lam @ b
    out[:n, :n] += lam_dot + a.T @ lam + lam @ a
    out[:n, n:] += shifted
    out[n:, :n] += shifted.T
    return 0.5 * (out + out.T)


def assemble_M(lam, lam_dot, sys: StateSpace, quadform: QuadForm,
               t: float) -> SymMat:
    """Evaluate M(Lam) at one time from a value and a derivative sample."""
    lam = np.asarray(lam, dtype=float)
    lam_dot = np.asarray(lam_dot, dtype=float)
    if lam.ndim == 0:
        lam = lam.reshape(1, 1)
    if lam_dot.ndim == 0:
        lam_dot = lam_dot.reshape(1, 1)
    if lam.shape != (sys.n, sys.n) or lam_dot.shape != (sys.n, sys.n):
        raise ValueError(
            f"need ({sys.n}, {sys.n}) value and derivative, got "
            f"{lam.shape} and {lam_dot.shape}")
    if quadform.nq != sys.n + sys.m:
        raise ValueError(
            f"quadratic form dimension {quadform.nq} does not match "
            f"state+input dimension {sys.n + sys.m}")
    a, b = sys.ab_at(t, quadform.grid)
    return SymMat(_assemble_raw(lam, lam_dot, a, b, quadform.at(t)))


def _dre_rhs(lam: np.ndarray, a, b, q, nmat, rinv) -> np.ndarray:
    """dLam/dt along the Riccati flow (the value that makes the top-left
    block of M equal the rank-m quadratic term)."""
    shifted = nmat + lam @ b
    lin = a.T @ lam
    return shifted @ rinv @ shifted.T - lin - lin.T - q


def feasibility(lam: MatTrajectory, sys: StateSpace, quadform: QuadForm,
                tol: float = 1e-9, lambda_final=None,
                lambda_dot_mode: str = "fd",
                with_factors: bool = False) -> DlmiCertificate:
    """Check M(Lam) >= -tol at every node plus the final-value condition.

    lambda_dot_mode "fd" differentiates the samples by centered differences
    (endpoints one-sided, second order); "dre" substitutes the Riccati
    right-hand side, exact when the trajectory is the backward extremal and
    free of differentiation noise, which keeps the rank count honest.
    """
    grid = lam.grid
    if quadform.grid != grid:
        raise ValueError("trajectory and quadratic form use different grids")
    n = sys.n
    nq = quadform.nq
    values = lam.values
    if not np.isfinite(values).all():
        raise ValueError("feasibility needs a complete (non-escaped) trajectory")

    if lambda_dot_mode == "fd":
        lam_dot = fd_derivative(values, grid.h)
    elif lambda_dot_mode == "dre":
        lam_dot = np.empty_like(values)
        for k, t in enumerate(grid.times()):
            a, b = sys.ab_at(t, grid)
            qm = quadform.at(t)
            q, nmat, r = _blocks_from_quadform(qm, n)
            lam_dot[k] = _dre_rhs(values[k], a, b, q, nmat, np.linalg.inv(r))
    else:
        raise ValueError(f"unknown lambda_dot_mode {lambda_dot_mode!r}")

    times = grid.times()
    min_eig = np.empty(grid.steps + 1)
    rank_trace = np.empty(grid.steps + 1, dtype=int)
    factors: Optional[List[SymFactor]] = [] if with_factors else None
    for k, t in enumerate(times):
        a, b = sys.ab_at(t, grid)
        m = _assemble_raw(values[k], lam_dot[k], a, b, quadform.at(t))
        eigs = np.linalg.eigvalsh(m)
        min_eig[k] = eigs[0]
        cut = tol * max(1.0, float(np.abs(eigs).max()))
        rank_trace[k] = int(np.count_nonzero(np.abs(eigs) > cut))
        if factors is not None:
            qm = quadform.at(t)
            _, nmat, r = _blocks_from_quadform(qm, n)
            factors.append(_factor_from_parts(values[k], b, nmat, r, nq))

    if lambda_final is None:
        lam_f = np.zeros((n, n))
    else:
        lam_f = np.asarray(lambda_final, dtype=float).reshape(n, n)
    bnd_err = float(np.max(np.abs(values[-1] - lam_f)))
    boundary_ok = bnd_err <= BOUNDARY_TOL * (1.0 + float(np.max(np.abs(lam_f))))

    psd_ok = bool(min_eig.min() >= -tol)
    worst = float(times[int(np.argmin(min_eig))])
    return DlmiCertificate(
        min_eig=min_eig,
        feasible=psd_ok and boundary_ok,
        psd_ok=psd_ok,
        boundary_ok=boundary_ok,
        worst_node=worst,
        rank_trace=rank_trace,
        tol=tol,
        factor=factors,
    )


def _pd_sqrt_pair(r: np.ndarray, tol: float = 1e-12):
    """(R^{1/2}, R^{-1/2}) for symmetric positive definite R."""
    w, v = np.linalg.eigh(0.5 * (r + r.T))
    if w.min() <= tol * max(1.0, w.max()):
        raise M22NotPDError(
            f"input-weight block must be positive definite "
            f"(min eigenvalue {w.min():.3e})")
    root = (v * np.sqrt(w)) @ v.T
    inv_root = (v / np.sqrt(w)) @ v.T
    return root, inv_root


def _factor_from_parts(lam, b, nmat, r, nq) -> SymFactor:
    root, inv_root = _pd_sqrt_pair(r)
    top = (nmat + lam @ b) @ inv_root
    u = np.vstack([top, root])
    return SymFactor(n=nq, r=r.shape[0], U=u)


def extremal_factorization(lambda_bar, sys: StateSpace, cost, t: float,
                           grid=None, lambda_dot=None,
                           tol: float = 1e-6) -> SymFactor:
    """Width-m factor U with U U^T = M(Lam) at time t, valid when Lam is the
    Riccati extremal there: U = [(N + Lam B) R^{-1/2}; R^{1/2}].

    When a derivative sample is supplied it is checked against the Riccati
    right-hand side; a mismatch means the identity would fail, reported as
    ResidualTooLarge.
    """
    lam = np.asarray(lambda_bar, dtype=float)
    if lam.ndim == 0:
        lam = lam.reshape(1, 1)
    if lam.shape != (sys.n, sys.n):
        raise ValueError(f"value has shape {lam.shape}, expected ({sys.n}, {sys.n})")

    def coef(c):
        c = np.asarray(c, dtype=float)
        if c.ndim <= 2:
            return c
        if grid is None:
            raise ValueError("sampled coefficients need a grid to evaluate at t")
        return coeff_at(c, t, grid)

    a, b = coef(sys.A), coef(sys.B)
    q, nmat, r = coef(cost.Q), coef(cost.N), coef(cost.R)

    if lambda_dot is not None:
        ld = np.asarray(lambda_dot, dtype=float).reshape(sys.n, sys.n)
        rhs = _dre_rhs(lam, a, b, q, nmat, np.linalg.inv(r))
        err = float(np.max(np.abs(ld - rhs)))
        if err > tol * (1.0 + float(np.max(np.abs(rhs)))):
            raise ResidualTooLarge(
                f"derivative deviates from the Riccati flow by {err:.3e} "
                f"at t={t:.6g}; not an extremal there")

    return _factor_from_parts(lam, b, nmat, r, sys.n + sys.m)


def lure_residuals(lam, lam_dot, U1, U2, sys: StateSpace, cost,
                   t: float = 0.0, grid=None):
    """Entrywise max residuals of the three coupled factor equations:

        U1 U1^T = Q + dLam/dt + A^T Lam + Lam A
        U1 U2^T = N + Lam B
        U2 U2^T = R
    """
    lam = np.asarray(lam, dtype=float).reshape(sys.n, sys.n)
    lam_dot = np.asarray(lam_dot, dtype=float).reshape(sys.n, sys.n)
    u1 = np.atleast_2d(np.asarray(U1, dtype=float))
    u2 = np.atleast_2d(np.asarray(U2, dtype=float))

    def coef(c):
        c = np.asarray(c, dtype=float)
        if c.ndim <= 2:
            return c
        if grid is None:
            raise ValueError("sampled coefficients need a grid to evaluate at t")
        return coeff_at(c, t, grid)

    a, b = coef(sys.A), coef(sys.B)
    q, nmat, r = coef(cost.Q), coef(cost.N), coef(cost.R)
    block11 = q + lam_dot + a.T @ lam + lam @ a
    r1 = float(np.max(np.abs(u1 @ u1.T - block11)))
    r2 = float(np.max(np.abs(u1 @ u2.T - (nmat + lam @ b))))
    r3 = float(np.max(np.abs(u2 @ u2.T - r)))
    return r1, r2, r3


def dual_objective(lam: MatTrajectory, x_i=None, X_i=None, W=None) -> float:
    """Value certified by a dual trajectory.

    Deterministic payload x_i gives x_i^T Lam(0) x_i. Stochastic payload
    gives tr(Lam(0) X_i) plus the trapezoidal quadrature of tr(Lam(t) W(t)).
    """
    if x_i is not None and (X_i is not None or W is not None):
        raise ValueError("pass either a deterministic x_i or stochastic X_i/W")
    lam0 = lam.node(0)
    if not np.isfinite(lam0).all():
        raise ValueError("trajectory has no valid value at t=0")

    if x_i is not None:
        x = np.asarray(x_i, dtype=float).reshape(-1)
        if x.size != lam.n:
            raise ValueError(f"x_i has {x.size} entries, expected {lam.n}")
        return float(x @ lam0 @ x)

    total = 0.0
    if X_i is not None:
        xi = np.asarray(X_i, dtype=float).reshape(lam.n, lam.n)
        total += float(np.trace(lam0 @ xi))
    if W is not None:
        w = np.asarray(W, dtype=float)
        if w.ndim == 0:
            w = w.reshape(1, 1)
        if not np.isfinite(lam.values).all():
            raise ValueError("trajectory has invalid nodes; cannot integrate")
        vals = np.array([
            float(np.trace(lam.node(k) @ coeff_at(w, t, lam.grid)))
            for k, t in enumerate(lam.grid.times())
        ])
        total += trapz(vals, lam.grid.h)
    if x_i is None and X_i is None and W is None:
        raise ValueError("no payload given")
    return total
