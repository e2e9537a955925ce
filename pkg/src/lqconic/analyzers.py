"""End-to-end variant solvers, each emitting a machine-checkable certificate.

Every analyzer follows the same route: integrate the backward Riccati flow
to get the maximal dual trajectory, read the optimal value off its initial
node, derive the feedback gain, rebuild the primal covariance side, and
report the evidence (dual feasibility margin, duality gap, alignment
residual, rank of the dual slack). Finite escape of the Riccati flow is the
boundary between verdicts: it means the constrained quadratic form is
unbounded below (value minus infinity), the gain bound fails, or passivity
fails, depending on the variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .covariance import (CovTrajectory, Gain, alignment_residual,
                         closed_loop_simulate, deterministic_covariance,
                         descriptor_residual, gain_from_dual,
                         primal_objective, stochastic_covariance)
from .dlmi import dual_objective, feasibility
from .model import (BoundedReal, CostData, GeneralIQC, LQR, PositiveReal,
                    ProblemSpec, StateSpace, StochLQR, TimeGrid,
                    assemble_quadform, effective_cost, validate)
from .riccati import (DreSolution, DriSample, MatTrajectory, _node_forcing_lookup,
                      _residual_sweep, _RicFlow, _sweep, draw_forcing,
                      forcing_amplitude, solve_dre_final, switch_bounds)

__all__ = [
    "Certificate",
    "NormResult",
    "DriCloudReport",
    "VerificationCheck",
    "VerificationReport",
    "EscapeUnexpected",
    "BracketFailure",
    "DNotStrictlyPassive",
    "solve_lqr",
    "solve_stoch_lqr",
    "iqc_infimum",
    "bounded_real_test",
    "hinf_norm_bisection",
    "passivity_test",
    "dri_cloud",
    "verify_solution",
    "scalar_preset",
]

DEFAULT_STEPS = 512


class EscapeUnexpected(RuntimeError):
    """The Riccati flow escaped although the variant's hypotheses rule that
    out; the input data must violate them."""


class BracketFailure(RuntimeError):
    """Geometric bracket growth failed to straddle the critical gain."""


class DNotStrictlyPassive(ValueError):
    """Passivity analysis needs D + D^T strictly positive definite."""


@dataclass(frozen=True)
class Certificate:
    """Optimality evidence emitted by an analyzer.

    When optimal_value is finite: dual_min_eig is the worst eigenvalue of
    the dual slack (should sit at numerical zero), duality_gap the primal
    minus dual difference, alignment the certified gap bound from the trace
    pairing, and rank_ok confirms the slack has the minimal rank m at every
    node. minus_infinity certificates instead carry the escape time.
    """

    variant: str
    optimal_value: Optional[float]
    minus_infinity: bool
    escape_time: Optional[float]
    gain: Optional[Gain]
    dual_min_eig: float
    duality_gap: float
    alignment: float
    rank_ok: bool
    grid: TimeGrid
    dual_value: Optional[float]
    primal_value: Optional[float]
    descriptor_residual: float
    lam: Optional[MatTrajectory]
    lam_max_eig: Optional[float] = None
    verdict: Optional[bool] = None


@dataclass(frozen=True)
class NormResult:
    """Bisection output for the finite-horizon induced norm.

    gamma_star is the smallest bracketed gain that passes the boundedness
    test; the true critical gain lies in [bracket lo, hi]. Near the critical
    value the underlying test itself is grid-limited (escape just beyond the
    horizon is invisible at a finite step), so gamma_star carries the grid's
    accuracy, not machine precision.
    """

    gamma_star: float
    iterations: int
    bracket: tuple


@dataclass(frozen=True)
class DriCloudReport:
    """Inequality-solution cloud against the equation's extremal."""

    dre: DreSolution
    samples: List[DriSample]
    maximal: bool
    worst_margin: Optional[float]
    n_escaped: int
    tol: float
    seed: int
    switch_points: int


@dataclass(frozen=True)
class VerificationCheck:
    name: str
    value: float
    threshold: float
    ok: bool


@dataclass(frozen=True)
class VerificationReport:
    passed: bool
    checks: List[VerificationCheck]
    grid: TimeGrid
    dual_value: Optional[float] = None
    primal_value: Optional[float] = None
    notes: List[str] = field(default_factory=list)


def _payload(spec: ProblemSpec):
    """(x_i, X_i, W) triple for the variant; exactly one side is active."""
    var = spec.variant
    if isinstance(var, (LQR, GeneralIQC)):
        return var.x_i, None, None
    if isinstance(var, StochLQR):
        return None, var.X_i, var.W
    if isinstance(var, (BoundedReal, PositiveReal)):
        return np.zeros(spec.sys.n), None, None
    raise ValueError(f"unknown variant {type(var).__name__}")


def _certify_finite(spec: ProblemSpec, cost: CostData, dre: DreSolution,
                    tag: str, tol: float, verdict: Optional[bool] = None,
                    sign_check: bool = False) -> Certificate:
    sys, grid = spec.sys, spec.grid
    lam = dre.lam
    qf = assemble_quadform(spec)
    gain = gain_from_dual(lam, sys, cost)
    x_i, X_i, W = _payload(spec)

    if x_i is not None:
        dual = dual_objective(lam, x_i=x_i)
        x, u = closed_loop_simulate(sys, gain, x_i, grid)
        sigma = deterministic_covariance(x, u, grid)
        desc = descriptor_residual(sigma, sys)
    else:
        dual = dual_objective(lam, X_i=X_i, W=W)
        sigma = stochastic_covariance(sys, gain, W, X_i, grid)
        desc = descriptor_residual(sigma, sys, W=W)

    primal = primal_objective(sigma, qf)
    align = alignment_residual(sigma, lam, sys, cost, qf)
    feas = feasibility(lam, sys, qf, tol=tol, lambda_dot_mode="dre")
    rank_ok = bool((feas.rank_trace == sys.m).all())

    lam_max = None
    if sign_check:
        lam_max = float(np.linalg.eigvalsh(lam.values).max())

    return Certificate(
        variant=tag,
        optimal_value=dual,
        minus_infinity=False,
        escape_time=None,
        gain=gain,
        dual_min_eig=float(feas.min_eig.min()),
        duality_gap=primal - dual,
        alignment=align,
        rank_ok=rank_ok,
        grid=grid,
        dual_value=dual,
        primal_value=primal,
        descriptor_residual=desc,
        lam=lam,
        lam_max_eig=lam_max,
        verdict=verdict,
    )


def _escape_certificate(spec: ProblemSpec, dre: DreSolution, tag: str,
                        verdict: Optional[bool] = None) -> Certificate:
    return Certificate(
        variant=tag,
        optimal_value=None,
        minus_infinity=True,
        escape_time=dre.escape_time,
        gain=None,
        dual_min_eig=float("nan"),
        duality_gap=float("nan"),
        alignment=float("nan"),
        rank_ok=False,
        grid=spec.grid,
        dual_value=None,
        primal_value=None,
        descriptor_residual=float("nan"),
        lam=dre.lam,
        verdict=verdict,
    )


def solve_lqr(spec: ProblemSpec, tol: float = 1e-9,
              escape_cap: float = 1e9) -> Certificate:
    """Deterministic regulator: optimal value x_i^T Lam(0) x_i with the
    feedback gain that attains it; the data's sign hypotheses make escape
    impossible, so escape is reported as a hard error."""
    validate(spec)
    cost = effective_cost(spec)
    dre = solve_dre_final(spec.sys, cost, np.zeros((spec.sys.n, spec.sys.n)),
                          spec.grid, escape_cap=escape_cap)
    if dre.escaped:
        raise EscapeUnexpected(
            f"Riccati flow escaped at t={dre.escape_time:.6g} although the "
            "regulator hypotheses exclude escape; check the cost signs")
    return _certify_finite(spec, cost, dre, "lqr", tol)


def solve_stoch_lqr(spec: ProblemSpec, tol: float = 1e-9,
                    escape_cap: float = 1e9) -> Certificate:
    """Stochastic regulator: value tr(Lam(0) X_i) + integral of tr(Lam W);
    the gain equals the deterministic one (it never depends on X_i or W)."""
    validate(spec)
    cost = effective_cost(spec)
    dre = solve_dre_final(spec.sys, cost, np.zeros((spec.sys.n, spec.sys.n)),
                          spec.grid, escape_cap=escape_cap)
    if dre.escaped:
        raise EscapeUnexpected(
            f"Riccati flow escaped at t={dre.escape_time:.6g} although the "
            "regulator hypotheses exclude escape; check the cost signs")
    return _certify_finite(spec, cost, dre, "stoch_lqr", tol)


def iqc_infimum(spec: ProblemSpec, tol: float = 1e-9,
                escape_cap: float = 1e9) -> Certificate:
    """Infimum of a sign-indefinite quadratic form over the trajectories:
    finite (with certificate) when the Riccati flow stays bounded, minus
    infinity (with the escape time) when it does not."""
    validate(spec)
    cost = effective_cost(spec)
    dre = solve_dre_final(spec.sys, cost, np.zeros((spec.sys.n, spec.sys.n)),
                          spec.grid, escape_cap=escape_cap)
    if dre.escaped:
        return _escape_certificate(spec, dre, "general_iqc")
    return _certify_finite(spec, cost, dre, "general_iqc", tol)


def bounded_real_test(sys: StateSpace, gamma: float, T: float,
                      steps: int = DEFAULT_STEPS, tol: float = 1e-9):
    """Finite-horizon induced-norm test: the gain bound gamma holds iff the
    associated Riccati flow stays bounded on the horizon. Returns
    (verdict, Certificate); a bounded dual trajectory is also checked to be
    negative semidefinite."""
    spec = ProblemSpec(sys=sys, grid=TimeGrid(T=T, steps=steps),
                       variant=BoundedReal(gamma=gamma))
    validate(spec)
    cost = effective_cost(spec)
    dre = solve_dre_final(sys, cost, np.zeros((sys.n, sys.n)), spec.grid)
    if dre.escaped:
        return False, _escape_certificate(spec, dre, "bounded_real",
                                          verdict=False)
    cert = _certify_finite(spec, cost, dre, "bounded_real", tol,
                           verdict=True, sign_check=True)
    return True, cert


def hinf_norm_bisection(sys: StateSpace, T: float, steps: int = DEFAULT_STEPS,
                        tol: float = 1e-4) -> NormResult:
    """Bisect the gain bound down to a bracket of width tol.

    The bracket is grown geometrically (factor 4) from gamma=1 until the
    boundedness test passes at the top and fails at the bottom, then halved.
    A zero output map short-circuits to norm zero.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if sys.C is None or sys.C.size == 0 or not np.any(sys.C):
        return NormResult(gamma_star=0.0, iterations=0, bracket=(0.0, 0.0))

    def ok(g: float) -> bool:
        verdict, _ = bounded_real_test(sys, g, T, steps)
        return verdict

    iterations = 0
    if ok(1.0):
        hi = 1.0
        lo = 0.25
        while ok(lo):
            hi = lo
            lo /= 4.0
            iterations += 1
            if iterations > 60:
                raise BracketFailure(
                    "test passes at arbitrarily small gain; output map is "
                    "numerically zero but not exactly zero")
    else:
        lo = 1.0
        hi = 4.0
        while not ok(hi):
            lo = hi
            hi *= 4.0
            iterations += 1
            if iterations > 60:
                raise BracketFailure("no finite gain passes the test")

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
        iterations += 1
        if iterations > 200:
            break
    return NormResult(gamma_star=hi, iterations=iterations, bracket=(lo, hi))


def passivity_test(sys: StateSpace, T: float, steps: int = DEFAULT_STEPS,
                   tol: float = 1e-9):
    """Finite-horizon passivity of the input/output inner product: holds iff
    the Riccati flow of the half-sum quadratic form stays bounded."""
    d = sys.D if sys.D.ndim == 2 else sys.D[0]
    ds = d + d.T
    if ds.size == 0 or float(np.linalg.eigvalsh(0.5 * ds).min()) <= 0.0:
        raise DNotStrictlyPassive(
            "D + D^T must be strictly positive definite for the "
            "finite-horizon passivity test")
    spec = ProblemSpec(sys=sys, grid=TimeGrid(T=T, steps=steps),
                       variant=PositiveReal())
    validate(spec)
    cost = effective_cost(spec)
    dre = solve_dre_final(sys, cost, np.zeros((sys.n, sys.n)), spec.grid)
    if dre.escaped:
        return False, _escape_certificate(spec, dre, "positive_real",
                                          verdict=False)
    cert = _certify_finite(spec, cost, dre, "positive_real", tol,
                           verdict=True, sign_check=True)
    return True, cert


def scalar_preset(q_sign: int, m_sign: int, T: float = 2.0,
                  steps: int = DEFAULT_STEPS) -> ProblemSpec:
    """Scalar benchmark family: a=0, b=1, state weight q = +/-1, effective
    quadratic coefficient m = b^2/r = +/-1 via the sign of r. Two of the four
    sign pairs escape in finite time at T - pi/2."""
    if q_sign not in (-1, 1) or m_sign not in (-1, 1):
        raise ValueError("signs must be +1 or -1")
    sys = StateSpace(A=[[0.0]], B=[[1.0]])
    cost = CostData(Q=[[float(q_sign)]], N=None, R=[[float(m_sign)]])
    variant = LQR(cost=cost, x_i=[0.0])
    return ProblemSpec(sys=sys, grid=TimeGrid(T=T, steps=steps), variant=variant)


def dri_cloud(spec: ProblemSpec, n_samples: int = 100,
              switch_points: int = 10, seed: int = 0,
              tol: float = 1e-7) -> DriCloudReport:
    """Sample a cloud of forced inequality solutions against the equation's
    extremal and report whether the extremal dominates every sample at every
    shared node.

    Sample i reproduces sample_dri_solution with seed+i bitwise; all samples
    integrate in one batched sweep. Per-sample residual sweeps are skipped
    here (the cloud's contract is the ordering, not integration accuracy).
    """
    sys, grid = spec.sys, spec.grid
    cost = effective_cost(spec)
    n = sys.n
    dre = solve_dre_final(sys, cost, np.zeros((n, n)), grid)

    samples: List[DriSample] = []
    worst: Optional[float] = None
    n_escaped = 0
    maximal = True

    if n_samples > 0:
        amp = forcing_amplitude(cost)
        hvals = np.empty((n_samples, switch_points, n, n))
        for i in range(n_samples):
            hvals[i] = draw_forcing(n, switch_points, seed + i, amp)
        bounds = switch_bounds(grid.steps, switch_points)
        lookup, step_to_interval = _node_forcing_lookup(hvals, bounds)
        flow = _RicFlow(sys, cost, grid)
        lam0 = np.zeros((n_samples, n, n))
        values, escaped, escape_time = _sweep(flow, lam0, grid, "final",
                                              1e9, forcings=lookup)
        node_interval = np.append(step_to_interval, step_to_interval[-1])
        dre_valid = dre.lam.valid_mask()
        worst = math.inf
        for i in range(n_samples):
            lam_traj = MatTrajectory(grid, values[i], meta=f"dri-{i}")
            forcing_traj = MatTrajectory(grid, hvals[i][node_interval],
                                         meta=f"dri-forcing-{i}")
            esc = bool(escaped[i])
            n_escaped += int(esc)
            samples.append(DriSample(
                lam=lam_traj,
                forcing=forcing_traj,
                escaped=esc,
                escape_time=float(escape_time[i]) if esc else None,
                residual_max=float("nan"),
            ))
            shared = dre_valid & lam_traj.valid_mask()
            if shared.any():
                diff = dre.lam.values[shared] - values[i][shared]
                diff = 0.5 * (diff + diff.transpose(0, 2, 1))
                margin = float(np.linalg.eigvalsh(diff)[:, 0].min())
                worst = min(worst, margin)
        if worst is not math.inf:
            maximal = worst >= -tol
        else:
            worst = None

    return DriCloudReport(
        dre=dre,
        samples=samples,
        maximal=maximal,
        worst_margin=worst,
        n_escaped=n_escaped,
        tol=tol,
        seed=seed,
        switch_points=switch_points,
    )


def verify_solution(spec: ProblemSpec, certificate: Certificate,
                    tol: float = 1e-8) -> VerificationReport:
    """Independently re-derive the certificate's claims on a twice-refined
    grid, reusing only the certificate's gain and claimed value.

    The refinement exposes certificates that merely echo discretization
    artifacts; the gain reuse makes tampered or zeroed gains fail on the
    alignment residual rather than being silently replaced.
    """
    validate(spec)
    sys = spec.sys
    grid2 = spec.grid.refined(2)
    spec2 = ProblemSpec(sys=sys, grid=grid2, variant=spec.variant)
    cost = effective_cost(spec2)
    dre2 = solve_dre_final(sys, cost, np.zeros((sys.n, sys.n)), grid2)
    checks: List[VerificationCheck] = []
    notes: List[str] = []

    def check(name, value, threshold, ok=None):
        ok = bool(value <= threshold) if ok is None else bool(ok)
        checks.append(VerificationCheck(name, float(value), float(threshold), ok))
        return ok

    if certificate.minus_infinity:
        h = spec.grid.h
        if not dre2.escaped:
            check("escape_confirmed", 0.0, 0.0, ok=False)
            notes.append("refined solve stayed bounded; claimed escape absent")
            return VerificationReport(False, checks, grid2, notes=notes)
        check("escape_confirmed", 1.0, 1.0, ok=True)
        err = abs((certificate.escape_time or math.nan) - dre2.escape_time)
        ok = check("escape_time_match", err, 2.0 * h)
        return VerificationReport(ok, checks, grid2, notes=notes)

    if dre2.escaped:
        check("bounded_confirmed", 0.0, 0.0, ok=False)
        notes.append("refined solve escaped; claimed finite value impossible")
        return VerificationReport(False, checks, grid2, notes=notes)
    if certificate.gain is None:
        check("gain_present", 0.0, 0.0, ok=False)
        return VerificationReport(False, checks, grid2, notes=notes)

    lam2 = dre2.lam
    qf2 = assemble_quadform(spec2)
    gain2 = Gain(grid2, np.stack([certificate.gain.at(t)
                                  for t in grid2.times()]))
    x_i, X_i, W = _payload(spec2)
    dual2 = (dual_objective(lam2, x_i=x_i) if x_i is not None
             else dual_objective(lam2, X_i=X_i, W=W))

    if x_i is not None:
        x, u = closed_loop_simulate(sys, gain2, x_i, grid2)
        sigma2 = deterministic_covariance(x, u, grid2)
        desc = descriptor_residual(sigma2, sys)
    else:
        sigma2 = stochastic_covariance(sys, gain2, W, X_i, grid2)
        desc = descriptor_residual(sigma2, sys, W=W)
    primal2 = primal_objective(sigma2, qf2)
    align2 = alignment_residual(sigma2, lam2, sys, cost, qf2)

    feas = feasibility(lam2, sys, qf2, tol=tol, lambda_dot_mode="dre")
    check("dual_feasible", -float(feas.min_eig.min()), tol,
          ok=feas.psd_ok and feas.boundary_ok)
    check("rank_minimal", float(np.max(np.abs(feas.rank_trace - sys.m))), 0.0)

    scale = 1.0 + abs(dual2)
    claimed = certificate.optimal_value
    if claimed is None or not math.isfinite(claimed):
        check("value_match", math.inf, 1e-4 * scale, ok=False)
    else:
        check("value_match", abs(claimed - dual2), max(1e-5, 1e-4 * scale))

    smax = float(np.abs(np.linalg.eigvalsh(sigma2.sigma.values)).max())
    check("descriptor", desc, 1e-3 * (1.0 + smax))
    check("alignment", align2, max(1e-6, 1e-4 * scale))
    check("weak_duality", dual2 - primal2, 1e-6 * scale)

    if certificate.variant in ("bounded_real", "positive_real"):
        lmax = float(np.linalg.eigvalsh(lam2.values).max())
        check("dual_sign", lmax, tol)

    passed = all(c.ok for c in checks)
    return VerificationReport(passed, checks, grid2,
                              dual_value=dual2, primal_value=primal2,
                              notes=notes)
