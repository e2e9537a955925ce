"""Command-line interface: JSON problem ingestion, analyzer dispatch,
certificate and trajectory emission, exit codes for CI use.

Exit-code contract: 0 success, 1 bad input (I/O, parse, schema, validation,
document mismatch), 2 the infimum is minus infinity, 3 not passive,
4 verification failed. Every command is deterministic given (document,
flags) except for the timing_seconds field of result documents.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analyzers import (BracketFailure, Certificate, DNotStrictlyPassive,
                        EscapeUnexpected, dri_cloud, hinf_norm_bisection,
                        iqc_infimum, passivity_test, solve_lqr,
                        solve_stoch_lqr, verify_solution)
from .covariance import Gain
from .model import (BoundedReal, GeneralIQC, LQR, PositiveReal, ProblemSpec,
                    CostData, StateSpace, StochLQR, TimeGrid, ValidationError)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_MINUS_INFINITY = 2
EXIT_NOT_PASSIVE = 3
EXIT_VERIFY_FAIL = 4

SCHEMA_VERSION = "1"

__all__ = [
    "main",
    "DocumentError",
    "parse_problem",
    "problem_sha256",
    "certificate_document",
    "write_trajectory_csv",
    "load_trajectory_csv",
]


class DocumentError(ValueError):
    """Problem or result document is malformed; carries the field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


# ---------------------------------------------------------------------------
# document parsing

def _load_json(path: str):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise DocumentError(path, f"cannot read file: {e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise DocumentError(
            path, f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}"
        ) from e


def _obj(doc, key, path, required=True):
    val = doc.get(key)
    if val is None:
        if required:
            raise DocumentError(f"{path}.{key}", "missing required object")
        return None
    if not isinstance(val, dict):
        raise DocumentError(f"{path}.{key}", "must be a JSON object")
    return val


def _num(doc, key, path, required=True, default=None):
    val = doc.get(key, default)
    if val is None:
        if required:
            raise DocumentError(f"{path}.{key}", "missing required number")
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise DocumentError(f"{path}.{key}", f"must be a number, got {val!r}")
    return float(val)


def _matrix(doc, key, path, required=True):
    val = doc.get(key)
    if val is None:
        if required:
            raise DocumentError(f"{path}.{key}", "missing required matrix")
        return None
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError) as e:
        raise DocumentError(f"{path}.{key}", f"not a numeric array: {e}") from e
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim not in (1, 2, 3):
        raise DocumentError(f"{path}.{key}",
                            f"expected 1-, 2- or 3-dimensional array, "
                            f"got {arr.ndim} dimensions")
    return arr


def _variant_from_doc(vdoc: dict):
    vtype = vdoc.get("type")
    if not isinstance(vtype, str):
        raise DocumentError("variant.type", "missing variant tag")

    def cost():
        q = _matrix(vdoc, "Q", "variant")
        r = _matrix(vdoc, "R", "variant")
        nmat = _matrix(vdoc, "N", "variant", required=False)
        try:
            return CostData(Q=q, N=nmat, R=r)
        except ValueError as e:
            raise DocumentError("variant", str(e)) from e

    try:
        if vtype == "lqr":
            return LQR(cost=cost(), x_i=_matrix(vdoc, "x_i", "variant"))
        if vtype == "stoch_lqr":
            return StochLQR(cost=cost(),
                            X_i=_matrix(vdoc, "X_i", "variant"),
                            W=_matrix(vdoc, "W", "variant"))
        if vtype == "general_iqc":
            return GeneralIQC(cost=cost(), x_i=_matrix(vdoc, "x_i", "variant"))
        if vtype == "bounded_real":
            return BoundedReal(gamma=_num(vdoc, "gamma", "variant",
                                          required=False, default=1.0))
        if vtype == "positive_real":
            return PositiveReal()
    except DocumentError:
        raise
    except ValueError as e:
        raise DocumentError("variant", str(e)) from e
    raise DocumentError("variant.type", f"unknown variant {vtype!r}")


def parse_problem(doc, steps_override=None, T_override=None):
    """Turn a problem document into (ProblemSpec, options dict).

    Raises DocumentError with a field path on any structural problem;
    variant-level semantic checks stay in validate().
    """
    if not isinstance(doc, dict):
        raise DocumentError("$", "document root must be a JSON object")
    sv = doc.get("schema_version")
    if sv != SCHEMA_VERSION:
        raise DocumentError("schema_version",
                            f"expected {SCHEMA_VERSION!r}, got {sv!r}")

    system = _obj(doc, "system", "$")
    try:
        sys_obj = StateSpace(
            A=_matrix(system, "A", "system"),
            B=_matrix(system, "B", "system"),
            C=_matrix(system, "C", "system", required=False),
            D=_matrix(system, "D", "system", required=False),
        )
    except ValueError as e:
        raise DocumentError("system", str(e)) from e

    horizon = _obj(doc, "horizon", "$", required=False) or {}
    T = T_override if T_override is not None else _num(
        horizon, "T", "horizon", required=T_override is None)
    steps_doc = horizon.get("steps")
    if steps_doc is not None and (isinstance(steps_doc, bool)
                                  or not isinstance(steps_doc, int)):
        raise DocumentError("horizon.steps", "must be an integer")
    steps = steps_override if steps_override is not None else (steps_doc or 512)
    try:
        grid = TimeGrid(T=T, steps=int(steps))
    except ValueError as e:
        raise DocumentError("horizon", str(e)) from e

    variant = _variant_from_doc(_obj(doc, "variant", "$"))

    opts_doc = _obj(doc, "options", "$", required=False) or {}
    options = {
        "tol": _num(opts_doc, "tol", "options", required=False, default=1e-9),
        "escape_cap": _num(opts_doc, "escape_cap", "options",
                           required=False, default=1e9),
        "seed": int(_num(opts_doc, "seed", "options",
                         required=False, default=0)),
    }
    return ProblemSpec(sys=sys_obj, grid=grid, variant=variant), options


def problem_sha256(doc) -> str:
    """Hash of the canonical JSON serialization (sorted keys, no spaces)."""
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# document emission

def _json_num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _gain_payload(gain):
    if gain is None:
        return None
    k = gain.K
    return {
        "m": int(k.shape[1]),
        "n": int(k.shape[2]),
        "nodes": [[float(v) for v in node.ravel()] for node in k],
    }


def certificate_document(cert: Certificate, problem_hash: str,
                         timing: float) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "certificate",
        "tool": {"name": "lqconic", "version": __version__},
        "problem_sha256": problem_hash,
        "variant": cert.variant,
        "grid": {"T": cert.grid.T, "steps": cert.grid.steps},
        "optimal_value": _json_num(cert.optimal_value),
        "minus_infinity": bool(cert.minus_infinity),
        "escape_time": _json_num(cert.escape_time),
        "dual_value": _json_num(cert.dual_value),
        "primal_value": _json_num(cert.primal_value),
        "duality_gap": _json_num(cert.duality_gap),
        "alignment": _json_num(cert.alignment),
        "dual_min_eig": _json_num(cert.dual_min_eig),
        "descriptor_residual": _json_num(cert.descriptor_residual),
        "rank_ok": bool(cert.rank_ok),
        "gain": _gain_payload(cert.gain),
        "timing_seconds": float(timing),
    }
    if cert.lam_max_eig is not None:
        doc["lam_max_eig"] = _json_num(cert.lam_max_eig)
    if cert.verdict is not None:
        doc["verdict"] = bool(cert.verdict)
    return doc


def _emit(doc: dict, out_path=None):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)


def _fmt(x: float) -> str:
    return "%.17g" % x


def write_trajectory_csv(path, traj, prefix: str = "l"):
    """Write node samples as CSV: time column plus row-major matrix entries,
    17 significant digits (bitwise round-trip). Invalid (escaped) nodes are
    skipped. Accepts dual trajectories (.values) and gain schedules (.K)."""
    values = traj.values if hasattr(traj, "values") else traj.K
    rows_n, cols_n = values.shape[1], values.shape[2]
    header = ["t"] + [f"{prefix}_{i}_{j}"
                      for i in range(rows_n) for j in range(cols_n)]
    lines = [",".join(header)]
    times = traj.grid.times()
    for k in range(values.shape[0]):
        if not np.isfinite(values[k]).all():
            continue
        cells = [_fmt(times[k])] + [_fmt(v) for v in values[k].ravel()]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory_csv(path):
    """Read back a trajectory CSV; returns (times, rows) with one flat
    row-major entry vector per node (reshape is the caller's business)."""
    lines = Path(path).read_text().strip().split("\n")
    times, rows = [], []
    for line in lines[1:]:
        cells = [float(c) for c in line.split(",")]
        times.append(cells[0])
        rows.append(cells[1:])
    return np.array(times), np.array(rows)


def _export_certificate_csvs(cert: Certificate, csv_dir):
    out = Path(csv_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cert.lam is not None:
        write_trajectory_csv(out / "dual.csv", cert.lam, prefix="l")
    if cert.gain is not None:
        write_trajectory_csv(out / "gain.csv", cert.gain, prefix="k")


# ---------------------------------------------------------------------------
# subcommands

def _cmd_analyzer(args, runner, expected_type, tag):
    doc = _load_json(args.problem)
    spec, options = parse_problem(doc, steps_override=args.steps,
                                  T_override=getattr(args, "T", None))
    if not isinstance(spec.variant, expected_type):
        raise DocumentError(
            "variant.type",
            f"subcommand {tag!r} needs a {tag!r} problem, got "
            f"{type(spec.variant).__name__}")
    tol = args.tol if args.tol is not None else options["tol"]
    t0 = time.perf_counter()
    cert = runner(spec, tol=tol, escape_cap=options["escape_cap"])
    timing = time.perf_counter() - t0
    result = certificate_document(cert, problem_sha256(doc), timing)
    _emit(result, args.out)
    if args.csv_dir:
        _export_certificate_csvs(cert, args.csv_dir)
    return EXIT_MINUS_INFINITY if cert.minus_infinity else EXIT_OK


def cmd_lqr(args):
    return _cmd_analyzer(args, solve_lqr, LQR, "lqr")


def cmd_slqr(args):
    return _cmd_analyzer(args, solve_stoch_lqr, StochLQR, "stoch_lqr")


def cmd_iqc(args):
    return _cmd_analyzer(args, iqc_infimum, GeneralIQC, "general_iqc")


def cmd_hinf(args):
    doc = _load_json(args.problem)
    spec, options = parse_problem(doc, steps_override=args.steps,
                                  T_override=args.T)
    if not isinstance(spec.variant, BoundedReal):
        raise DocumentError("variant.type",
                            "subcommand 'hinf' needs a bounded_real problem")
    tol = args.tol if args.tol is not None else options["tol"]
    t0 = time.perf_counter()
    res = hinf_norm_bisection(spec.sys, spec.grid.T, steps=spec.grid.steps,
                              tol=tol)
    timing = time.perf_counter() - t0
    _emit({
        "schema_version": SCHEMA_VERSION,
        "kind": "norm_result",
        "tool": {"name": "lqconic", "version": __version__},
        "problem_sha256": problem_sha256(doc),
        "grid": {"T": spec.grid.T, "steps": spec.grid.steps},
        "gamma_star": res.gamma_star,
        "iterations": res.iterations,
        "bracket": [res.bracket[0], res.bracket[1]],
        "timing_seconds": timing,
    }, args.out)
    return EXIT_OK


def cmd_passivity(args):
    doc = _load_json(args.problem)
    spec, options = parse_problem(doc, steps_override=args.steps,
                                  T_override=args.T)
    if not isinstance(spec.variant, PositiveReal):
        raise DocumentError("variant.type",
                            "subcommand 'passivity' needs a positive_real problem")
    t0 = time.perf_counter()
    passive, cert = passivity_test(spec.sys, spec.grid.T,
                                   steps=spec.grid.steps)
    timing = time.perf_counter() - t0
    result = certificate_document(cert, problem_sha256(doc), timing)
    _emit(result, args.out)
    if args.csv_dir:
        _export_certificate_csvs(cert, args.csv_dir)
    return EXIT_OK if passive else EXIT_NOT_PASSIVE


def cmd_dri_cloud(args):
    doc = _load_json(args.problem)
    spec, options = parse_problem(doc, steps_override=args.steps,
                                  T_override=getattr(args, "T", None))
    if not isinstance(spec.variant, (LQR, GeneralIQC)):
        raise DocumentError("variant.type",
                            "dri-cloud needs a cost-bearing (lqr or "
                            "general_iqc) problem")
    seed = args.seed if args.seed is not None else options["seed"]
    report = dri_cloud(spec, n_samples=args.samples, switch_points=10,
                       seed=seed)

    csv_dir = Path(args.csv_dir)
    csv_dir.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(csv_dir / "dre.csv", report.dre.lam)
    for i, sample in enumerate(report.samples):
        write_trajectory_csv(csv_dir / f"sample_{i:03d}.csv", sample.lam)

    summary = {
        "schema_version": SCHEMA_VERSION,
        "kind": "dri_cloud_summary",
        "tool": {"name": "lqconic", "version": __version__},
        "problem_sha256": problem_sha256(doc),
        "grid": {"T": spec.grid.T, "steps": spec.grid.steps},
        "n_samples": len(report.samples),
        "switch_points": report.switch_points,
        "seed": report.seed,
        "maximal": bool(report.maximal),
        "worst_margin": _json_num(report.worst_margin),
        "n_escaped": report.n_escaped,
        "dre_escaped": bool(report.dre.escaped),
        "dre_escape_time": _json_num(report.dre.escape_time),
        "escape_times": [_json_num(s.escape_time) for s in report.samples],
    }
    _emit(summary, args.out or str(csv_dir / "summary.json"))
    return EXIT_OK


def _certificate_from_document(res: dict) -> Certificate:
    for key in ("variant", "grid", "minus_infinity"):
        if key not in res:
            raise DocumentError(f"result.{key}", "missing required field")
    gdoc = res["grid"]
    grid = TimeGrid(T=float(gdoc["T"]), steps=int(gdoc["steps"]))
    gain = None
    gdata = res.get("gain")
    if gdata is not None:
        nodes = np.asarray(gdata["nodes"], dtype=float)
        m, n = int(gdata["m"]), int(gdata["n"])
        gain = Gain(grid, nodes.reshape(grid.steps + 1, m, n))
    nan = float("nan")
    return Certificate(
        variant=str(res["variant"]),
        optimal_value=res.get("optimal_value"),
        minus_infinity=bool(res["minus_infinity"]),
        escape_time=res.get("escape_time"),
        gain=gain,
        dual_min_eig=nan,
        duality_gap=nan,
        alignment=nan,
        rank_ok=bool(res.get("rank_ok", False)),
        grid=grid,
        dual_value=res.get("dual_value"),
        primal_value=res.get("primal_value"),
        descriptor_residual=nan,
        lam=None,
        verdict=res.get("verdict"),
    )


def cmd_verify(args):
    pdoc = _load_json(args.problem)
    rdoc = _load_json(args.result)
    if not isinstance(rdoc, dict):
        raise DocumentError("result", "result document must be a JSON object")
    want = rdoc.get("problem_sha256")
    have = problem_sha256(pdoc)
    if want != have:
        print(f"error: problem hash mismatch: result was produced for "
              f"{want}, this problem hashes to {have}", file=sys.stderr)
        return EXIT_INPUT
    spec, _ = parse_problem(pdoc)
    cert = _certificate_from_document(rdoc)
    report = verify_solution(spec, cert)
    for c in report.checks:
        mark = "ok  " if c.ok else "FAIL"
        print(f"{mark} {c.name}: {c.value:.6g} (allowed {c.threshold:.6g})")
    for note in report.notes:
        print(f"note: {note}")
    print("PASS" if report.passed else "FAIL")
    return EXIT_OK if report.passed else EXIT_VERIFY_FAIL


# ---------------------------------------------------------------------------
# parser

def _add_common(p, csv_dir=True):
    p.add_argument("problem", help="path to a problem JSON document")
    p.add_argument("--out", default=None, help="result path (default stdout)")
    p.add_argument("--steps", type=int, default=None,
                   help="override grid steps (default document or 512)")
    p.add_argument("--tol", type=float, default=None,
                   help="tolerance (default document options or 1e-9)")
    p.add_argument("--T", type=float, default=None,
                   help="override horizon length")
    if csv_dir:
        p.add_argument("--csv-dir", default=None,
                       help="also export trajectories as CSV into this directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lqconic",
        description="Finite-horizon linear-quadratic analysis with "
                    "Riccati-extremal certificates.")
    parser.add_argument("--version", action="version",
                        version=f"lqconic {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lqr", help="deterministic regulator optimum")
    _add_common(p)
    p.set_defaults(func=cmd_lqr)

    p = sub.add_parser("slqr", help="stochastic regulator optimum")
    _add_common(p)
    p.set_defaults(func=cmd_slqr)

    p = sub.add_parser("iqc", help="sign-indefinite quadratic infimum")
    _add_common(p)
    p.set_defaults(func=cmd_iqc)

    p = sub.add_parser("hinf", help="finite-horizon induced-norm bisection")
    _add_common(p, csv_dir=False)
    p.set_defaults(func=cmd_hinf)

    p = sub.add_parser("passivity", help="finite-horizon passivity test")
    _add_common(p)
    p.set_defaults(func=cmd_passivity)

    p = sub.add_parser("dri-cloud",
                       help="forced-inequality solution cloud experiment")
    _add_common(p, csv_dir=False)
    p.add_argument("--samples", type=int, default=100,
                   help="number of forced samples (default 100)")
    p.add_argument("--seed", type=int, default=None,
                   help="base seed (default document options or 0)")
    p.add_argument("--csv-dir", default="dri_cloud_out",
                   help="output directory for per-trajectory CSVs")
    p.set_defaults(func=cmd_dri_cloud)

    p = sub.add_parser("verify",
                       help="re-derive a result document's claims at a "
                            "refined grid")
    p.add_argument("problem", help="problem JSON document")
    p.add_argument("result", help="result JSON document to verify")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DocumentError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ValidationError as e:
        for v in e.violations:
            print(f"error: {v}", file=sys.stderr)
        return EXIT_INPUT
    except (EscapeUnexpected, DNotStrictlyPassive, BracketFailure) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, KeyError, TypeError) as e:
        print(f"error: malformed input: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
