"""Symmetric-matrix and positive-cone primitives.

Inner products, the dual pair of norms (nuclear / largest singular value),
rank-revealing symmetric factorization, epsilon-rank, Schur-complement
positivity tests, and orthogonality certificates for pairs of positive
semidefinite matrices. Everything here is a pure function of immutable
inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SymMat",
    "SymFactor",
    "OrthogonalityReport",
    "NotPSDError",
    "M22NotPDError",
    "trace_inner",
    "nuclear_norm",
    "sigma_max_norm",
    "trace_duality_maximizer",
    "sym_factor",
    "eps_rank",
    "schur_psd_test",
    "orthogonality_certificate",
]

DEFAULT_TOL = 1e-9


class NotPSDError(ValueError):
    """Input matrix has an eigenvalue below the allowed negative tolerance."""


class M22NotPDError(ValueError):
    """Lower-right block of a Schur test is not strictly positive definite."""


class SymMat:
    """Dense real symmetric matrix.

    The upper triangle of the input is authoritative: construction mirrors it
    onto the lower triangle, so ``entries[i, j] == entries[j, i]`` holds
    exactly afterwards. The stored array is read-only.
    """

    __slots__ = ("n", "mat")

    def __init__(self, entries):
        a = np.asarray(entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if a.shape[0] < 1:
            raise ValueError("dimension must be at least 1")
        upper = np.triu(a)
        m = upper + upper.T - np.diag(np.diag(a))
        m.flags.writeable = False
        self.n = a.shape[0]
        self.mat = m

    @classmethod
    def zeros(cls, n: int) -> "SymMat":
        return cls(np.zeros((n, n)))

    @classmethod
    def identity(cls, n: int) -> "SymMat":
        return cls(np.eye(n))

    def __array__(self, dtype=None, copy=None):
        if dtype is not None:
            return self.mat.astype(dtype)
        return self.mat

    def __repr__(self):
        return f"SymMat(n={self.n})"


@dataclass(frozen=True)
class SymFactor:
    """Tall factor U of a PSD matrix, with U @ U.T reconstructing the source.

    When produced by :func:`sym_factor`, the width ``r`` equals the
    epsilon-rank of the source matrix.
    """

    n: int
    r: int
    U: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.U @ self.U.T


def _as_sym(m) -> np.ndarray:
    """Coerce SymMat or array-like to a symmetric ndarray."""
    if isinstance(m, SymMat):
        return m.mat
    a = np.asarray(m, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def trace_inner(h, m) -> float:
    """Trace inner product tr(h m) of two symmetric matrices."""
    ha, ma = _as_sym(h), _as_sym(m)
    if ha.shape != ma.shape:
        raise ValueError(f"dimension mismatch: {ha.shape} vs {ma.shape}")
    # tr(h m) = sum of elementwise products for symmetric arguments
    return float(np.sum(ha * ma))


def nuclear_norm(m) -> float:
    """Sum of singular values; for symmetric m, the sum of |eigenvalues|."""
    return float(np.sum(np.abs(np.linalg.eigvalsh(_as_sym(m)))))


def sigma_max_norm(m) -> float:
    """Largest singular value; for symmetric m, the largest |eigenvalue|."""
    w = np.linalg.eigvalsh(_as_sym(m))
    return float(np.max(np.abs(w)))


def trace_duality_maximizer(h) -> SymMat:
    """Unit-nuclear-norm matrix m attaining trace_inner(h, m) = sigma_max_norm(h).

    Construction: outer product of the eigenvector with the largest
    |eigenvalue|, signed by that eigenvalue.
    """
    ha = _as_sym(h)
    w, v = np.linalg.eigh(ha)
    k = int(np.argmax(np.abs(w)))
    if w[k] == 0.0:
        raise ValueError("trace_duality_maximizer requires a nonzero matrix")
    sign = 1.0 if w[k] > 0 else -1.0
    vec = v[:, k]
    return SymMat(sign * np.outer(vec, vec))


def _eig_threshold(w: np.ndarray, tol: float) -> float:
    # relative to max(1, ||m||_inf) with ||.||_inf the largest |eigenvalue|
    return tol * max(1.0, float(np.max(np.abs(w))) if w.size else 0.0)


def sym_factor(m, tol: float = DEFAULT_TOL) -> SymFactor:
    """Rank-revealing factor U with U @ U.T = m for PSD m.

    Columns are eigenvectors scaled by sqrt(eigenvalue); eigenvalues within
    the (relative) tolerance band of zero are dropped, so the factor width is
    the epsilon-rank. Uses eigendecomposition rather than Cholesky so rank
    deficiency is handled.

    Raises NotPSDError if any eigenvalue falls below -tol (relative).
    """
    ma = _as_sym(m)
    w, v = np.linalg.eigh(ma)
    cut = _eig_threshold(w, tol)
    if np.any(w < -cut):
        raise NotPSDError(f"matrix has eigenvalue {w.min():.3e} < {-cut:.3e}")
    keep = w > cut
    U = v[:, keep] * np.sqrt(w[keep])
    return SymFactor(n=ma.shape[0], r=int(np.count_nonzero(keep)), U=U)


def eps_rank(m, tol: float = DEFAULT_TOL) -> int:
    """Number of eigenvalues with |lambda| > tol * max(1, ||m||)."""
    w = np.linalg.eigvalsh(_as_sym(m))
    return int(np.count_nonzero(np.abs(w) > _eig_threshold(w, tol)))


def schur_psd_test(m11, m12, m22, tol: float = DEFAULT_TOL) -> bool:
    """PSD verdict for the block matrix [[m11, m12], [m12^T, m22]].

    Requires m22 strictly positive definite (min eigenvalue > tol); the
    verdict tests the Schur complement m11 - m12 m22^{-1} m12^T >= -tol and
    agrees with a direct eigenvalue test of the assembled block matrix.
    """
    a11 = _as_sym(m11)
    a22 = _as_sym(m22)
    a12 = np.asarray(m12, dtype=float)
    if a12.ndim == 0:
        a12 = a12.reshape(1, 1)
    if a12.shape != (a11.shape[0], a22.shape[0]):
        raise ValueError(
            f"off-diagonal block shape {a12.shape} does not match "
            f"({a11.shape[0]}, {a22.shape[0]})"
        )
    w22 = np.linalg.eigvalsh(a22)
    if w22.min() <= tol:
        raise M22NotPDError(
            f"lower-right block min eigenvalue {w22.min():.3e} <= {tol:.3e}"
        )
    comp = a11 - a12 @ np.linalg.solve(a22, a12.T)
    wmin = float(np.linalg.eigvalsh(0.5 * (comp + comp.T)).min())
    return wmin >= -tol


@dataclass(frozen=True)
class OrthogonalityReport:
    """Certificate that two PSD matrices with zero inner product have
    orthogonal images and complementary rank budget."""

    inner: float
    orthogonal: bool          # inner product within tolerance of zero
    tested: bool              # whether the image/rank assertions were evaluated
    cross_max: float          # max |U1^T U2| entry (nan when not tested)
    cross_ok: bool
    rank1: int
    rank2: int
    rank_sum_ok: bool


def orthogonality_certificate(m1, m2, tol: float = DEFAULT_TOL) -> OrthogonalityReport:
    """Check the orthogonal-image consequences of <m1, m2> = 0 for PSD m1, m2.

    When the inner product is within tolerance of zero the factors satisfy
    U1^T U2 ~ 0 (entrywise bounded by sqrt of the inner product, since
    tr(m1 m2) = ||U1^T U2||_F^2) and the epsilon-ranks sum to at most n.
    """
    a1, a2 = _as_sym(m1), _as_sym(m2)
    if a1.shape != a2.shape:
        raise ValueError(f"dimension mismatch: {a1.shape} vs {a2.shape}")
    f1 = sym_factor(a1, tol)  # raises NotPSDError if violated
    f2 = sym_factor(a2, tol)
    inner = trace_inner(a1, a2)
    scale = max(1.0, sigma_max_norm(a1)) * max(1.0, sigma_max_norm(a2))
    orthogonal = inner <= tol * scale
    if not orthogonal:
        return OrthogonalityReport(
            inner=inner, orthogonal=False, tested=False,
            cross_max=float("nan"), cross_ok=False,
            rank1=f1.r, rank2=f2.r, rank_sum_ok=False,
        )
    cross = f1.U.T @ f2.U
    cross_max = float(np.max(np.abs(cross))) if cross.size else 0.0
    cross_ok = cross_max <= np.sqrt(max(inner, 0.0) + tol * scale)
    rank_sum_ok = f1.r + f2.r <= a1.shape[0]
    return OrthogonalityReport(
        inner=inner, orthogonal=True, tested=True,
        cross_max=cross_max, cross_ok=cross_ok,
        rank1=f1.r, rank2=f2.r, rank_sum_ok=rank_sum_ok,
    )
