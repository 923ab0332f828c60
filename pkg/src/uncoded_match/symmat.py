"""Small dense symmetric-matrix kernel.

Everything here works on matrices of a few dozen rows at most: covariance
matrices of sources, observations and auxiliary noises.  The routines are
written for robustness on semidefinite boundary cases rather than speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError, NumericalFailureError

__all__ = [
    "SymMatrix",
    "LdlTrace",
    "EigenReport",
    "as_sym",
    "default_tol",
    "ldl_psd_test",
    "eig_sym",
    "in_row_space",
    "quad_form",
]

# asymmetry accepted (and averaged away) on construction, relative to max |a_ij|
_SYM_SLACK = 1e-12
MAX_SWEEPS = 100
# squared off-diagonal Frobenius mass, relative to the total, at which Jacobi stops
_CONVERGED = 1e-30


class SymMatrix:
    """Read-only real symmetric matrix.

    Input that is symmetric up to ``1e-12`` relative slack is averaged with its
    transpose, so stored entries satisfy ``a[i, j] == a[j, i]`` exactly.
    """

    __slots__ = ("_a",)

    def __init__(self, entries):
        a = np.array(entries, dtype=float)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise InvalidInputError(f"expected a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("matrix has non-finite entries")
        scale = max(1.0, float(np.max(np.abs(a))))
        if np.max(np.abs(a - a.T)) > _SYM_SLACK * scale:
            raise InvalidInputError("matrix is not symmetric")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        self._a = a

    @property
    def n(self) -> int:
        return self._a.shape[0]

    @property
    def array(self) -> np.ndarray:
        return self._a

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._a
        return self._a.astype(dtype)

    def __getitem__(self, idx):
        return self._a[idx]

    def __eq__(self, other):
        if not isinstance(other, SymMatrix):
            return NotImplemented
        return np.array_equal(self._a, other._a)

    def __hash__(self):
        return hash(self._a.tobytes())

    def __repr__(self):
        return f"SymMatrix({self._a.tolist()!r})"

    def max_abs(self) -> float:
        return float(np.max(np.abs(self._a)))

    def leading(self, m: int) -> "SymMatrix":
        """Leading principal m x m block."""
        return SymMatrix(self._a[:m, :m])

    def tolist(self):
        return self._a.tolist()


def as_sym(a) -> SymMatrix:
    return a if isinstance(a, SymMatrix) else SymMatrix(a)


def default_tol(a) -> float:
    """Default pivot tolerance, ``1e-10 * max(1, max |a_ij|)``."""
    return 1e-10 * max(1.0, as_sym(a).max_abs())


@dataclass(frozen=True)
class LdlTrace:
    """Outcome of symmetric elimination.

    ``diag`` lists pivots in elimination order (``order``).  ``skipped`` holds the
    indices whose pivot and remaining row were both zero within tolerance.
    ``failed_index`` is the first index with a negative pivot, or a zero pivot
    whose row is not zero; elimination stops there.
    """

    diag: tuple[float, ...]
    order: tuple[int, ...]
    skipped: frozenset[int] = field(default_factory=frozenset)
    failed_index: int | None = None
    tol: float = 0.0

    @property
    def psd(self) -> bool:
        return self.failed_index is None

    def pivot(self, index: int) -> float:
        return self.diag[self.order.index(index)]


def ldl_psd_test(a, tol: float | None = None, order: Sequence[int] | None = None,
                 stop_after: int | None = None) -> LdlTrace:
    """Decide positive semidefiniteness by symmetric Gaussian elimination.

    Pivots are taken in ``order`` (default ``0..n-1``).  A pivot ``> tol`` is
    eliminated, a pivot ``< -tol`` fails, and a pivot within ``tol`` of zero is
    skipped only when its remaining row is also within ``tol`` of zero.

    ``stop_after`` limits the number of elimination steps; the verdict then only
    concerns the pivots visited.
    """
    s = as_sym(a)
    n = s.n
    if tol is None:
        tol = default_tol(s)
    if tol < 0 or not math.isfinite(tol):
        raise InvalidInputError(f"tolerance must be finite and non-negative, got {tol}")
    order = tuple(range(n)) if order is None else tuple(int(i) for i in order)
    if sorted(order) != list(range(n)):
        raise InvalidInputError(f"order {order} is not a permutation of 0..{n - 1}")
    steps = n if stop_after is None else min(n, int(stop_after))

    w = s.array.copy()
    remaining = list(order)
    pivots: list[float] = []
    skipped: set[int] = set()
    for step in range(steps):
        k = remaining.pop(0)
        piv = float(w[k, k])
        pivots.append(piv)
        rest = remaining
        row = w[k, rest] if rest else np.empty(0)
        if piv > tol:
            if rest:
                idx = np.ix_(rest, rest)
                w[idx] -= np.outer(row, row) / piv
        elif piv >= -tol:
            if row.size and float(np.max(np.abs(row))) > tol:
                return LdlTrace(tuple(pivots), order, frozenset(skipped), k, tol)
            skipped.add(k)
        else:
            return LdlTrace(tuple(pivots), order, frozenset(skipped), k, tol)
    return LdlTrace(tuple(pivots), order, frozenset(skipped), None, tol)


@dataclass(frozen=True)
class EigenReport:
    """Eigenvalues in descending order; ``eigenvectors[:, i]`` pairs with ``eigenvalues[i]``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[0])


def eig_sym(a, max_sweeps: int = MAX_SWEEPS) -> EigenReport:
    """Full eigendecomposition by cyclic Jacobi rotations.

    Sweeps visit every (p, q) pair with p < q in row order; the loop ends once
    the off-diagonal mass is negligible against the diagonal.  Raises
    :class:`NumericalFailureError` if ``max_sweeps`` is exhausted.
    """
    s = as_sym(a)
    n = s.n
    w = s.array.copy()
    v = np.eye(n)
    if n == 1:
        return EigenReport(w.diagonal().copy(), v, 0)

    total = float(np.sum(w * w))
    if total == 0.0:
        return EigenReport(np.zeros(n), v, 0)

    converged = False
    sweep = 0
    for sweep in range(1, max_sweeps + 1):
        off = _off_mass(w)
        if off <= _CONVERGED * total:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = w[p, q]
                if apq == 0.0:
                    continue
                app, aqq = w[p, p], w[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                sn = t * c
                cp = w[:, p].copy()
                cq = w[:, q].copy()
                w[:, p] = c * cp - sn * cq
                w[:, q] = sn * cp + c * cq
                rp = w[p, :].copy()
                rq = w[q, :].copy()
                w[p, :] = c * rp - sn * rq
                w[q, :] = sn * rp + c * rq
                w[p, p] = app - t * apq
                w[q, q] = aqq + t * apq
                w[p, q] = w[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - sn * vq
                v[:, q] = sn * vp + c * vq
    if not converged:
        off = _off_mass(w)
        if off > _CONVERGED * total:
            raise NumericalFailureError(
                f"Jacobi iteration did not converge in {max_sweeps} sweeps "
                f"(off-diagonal mass {off:.3e} of {total:.3e})"
            )

    lam = w.diagonal().copy()
    idx = np.argsort(-lam, kind="stable")
    return EigenReport(lam[idx], v[:, idx], sweep)


def _off_mass(w: np.ndarray) -> float:
    return float(np.sum(np.triu(w, 1) ** 2))


def in_row_space(v, a, tol: float = 1e-9) -> bool:
    """True iff ``v`` is within ``tol * max(1, |v|)`` of the row space of ``a``."""
    return row_space_residual(v, a) <= tol * max(1.0, float(np.linalg.norm(np.asarray(v, dtype=float))))


def row_space_residual(v, a) -> float:
    """Least-squares residual ``min_x |v - x^T a|``."""
    v = np.asarray(v, dtype=float).ravel()
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[1] != v.size:
        raise InvalidInputError(f"vector of length {v.size} vs matrix with {a.shape[1]} columns")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(a))):
        raise InvalidInputError("non-finite input")
    x, *_ = np.linalg.lstsq(a.T, v, rcond=None)
    return float(np.linalg.norm(v - a.T @ x))


def quad_form(x: Iterable[float], a) -> float:
    """``x^T a x`` accumulated as diagonal terms plus doubled upper-triangle terms."""
    s = as_sym(a)
    x = np.asarray(list(x) if not isinstance(x, np.ndarray) else x, dtype=float).ravel()
    if x.size != s.n:
        raise InvalidInputError(f"vector of length {x.size} vs {s.n}x{s.n} matrix")
    m = s.array
    terms = [m[i, i] * x[i] * x[i] for i in range(s.n)]
    terms += [2.0 * m[i, j] * x[i] * x[j] for i in range(s.n) for j in range(i + 1, s.n)]
    return math.fsum(terms)
