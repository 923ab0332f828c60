"""Broadcast-channel matching for uncoded transmission of correlated sources.

A scheme ``X = alpha . S`` is matched to a degraded channel when the auxiliary
covariance ``sigma0 = Sigma_V - Sigma_S + P beta beta^T`` is positive
semidefinite.  ``sigma0`` then doubles as the covariance of the auxiliary
noise W that makes the outer bound tight, which :func:`verify_outer_bound_equality`
checks numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, InfeasibleDownstreamError, InvalidInputError
from .model import BcChannel, BcScheme, SourceSpec, conditional_input_variance
from .symmat import EigenReport, LdlTrace, SymMatrix, eig_sym, ldl_psd_test

__all__ = [
    "PSD_RTOL",
    "SigmaV",
    "MatchCertificate",
    "DistortionVector",
    "OuterBoundReport",
    "Corollary2Result",
    "Corollary3Result",
    "build_sigma_v",
    "sigma0_matrix",
    "certify",
    "bc_distortions",
    "verify_outer_bound_equality",
    "lemma1_check",
    "pi_spectrum",
    "corollary2_existence",
    "corollary3_thresholds",
    "threshold_noise",
    "trailing_pivots_ok",
    "corollary1_monotone_check",
]

PSD_RTOL = 1e-10
# pivot slack used by the bisection predicate; far below PSD_RTOL so the
# located threshold is not biased by the certification dead band
_BISECT_RTOL = 64 * np.finfo(float).eps


def _check_dims(scheme: BcScheme, ch: BcChannel, src: SourceSpec | None = None):
    dims = {scheme.m, ch.m} | ({src.m} if src is not None else set())
    if len(dims) != 1:
        raise InvalidInputError(f"dimension mismatch: {sorted(dims)}")


@dataclass(frozen=True)
class SigmaV:
    matrix: SymMatrix

    @property
    def array(self) -> np.ndarray:
        return self.matrix.array


def _sigma_v_array(alpha: np.ndarray, beta: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = alpha.size
    ab = alpha * beta
    # cumulative sums over j < m and over j > m of alpha_j beta_j (times b_j)
    below = np.concatenate(([0.0], np.cumsum(ab)[:-1]))
    abb = ab * b
    above = np.concatenate((np.cumsum(abb[::-1])[::-1][1:], [0.0]))
    v = np.empty((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            v[i, j] = v[j, i] = -beta[i] * beta[j] * b[j]
        v[i, i] = beta[i] / alpha[i] * (b[i] * below[i] + above[i])
    return v


def build_sigma_v(scheme: BcScheme, ch: BcChannel) -> SigmaV:
    """Covariance of V_m = (S_m - beta_m X) + W_m forced by the equality conditions.

    Off-diagonal entries are ``-beta_j beta_m Var(X|Y_m)`` for j < m; the diagonal
    is fixed by ``Sigma_V alpha = 0``.
    """
    if scheme.m != ch.m:
        raise InvalidInputError(f"scheme has {scheme.m} components, channel {ch.m} receivers")
    b = conditional_input_variance(scheme.p, ch.noise_powers)
    return SigmaV(SymMatrix(_sigma_v_array(scheme.alpha, scheme.beta, b)))


def sigma0_matrix(scheme: BcScheme, ch: BcChannel, src: SourceSpec) -> tuple[np.ndarray, float]:
    """``Sigma_V - Sigma_S + P beta beta^T`` and the magnitude of its largest ingredient."""
    _check_dims(scheme, ch, src)
    sv = build_sigma_v(scheme, ch).array
    rank1 = scheme.p * np.outer(scheme.beta, scheme.beta)
    s = src.sigma_s.array
    scale = max(np.max(np.abs(sv)), np.max(np.abs(s)), np.max(np.abs(rank1)))
    return sv - s + rank1, float(scale)


@dataclass(frozen=True)
class MatchCertificate:
    """Result of :func:`certify`.

    ``sigma0`` is the matching matrix; when matched it is the covariance of the
    auxiliary noise W (``sigma_w``).  ``ldl`` records elimination from the
    last receiver to the first.
    """

    sigma0: SymMatrix
    matched: bool
    ldl: LdlTrace
    lambda_min: float
    eigen: EigenReport
    p: float

    @property
    def sigma_w(self) -> SymMatrix:
        return self.sigma0


def certify(scheme: BcScheme, ch: BcChannel, src: SourceSpec, tol: float | None = None) -> MatchCertificate:
    """Decide whether ``ch`` is matched to ``src`` under ``scheme``.

    ``tol`` is the absolute pivot slack.  It defaults to ``1e-10`` times the
    larger of 1 and the largest entry among the three matrices summed into
    ``sigma0``, so that exact-boundary channels (``sigma0 == 0``) certify.
    """
    s0, scale = sigma0_matrix(scheme, ch, src)
    sig0 = SymMatrix(s0)
    if tol is None:
        tol = PSD_RTOL * max(1.0, scale)
    order = range(sig0.n - 1, -1, -1)
    ldl = ldl_psd_test(sig0, tol=tol, order=order)
    eig = eig_sym(sig0)
    return MatchCertificate(sig0, ldl.psd, ldl, eig.lambda_min, eig, scheme.p)


@dataclass(frozen=True)
class DistortionVector:
    d: np.ndarray

    def __iter__(self):
        return iter(self.d)

    def __len__(self):
        return self.d.size


def bc_distortions(scheme: BcScheme, ch: BcChannel, src: SourceSpec) -> DistortionVector:
    """Per-receiver MSE of the scalar MMSE estimate of S_m from Y_m = X + Z_m."""
    _check_dims(scheme, ch, src)
    s = ch.noise_powers
    cov = scheme.p * scheme.beta
    with np.errstate(divide="ignore"):
        gain = np.where(np.isinf(s), 0.0, cov**2 / (scheme.p + s))
    return DistortionVector(src.variances - gain)


@dataclass(frozen=True)
class OuterBoundReport:
    lhs: float
    rhs: float
    gap: float
    terms: tuple[float, ...]


def verify_outer_bound_equality(cert: MatchCertificate, dist: DistortionVector, ch: BcChannel,
                                src: SourceSpec) -> OuterBoundReport:
    """Evaluate both sides of the outer bound at ``W ~ N(0, sigma_w)``.

    lhs = sum_m (s_m - s_{m+1}) |Sigma_S,1..m + Sigma_W,1..m| / prod_{j<=m} (D_j + Var W_j)
    rhs = P + s_1, with s_{M+1} = 0.  A matched certificate makes them equal.
    """
    if not cert.matched:
        raise InvalidInputError("outer-bound equality is only defined for a matched certificate")
    s = ch.noise_powers
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("outer-bound evaluation needs finite noise powers")
    w = cert.sigma_w.array
    d = np.asarray(dist.d, dtype=float)
    denom = d + w.diagonal()
    if np.any(denom <= 0):
        raise InvalidInputError(f"D_j + Var(W_j) must be positive, got {denom.tolist()}")
    u = src.sigma_s.array + w
    steps = np.append(s[:-1] - s[1:], s[-1])
    terms = []
    for m in range(1, s.size + 1):
        if steps[m - 1] == 0.0:
            terms.append(0.0)
            continue
        terms.append(steps[m - 1] * np.linalg.det(u[:m, :m]) / np.prod(denom[:m]))
    lhs = math.fsum(terms)
    rhs = cert.p + float(s[0])
    return OuterBoundReport(lhs, rhs, abs(lhs - rhs) / rhs, tuple(terms))


def lemma1_check(scheme: BcScheme, tol: float = 1e-12) -> tuple[bool, tuple[int, ...]]:
    """Necessary condition alpha_i beta_i >= 0; returns the offending indices."""
    ab = scheme.alpha * scheme.beta
    bad = tuple(int(i) for i in np.flatnonzero(ab < -tol))
    return not bad, bad


def pi_spectrum(sigma, alpha) -> tuple[EigenReport, np.ndarray] | None:
    """Eigen data of ``Pi sigma Pi`` with ``Pi = diag(sqrt(alpha_i / (sigma alpha)_i))``.

    Returns None when some ratio is not strictly positive (Pi undefined).
    The second element is the diagonal of Pi.
    """
    s = np.asarray(sigma, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    ratio = alpha / (s @ alpha)
    if not np.all(ratio > 0) or not np.all(np.isfinite(ratio)):
        return None
    pi = np.sqrt(ratio)
    return eig_sym(pi[:, None] * s * pi[None, :]), pi


@dataclass(frozen=True)
class Corollary2Result:
    """Existence of a matched channel for a source/scheme pair.

    ``noise_floor`` is ``lambda2 P / (1 - lambda2)``: every channel whose noise
    powers all reach it is matched.  It is ``inf`` when no matching exists.
    """

    exists: bool
    lambda2: float
    noise_floor: float
    eigenvalues: tuple[float, ...] = ()
    reason: str = ""


_EIG_ONE_TOL = 1e-9


def corollary2_existence(scheme: BcScheme, src: SourceSpec) -> Corollary2Result:
    ab = scheme.alpha * scheme.beta
    if not np.all(ab > 0):
        bad = np.flatnonzero(~(ab > 0)).tolist()
        return Corollary2Result(False, math.nan, math.inf, (), f"alpha_i beta_i <= 0 at {bad}")
    spec = pi_spectrum(src.sigma_s.array, scheme.alpha)
    if spec is None:
        return Corollary2Result(False, math.nan, math.inf, (), "Pi is undefined")
    eig, pi = spec
    lam = tuple(float(x) for x in eig.eigenvalues)
    # sqrt(alpha_i beta_i) is an eigenvector for eigenvalue 1 by construction
    v1 = np.sqrt(ab)
    mat = pi[:, None] * src.sigma_s.array * pi[None, :]
    resid = float(np.linalg.norm(mat @ v1 - v1)) / float(np.linalg.norm(v1))
    if resid > 1e-6:
        raise ConsistencyError(f"sqrt(alpha beta) is not a unit eigenvector of Pi Sigma Pi (residual {resid:.3e})")
    if src.m == 1:
        return Corollary2Result(True, 0.0, 0.0, lam)
    lam2 = lam[1]
    if abs(lam[0] - 1.0) > _EIG_ONE_TOL:
        return Corollary2Result(False, lam2, math.inf, lam, f"largest eigenvalue {lam[0]:.12g} exceeds 1")
    if not lam2 < 1.0 - _EIG_ONE_TOL:
        return Corollary2Result(False, lam2, math.inf, lam, "eigenvalue 1 is repeated")
    return Corollary2Result(True, lam2, lam2 * scheme.p / (1.0 - lam2), lam)


@dataclass(frozen=True)
class Corollary3Result:
    """Per-receiver sufficient noise levels for m = 2..M.

    ``thresholds[k]`` belongs to receiver ``k + 2``.  Not applicable unless
    ``alpha_i alpha_j rho_ij > 0`` for every pair.
    """

    applicable: bool
    thresholds: tuple[float, ...] = ()
    reason: str = ""


def corollary3_thresholds(scheme: BcScheme, src: SourceSpec) -> Corollary3Result:
    rho = src.sigma_s.array
    a = scheme.alpha
    prod = a[:, None] * a[None, :] * rho
    off = ~np.eye(a.size, dtype=bool)
    if not np.all(prod[off] > 0):
        return Corollary3Result(False, (), "alpha_i alpha_j rho_ij > 0 fails for some pair")
    b, p = scheme.beta, scheme.p
    out = []
    for m in range(1, a.size):
        out.append(max(b[j] * b[m] / rho[j, m] for j in range(m)) * p * p - p)
    return Corollary3Result(True, tuple(float(x) for x in out))


def _trailing_trace(scheme: BcScheme, src: SourceSpec, noise_powers, m: int, rtol: float):
    s0, scale = sigma0_matrix(scheme, BcChannel(noise_powers), src)
    n = s0.shape[0]
    return ldl_psd_test(SymMatrix(s0), tol=rtol * max(1.0, scale), order=range(n - 1, -1, -1),
                        stop_after=n - m + 1)


def trailing_pivots_ok(scheme: BcScheme, src: SourceSpec, noise_powers, m: int,
                       rtol: float = PSD_RTOL) -> bool:
    """Whether elimination of receivers M..m (1-based) meets the pivot conditions.

    Those pivots depend only on the noise powers of receivers m..M, so the
    entries for receivers 1..m-1 in ``noise_powers`` are irrelevant.
    """
    return _trailing_trace(scheme, src, noise_powers, m, rtol).psd


def threshold_noise(scheme: BcScheme, src: SourceSpec, downstream=(), rel_width: float = 1e-12,
                    hi: float | None = None) -> float:
    """Smallest noise power of receiver ``m = M - len(downstream)`` keeping a match possible.

    ``downstream`` lists the noise powers of receivers m+1..M (in receiver
    order).  The answer is located by bisection on the pivot condition of
    elimination step M-m, in the transformed coordinate ``Ps/(P+s)``, which is
    valid because that condition is monotone in the noise power.  Returns
    ``inf`` when even an infinitely noisy receiver m fails.  The lower end of the
    search is the next receiver's noise (0 for m = M); if that already passes it
    is returned.
    """
    mm = scheme.m
    downstream = [float(x) for x in downstream]
    k = len(downstream)
    if k >= mm:
        raise InvalidInputError(f"{k} downstream receivers leave nothing to threshold (M={mm})")
    m = mm - k  # 1-based receiver index
    p = scheme.p
    base = np.full(mm, math.inf)
    base[m:] = downstream
    if k:
        if any(not x > 0 for x in downstream) or any(downstream[i] < downstream[i + 1] for i in range(k - 1)):
            raise InfeasibleDownstreamError(f"downstream noise powers {downstream} are not ordered and positive")
        if not trailing_pivots_ok(scheme, src, base, m + 1, _BISECT_RTOL):
            raise InfeasibleDownstreamError(f"downstream noise powers {downstream} already fail their thresholds")

    def ok(s):
        trial = base.copy()
        trial[m - 1] = s
        return trailing_pivots_ok(scheme, src, trial, m, _BISECT_RTOL)

    lo_noise = downstream[0] if k else 0.0
    if k and ok(lo_noise):
        return lo_noise
    if hi is not None:
        if not ok(hi):
            return math.inf
        b_hi = p * hi / (p + hi)
    else:
        trial = base.copy()
        trial[m - 1] = math.inf
        tr = _trailing_trace(scheme, src, trial, m, _BISECT_RTOL)
        if not tr.psd:
            return math.inf
        # passing only by the zero-pivot slack at infinite noise: no finite noise passes
        if abs(tr.diag[-1]) <= tr.tol and not ok(p):
            return math.inf
        b_hi = p
    b_lo = p * lo_noise / (p + lo_noise)
    # invariant: ok fails at b_lo, holds at b_hi
    while True:
        b_mid = 0.5 * (b_lo + b_hi)
        if b_mid <= b_lo or b_mid >= b_hi:
            break
        s_mid = p * b_mid / (p - b_mid) if b_mid < p else math.inf
        if ok(s_mid):
            b_hi = b_mid
        else:
            b_lo = b_mid
        s_lo = p * b_lo / (p - b_lo)
        s_hi = p * b_hi / (p - b_hi) if b_hi < p else math.inf
        if math.isfinite(s_hi) and s_hi - s_lo <= rel_width * s_hi:
            break
    return p * b_hi / (p - b_hi) if b_hi < p else math.inf


def corollary1_monotone_check(scheme: BcScheme, src: SourceSpec, ch: BcChannel, ch_plus: BcChannel,
                              tol: float | None = None) -> bool:
    """Certify ``ch_plus`` after checking it dominates the matched channel ``ch``."""
    if not certify(scheme, ch, src, tol).matched:
        raise InvalidInputError("baseline channel is not matched")
    if np.any(ch_plus.noise_powers < ch.noise_powers) or np.any(np.diff(ch_plus.noise_powers) > 0):
        raise InvalidInputError("ch_plus must be ordered and component-wise at least ch")
    return certify(scheme, ch_plus, src, tol).matched
