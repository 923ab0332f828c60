"""Problem specifications: sources, broadcast channels, uncoded schemes, MAC/CEO setups.

Constructors only check structure (shapes, finiteness).  The semantic
invariants, such as PSD covariances, noise ordering and full rank, are
reported by :func:`validate` and enforced by :func:`require_valid`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import InvalidInputError, InvalidSpecError
from .symmat import SymMatrix, as_sym, eig_sym, ldl_psd_test, quad_form

__all__ = [
    "SourceSpec",
    "BcChannel",
    "BcScheme",
    "MacProblem",
    "CeoModel",
    "Violation",
    "normalize_alpha",
    "scheme_from_alpha",
    "ceo_to_mac",
    "validate",
    "require_valid",
    "conditional_input_variance",
    "parse_spec",
    "load_spec",
    "ProblemSpec",
    "spec_to_dict",
]

FULL_RANK_RTOL = 1e-10


def _vector(values, name: str) -> np.ndarray:
    v = np.array(values, dtype=float).ravel()
    if v.size == 0:
        raise InvalidInputError(f"{name} is empty")
    if np.any(np.isnan(v)):
        raise InvalidInputError(f"{name} has NaN entries")
    v.setflags(write=False)
    return v


def _matrix(values, name: str) -> np.ndarray:
    a = np.atleast_2d(np.array(values, dtype=float))
    if a.ndim != 2:
        raise InvalidInputError(f"{name} must be two-dimensional")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SourceSpec:
    """Zero-mean Gaussian source with covariance ``sigma_s``."""

    sigma_s: SymMatrix

    def __post_init__(self):
        object.__setattr__(self, "sigma_s", as_sym(self.sigma_s))

    @property
    def m(self) -> int:
        return self.sigma_s.n

    @property
    def variances(self) -> np.ndarray:
        return self.sigma_s.array.diagonal().copy()


@dataclass(frozen=True)
class BcChannel:
    """Degraded Gaussian broadcast channel, receivers ordered worst to best.

    ``math.inf`` is accepted as a noise power and stands for a receiver that
    sees nothing.
    """

    noise_powers: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "noise_powers", _vector(self.noise_powers, "noise_powers"))

    @property
    def m(self) -> int:
        return self.noise_powers.size


@dataclass(frozen=True)
class BcScheme:
    """Uncoded map ``X = alpha . S`` with power ``p`` and ``beta = sigma_s alpha / p``.

    ``beta`` is stored so every downstream computation shares one rounding.
    Build through :func:`normalize_alpha` or :func:`scheme_from_alpha`.
    """

    alpha: np.ndarray
    p: float
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", _vector(self.alpha, "alpha"))
        object.__setattr__(self, "beta", _vector(self.beta, "beta"))
        object.__setattr__(self, "p", float(self.p))
        if self.alpha.size != self.beta.size:
            raise InvalidInputError("alpha and beta lengths differ")

    @property
    def m(self) -> int:
        return self.alpha.size


def scheme_from_alpha(alpha, src: SourceSpec) -> BcScheme:
    """Scheme with the given coefficients; the power is whatever they induce."""
    alpha = np.array(alpha, dtype=float).ravel()
    if alpha.size != src.m:
        raise InvalidInputError(f"alpha has {alpha.size} entries for an M={src.m} source")
    if np.any(alpha == 0):
        raise InvalidSpecError([f"alpha has zero entries at {np.flatnonzero(alpha == 0).tolist()}"])
    p = quad_form(alpha, src.sigma_s)
    if not p > 0:
        raise InvalidSpecError([f"transmit power alpha' Sigma_S alpha = {p} is not positive"])
    beta = src.sigma_s.array @ alpha / p
    return BcScheme(alpha, p, beta)


def normalize_alpha(direction, src: SourceSpec, p_target: float) -> BcScheme:
    """Scale ``direction`` so the channel input has power ``p_target``."""
    direction = np.array(direction, dtype=float).ravel()
    if direction.size != src.m:
        raise InvalidInputError(f"direction has {direction.size} entries for an M={src.m} source")
    if np.any(direction == 0) or not np.all(np.isfinite(direction)):
        raise InvalidSpecError(["alpha direction must have finite non-zero entries"])
    if not (p_target > 0 and math.isfinite(p_target)):
        raise InvalidSpecError([f"target power must be positive and finite, got {p_target}"])
    q = quad_form(direction, src.sigma_s)
    if not q > 0:
        raise InvalidSpecError([f"direction has non-positive power {q}"])
    alpha = direction * math.sqrt(p_target / q)
    beta = src.sigma_s.array @ alpha / p_target
    return BcScheme(alpha, float(p_target), beta)


def conditional_input_variance(p: float, noise_powers) -> np.ndarray:
    """Var(X | Y_m) = P s / (P + s) per receiver; infinite noise gives P."""
    s = np.asarray(noise_powers, dtype=float)
    with np.errstate(invalid="ignore"):
        out = p * s / (p + s)
    return np.where(np.isinf(s), p, out)


@dataclass(frozen=True)
class MacProblem:
    """Remote vector source observed by L sensors sharing a Gaussian MAC.

    ``cross`` is the M x L cross-covariance between sources and observations.
    """

    sigma_s: SymMatrix
    sigma_t: SymMatrix
    cross: np.ndarray
    delta: np.ndarray
    powers: np.ndarray
    noise: float

    def __post_init__(self):
        object.__setattr__(self, "sigma_s", as_sym(self.sigma_s))
        object.__setattr__(self, "sigma_t", as_sym(self.sigma_t))
        object.__setattr__(self, "cross", _matrix(self.cross, "cross"))
        object.__setattr__(self, "delta", _vector(self.delta, "delta"))
        object.__setattr__(self, "powers", _vector(self.powers, "powers"))
        object.__setattr__(self, "noise", float(self.noise))
        m, l = self.sigma_s.n, self.sigma_t.n
        if self.cross.shape != (m, l):
            raise InvalidInputError(f"cross has shape {self.cross.shape}, expected {(m, l)}")
        if self.delta.size != l or self.powers.size != l:
            raise InvalidInputError("delta and powers need one entry per sensor")

    @property
    def m(self) -> int:
        return self.sigma_s.n

    @property
    def l(self) -> int:  # noqa: E743
        return self.sigma_t.n

    @property
    def gamma(self) -> np.ndarray:
        """Regression matrix of E[S | T] on T."""
        return np.linalg.solve(self.sigma_t.array, self.cross.T).T

    @property
    def sigma_stilde(self) -> SymMatrix:
        """Covariance of the observable part E[S | T]."""
        return SymMatrix(self.cross @ np.linalg.solve(self.sigma_t.array, self.cross.T))

    def joint_covariance(self) -> np.ndarray:
        return np.block([[self.sigma_s.array, self.cross], [self.cross.T, self.sigma_t.array]])

    def with_noise(self, noise: float) -> "MacProblem":
        return MacProblem(self.sigma_s, self.sigma_t, self.cross, self.delta, self.powers, noise)


@dataclass(frozen=True)
class CeoModel:
    """Scalar CEO: sensor l observes ``d_l S + Z'_l`` with i.i.d. observation noise."""

    sigma2_s: float
    d: np.ndarray
    sigma2_obs: float
    delta: np.ndarray
    powers: np.ndarray
    noise: float

    def __post_init__(self):
        object.__setattr__(self, "sigma2_s", float(self.sigma2_s))
        object.__setattr__(self, "sigma2_obs", float(self.sigma2_obs))
        object.__setattr__(self, "noise", float(self.noise))
        for name in ("d", "delta", "powers"):
            object.__setattr__(self, name, _vector(getattr(self, name), name))
        if not (self.d.size == self.delta.size == self.powers.size):
            raise InvalidInputError("d, delta and powers need one entry per sensor")

    @property
    def l(self) -> int:  # noqa: E743
        return self.d.size


def ceo_to_mac(c: CeoModel) -> MacProblem:
    d = c.d
    sigma_t = c.sigma2_s * np.outer(d, d) + c.sigma2_obs * np.eye(d.size)
    cross = (c.sigma2_s * d)[None, :]
    return MacProblem(SymMatrix([[c.sigma2_s]]), SymMatrix(sigma_t), cross, c.delta, c.powers, c.noise)


# --------------------------------------------------------------------------- validation


@dataclass(frozen=True)
class Violation:
    """One broken invariant; ``margin`` is the signed amount by which it fails."""

    field: str
    message: str
    margin: float = float("nan")

    def __str__(self):
        if math.isnan(self.margin):
            return f"{self.field}: {self.message}"
        return f"{self.field}: {self.message} (margin {self.margin:.6g})"


def _psd_full_rank(name: str, a: SymMatrix, need_full_rank: bool = True) -> list[Violation]:
    out = []
    eig = eig_sym(a).eigenvalues
    lmin, lmax = float(eig[-1]), float(eig[0])
    if not ldl_psd_test(a).psd or lmin < -1e-10 * max(1.0, abs(lmax)):
        out.append(Violation(name, "not PSD", lmin))
    elif need_full_rank and not lmin > FULL_RANK_RTOL * lmax:
        out.append(Violation(name, "not full rank", lmin - FULL_RANK_RTOL * lmax))
    return out


def _validate_source(src: SourceSpec) -> list[Violation]:
    return _psd_full_rank("sigma_s", src.sigma_s)


def _validate_channel(ch: BcChannel) -> list[Violation]:
    out = []
    s = ch.noise_powers
    steps = s[:-1] - s[1:]
    with np.errstate(invalid="ignore"):
        bad = np.flatnonzero(~(steps >= 0) & ~(np.isinf(s[:-1]) & np.isinf(s[1:])))
    if bad.size:
        out.append(Violation("noise_powers", "noise_powers not non-increasing", float(np.nanmin(steps[bad]))))
    if not s[-1] > 0:
        out.append(Violation("noise_powers", "last noise power must be strictly positive", float(s[-1])))
    return out


def _validate_scheme(scheme: BcScheme, src: SourceSpec | None = None) -> list[Violation]:
    out = []
    zeros = np.flatnonzero(scheme.alpha == 0)
    if zeros.size:
        out.append(Violation("alpha", f"zero coefficients at indices {zeros.tolist()}", 0.0))
    if not scheme.p > 0:
        out.append(Violation("p", "transmit power must be positive", scheme.p))
    ab = math.fsum(scheme.alpha * scheme.beta)
    if abs(ab - 1.0) > 1e-12:
        out.append(Violation("beta", "sum alpha_m beta_m != 1", ab - 1.0))
    if src is not None:
        if src.m != scheme.m:
            out.append(Violation("alpha", f"length {scheme.m} does not match source dimension {src.m}"))
        else:
            p = quad_form(scheme.alpha, src.sigma_s)
            if abs(p - scheme.p) > 1e-10 * max(1.0, scheme.p):
                out.append(Violation("p", "p != alpha' Sigma_S alpha", p - scheme.p))
    return out


def _validate_mac(p: MacProblem) -> list[Violation]:
    out = []
    if p.m > p.l:
        out.append(Violation("cross", f"need M <= L, got M={p.m}, L={p.l}", p.l - p.m))
    out += _psd_full_rank("sigma_s", p.sigma_s)
    out += _psd_full_rank("sigma_t", p.sigma_t)
    sv = np.linalg.svd(p.cross, compute_uv=False)
    if sv.size < p.m or not sv[-1] > FULL_RANK_RTOL * max(sv[0], 1e-300):
        out.append(Violation("cross", "not full row rank", float(sv[-1]) if sv.size else 0.0))
    joint = SymMatrix(p.joint_covariance())
    out += [Violation("joint", v.message, v.margin) for v in _psd_full_rank("joint", joint, need_full_rank=False)]
    if not out:
        out += _psd_full_rank("sigma_stilde", p.sigma_stilde)
    if np.any(~(p.delta > 0)):
        out.append(Violation("delta", "gains must be positive", float(np.min(p.delta))))
    if np.any(~(p.powers > 0)) or not np.all(np.isfinite(p.powers)):
        out.append(Violation("powers", "sensor powers must be positive and finite", float(np.min(p.powers))))
    if not (p.noise > 0 and math.isfinite(p.noise)):
        out.append(Violation("noise", "channel noise must be positive and finite", p.noise))
    return out


def _validate_ceo(c: CeoModel) -> list[Violation]:
    out = []
    if not c.sigma2_s > 0:
        out.append(Violation("sigma2_s", "source variance must be positive", c.sigma2_s))
    if not c.sigma2_obs > 0:
        out.append(Violation("sigma2_obs", "observation noise must be positive", c.sigma2_obs))
    if np.any(c.d < 0):
        out.append(Violation("d", "gains d_l must be non-negative", float(np.min(c.d))))
    if not np.any(c.d > 0):
        out.append(Violation("d", "at least one gain d_l must be positive", float(np.max(c.d))))
    if np.any(~(c.delta > 0)):
        out.append(Violation("delta", "gains must be positive", float(np.min(c.delta))))
    if np.any(~(c.powers > 0)):
        out.append(Violation("powers", "sensor powers must be positive", float(np.min(c.powers))))
    if not c.noise > 0:
        out.append(Violation("noise", "channel noise must be positive", c.noise))
    return out


def validate(*objs) -> list[Violation]:
    """Every violated invariant across ``objs``; empty means valid.

    Passing a scheme together with a source also checks that the scheme's
    power matches the source; a scheme and channel pair is checked for equal
    dimensions.
    """
    out: list[Violation] = []
    src = next((o for o in objs if isinstance(o, SourceSpec)), None)
    dims = set()
    for o in objs:
        if isinstance(o, SourceSpec):
            out += _validate_source(o)
            dims.add(o.m)
        elif isinstance(o, BcChannel):
            out += _validate_channel(o)
            dims.add(o.m)
        elif isinstance(o, BcScheme):
            out += _validate_scheme(o, src)
            dims.add(o.m)
        elif isinstance(o, MacProblem):
            out += _validate_mac(o)
        elif isinstance(o, CeoModel):
            out += _validate_ceo(o)
            if not out:
                out += _validate_mac(ceo_to_mac(o))
        elif isinstance(o, SymMatrix):
            out += _psd_full_rank("matrix", o, need_full_rank=False)
        else:
            raise TypeError(f"cannot validate {type(o).__name__}")
    if len(dims) > 1:
        out.append(Violation("dimensions", f"mismatched dimensions {sorted(dims)}"))
    return out


def require_valid(*objs) -> None:
    report = validate(*objs)
    if report:
        raise InvalidSpecError(report)


# --------------------------------------------------------------------------- JSON specs


@dataclass(frozen=True)
class ProblemSpec:
    """A parsed JSON problem file.

    ``kind`` is ``"bc"``, ``"mac"`` or ``"ceo"``.  For ``"ceo"`` the original
    model is kept in ``ceo`` and ``mac`` holds its MAC form.
    """

    kind: str
    source: SourceSpec | None = None
    scheme: BcScheme | None = None
    channel: BcChannel | None = None
    mac: MacProblem | None = None
    ceo: CeoModel | None = None
    eta: tuple[int, ...] | None = None
    extras: Mapping[str, Any] = field(default_factory=dict)


def _get(d: Mapping, key: str):
    if key not in d:
        raise InvalidInputError(f"missing field {key!r}")
    return d[key]


def parse_spec(doc: Mapping[str, Any]) -> ProblemSpec:
    """Build problem objects from a decoded JSON document (no validation)."""
    if not isinstance(doc, Mapping):
        raise InvalidInputError("problem spec must be a JSON object")
    kind = _get(doc, "kind")
    known = {
        "bc": {"kind", "sigma_s", "alpha_direction", "power", "noise_powers"},
        "mac": {"kind", "sigma_s", "sigma_t", "cross", "delta", "sensor_powers", "noise", "eta"},
        "ceo": {"kind", "sigma2_s", "d", "sigma2_obs", "delta", "sensor_powers", "noise", "eta"},
    }
    if kind not in known:
        raise InvalidInputError(f"unknown kind {kind!r}; expected one of {sorted(known)}")
    extras = {k: v for k, v in doc.items() if k not in known[kind]}
    try:
        if kind == "bc":
            src = SourceSpec(SymMatrix(_get(doc, "sigma_s")))
            scheme = normalize_alpha(_get(doc, "alpha_direction"), src, float(_get(doc, "power")))
            channel = BcChannel(_get(doc, "noise_powers"))
            return ProblemSpec("bc", source=src, scheme=scheme, channel=channel, extras=extras)
        eta = doc.get("eta")
        if eta is not None:
            eta = tuple(int(e) for e in eta)
            if any(e not in (1, -1) for e in eta):
                raise InvalidInputError("eta entries must be +1 or -1")
        if kind == "mac":
            mac = MacProblem(
                SymMatrix(_get(doc, "sigma_s")),
                SymMatrix(_get(doc, "sigma_t")),
                _get(doc, "cross"),
                _get(doc, "delta"),
                _get(doc, "sensor_powers"),
                float(_get(doc, "noise")),
            )
            return ProblemSpec("mac", mac=mac, eta=eta, extras=extras)
        ceo = CeoModel(
            float(_get(doc, "sigma2_s")),
            _get(doc, "d"),
            float(_get(doc, "sigma2_obs")),
            _get(doc, "delta"),
            _get(doc, "sensor_powers"),
            float(_get(doc, "noise")),
        )
        return ProblemSpec("ceo", mac=ceo_to_mac(ceo), ceo=ceo, eta=eta, extras=extras)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(str(exc)) from exc


def load_spec(path) -> ProblemSpec:
    """Read and parse a JSON problem file.

    Decoding errors surface as :class:`json.JSONDecodeError`, which carries the
    line and column.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return parse_spec(doc)


def spec_to_dict(spec: ProblemSpec) -> dict[str, Any]:
    """Inverse of :func:`parse_spec`, up to the normalisation of ``alpha``."""
    if spec.kind == "bc":
        return {
            "kind": "bc",
            "sigma_s": spec.source.sigma_s.tolist(),
            "alpha_direction": spec.scheme.alpha.tolist(),
            "power": spec.scheme.p,
            "noise_powers": spec.channel.noise_powers.tolist(),
        }
    if spec.kind == "ceo":
        c = spec.ceo
        out = {
            "kind": "ceo", "sigma2_s": c.sigma2_s, "d": c.d.tolist(), "sigma2_obs": c.sigma2_obs,
            "delta": c.delta.tolist(), "sensor_powers": c.powers.tolist(), "noise": c.noise,
        }
    else:
        p = spec.mac
        out = {
            "kind": "mac", "sigma_s": p.sigma_s.tolist(), "sigma_t": p.sigma_t.tolist(),
            "cross": p.cross.tolist(), "delta": p.delta.tolist(), "sensor_powers": p.powers.tolist(),
            "noise": p.noise,
        }
    if spec.eta is not None:
        out["eta"] = list(spec.eta)
    return out
