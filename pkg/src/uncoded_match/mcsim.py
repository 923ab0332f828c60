"""Monte Carlo check of the closed-form distortions.

Each sample draws a standard normal vector ``z`` and pushes it through the
system: source factor, uncoded map, channel noise, scalar MMSE decoder.  Every
step is linear in ``z``, which the antithetic mode exploits.

Randomness comes from numpy's Philox counter-based generator; batch ``b`` uses
the ``b``-th child of ``SeedSequence(seed)``, so results depend only on the
seed, the sample count and the batch size.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import erf, ndtri

from .analysis import thread_count
from .bc_match import bc_distortions
from .errors import InvalidInputError, NumericalFailureError
from .mac_match import MacScheme, input_gains, mac_distortions
from .model import BcChannel, BcScheme, MacProblem, SourceSpec
from .symmat import eig_sym

__all__ = ["SimConfig", "SimReport", "cov_factor", "simulate_bc", "simulate_mac", "radial_partner"]


@dataclass(frozen=True)
class SimConfig:
    n_samples: int = 1_000_000
    seed: int = 0
    antithetic: bool = False
    batch_size: int = 1 << 16

    def __post_init__(self):
        if int(self.n_samples) < 1:
            raise InvalidInputError(f"n_samples must be at least 1, got {self.n_samples}")
        if int(self.batch_size) < 1:
            raise InvalidInputError(f"batch_size must be at least 1, got {self.batch_size}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInputError(f"seed must fit in 64 unsigned bits, got {self.seed}")


@dataclass(frozen=True)
class SimReport:
    """Empirical distortions and channel-input powers against their closed forms."""

    empirical_d: np.ndarray
    stderr: np.ndarray
    closed_form_d: np.ndarray
    z_scores: np.ndarray
    power_empirical: np.ndarray
    power_stderr: np.ndarray
    power_target: np.ndarray
    power_z: np.ndarray
    n_samples: int
    seed: int
    antithetic: bool

    def within(self, k: float = 4.0) -> bool:
        z = np.concatenate([self.z_scores, self.power_z])
        return bool(np.all(np.abs(z[np.isfinite(z)]) <= k) and not np.any(np.isnan(z)))


def cov_factor(cov) -> np.ndarray:
    """R with R R^T = cov, from the eigendecomposition; tolerates semidefinite input."""
    eig = eig_sym(cov)
    lam = eig.eigenvalues
    floor = -1e-10 * max(1.0, float(np.max(np.abs(lam))))
    if lam[-1] < floor:
        raise NumericalFailureError(f"covariance has a negative eigenvalue {lam[-1]:.3e}")
    return eig.eigenvectors * np.sqrt(np.clip(lam, 0.0, None))[None, :]


def radial_partner(x: np.ndarray) -> np.ndarray:
    """Antithetic partner of a standard normal: same sign, complementary quantile of |x|."""
    u = erf(np.abs(x) / math.sqrt(2.0))
    return np.sign(x) * -ndtri(0.5 * u)


# system: z (n x k) -> (errors n x M, channel inputs n x L)
System = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


def _batch_sums(system: System, k: int, n: int, seed_seq: np.random.SeedSequence,
                antithetic: bool, err_dirs: np.ndarray | None):
    rng = np.random.Generator(np.random.Philox(seed_seq))
    z = rng.standard_normal((n, k))
    err, x = system(z)
    if antithetic:
        # pair each draw with its reflection along component m's error direction
        vals = np.empty_like(err)
        for m in range(err.shape[1]):
            q = err_dirs[:, m]
            t = z @ q
            zp = z + np.outer(radial_partner(t) - t, q)
            vals[:, m] = 0.5 * (err[:, m] ** 2 + system(zp)[0][:, m] ** 2)
    else:
        vals = err**2
    pw = x**2
    return vals.sum(0), (vals**2).sum(0), pw.sum(0), (pw**2).sum(0)


def _run(system: System, k: int, cfg: SimConfig):
    n_draws = -(-cfg.n_samples // 2) if cfg.antithetic else cfg.n_samples
    sizes = [cfg.batch_size] * (n_draws // cfg.batch_size)
    if n_draws % cfg.batch_size:
        sizes.append(n_draws % cfg.batch_size)
    children = np.random.SeedSequence(int(cfg.seed)).spawn(len(sizes))
    err_dirs = None
    if cfg.antithetic:
        w = system(np.eye(k))[0]  # column m: error of component m as a linear form in z
        norms = np.linalg.norm(w, axis=0)
        err_dirs = w / np.where(norms > 0, norms, 1.0)[None, :]

    def job(i):
        return _batch_sums(system, k, sizes[i], children[i], cfg.antithetic, err_dirs)

    threads = thread_count()
    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    else:
        parts = [job(i) for i in range(len(sizes))]
    # fixed summation order keeps results independent of scheduling
    tot = [np.sum([p[i] for p in parts], axis=0) for i in range(4)]
    return n_draws, tot


def _mean_se(s, s2, n):
    mean = s / n
    if n < 2:
        return mean, np.full_like(mean, math.nan)
    var = np.maximum(s2 - n * mean**2, 0.0) / (n - 1)
    return mean, np.sqrt(var / n)


def _z(emp, se, ref):
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (emp - ref) / se
    return np.where((se == 0) & (emp == ref), 0.0, z)


def _report(n, tot, closed, power_target, cfg: SimConfig) -> SimReport:
    d, d_se = _mean_se(tot[0], tot[1], n)
    pw, pw_se = _mean_se(tot[2], tot[3], n)
    return SimReport(d, d_se, closed, _z(d, d_se, closed), pw, pw_se, power_target,
                     _z(pw, pw_se, power_target), cfg.n_samples, int(cfg.seed), cfg.antithetic)


def simulate_bc(src: SourceSpec, scheme: BcScheme, ch: BcChannel, cfg: SimConfig) -> SimReport:
    """Empirical per-receiver MSE of the uncoded broadcast scheme.

    Power is checked for the single channel input ``X``.  In antithetic mode the
    power estimate uses the base draws only.
    """
    m = src.m
    r = cov_factor(src.sigma_s)
    alpha = scheme.alpha
    noise = ch.noise_powers
    finite = np.isfinite(noise)
    std = np.where(finite, np.sqrt(np.where(finite, noise, 0.0)), 0.0)
    gain = np.where(finite, scheme.p * scheme.beta / (scheme.p + np.where(finite, noise, 0.0)), 0.0)

    def system(z):
        s = z[:, :m] @ r.T
        x = s @ alpha
        y = x[:, None] + z[:, m:] * std[None, :]
        return s - gain[None, :] * y, x[:, None]

    n, tot = _run(system, 2 * m, cfg)
    closed = bc_distortions(scheme, ch, src).d
    return _report(n, tot, np.asarray(closed, dtype=float), np.array([scheme.p]), cfg)


def simulate_mac(p: MacProblem, s: MacScheme, cfg: SimConfig) -> SimReport:
    """Empirical MSE of each source component from the single MAC output.

    Power is checked per sensor against ``P_l``.
    """
    m, l = p.m, p.l
    r = cov_factor(p.joint_covariance())
    scale = np.array(s.eta, dtype=float) * np.sqrt(p.powers / p.sigma_t.array.diagonal())
    g = input_gains(p, s)
    var_x = float(g @ p.sigma_t.array @ g)
    coef = (p.cross @ g) / (var_x + p.noise)
    std = math.sqrt(p.noise)

    def system(z):
        st = z[:, : m + l] @ r.T
        src, t = st[:, :m], st[:, m:]
        x = t * scale[None, :]
        y = x @ p.delta + std * z[:, m + l]
        return src - y[:, None] * coef[None, :], x

    n, tot = _run(system, m + l + 1, cfg)
    closed = mac_distortions(p, s).d
    return _report(n, tot, np.asarray(closed, dtype=float), p.powers.copy(), cfg)
