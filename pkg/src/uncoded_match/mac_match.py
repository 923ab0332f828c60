"""Multiple-access (vector CEO) matching.

Sensors send scaled copies of their observations, ``X_l = eta_l sqrt(P_l/psi_ll) T_l``,
and the channel output is ``Y = Z + sum_l delta_l X_l``.  Matching needs three
things: signs that make all inputs add coherently, an effective input that is
a function of the observable source part ``E[S | T]`` only, and enough channel
noise, the last being the broadcast criterion with ``E[S | T]`` as the source.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .bc_match import pi_spectrum
from .errors import DegenerateSchemeError, InvalidInputError
from .model import CeoModel, MacProblem, ceo_to_mac
from .symmat import SymMatrix, row_space_residual

__all__ = [
    "MacScheme",
    "SignConflict",
    "MacCertificate",
    "MacDistortion",
    "CeoProportionality",
    "sign_assignment",
    "sign_tolerance",
    "input_gains",
    "coherent_power",
    "certify_mac",
    "ceo_proportional_check",
    "mac_distortions",
    "ceo_certify",
]

SIGN_RTOL = 1e-12
ROW_SPACE_TOL = 1e-9


@dataclass(frozen=True)
class MacScheme:
    eta: tuple[int, ...]

    def __post_init__(self):
        eta = tuple(int(e) for e in self.eta)
        if any(e not in (1, -1) for e in eta):
            raise InvalidInputError(f"eta entries must be +1 or -1, got {eta}")
        object.__setattr__(self, "eta", eta)

    def negated(self) -> "MacScheme":
        return MacScheme(tuple(-e for e in self.eta))


@dataclass(frozen=True)
class SignConflict:
    """No coherent sign assignment exists; ``cycle`` lists 0-based sensors on an odd cycle."""

    cycle: tuple[int, ...]

    def describe(self) -> str:
        return "odd negative cycle (" + ",".join(str(i + 1) for i in self.cycle) + ")"


def sign_tolerance(sigma_t, i: int, j: int) -> float:
    t = np.asarray(sigma_t, dtype=float)
    return SIGN_RTOL * math.sqrt(abs(t[i, i] * t[j, j]))


class _ParityUnionFind:
    """Union-find where each node stores its parity relative to its root."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.parity = [0] * n
        self.rank = [0] * n

    def find(self, a: int) -> tuple[int, int]:
        path = []
        while self.parent[a] != a:
            path.append(a)
            a = self.parent[a]
        root = a
        # compress, accumulating parity from the top of the path down
        acc = 0
        for node in reversed(path):
            acc ^= self.parity[node]
            self.parity[node] = acc
            self.parent[node] = root
        return root, (self.parity[path[0]] if path else 0)

    def union(self, a: int, b: int, odd: int) -> bool:
        """Record parity(a) ^ parity(b) == odd; False on contradiction."""
        ra, pa = self.find(a)
        rb, pb = self.find(b)
        if ra == rb:
            return (pa ^ pb) == odd
        if self.rank[ra] < self.rank[rb]:
            ra, rb, pa, pb = rb, ra, pb, pa
        self.parent[rb] = ra
        self.parity[rb] = pa ^ pb ^ odd
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


def _tree_path(adj: list[list[int]], src: int, dst: int) -> list[int]:
    prev = {src: None}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        if u == dst:
            break
        for w in adj[u]:
            if w not in prev:
                prev[w] = u
                queue.append(w)
    path = [dst]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def _canonical_cycle(cycle: list[int]) -> tuple[int, ...]:
    """Rotate to start at the smallest index and walk towards its smaller neighbour."""
    k = cycle.index(min(cycle))
    c = cycle[k:] + cycle[:k]
    if len(c) > 2 and c[-1] < c[1]:
        c = [c[0]] + c[1:][::-1]
    return tuple(c)


def sign_assignment(sigma_t) -> MacScheme | SignConflict:
    """Signs with ``eta_l eta_l' psi_ll' >= 0`` for all pairs, or an odd cycle proving none exist.

    Positive correlations ask for equal signs and negative ones for opposite
    signs; entries within ``1e-12 sqrt(psi_ll psi_l'l')`` of zero impose nothing.
    The lowest-indexed sensor of every connected group gets ``+1``.
    """
    t = SymMatrix(sigma_t).array
    n = t.shape[0]
    uf = _ParityUnionFind(n)
    tree: list[list[int]] = [[] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            psi = t[i, j]
            if abs(psi) <= sign_tolerance(t, i, j):
                continue
            odd = 1 if psi < 0 else 0
            ri, _ = uf.find(i)
            rj, _ = uf.find(j)
            if not uf.union(i, j, odd):
                return SignConflict(_canonical_cycle(_tree_path(tree, i, j)))
            if ri != rj:
                tree[i].append(j)
                tree[j].append(i)
    parity = [uf.find(i) for i in range(n)]
    # canonical: each group's smallest index is +1
    anchor: dict[int, int] = {}
    eta = []
    for i, (root, par) in enumerate(parity):
        anchor.setdefault(root, par)
        eta.append(1 if par == anchor[root] else -1)
    return MacScheme(tuple(eta))


def input_gains(p: MacProblem, s: MacScheme) -> np.ndarray:
    """g_l = delta_l eta_l sqrt(P_l / psi_ll), so that the received sum is g . T."""
    if len(s.eta) != p.l:
        raise InvalidInputError(f"eta has {len(s.eta)} entries for {p.l} sensors")
    psi = p.sigma_t.array.diagonal()
    return p.delta * np.array(s.eta, dtype=float) * np.sqrt(p.powers / psi)


def coherent_power(p: MacProblem, s: MacScheme | None = None) -> float:
    """Received signal power when every pair of inputs adds with |correlation|.

    Equals ``Var(sum_l delta_l X_l)`` when the signs are coherent.
    """
    t = p.sigma_t.array
    psi = t.diagonal()
    amp = p.delta * np.sqrt(p.powers)
    terms = list(amp**2)
    for i in range(p.l):
        for j in range(i + 1, p.l):
            rho = abs(t[i, j] / math.sqrt(psi[i] * psi[j]))
            terms.append(2.0 * rho * amp[i] * amp[j])
    return math.fsum(terms)


@dataclass(frozen=True)
class MacCertificate:
    """Outcome of :func:`certify_mac`.

    ``cond3`` is None when condition 2 fails, since the effective scheme
    coefficients are then undefined.  ``noise_floor`` is the smallest channel
    noise satisfying condition 3.
    """

    cond1: bool
    cond2: bool
    cond3: bool | None
    gamma: np.ndarray
    sigma_stilde: SymMatrix
    alpha_mac: np.ndarray | None
    coherent_p: float
    lambda2: float
    noise_floor: float
    row_space_residual: float
    eta: tuple[int, ...]
    cond1_violations: tuple[tuple[int, int], ...] = ()

    @property
    def matched(self) -> bool:
        return bool(self.cond1 and self.cond2 and self.cond3)


def _effective_alpha(cross: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Coefficients a with a^T cross = v, via the normal equations."""
    return np.linalg.solve(cross @ cross.T, cross @ v)


def certify_mac(p: MacProblem, s: MacScheme) -> MacCertificate:
    t = p.sigma_t.array
    l = p.l
    eta = np.array(s.eta, dtype=float)
    if eta.size != l:
        raise InvalidInputError(f"eta has {eta.size} entries for {l} sensors")

    bad = []
    for i in range(l):
        for j in range(i + 1, l):
            if eta[i] * eta[j] * t[i, j] < -sign_tolerance(t, i, j):
                bad.append((i, j))
    cond1 = not bad

    g = input_gains(p, s)
    v = t @ g
    resid = row_space_residual(v, p.cross)
    cond2 = resid <= ROW_SPACE_TOL * max(1.0, float(np.linalg.norm(v)))

    sigma_stilde = p.sigma_stilde
    gamma = p.gamma
    cp = coherent_power(p, s)
    alpha = None
    cond3 = None
    lam2 = math.nan
    floor = math.inf
    if cond2:
        alpha = _effective_alpha(p.cross, v)
        fit = float(np.linalg.norm(v - p.cross.T @ alpha))
        if fit > ROW_SPACE_TOL * max(1.0, float(np.linalg.norm(v))):
            raise DegenerateSchemeError(f"row-space fit residual {fit:.3e} too large")
        if np.any(alpha == 0) or np.any(np.abs(alpha) <= 1e-14 * np.max(np.abs(alpha))):
            raise DegenerateSchemeError(f"effective coefficients have a zero entry: {alpha.tolist()}")
        if p.m == 1:
            # a single source has no second eigenvalue; any noise works
            lam2, floor = 0.0, 0.0
            cond3 = True
        else:
            spec = pi_spectrum(sigma_stilde.array, alpha)
            if spec is not None:
                lam = spec[0].eigenvalues
                lam2 = float(lam[1])
                if abs(lam[0] - 1.0) <= 1e-9 and lam2 < 1.0 - 1e-9:
                    floor = lam2 * cp / (1.0 - lam2)
            cond3 = bool(p.noise >= floor)
    return MacCertificate(
        cond1, bool(cond2), cond3, gamma, sigma_stilde, alpha, cp, lam2, floor, resid, s.eta, tuple(bad)
    )


@dataclass(frozen=True)
class CeoProportionality:
    applicable: bool
    proportional: bool
    ratios: tuple[float, ...]


def ceo_proportional_check(c: CeoModel, rtol: float = 1e-9) -> CeoProportionality:
    """Whether ``P_l delta_l^2 / ((d_l^2 s2 + s2_obs) d_l^2)`` is the same for every sensor."""
    d = c.d
    if np.any(d <= 0):
        return CeoProportionality(False, False, ())
    r = c.powers * c.delta**2 / ((d**2 * c.sigma2_s + c.sigma2_obs) * d**2)
    ok = float(np.max(r) - np.min(r)) <= rtol * float(np.max(r))
    return CeoProportionality(True, ok, tuple(float(x) for x in r))


@dataclass(frozen=True)
class MacDistortion:
    delta_floor: np.ndarray
    d: np.ndarray


def mac_distortions(p: MacProblem, s: MacScheme) -> MacDistortion:
    """Remote floors and end-to-end MSE of the scalar MMSE estimate of each S_m from Y."""
    g = input_gains(p, s)
    var_x = float(g @ p.sigma_t.array @ g)
    cov = p.cross @ g
    var_s = p.sigma_s.array.diagonal()
    floor = var_s - p.sigma_stilde.array.diagonal()
    d = var_s - cov**2 / (var_x + p.noise)
    return MacDistortion(floor, d)


def ceo_certify(c: CeoModel, s: MacScheme | None = None) -> MacCertificate:
    p = ceo_to_mac(c)
    if s is None:
        s = MacScheme((1,) * p.l)
    return certify_mac(p, s)
