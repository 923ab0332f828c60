"""Region tracing for three-component sources and symmetric sources.

Axes of the fan sweeps use the transformed noise coordinate ``b = P s / (P + s)``,
the conditional variance of the channel input given a receiver's output.  It
is increasing in ``s`` and maps ``(0, inf]`` onto ``(0, P]``.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .bc_match import certify, corollary2_existence, corollary3_thresholds, threshold_noise
from .errors import InvalidInputError
from .model import BcChannel, BcScheme, SourceSpec, scheme_from_alpha
from .symmat import SymMatrix

__all__ = [
    "SweepGrid",
    "three_component_eigs",
    "three_component_source",
    "valid_rho_region",
    "to_transformed",
    "from_transformed",
    "grid_axis",
    "sweep_fan",
    "rho_region_sweep",
    "symmetric_curve",
    "symmetric_source",
    "write_grid_csv",
    "overlay_path",
    "thread_count",
]

THREADS_ENV = "UNCODED_MATCH_THREADS"


def three_component_eigs(rho1: float, rho2: float) -> tuple[float, float, float]:
    """Closed-form ``(lambda1, lambda2, lambda3)`` of ``Pi Sigma Pi`` for alpha = (1, 1, 1).

    The labels follow the closed forms, not magnitude: ``lambda2`` may exceed
    ``lambda3``.  The same values hold for both three-component layouts.
    """
    den2 = 2 * rho1**2 + 2 * rho1 * rho2 + 3 * rho1 + rho2 + 1
    den3 = rho1 + rho2 + 1
    if not (den2 > 0 and den3 > 0):
        raise InvalidInputError(f"(rho1, rho2) = ({rho1}, {rho2}) is outside the closed-form domain")
    return 1.0, (-2 * rho1**2 + rho2 + 1) / den2, (1 - rho2) / den3


def three_component_source(rho1: float, rho2: float, layout: str = "cov1") -> SourceSpec:
    """Unit-variance three-component source.

    ``cov1`` correlates neighbours by rho1 and the outer pair by rho2; ``cov2``
    correlates the first pair by rho2 and both of them with the third by rho1.
    """
    if layout == "cov1":
        s = [[1, rho1, rho2], [rho1, 1, rho1], [rho2, rho1, 1]]
    elif layout == "cov2":
        s = [[1, rho2, rho1], [rho2, 1, rho1], [rho1, rho1, 1]]
    else:
        raise InvalidInputError(f"unknown layout {layout!r}; expected 'cov1' or 'cov2'")
    return SourceSpec(SymMatrix(s))


def valid_rho_region(rho1: float, rho2: float) -> bool:
    """Whether a matched channel exists for the three-component source with alpha = (1, 1, 1)."""
    return bool(rho2 < 1 and 0 < rho1 < 1 and rho1 + 2 * rho2 > 0 and rho2 > 2 * rho1**2 - 1)


def rho_boundary_distance(rho1: float, rho2: float) -> float:
    """Smallest slack among the four region inequalities (and the PSD edge)."""
    return min(abs(1 - rho2), abs(rho1), abs(1 - rho1), abs(rho1 + 2 * rho2), abs(rho2 - 2 * rho1**2 + 1))


def to_transformed(s, p: float):
    s = np.asarray(s, dtype=float)
    with np.errstate(invalid="ignore"):
        b = p * s / (p + s)
    return np.where(np.isinf(s), p, b)


def from_transformed(b, p: float):
    b = np.asarray(b, dtype=float)
    if np.any(~(b > 0)) or np.any(b > p):
        raise InvalidInputError(f"transformed coordinates must lie in (0, {p}]")
    with np.errstate(divide="ignore"):
        s = p * b / (p - b)
    return np.where(b == p, math.inf, s)


def grid_axis(n: int, lo: float, hi: float) -> np.ndarray:
    """Cell centres of ``n`` equal cells over ``[lo, hi]``; a single cell sits at the midpoint."""
    if n < 1:
        raise InvalidInputError(f"grid size must be positive, got {n}")
    if not (hi > lo or (n == 1 and hi == lo)):
        raise InvalidInputError(f"empty range [{lo}, {hi}]")
    return lo + (hi - lo) * (np.arange(n) + 0.5) / n


def thread_count(default: int = 1) -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise InvalidInputError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _map_cells(fn: Callable[[Any], bool], items: Sequence, threads: int | None) -> list[bool]:
    threads = thread_count() if threads is None else max(1, threads)
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class SweepGrid:
    """Matched/unmatched classification over a rectangular grid.

    ``cells[j, i]`` belongs to ``(x_axis[i], y_axis[j])``.  ``excluded`` marks
    cells outside the admissible set (for fan sweeps, y > x), which count as
    unmatched.  ``overlays`` maps curve names to lists of points.
    """

    x_axis: np.ndarray
    y_axis: np.ndarray
    cells: np.ndarray
    excluded: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)
    overlays: dict[str, list[tuple[float, float]]] = field(default_factory=dict)

    def rows(self):
        """``(x, y, matched)`` with x varying fastest."""
        for j, y in enumerate(self.y_axis):
            for i, x in enumerate(self.x_axis):
                yield float(x), float(y), bool(self.cells[j, i])

    def is_upward_closed(self) -> bool:
        """Every admissible cell dominating a matched cell is matched."""
        c = self.cells
        ok = ~self.excluded
        # a matched cell's right and upper admissible neighbours must be matched
        right = c[:, :-1] & ok[:, 1:] & ~c[:, 1:]
        up = c[:-1, :] & ok[1:, :] & ~c[1:, :]
        return not (right.any() or up.any())


def _fan_noise(bx: float, by: float, p: float, receiver1: str) -> np.ndarray:
    s2, s3 = from_transformed([bx, by], p)
    s1 = s2 if receiver1 == "clamp" else math.inf
    return np.array([s1, s2, s3])


def sweep_fan(src: SourceSpec, scheme: BcScheme, nx: int = 100, ny: int = 100,
              x_range: tuple[float, float] | None = None, y_range: tuple[float, float] | None = None,
              receiver1: str = "clamp", threads: int | None = None) -> SweepGrid:
    """Matched region over the transformed noise of receivers 2 (x) and 3 (y).

    Receiver 1 gets receiver 2's noise (``clamp``) or sees nothing (``inf``).
    Cells with y > x would put receiver 3 behind receiver 2 and are excluded.
    """
    if src.m != 3 or scheme.m != 3:
        raise InvalidInputError("fan sweeps need a three-component source")
    if receiver1 not in ("clamp", "inf"):
        raise InvalidInputError(f"receiver1 must be 'clamp' or 'inf', got {receiver1!r}")
    p = scheme.p
    x_range = (0.0, p) if x_range is None else tuple(map(float, x_range))
    y_range = (0.0, p) if y_range is None else tuple(map(float, y_range))
    for lo, hi in (x_range, y_range):
        if lo < 0 or hi > p:
            raise InvalidInputError(f"range [{lo}, {hi}] leaves (0, {p})")
    xs, ys = grid_axis(nx, *x_range), grid_axis(ny, *y_range)
    if xs[0] <= 0 or ys[0] <= 0 or xs[-1] > p or ys[-1] > p:
        raise InvalidInputError(f"grid coordinates must lie in (0, {p}]")

    excluded = ys[:, None] > xs[None, :]
    cells_todo = [(j, i) for j in range(ny) for i in range(nx) if not excluded[j, i]]

    def run(ji):
        j, i = ji
        return certify(scheme, BcChannel(_fan_noise(xs[i], ys[j], p, receiver1)), src).matched

    verdicts = _map_cells(run, cells_todo, threads)
    cells = np.zeros((ny, nx), dtype=bool)
    for (j, i), v in zip(cells_todo, verdicts):
        cells[j, i] = v

    meta = {
        "kind": "fan",
        "p": p,
        "alpha": scheme.alpha.tolist(),
        "sigma_s": src.sigma_s.tolist(),
        "receiver1": receiver1,
        "x": "P s2 / (P + s2)",
        "y": "P s3 / (P + s3)",
    }
    return SweepGrid(xs, ys, cells, excluded, meta, fan_overlays(src, scheme, x_range, y_range))


def fan_overlays(src: SourceSpec, scheme: BcScheme, x_range, y_range) -> dict[str, list[tuple[float, float]]]:
    """Analytic curves for a fan sweep, in transformed coordinates."""
    p = scheme.p
    out: dict[str, list[tuple[float, float]]] = {}
    c2 = corollary2_existence(scheme, src)
    if c2.exists:
        b = p * c2.lambda2  # transformed image of the noise floor
        out["corollary2"] = [(b, b)]
    lo = max(x_range[0], y_range[0])
    hi = min(x_range[1], y_range[1])
    out["diagonal"] = [(lo, lo), (hi, hi)]
    s3 = threshold_noise(scheme, src)
    if math.isfinite(s3):
        b3 = float(to_transformed(s3, p))
        out["first_pivot"] = [(max(b3, x_range[0]), b3), (x_range[1], b3)]
    c3 = corollary3_thresholds(scheme, src)
    if c3.applicable and all(t > 0 for t in c3.thresholds):
        bx, by = (float(to_transformed(t, p)) for t in c3.thresholds)
        out["corollary3"] = [(bx, by)]
    return out


def rho_region_sweep(nx: int = 200, ny: int = 200, x_range=(-1.0, 1.0), y_range=(-1.0, 1.0),
                     layout: str = "cov1", alpha=(1.0, 1.0, 1.0), threads: int | None = None) -> SweepGrid:
    """Existence of a matched channel over (rho1, rho2).

    ``cells`` hold the numeric eigenvalue test; non-PD sources are excluded.
    ``metadata["analytic"]`` holds the closed-form classification for comparison.
    """
    xs, ys = grid_axis(nx, *x_range), grid_axis(ny, *y_range)
    excluded = np.zeros((ny, nx), dtype=bool)
    todo = []
    for j, r2 in enumerate(ys):
        for i, r1 in enumerate(xs):
            lam_min = np.linalg.eigvalsh(three_component_source(r1, r2, layout).sigma_s.array)[0]
            if lam_min <= 0:
                excluded[j, i] = True
            else:
                todo.append((j, i))

    def run(ji):
        j, i = ji
        src = three_component_source(xs[i], ys[j], layout)
        return corollary2_existence(scheme_from_alpha(alpha, src), src).exists

    verdicts = _map_cells(run, todo, threads)
    cells = np.zeros((ny, nx), dtype=bool)
    for (j, i), v in zip(todo, verdicts):
        cells[j, i] = v
    analytic = np.array([[valid_rho_region(r1, r2) for r1 in xs] for r2 in ys])
    r = np.linspace(0.0, 1.0, 201)
    overlays = {
        "rho2_eq_2rho1sq_minus_1": [(float(a), float(2 * a * a - 1)) for a in r],
        "rho1_plus_2rho2_eq_0": [(float(a), float(-a / 2)) for a in r],
    }
    meta = {"kind": "rho_region", "layout": layout, "alpha": list(alpha), "x": "rho1", "y": "rho2",
            "analytic": analytic}
    return SweepGrid(xs, ys, cells, excluded, meta, overlays)


def symmetric_source(m: int, rho: float) -> SourceSpec:
    return SourceSpec(SymMatrix((1 - rho) * np.eye(m) + rho * np.ones((m, m))))


def symmetric_curve(m: int, rho: float, p: float) -> float:
    """Smallest last-receiver noise matching an equal-weight scheme on a symmetric source."""
    if m < 2:
        raise InvalidInputError("need at least two components")
    if not (-1.0 / (m - 1) < rho < 1):
        raise InvalidInputError(f"rho={rho} does not give a positive definite source for M={m}")
    t = (1 - rho) / (1 + (m - 1) * rho)
    if t >= 1:
        return math.inf
    return p * t / (1 - t)


def _fmt(x: float) -> str:
    return format(x, ".17g")


def overlay_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_overlays" + (path.suffix or ".csv"))


def write_grid_csv(grid: SweepGrid, path) -> tuple[Path, Path]:
    """Write the region CSV and its sibling overlay CSV; returns both paths."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "matched"])
        for x, y, m in grid.rows():
            w.writerow([_fmt(x), _fmt(y), int(m)])
    opath = overlay_path(path)
    with open(opath, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["curve", "x", "y"])
        for name, pts in grid.overlays.items():
            for x, y in pts:
                w.writerow([name, _fmt(x), _fmt(y)])
    return path, opath
