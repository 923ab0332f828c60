"""Command-line front end.

Exit codes: 0 matched (or success), 1 not matched (or a failed simulation
gate), 2 invalid input or I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .analysis import rho_region_sweep, sweep_fan, write_grid_csv
from .bc_match import (
    bc_distortions,
    certify,
    corollary2_existence,
    corollary3_thresholds,
    lemma1_check,
    threshold_noise,
    verify_outer_bound_equality,
)
from .errors import (
    DegenerateSchemeError,
    InfeasibleDownstreamError,
    InvalidInputError,
    InvalidSpecError,
    NumericalFailureError,
)
from .mac_match import MacScheme, SignConflict, certify_mac, mac_distortions, sign_assignment
from .mcsim import SimConfig, simulate_bc, simulate_mac
from .model import ProblemSpec, parse_spec, require_valid

EXIT_OK, EXIT_NOT_MATCHED, EXIT_ERROR = 0, 1, 2
Z_GATE = 4.0


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunManifest:
    command: str
    spec_sha256: str
    version: str
    seed: int | None
    wall_time: float

    def write_beside(self, path: Path) -> Path:
        out = path.with_name(path.name + ".manifest.json")
        out.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return out


# --------------------------------------------------------------------------- formatting


def _machine(obj: Any) -> Any:
    """Normalise to plain Python types: arrays to lists, numpy scalars to builtins."""
    if isinstance(obj, dict):
        return {str(k): _machine(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_machine(v) for v in (obj.tolist() if isinstance(obj, np.ndarray) else obj)]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def _encode(obj: Any, level: int = 0) -> str:
    pad, inner = "  " * level, "  " * (level + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {_encode(v, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        return "[" + ", ".join(_encode(v, level + 1) for v in obj) + "]"
    if isinstance(obj, float):
        # JSON has no inf/nan; emit them as strings
        if math.isnan(obj):
            return '"nan"'
        if math.isinf(obj):
            return '"inf"' if obj > 0 else '"-inf"'
        return format(obj, ".17g")
    return json.dumps(obj)


def dumps_machine(doc: dict) -> str:
    """JSON text with every float at 17 significant digits."""
    return _encode(_machine(doc))


def _h(x) -> str:
    """Human formatting, 6 significant digits."""
    if isinstance(x, (list, tuple, np.ndarray)):
        return "(" + ", ".join(_h(v) for v in x) + ")"
    if x is None:
        return "n/a"
    if isinstance(x, (bool, np.bool_)):
        return "yes" if x else "no"
    return format(float(x), ".6g")


def _report(doc: dict, lines: list[str], args) -> None:
    if args.json:
        print(dumps_machine(doc))
    else:
        print("\n".join(lines))
    if args.out and args.command != "sweep":
        out = Path(args.out)
        out.write_text(dumps_machine(doc) + "\n", encoding="utf-8")
        _manifest(args, out)


def _manifest(args, out: Path, seed: int | None = None) -> Path:
    return RunManifest(args.command, args._digest, __version__, seed, round(time.time() - args._t0, 6)) \
        .write_beside(out)


# --------------------------------------------------------------------------- commands


def _load(args) -> ProblemSpec:
    raw = Path(args.spec).read_bytes()
    args._digest = hashlib.sha256(raw).hexdigest()
    doc = json.loads(raw.decode("utf-8"))
    return parse_spec(doc)


def _expect(spec: ProblemSpec, *kinds: str):
    if spec.kind not in kinds:
        raise InvalidInputError(f"spec kind {spec.kind!r} not accepted here; expected {' or '.join(kinds)}")


def cmd_bc_certify(args) -> int:
    spec = _load(args)
    _expect(spec, "bc")
    src, scheme, ch = spec.source, spec.scheme, spec.channel
    require_valid(src, scheme, ch)
    cert = certify(scheme, ch, src, tol=args.tol)
    dist = bc_distortions(scheme, ch, src)
    gap = None
    if cert.matched and np.all(np.isfinite(ch.noise_powers)):
        gap = verify_outer_bound_equality(cert, dist, ch, src).gap
    lem_ok, _ = lemma1_check(scheme)
    c2 = corollary2_existence(scheme, src)
    c3 = corollary3_thresholds(scheme, src)
    last = threshold_noise(scheme, src) if scheme.m > 1 else 0.0
    verdict = "matched" if cert.matched else "not matched"
    doc = {
        "verdict": verdict,
        "conditions": {"sigma0_psd": cert.matched, "alpha_beta_nonnegative": lem_ok,
                       "failed_pivot": None if cert.ldl.failed_index is None else cert.ldl.failed_index + 1},
        "eigenvalues": {"sigma0": cert.eigen.eigenvalues, "pi_sigma_pi": list(c2.eigenvalues)},
        "distortions": {"D": dist.d},
        "gap": gap,
        "thresholds": {"noise_floor": c2.noise_floor, "last_receiver": last,
                       "pairwise": list(c3.thresholds) if c3.applicable else None},
    }
    lines = [
        f"verdict: {verdict}",
        f"sigma0 eigenvalues: {_h(cert.eigen.eigenvalues)}",
        f"distortions: {_h(dist.d)}",
        f"outer-bound gap: {_h(gap)}",
        f"noise floor (all receivers): {_h(c2.noise_floor)}",
        f"last-receiver threshold: {_h(last)}",
    ]
    if cert.ldl.failed_index is not None:
        lines.insert(1, f"first failing pivot: receiver {cert.ldl.failed_index + 1}")
    _report(doc, lines, args)
    return EXIT_OK if cert.matched else EXIT_NOT_MATCHED


def _mac_scheme(spec: ProblemSpec) -> MacScheme | SignConflict:
    if spec.eta is not None:
        return MacScheme(spec.eta)
    return sign_assignment(spec.mac.sigma_t)


def cmd_mac_certify(args) -> int:
    spec = _load(args)
    _expect(spec, "mac", "ceo")
    require_valid(spec.ceo if spec.ceo is not None else spec.mac)
    p = spec.mac
    s = _mac_scheme(spec)
    if isinstance(s, SignConflict):
        msg = f"condition 1 infeasible: {s.describe()}"
        doc = {"verdict": "not matched",
               "conditions": {"cond1": False, "cond2": None, "cond3": None, "odd_cycle": [i + 1 for i in s.cycle],
                              "message": msg},
               "eigenvalues": None, "distortions": None, "gap": None, "thresholds": None}
        _report(doc, [msg, "verdict: not matched"], args)
        return EXIT_NOT_MATCHED
    cert = certify_mac(p, s)
    dist = mac_distortions(p, s)
    verdict = "matched" if cert.matched else "not matched"
    doc = {
        "verdict": verdict,
        "conditions": {"cond1": cert.cond1, "cond2": cert.cond2, "cond3": cert.cond3, "eta": list(s.eta)},
        "eigenvalues": {"lambda2": cert.lambda2},
        "distortions": {"D": dist.d, "delta_floor": dist.delta_floor},
        "gap": None,
        "thresholds": {"noise_floor": cert.noise_floor, "coherent_power": cert.coherent_p},
    }
    lines = [
        f"eta: {' '.join('+1' if e > 0 else '-1' for e in s.eta)}",
        f"condition 1 (coherent signs): {_h(cert.cond1)}",
        f"condition 2 (row space): {_h(cert.cond2)}",
        f"condition 3 (noise >= {_h(cert.noise_floor)}): {_h(cert.cond3)}",
        f"coherent power: {_h(cert.coherent_p)}",
        f"distortions: {_h(dist.d)}",
        f"remote floors: {_h(dist.delta_floor)}",
        f"verdict: {verdict}",
    ]
    _report(doc, lines, args)
    return EXIT_OK if cert.matched else EXIT_NOT_MATCHED


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        w, h = int(w), int(h)
    except ValueError:
        raise UsageError(f"--grid expects WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise UsageError(f"--grid sizes must be positive, got {text!r}")
    return w, h


def _parse_range(text: str | None):
    if text is None:
        return None
    try:
        a, b = text.split(":")
        return float(a), float(b)
    except ValueError:
        raise UsageError(f"range expects a:b, got {text!r}") from None


def cmd_sweep(args) -> int:
    spec = _load(args)
    _expect(spec, "bc")
    block = spec.extras.get("sweep")
    if not isinstance(block, dict):
        raise InvalidInputError("sweep needs a 'sweep' object in the spec")
    if not args.out:
        raise UsageError("sweep needs --out")
    grid_text = args.grid or block.get("grid", "100x100")
    nx, ny = _parse_grid(grid_text)
    xr, yr = _parse_range(args.x_range), _parse_range(args.y_range)
    kind = block.get("type", "fan")
    if kind == "fan":
        require_valid(spec.source, spec.scheme, spec.channel)
        grid = sweep_fan(spec.source, spec.scheme, nx, ny, xr, yr, receiver1=block.get("receiver1", "clamp"))
    elif kind == "rho_region":
        alpha = spec.scheme.alpha / np.max(np.abs(spec.scheme.alpha))
        grid = rho_region_sweep(nx, ny, xr or (-1.0, 1.0), yr or (-1.0, 1.0),
                                layout=block.get("layout", "cov1"), alpha=tuple(alpha))
    else:
        raise InvalidInputError(f"unknown sweep type {kind!r}; expected 'fan' or 'rho_region'")
    out = Path(args.out)
    region, overlay = write_grid_csv(grid, out)
    _manifest(args, region)
    _manifest(args, overlay)
    matched = int(grid.cells.sum())
    doc = {"verdict": "ok", "conditions": {"upward_closed": grid.is_upward_closed()} if kind == "fan" else {},
           "eigenvalues": None, "distortions": None, "gap": None,
           "thresholds": {name: pts for name, pts in grid.overlays.items()},
           }
    lines = [f"wrote {region} ({nx}x{ny} cells, {matched} matched)", f"wrote {overlay}"]
    if args.json:
        print(dumps_machine(doc))
    else:
        print("\n".join(lines))
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = _load(args)
    cfg = SimConfig(args.samples, args.seed, args.antithetic)
    if spec.kind == "bc":
        require_valid(spec.source, spec.scheme, spec.channel)
        rep = simulate_bc(spec.source, spec.scheme, spec.channel, cfg)
    else:
        require_valid(spec.ceo if spec.ceo is not None else spec.mac)
        s = _mac_scheme(spec)
        if isinstance(s, SignConflict):
            raise InvalidInputError(f"condition 1 infeasible: {s.describe()}; pin eta in the spec to simulate")
        rep = simulate_mac(spec.mac, s, cfg)
    ok = rep.within(Z_GATE)
    doc = {
        "verdict": "pass" if ok else "fail",
        "conditions": {"z_gate": Z_GATE, "within_gate": ok},
        "eigenvalues": None,
        "distortions": {"empirical": rep.empirical_d, "stderr": rep.stderr, "closed_form": rep.closed_form_d,
                        "z": rep.z_scores, "power_empirical": rep.power_empirical,
                        "power_stderr": rep.power_stderr, "power_target": rep.power_target,
                        "power_z": rep.power_z, "n_samples": rep.n_samples, "seed": rep.seed},
        "gap": None,
        "thresholds": None,
    }
    lines = [
        f"samples: {rep.n_samples}  seed: {rep.seed}  antithetic: {_h(rep.antithetic)}",
        f"empirical D: {_h(rep.empirical_d)}",
        f"stderr: {_h(rep.stderr)}",
        f"closed form D: {_h(rep.closed_form_d)}",
        f"z: {_h(rep.z_scores)}",
        f"input power: {_h(rep.power_empirical)} (target {_h(rep.power_target)}, z {_h(rep.power_z)})",
        f"verdict: {'pass' if ok else 'fail'}",
    ]
    if args.json:
        print(dumps_machine(doc))
    else:
        print("\n".join(lines))
    if args.out:
        out = Path(args.out)
        out.write_text(dumps_machine(doc) + "\n", encoding="utf-8")
        _manifest(args, out, rep.seed)
    return EXIT_OK if ok else EXIT_NOT_MATCHED


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uncoded-match", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("spec", help="JSON problem file")
        p.add_argument("--json", action="store_true", help="machine-readable output")
        p.add_argument("--out", help="also write the report (or CSV) here")

    p = sub.add_parser("bc-certify", help="certify a broadcast channel")
    common(p)
    p.add_argument("--tol", type=float, default=None, help="absolute pivot tolerance")
    p.set_defaults(func=cmd_bc_certify)

    p = sub.add_parser("mac-certify", help="certify a multiple-access / CEO setup")
    common(p)
    p.set_defaults(func=cmd_mac_certify)

    p = sub.add_parser("sweep", help="trace a matched region to CSV")
    common(p)
    p.add_argument("--grid", help="WxH cells")
    p.add_argument("--x-range", help="a:b")
    p.add_argument("--y-range", help="a:b")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="Monte Carlo check of the distortions")
    common(p)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--antithetic", action="store_true")
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args._t0 = time.time()
    args._digest = ""
    try:
        return args.func(args)
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON in {args.spec} at line {exc.lineno} column {exc.colno}: {exc.msg}",
              file=sys.stderr)
    except InvalidSpecError as exc:
        print("error: invalid problem spec:", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
    except (InvalidInputError, DegenerateSchemeError, InfeasibleDownstreamError, NumericalFailureError,
            UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
