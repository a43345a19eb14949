"""Command line entry point: ``fujita-lab <command> --config PATH``.

Exit codes: 0 success, 1 Convergent (``classify`` only), 2 invalid input,
3 numerical failure, 4 inconclusive result.

CSV columns per command:

  simulate      t, s, sup_u, log10_sup_u, mass, log10_mass, dt
  sweep         p, amplitude, outcome, tail_rate, alpha1, manifold
  heat-kernel   t, r, P
  picard        t, r, u                (only with picard.write_field)
  certificate   r, t, phi
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import config as cfgmod
from .certificate import a_decay, build_certificate, verify_bounds
from .criterion import CONVERGENT, DIVERGENT, classify, classify_numeric, fujita_exponent
from .errors import FujitaLabError, RangeExceeded, ValidationError
from .heat_kernel import DiffusionOperator, kernel_at_origin, verify_condition_H
from .picard import (
    build_ball,
    contraction_factor,
    iterate_to_fixed_point,
    random_ball_pair,
    small_data,
)
from .semilinear import GLOBAL, UNDETERMINED, InitialData, simulate, sweep_exponent

log = logging.getLogger("fujita_lab")

COMMANDS = ("classify", "simulate", "sweep", "heat-kernel", "picard", "certificate", "report")
EXIT_OK, EXIT_CONVERGENT, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_INCONCLUSIVE = 0, 1, 2, 3, 4


# -- serialisation -----------------------------------------------------------------

def _clean(value):
    """JSON-safe, deterministic: numpy to Python, non-finite floats to strings."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return _clean(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
    return value


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


class Outputs:
    """Atomic writer that remembers what it wrote for the manifest."""

    def __init__(self, directory: Path, formats):
        self.dir = Path(directory)
        self.formats = set(formats)
        self.hashes: dict = {}

    def write(self, name: str, text: str, kind: Optional[str] = None) -> None:
        if kind is not None and kind not in self.formats:
            return
        self.dir.mkdir(parents=True, exist_ok=True)
        data = text.encode("utf-8")
        fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, self.dir / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.hashes[name] = hashlib.sha256(data).hexdigest()

    def manifest(self, command: str, cfg: dict, config_path: str) -> None:
        body = {
            "command": command,
            "code_version": __version__,
            "inputs": {"config": Path(config_path).name,
                       "effective_config_sha256": hashlib.sha256(dumps(cfg).encode()).hexdigest()},
            "outputs": dict(sorted(self.hashes.items())),
        }
        self.write("manifest.json", dumps(body))


# -- commands -----------------------------------------------------------------------

def cmd_classify(cfg, out: Outputs, ctx):
    m, fam = cfgmod.build_manifold(cfg["manifold"])
    p = cfgmod.require(cfg, "problem", "p")
    if fam is not None and not cfg["criterion"]["numeric"]:
        verdict = classify(fam, p)
        extra = {"fujita_exponent": fujita_exponent(fam), "route": "symbolic"}
    else:
        verdict = classify_numeric(m, p, cfg["criterion"]["r0"])
        extra = {"route": "numeric"}
    record = {**verdict.to_dict(), **extra, "p": p, "manifold": m.describe()}
    out.write("classify.json", dumps(record), "json")
    code = {DIVERGENT: EXIT_OK, CONVERGENT: EXIT_CONVERGENT}.get(verdict.kind, EXIT_INCONCLUSIVE)
    return {"verdict": verdict.kind, **extra, "p": p}, code


def cmd_simulate(cfg, out: Outputs, ctx):
    m, _ = cfgmod.build_manifold(cfg["manifold"])
    p = cfgmod.require(cfg, "problem", "p")
    u0 = cfgmod.build_initial_data(cfg["problem"]["u0"])
    outcome = simulate(m, p, u0, cfgmod.solver_controls(cfg["solver"]))
    hist = outcome.diagnostics.get("history", {})
    rows = []
    for t, s, lsup, lmass, dt in zip(hist.get("t", []), hist.get("s", []), hist.get("log10_sup_u", []),
                                     hist.get("log10_mass", []), hist.get("dt", [])):
        rows.append((t, s, 10.0 ** lsup if lsup > -300 else 0.0, lsup,
                     10.0 ** lmass if lmass > -300 else 0.0, lmass, dt))
    out.write("simulate.csv", csv_text(["t", "s", "sup_u", "log10_sup_u", "mass", "log10_mass", "dt"], rows), "csv")
    record = outcome.to_dict()
    record["diagnostics"] = {k: v for k, v in outcome.diagnostics.items() if k != "history"}
    out.write("simulate.json", dumps(record), "json")
    code = EXIT_INCONCLUSIVE if outcome.kind == UNDETERMINED else EXIT_OK
    return {"outcome": outcome.kind, **{k: outcome.details.get(k) for k in ("t_star", "tail_rate", "reason")
                                       if k in outcome.details}}, code


def cmd_sweep(cfg, out: Outputs, ctx):
    m, fam = cfgmod.build_manifold(cfg["manifold"])
    sw = cfg["sweep"]
    p_lo, p_hi = cfgmod.require(cfg, "sweep", "p_lo"), cfgmod.require(cfg, "sweep", "p_hi")
    sigma = sw["sigma"]
    res = sweep_exponent(m, p_lo, p_hi, budget=sw["budget"], width=sw["width"],
                         amplitudes=sw["amplitudes"],
                         u0_family=lambda a: InitialData.gaussian(a, sigma),
                         controls=cfgmod.solver_controls(cfg["solver"]), workers=ctx["threads"])
    alpha1 = fam.alpha1 if fam is not None else float("nan")
    rows = []
    for row in res.table:
        for amp, kind in row["outcomes"].items():
            rate = row["tail_rates"][amp]
            rows.append((row["p"], float(amp), kind, "" if rate is None else rate, alpha1, m.name))
    out.write("sweep.csv", csv_text(["p", "amplitude", "outcome", "tail_rate", "alpha1", "manifold"], rows), "csv")
    record = {**res.to_dict(), "manifold": m.describe(),
              "fujita_exponent": fujita_exponent(fam) if fam is not None else None}
    out.write("sweep.json", dumps(record), "json")
    return {"bracket": res.bracket, "calls": res.calls, "status": res.status}, \
        EXIT_OK if res.status == "ok" else EXIT_INCONCLUSIVE


def cmd_heat_kernel(cfg, out: Outputs, ctx):
    m, _ = cfgmod.build_manifold(cfg["manifold"])
    hk = cfg["heat_kernel"]
    op = DiffusionOperator.from_controls(m, cfgmod.grid_controls(hk))
    report = verify_condition_H(m, hk["times"], op=op)
    rows = []
    for t in sorted(hk["times"]):
        P = kernel_at_origin(m, t, op=op).values
        rows.extend((t, r, v) for r, v in zip(op.grid.nodes, P))
    out.write("heat_kernel.csv", csv_text(["t", "r", "P"], rows), "csv")
    out.write("heat_kernel.json", dumps(report.to_dict()), "json")
    return {"C1": report.C1, "bounded": report.bounded}, EXIT_OK if report.bounded else EXIT_INCONCLUSIVE


def cmd_picard(cfg, out: Outputs, ctx):
    m, fam = cfgmod.build_manifold(cfg["manifold"])
    p = cfgmod.require(cfg, "problem", "p")
    pc = cfg["picard"]
    params = build_ball(m, p, cfgmod.picard_controls(pc), family=fam)
    u0 = small_data(params, pc["fraction"], pc["sigma"])
    fp = iterate_to_fixed_point(m, p, u0, params, tol=pc["tol"])
    rng = np.random.default_rng(ctx["seed"])
    factors = [contraction_factor(m, p, *random_ball_pair(params, rng), params) for _ in range(pc["pairs"])]
    report = {
        **params.to_dict(), **fp.to_dict(),
        "u0_amplitude": u0.amplitude,
        "empirical_contraction": {"pairs": len(factors), "max": max(factors) if factors else None,
                                  "bound": params.contraction_bound,
                                  "fraction_within_bound": (sum(f <= params.contraction_bound + 0.05
                                                                for f in factors) / len(factors))
                                  if factors else None},
    }
    out.write("picard.json", dumps(report), "json")
    if pc["write_field"]:
        out.write("picard_field.csv", csv_text(["t", "r", "u"], fp.solution.rows()), "csv")
    return {"lambda": params.lam, "C1": params.C1, "C4": params.C4, "iterations": fp.iterations,
            "final_residual": fp.residual}, EXIT_OK


def cmd_certificate(cfg, out: Outputs, ctx):
    m, _ = cfgmod.build_manifold(cfg["manifold"])
    p = cfgmod.require(cfg, "problem", "p")
    cc = cfg["certificate"]
    cert = build_certificate(m, p, cc["r0"], cc["i"])
    bounds = verify_bounds(cert, cc["samples_r"], cc["samples_t"])
    try:
        decay = a_decay(m, p, cc["r0"], cc["i_list"]).to_dict()
    except RangeExceeded as exc:
        decay = {"rows": exc.details.get("partial", []), "first_i_with_a_le_1_over_r0": None,
                 "complete": False, "stopped": str(exc)}
    report = {**cert.to_dict(), "bounds": bounds.to_dict(), "a_decay": decay}
    out.write("certificate.json", dumps(report), "json")
    r = np.linspace(0.0, cert.radii[-1], cc["samples_r"] + 1)
    t = np.linspace(0.0, cert.radii[-1] ** 2, cc["samples_t"] + 1)
    R, T = np.meshgrid(r, t, indexing="ij")
    phi = cert.phi(R, T)
    rows = zip(R.ravel(), T.ravel(), phi.ravel())
    out.write("certificate.csv", csv_text(["r", "t", "phi"], rows), "csv")
    return {"a": cert.a, "C_lap": bounds.C_lap, "C_t": bounds.C_t,
            "first_i": decay.get("first_i_with_a_le_1_over_r0")}, EXIT_OK


def _read_sweep_csv(path: Path):
    if not path.is_file():
        raise ValidationError("sweep CSV not found; run 'sweep' first", path=str(path))
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def phase_svg(points, width: int = 640, height: int = 420) -> str:
    """Self-contained SVG: sweep outcomes in the (p, alpha1) plane with the curve p = 1 + 2/alpha1."""
    pad = 60
    ps = [pt[0] for pt in points] or [1.5, 3.5]
    als = [pt[1] for pt in points] or [1.0, 4.0]
    x0, x1 = min(ps) - 0.1, max(ps) + 0.1
    y0, y1 = max(0.5, min(als) - 0.5), max(als) + 0.5

    def X(p):
        return pad + (p - x0) / (x1 - x0) * (width - 2 * pad)

    def Y(a):
        return height - pad - (a - y0) / (y1 - y0) * (height - 2 * pad)

    colors = {"persist": "#2a9d8f", "blowup": "#e63946", "mixed": "#8d99ae"}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 15}" text-anchor="middle">p</text>',
        f'<text x="15" y="{height / 2:.1f}" transform="rotate(-90 15 {height / 2:.1f})" '
        'text-anchor="middle">volume exponent alpha1</text>',
    ]
    for k in range(6):
        p = x0 + k * (x1 - x0) / 5
        a = y0 + k * (y1 - y0) / 5
        parts.append(f'<text x="{X(p):.1f}" y="{height - pad + 18}" text-anchor="middle">{p:.2f}</text>')
        parts.append(f'<text x="{pad - 8}" y="{Y(a) + 4:.1f}" text-anchor="end">{a:.2f}</text>')
    curve = []
    for k in range(101):
        a = y0 + k * (y1 - y0) / 100
        p = 1.0 + 2.0 / a
        if x0 <= p <= x1:
            curve.append(f"{X(p):.2f},{Y(a):.2f}")
    if len(curve) > 1:
        parts.append(f'<polyline points="{" ".join(curve)}" fill="none" stroke="black" '
                     'stroke-dasharray="4 3"/>')
    for p, a, status in points:
        parts.append(f'<circle cx="{X(p):.2f}" cy="{Y(a):.2f}" r="5" fill="{colors[status]}">'
                     f'<title>p={p:.4f} alpha1={a:.3f} {status}</title></circle>')
    for k, (name, col) in enumerate(colors.items()):
        y = pad + 16 * k
        parts.append(f'<circle cx="{width - pad - 90}" cy="{y}" r="5" fill="{col}"/>')
        parts.append(f'<text x="{width - pad - 80}" y="{y + 4}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_report(cfg, out: Outputs, ctx):
    inputs = cfg["report"]["inputs"] or [str(out.dir / "sweep.csv")]
    per: dict = {}
    for path in inputs:
        for row in _read_sweep_csv(Path(path)):
            key = (float(row["p"]), float(row["alpha1"]), row["manifold"])
            per.setdefault(key, []).append(row["outcome"])
    points = []
    for (p, a, _), kinds in sorted(per.items()):
        if not math.isfinite(a):
            continue
        if GLOBAL in kinds:
            status = "persist"
        elif all(k == "BlowUp" for k in kinds):
            status = "blowup"
        else:
            status = "mixed"
        points.append((p, a, status))
    out.write("phase_diagram.svg", phase_svg(points), "svg")
    return {"points": len(points), "inputs": inputs}, EXIT_OK


HANDLERS = {
    "classify": cmd_classify,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "heat-kernel": cmd_heat_kernel,
    "picard": cmd_picard,
    "certificate": cmd_certificate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fujita-lab",
        description="Fujita-type blow-up experiments on radial model manifolds.",
        epilog=__doc__.split("\n\n", 1)[1],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out", help="output directory (overrides output.directory)")
        sp.add_argument("--threads", type=int, help="worker processes (env FUJITA_LAB_THREADS)")
        sp.add_argument("--seed", type=int, help="random seed (overrides config seed)")
        sp.add_argument("--format", action="append", choices=["csv", "json", "svg"],
                        help="restrict outputs to these formats (repeatable)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def _error(exc_dict: dict, code: int) -> int:
    sys.stderr.write(json.dumps(_clean({"error": exc_dict}), sort_keys=True) + "\n")
    return code


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return _error({"error": "usage", "message": "invalid command line"}, EXIT_VALIDATION)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.out:
            cfg["output"]["directory"] = args.out
        if args.format:
            cfg["output"]["formats"] = sorted(set(args.format))
        threads = cfgmod.effective_threads(args.threads, cfg, os.environ)
        out = Outputs(Path(cfg["output"]["directory"]), cfg["output"]["formats"])
        out.write("effective_config.json", dumps(cfg))
        summary, code = HANDLERS[args.command](cfg, out, {"threads": threads, "seed": cfg["seed"]})
        out.manifest(args.command, cfg, args.config)
    except FujitaLabError as exc:
        return _error(exc.to_dict(), exc.exit_code)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return _error({"error": "numerical_failure", "message": str(exc)}, EXIT_NUMERIC)
    sys.stdout.write(dumps({"command": args.command, **summary}))
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
