"""Command-line entry point: ``cavsim simulate|spectrum|threshold|report``.

Failures print one JSON object on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from .bundle import compare_report, emit_spectrum, run_and_emit
from .core import CONSTANTS, TWO_PI
from .scenarios import ScenarioError, load_scenario
from .zeeman import saturation_parameter_p, scattering_rate_fs

ENV_OUT = "CAVSIM_OUT"

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_RUN = 4
EXIT_REPORT = 1


def output_root():
    return Path(os.environ.get(ENV_OUT) or "cavsim_out")


def _fail(code, kind, message, **extra):
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)
    return code


def cmd_simulate(args):
    sc = load_scenario(args.scenario)
    out = Path(args.out) if args.out else output_root() / sc.name

    def progress(i, n):
        if not args.quiet:
            print(f"point {i}/{n}", file=sys.stderr)

    path, ex = run_and_emit(sc, out, atoms=args.atoms, seed=args.seed, workers=args.workers, progress=progress)
    print(f"bundle={path}")
    return 0


def cmd_spectrum(args):
    out = Path(args.out) if args.out else output_root() / "spectrum"
    path = emit_spectrum(out)
    print(f"bundle={path}")
    return 0


def cmd_threshold(args):
    sc = load_scenario(args.scenario)
    model = sc.threshold_model()
    n = sc.ensemble.n_physical
    points = sc.points() if sc.sweep is not None and sc.sweep.path.startswith("drive.") else [sc]
    print("s_single_beam,delta_a_MHz,Delta_c_MHz,p,gamma_fs,eta,above_threshold,I_th_W_m2,s_th")
    for p in points:
        d = p.drive
        em = model.predict(d, n, with_threshold=True)
        I_th = em.I_th
        s_th = I_th / CONSTANTS.I_s if math.isfinite(I_th) else math.inf
        print(",".join([f"{d.s_single_beam:.6g}", f"{d.delta_a / TWO_PI / 1e6:.6g}",
                        f"{d.Delta_c / TWO_PI / 1e6:.6g}",
                        f"{saturation_parameter_p(d.s_total, d.delta_a):.6g}",
                        f"{scattering_rate_fs(d.s_total, d.delta_a):.6g}", f"{em.eta:.6g}",
                        str(int(em.above_threshold)), f"{I_th:.6g}", f"{s_th:.6g}"]))
    return 0


def cmd_report(args):
    rows, ok = compare_report(args.bundle, args.expect)
    for metric, value, target, tol, mode, prov, status, reason in rows:
        print(f"{status:15s} [{prov}] {metric}: {reason}")
    print(f"report={Path(args.bundle) / 'report.csv'}")
    return 0 if ok else EXIT_REPORT


def build_parser():
    ap = argparse.ArgumentParser(prog="cavsim", description="Cavity cooling Monte Carlo scenarios")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write an output bundle")
    s.add_argument("--scenario", required=True, help="scenario file or preset:NAME")
    s.add_argument("--atoms", type=int, help="sampled atoms (physical number unchanged)")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out", help=f"bundle directory (default ${ENV_OUT}/<name>)")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("spectrum", help="write the calibrated mode density")
    s.add_argument("--out")
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("threshold", help="steady-state threshold table for a scenario")
    s.add_argument("--scenario", required=True)
    s.set_defaults(func=cmd_threshold)

    s = sub.add_parser("report", help="compare a bundle against an expectations file")
    s.add_argument("--bundle", required=True)
    s.add_argument("--expect", required=True, help="expectations CSV or preset:NAME")
    s.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    try:
        if getattr(args, "atoms", None) is not None and args.atoms < 1:
            raise ValueError("--atoms must be >= 1")
        if getattr(args, "workers", None) is not None and args.workers < 1:
            raise ValueError("--workers must be >= 1")
        return args.func(args)
    except ScenarioError as exc:
        return _fail(EXIT_INPUT, "scenario", str(exc), line=exc.line, source=exc.source)
    except (ValueError, FileNotFoundError) as exc:
        return _fail(EXIT_INPUT, type(exc).__name__, str(exc))
    except Exception as exc:  # noqa: BLE001 - any run failure becomes a JSON error
        return _fail(EXIT_RUN, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
