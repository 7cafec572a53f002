"""Command-line front end.

    windcoh validate  --case CASE
    windcoh powerflow --case CASE [--farm BUS:GAMMA[:NU]] [--out DIR]
    windcoh coherency | perturb | simulate | pca  [scenario flags] [--out DIR]
    windcoh sweep --farm BUS:GAMMA --gammas 0,650,2000 [--buses 66,37] --out DIR [--jobs N]
    windcoh report --out DIR

Exit codes: 0 success, 2 validation error, 3 numerical failure,
4 partial sweep failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import netmodel as nm
from . import pipeline as pl
from .errors import ValidationError, WindcohError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 2, 3, 4


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()] if text else []


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()] if text else []


def build_parser():
    p = argparse.ArgumentParser(prog="windcoh", description="Slow coherency of power systems with DFIG wind farms")
    p.add_argument("--version", action="version", version=f"windcoh {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--case", default=None, help="case JSON file or builtin name (default ieee68)")
    common.add_argument("--config", default=None, help="scenario JSON file; flags override its fields")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    common.add_argument("--seed", type=int, default=None,
                        help="reserved; PCA clustering is deterministic regardless")
    common.add_argument("--farm", action="append", default=None, metavar="BUS:GAMMA[:NU]",
                        help="wind farm override (repeatable; gamma 0 disables)")
    common.add_argument("--r", type=int, default=None, help="number of coherent areas")
    common.add_argument("--damping", type=float, default=None,
                        help="uniform modal damping sigma for the dynamic model (0 disables)")
    common.add_argument("--integrator", choices=("zoh", "trapezoidal"), default=None)
    common.add_argument("--no-center", action="store_true", help="skip PCA mean-centering")
    common.add_argument("--components", type=int, default=None, help="PCA axes (default r-1)")
    sub = p.add_subparsers(dest="command", required=True)
    for name, hlp in [("validate", "check a case file"), ("powerflow", "solve the operating point"),
                      ("coherency", "identify coherent areas"), ("perturb", "dump the perturbation ledger"),
                      ("simulate", "modal table and step response"), ("pca", "full pipeline with PCA check"),
                      ("report", "summarize an existing bundle")]:
        sub.add_parser(name, parents=[common], help=hlp)
    sw = sub.add_parser("sweep", parents=[common], help="grid over gamma and/or farm bus")
    sw.add_argument("--gammas", default=None, help="comma-separated gamma values")
    sw.add_argument("--buses", default=None, help="comma-separated farm buses")
    return p


def scenario_from_args(args, **flags) -> pl.Scenario:
    sc = pl.Scenario.load(args.config) if args.config else pl.Scenario()
    over = dict(flags)
    if args.case:
        over["case"] = args.case
    if args.farm is not None:
        over["farms"] = tuple(pl.FarmOverride.parse(f) for f in args.farm)
    if args.r is not None:
        over["r"] = args.r
    if args.damping is not None:
        over["damping_sigma"] = args.damping or None
    if args.integrator:
        over["integrator"] = args.integrator
    if args.no_center:
        over["pca_center"] = False
    if args.components is not None:
        over["pca_components"] = args.components
    return replace(sc, **over)


def _print_partition(res):
    if res.partition is None:
        return
    print("areas (reference first):")
    for k, a in enumerate(res.partition.areas):
        print(f"  area {k + 1}: " + ", ".join(str(i + 1) for i in a))
    print("slow frequencies (Hz): " + ", ".join("%.3f" % f for f in res.partition.frequencies))
    if res.case_wind is not None:
        print("moved generators: " + (", ".join(str(i + 1) for i in sorted(res.moved)) or "none"))
        for a, b in res.ref_changes:
            print(f"reference change: {a + 1} -> {b + 1}")


def _finish(res):
    for w in res.warnings:
        print("warning: " + w, file=sys.stderr)
    if not res.ok:
        print(f"error in stage {res.failed_stage}: {res.error}", file=sys.stderr)
        return res.exit_code if res.exit_code in (EXIT_VALIDATION, EXIT_NUMERICAL) else EXIT_NUMERICAL
    return EXIT_OK


def cmd_validate(args):
    name = args.case or (pl.Scenario.load(args.config).case if args.config else "ieee68")
    try:
        case = nm.load_case(name)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"cannot load case: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    findings = nm.validate_case(case)
    for f in findings:
        print(f"{f.code}: {f.message}")
    if findings:
        return EXIT_VALIDATION
    print(f"{case.name}: {case.m} buses, {len(case.lines)} lines, {case.n} generators, "
          f"{len(case.wind_farms)} wind farms; ok")
    return EXIT_OK


def cmd_powerflow(args):
    sc = scenario_from_args(args, modal=False, simulate=False, pca=False)
    res = pl.run_pipeline(sc, upto="powerflow")
    code = _finish(res)
    if code:
        return code
    op = res.op_wind or res.op
    case = res.case_wind or res.case
    rows = [{"bus": b.id, "kind": b.kind, "V": float(abs(v)), "angle_deg": float(np.degrees(np.angle(v)))}
            for b, v in zip(case.buses, op.V)]
    print(f"converged in {op.iterations} iterations, mismatch {op.mismatch:.3e}")
    for r in rows:
        print("%4d %-8s %.5f %9.4f" % (r["bus"], r["kind"], r["V"], r["angle_deg"]))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "powerflow.json").write_text(json.dumps(
            {"iterations": op.iterations, "mismatch": float(op.mismatch), "buses": rows},
            indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def _run(args, **flags):
    sc = scenario_from_args(args, **flags)
    res = pl.run_pipeline(sc, args.out)
    _print_partition(res)
    if res.comparison is not None:
        print("PCA agreement with model partition: %.4f" % res.comparison.agreement)
    return _finish(res)


def cmd_coherency(args):
    return _run(args, modal=False, simulate=False, pca=False)


def cmd_perturb(args):
    sc = scenario_from_args(args, modal=False, simulate=False, pca=False)
    if not sc.active_farms:
        print("perturb needs at least one --farm with gamma > 0", file=sys.stderr)
        return EXIT_VALIDATION
    res = pl.run_pipeline(sc, args.out)
    if res.ledger is not None:
        print("two-path relative error: %.3e" % res.ledger.two_path_error)
        print("epsilon: %.4g (closed-form fallback: %s)" % (res.ledger.split.epsilon, res.ledger.split.fallback))
    _print_partition(res)
    return _finish(res)


def cmd_simulate(args):
    sc = scenario_from_args(args, pca=False)
    res = pl.run_pipeline(sc, args.out)
    _print_partition(res)
    if res.modes:
        print("oscillatory swing modes:")
        for md in [m for m in res.modes if m.oscillatory and m.swing_share >= 0.5][:sc.r - 1]:
            print("  %9.4f %+9.4fj  %.3f Hz  zeta %.3f" % (md.eigenvalue.real, md.eigenvalue.imag,
                                                        md.frequency_hz, md.damping_ratio))
    return _finish(res)


def cmd_pca(args):
    return _run(args)


def cmd_sweep(args):
    sc = scenario_from_args(args, modal=False, simulate=False, pca=False)
    gammas = _floats(args.gammas) if args.gammas is not None else None
    buses = _ints(args.buses) if args.buses is not None else None
    rows = pl.sweep(sc, gammas, buses, out=args.out, jobs=max(1, args.jobs))
    for r in rows:
        print("%-16s moved: %-12s refs: %-10s f: %s%s" % (
            r.label, ",".join(map(str, r.moved)) or "-",
            ",".join(f"{a}->{b}" for a, b in r.ref_changes) or "-",
            " ".join("%.3f" % f for f in r.frequencies), f"  ERROR {r.error}" if r.error else ""))
    failed = [r for r in rows if r.error]
    if failed and len(failed) == len(rows):
        return max(r.exit_code for r in failed) if all(r.exit_code in (2, 3) for r in failed) else EXIT_NUMERICAL
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_report(args):
    if not args.out:
        print("report needs --out pointing at a bundle directory", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.out)
    try:
        man = json.loads((out / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"no readable bundle at {out}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"windcoh {man['version']}; stages: {', '.join(man['stages_completed'])}")
    if man.get("failed_stage"):
        print(f"failed stage: {man['failed_stage']}: {man['error']}")
    if (out / "partition.json").exists():
        rep = json.loads((out / "partition.json").read_text())
        part = rep.get("partition") or rep.get("nominal")
        print("%-6s %-28s %-26s %s" % ("Area", "Generators", "eig(M^-1 L)", "Hz"))
        eig = part["eigenvalues"][1:] + [None]
        freqs = part["frequencies_hz"] + [None]
        for k, area in enumerate(part["areas"]):
            ev = eig[k]
            mode = "" if ev is None else "%.4f (%+.4fj)" % (ev[0], ev[1])
            f = "" if freqs[k] is None else "%.3f" % freqs[k]
            print("%-6d %-28s %-26s %s" % (k + 1, ",".join(map(str, area)), mode, f))
        if "moved_generators" in rep:
            print("moved generators: " + (",".join(map(str, rep["moved_generators"])) or "none"))
        if "pca" in rep:
            print("PCA agreement: %.4f" % rep["pca"]["agreement"])
    for w in man.get("warnings", []):
        print("warning: " + w)
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "powerflow": cmd_powerflow, "coherency": cmd_coherency,
            "perturb": cmd_perturb, "simulate": cmd_simulate, "pca": cmd_pca, "sweep": cmd_sweep,
            "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except WindcohError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code if exc.exit_code in (2, 3) else EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
