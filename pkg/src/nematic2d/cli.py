"""Command line: ``nematic2d {run, audit, ineq, expand, calibrate}``.

Exit codes: 0 success, 1 an asserted invariant failed, 2 bad configuration
or a solver abort.  Failures also write ``failure.json`` into the output
directory (or print it to stderr when there is none).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import emit_config, parse_config, preset, with_overrides
from .coupled import (
    ConfigError,
    EnergyLedger,
    SimulationError,
    continuation_run,
    energy_law_audit,
    expanding_ball_run,
    l4_identity_audit,
    ledger_invariants,
    run,
)
from .energy import PhysParams
from .inequalities import SUITES, eng_interpolation_check, load_c1, run_suite

log = logging.getLogger("nematic2d")


class Failure(Exception):
    def __init__(self, kind: str, message: str, code: int = 1, **extra):
        super().__init__(message)
        self.record = {"kind": kind, "message": message, **extra}
        self.code = code


def _spec_from_args(args, default_preset: str | None = None):
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        spec = parse_config(args.config)
    elif args.preset or default_preset:
        spec = preset(args.preset or default_preset)
    else:
        raise ConfigError("one of --config or --preset is required")
    spec = with_overrides(spec, seed=args.seed, stages=getattr(args, "stages", None), radii=getattr(args, "radii", None))
    if getattr(args, "calibration", None):
        spec = replace(spec, options=replace(spec.options, c1=load_c1(args.calibration)))
    return spec


def _emit(obj: dict, out: Path | None, name: str) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=float)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n")
    print(text)


def cmd_run(args) -> int:
    spec = _spec_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(emit_config(spec))
    if spec.mode == "cauchy-expanding-balls":
        return cmd_expand(args, spec)
    if spec.continuation:
        rep = continuation_run(spec, out_dir=out)
        summary = {"stages": rep.table(), "eps_bounded": rep.eps_bounded,
                   "trace_diffs": rep.trace_diffs, "trace_diffs_shrink": rep.trace_diffs_shrink}
        _emit(summary, out, "continuation.json")
        bad = [f"stage {i}: {v}" for i, led in enumerate(rep.ledgers) for v in ledger_invariants(led, spec.mode)]
        if not rep.eps_bounded:
            bad.append("sqrt(eps)|grad rho| column exceeds twice its stage-0 value")
        if bad:
            raise Failure("invariant", "; ".join(bad))
        return 0
    res = run(spec, out_dir=out, snap_every=args.snap_every)
    bad = ledger_invariants(res.ledger, spec.mode)
    log.info("run finished: %d steps, E %.6g -> %.6g", len(res.ledger) - 1, res.ledger["E"][0], res.ledger["E"][-1])
    if bad:
        raise Failure("invariant", "; ".join(bad))
    print(out / "ledger.csv")
    return 0


def cmd_audit(args) -> int:
    path = Path(args.ledger)
    ledger = EnergyLedger.from_csv(path)
    manifest = path.with_name(path.name.replace("ledger", "manifest", 1)).with_suffix(".json")
    p, mode = PhysParams(), "third-approx"
    if manifest.exists():
        info = json.loads(manifest.read_text())["spec"]
        p = PhysParams(**info["phys"])
        mode = info["mode"]
    e = energy_law_audit(ledger)
    l4 = l4_identity_audit(ledger, p)
    bad = ledger_invariants(ledger, mode)
    report = {"ledger": str(path), "energy_law": e.as_dict(), "l4_identity": l4.as_dict(), "invariants": bad}
    if args.max_residual is not None:
        for name, r in (("energy_law", e), ("l4_identity", l4)):
            if r.max_positive > args.max_residual:
                bad.append(f"{name} max positive residual {r.max_positive:.3e} > {args.max_residual:.3e}")
    out = Path(args.out) if args.out else None
    _emit(report, out, "audit.json")
    if bad:
        raise Failure("invariant", "; ".join(bad))
    return 0


def cmd_ineq(args) -> int:
    suites = SUITES if args.suite == "all" else (args.suite,)
    report = run_suite(suites, grid=args.grid, count=args.count, seed=args.seed or 0)
    _emit(report, Path(args.out) if args.out else None, "inequalities.json")
    if not report["ok"]:
        raise Failure("invariant", "an asserted inequality failed", report=report)
    return 0


def cmd_expand(args, spec=None) -> int:
    if spec is None:
        spec = _spec_from_args(args, default_preset="expanding-balls")
    out = Path(args.out)
    rep = expanding_ball_run(spec, out_dir=out)
    _emit(rep.as_dict(), out, "expansion.json")
    bad = []
    if not rep.decreasing:
        bad.append("energy-trace differences between radii do not decrease")
    if not rep.angle_ok:
        bad.append(f"min d2 = {rep.min_d2:.6g} below half the initial minimum {rep.d02_min:.6g}")
    if bad:
        raise Failure("invariant", "; ".join(bad))
    return 0


def cmd_calibrate(args) -> int:
    rep = eng_interpolation_check(count=args.count or 40, seed=args.seed or 0)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rep.export(out)
    print(json.dumps({"c1": rep.c1, "refinement_ok": rep.refinement_ok, "side_ok": rep.side_ok}))
    if not (rep.refinement_ok and rep.side_ok):
        raise Failure("invariant", "empirical c1 is not stable under refinement or across box sizes")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nematic2d", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def scenario(p):
        p.add_argument("--config")
        p.add_argument("--preset")
        p.add_argument("--out", default="out")
        p.add_argument("--seed", type=int)
        p.add_argument("--stages", help="'eps delta n; eps delta n; ...'")
        p.add_argument("--radii", help="space-separated radii")
        p.add_argument("--calibration", help="JSON file with a calibrated c1")

    p = sub.add_parser("run", help="run a scenario and write its ledger")
    scenario(p)
    p.add_argument("--snap-every", type=int, default=0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("audit", help="energy-law audits of an existing ledger")
    p.add_argument("ledger")
    p.add_argument("--max-residual", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("ineq", help="inequality suite")
    p.add_argument("--suite", choices=("all",) + SUITES, default="all")
    p.add_argument("--grid", type=int, default=128)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ineq)

    p = sub.add_parser("expand", help="expanding-ball sequence")
    scenario(p)
    p.set_defaults(func=lambda a: cmd_expand(a))

    p = sub.add_parser("calibrate", help="export the empirical interpolation constant")
    p.add_argument("--out", default="c1.json")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_calibrate)
    return ap


def _failure_target(args) -> Path | None:
    out = getattr(args, "out", None)
    if not out or args.command == "calibrate":
        return None
    return Path(out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except Failure as exc:
        record, code = exc.record, exc.code
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        record, code = {"kind": "config", "message": str(exc)}, 2
    except SimulationError as exc:
        record, code = {"kind": "solver", "message": str(exc), "step": exc.step}, 2
    record["command"] = args.command
    text = json.dumps(record, indent=2, sort_keys=True, default=str)
    target = _failure_target(args)
    if target is not None:
        target.mkdir(parents=True, exist_ok=True)
        (target / "failure.json").write_text(text + "\n")
    print(text, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
