"""Command-line entry point: ``rydlock scan|run|transfer|adev``."""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import pipeline
from .allan import EstimationError
from .atomic import QuadratureError
from .lockin import CalibrationError, NoLockPointError, SamplingError
from .scenario import ConfigError, Scenario, bundled_names, bundled_scenario, load_scenario, parse_scenario

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rydlock", description="Simulate the three-step Rydberg laser locks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", metavar="PATH",
                           help="scenario file, or the name of a bundled scenario "
                                f"({', '.join(bundled_names())})")
            p.add_argument("--seed", type=int, help="master seed (overrides the scenario)")
            p.add_argument("--mode", choices=("envelope", "waveform"),
                           help="simulation fidelity (overrides the scenario)")
        p.add_argument("--out", metavar="DIR", default="out", help="output directory")
        p.add_argument("--strict", action="store_true",
                       help="exit with status 2 when a lock is lost")

    common(sub.add_parser("scan", help="lineshape and error curve of one lock"))
    common(sub.add_parser("run", help="locked chain, counter and Allan deviation"))
    p = sub.add_parser("transfer", help="lock-point sweep and transfer factors")
    common(p)
    p.add_argument("--channel", type=int, choices=(1, 2), help="channel to sweep")
    p.add_argument("--levels", metavar="HZ,HZ,...", help="comma-separated lock-point offsets in Hz")
    p = sub.add_parser("adev", help="Allan deviation of an existing counter CSV")
    common(p, needs_config=False)
    p.add_argument("--counter", metavar="PATH", required=True, help="counter CSV to analyse")
    p.add_argument("--max-tau", type=float, default=1e3, help="largest tau in the summary maximum (s)")
    return parser


def _scenario(args) -> Scenario:
    if args.config is None:
        sc = parse_scenario("", "<defaults>")
    else:
        path = Path(args.config)
        if not path.exists() and (args.config in bundled_names()
                                  or f"{args.config}.cfg" in bundled_names()):
            sc = bundled_scenario(args.config)
        else:
            sc = load_scenario(path)
    if args.seed is not None:
        sc = sc.override("scenario", "seed", args.seed)
    if args.mode is not None:
        sc = sc.override("scenario", "mode", args.mode)
    return sc


def _khz(x):
    return "n/a" if math.isnan(x) else f"{x / 1e3:.2f} kHz"


def _cmd_scan(args, sc):
    rep = pipeline.scan(sc, args.out)
    print(f"{sc.target.label} axis {sc.get('scan', 'axis')}: zero crossing "
          f"{rep.zero_crossing:.3f} Hz, slope {rep.slope * 1e9:.4f} mV/MHz "
          f"(gain {rep.calibration_gain:.6g})")
    print(f"wrote {', '.join(rep.files)} to {args.out}")
    return EXIT_OK


def _cmd_run(args, sc):
    rep = pipeline.run(sc, args.out)
    for ch in rep.result.summary.channels:
        state = "locked" if ch.locked else ("lost" if ch.lock_lost_at is not None else "unlocked")
        line = f"{ch.label}: {state}"
        if ch.label in rep.adev:
            line += (f", adev(1 s) {_khz(rep.sigma_1s[ch.label])}, max adev up to "
                     f"{sc.get('analysis', 'adev_max_tau_s'):g} s {_khz(rep.sigma_max[ch.label])}")
        print(line)
    for note in rep.notes:
        print(note)
    print(f"wrote outputs to {args.out}")
    if rep.lock_lost:
        print("warning: lock lost (see summary.txt)", file=sys.stderr)
        if args.strict:
            return EXIT_RUNTIME
    return EXIT_OK


def _cmd_transfer(args, sc):
    levels = None
    if args.levels is not None:
        try:
            levels = [float(v) for v in args.levels.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"cannot read --levels: {exc}") from exc
    rep = pipeline.transfer(sc, args.out, args.channel, levels)
    for lab, tf in rep.factors.items():
        print(f"ch{rep.channel} -> {lab}: {pipeline.describe_transfer(tf)}")
    for note in rep.notes:
        print(note)
    print(f"wrote transfer.csv and transfer_report.txt to {args.out}")
    if args.strict and not rep.kept.all():
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_adev(args):
    try:
        rep = pipeline.adev(args.counter, args.out, args.max_tau)
    except ValueError as exc:
        print(f"I/O error: unreadable counter file: {exc}", file=sys.stderr)
        return EXIT_IO
    for lab, s in rep.sigma_1s.items():
        print(f"{lab}: adev(1 s) {_khz(s)}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "adev":
            return _cmd_adev(args)
        sc = _scenario(args)
        if sc.target.warning:
            print(f"warning: {sc.target.warning}", file=sys.stderr)
        return {"scan": _cmd_scan, "run": _cmd_run, "transfer": _cmd_transfer}[args.command](args, sc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EstimationError, NoLockPointError, CalibrationError, SamplingError, QuadratureError,
            RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
