"""Command-line front end.

    mpk run      --workload primes --limit 100 --procs 4
    mpk predict  --curve-file table1_wave.csv
    mpk predict  --workload primes --limit 2000000 --max-procs 8
    mpk model    --law amdahl --f 0.1 --procs 1..16
    mpk report   --input curve.csv --serial 0.80216

Exit codes: 0 success, 2 usage or domain error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import metrics, predictor, runtime, workloads
from .predictor import ClassifierConfig, SpeedupCurve

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FAILURE = 3


class UsageError(Exception):
    pass


def _threshold(text: str) -> float:
    try:
        return runtime.parse_threshold(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _proc_range(text: str) -> list[int]:
    lo, sep, hi = text.partition("..")
    try:
        a = int(lo)
        b = int(hi) if sep else a
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or A..B, got {text!r}") from None
    if b < a:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return list(range(a, b + 1))


def _add_workload_args(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--workload", choices=sorted(workloads.WORKLOADS), required=required)
    p.add_argument("--points", type=int, default=800, help="wave: points on the string")
    p.add_argument("--steps", type=int, default=2000, help="wave: time steps")
    p.add_argument("--c", type=float, default=0.1, help="wave: time advance parameter")
    p.add_argument("--limit", type=int, default=2_000_000, help="primes: upper bound")


def _add_classifier_args(p: argparse.ArgumentParser) -> None:
    d = ClassifierConfig()
    p.add_argument("--poor-threshold", type=float, default=d.poor_threshold)
    p.add_argument("--linear-threshold", type=float, default=d.linear_threshold)


def _classifier(args: argparse.Namespace, reps: Optional[int] = None) -> ClassifierConfig:
    kwargs = {"poor_threshold": args.poor_threshold, "linear_threshold": args.linear_threshold}
    if reps is not None:
        kwargs["repetitions"] = reps
    try:
        return ClassifierConfig(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _workload(args: argparse.Namespace) -> workloads.Workload:
    if args.workload == "wave":
        return workloads.make_workload("wave", points=args.points, steps=args.steps, c=args.c)
    return workloads.make_workload("primes", limit=args.limit)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mpk", description=__doc__.splitlines()[0])
    ap.add_argument("--eager-threshold-bytes", type=_threshold, default=None,
                    help="eager/rendezvous crossover in bytes, or 'inf' "
                         f"(default: ${runtime.EAGER_THRESHOLD_ENV} or "
                         f"{runtime.DEFAULT_EAGER_THRESHOLD})")
    ap.add_argument("--json", action="store_true", help="machine-readable output")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a workload once at a given rank count")
    _add_workload_args(p, required=True)
    p.add_argument("--procs", type=int, default=1)
    p.add_argument("--reps", type=int, default=1, help="median over this many runs")
    p.add_argument("--output", type=Path, help="append a procs,seconds row to this CSV")
    p.add_argument("--with-serial", action="store_true",
                   help="also time the serial form and record serial_seconds")
    p.add_argument("--trace", type=Path, help="write the message trace to this file")

    p = sub.add_parser("predict", help="record a rank-count curve and classify it")
    _add_workload_args(p, required=False)
    p.add_argument("--curve-file", help="replay a recorded curve instead of measuring")
    p.add_argument("--max-procs", type=int, default=10)
    p.add_argument("--reps", type=int, default=ClassifierConfig().repetitions)
    p.add_argument("--no-pin", action="store_true", help="do not restrict to one CPU")
    p.add_argument("--report-out", type=Path, help="write the JSON report here")
    p.add_argument("--curve-out", type=Path, help="write the measured curve CSV here")
    _add_classifier_args(p)

    p = sub.add_parser("model", help="tabulate an analytic speedup or time model")
    # "eq2" is kept as an alias of "time-model" for existing scripts
    p.add_argument("--law", choices=["amdahl", "gustafson", "time-model", "eq2"], required=True)
    p.add_argument("--f", type=float, help="amdahl: serial fraction")
    p.add_argument("--s", type=float, help="gustafson: serial fraction")
    p.add_argument("--sigma", type=float, default=0.0, help="time-model: serial seconds")
    p.add_argument("--phi", type=float, default=0.0, help="time-model: parallelisable seconds")
    p.add_argument("--kappa", type=float, default=0.0, help="time-model: fixed communication seconds")
    p.add_argument("--kappa-per-proc", type=float, default=0.0,
                   help="time-model: communication seconds added per processor")
    p.add_argument("--procs", type=_proc_range, default=_proc_range("1..8"))

    p = sub.add_parser("report", help="speedup/efficiency table for a recorded curve")
    p.add_argument("--input", required=True, help="curve CSV (path or bundled fixture name)")
    p.add_argument("--serial", type=float, help="serial seconds (overrides the file comment)")
    _add_classifier_args(p)
    return ap


def cmd_run(args: argparse.Namespace) -> int:
    wl = _workload(args)
    wl.check_procs(args.procs)
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    runs = []
    for _ in range(args.reps):
        runs.append(runtime.spawn_world(args.procs, wl.program(), args.eager_threshold_bytes,
                                        trace=args.trace is not None))
    runs.sort(key=lambda r: r.wall_seconds)
    res = runs[len(runs) // 2]
    serial = predictor.time_serial(wl) if args.with_serial else None

    if args.trace is not None:
        args.trace.write_text("".join(line + "\n" for line in res.trace or []))
    if args.output is not None:
        _append_row(args.output, args.procs, res.wall_seconds, serial)

    if args.json:
        print(json.dumps({
            "workload": wl.name, "params": wl.params(), "procs": args.procs,
            "seconds": res.wall_seconds, "serial_seconds": serial,
            "result": wl.describe(res.values[0]),
            "timings": [t.as_dict() for t in res.timings],
            "messages": {"sent": res.sent, "received": res.received, "drained": res.drained},
        }, indent=2))
        return EXIT_OK
    print(wl.describe(res.values[0]))
    print("procs,seconds")
    print(f"{args.procs},{res.wall_seconds!r}")
    if serial is not None:
        print(f"serial_seconds={serial!r}")
    for rank, t in enumerate(res.timings):
        print(f"rank {rank}: t_comp={t.t_comp:.6f} t_comm={t.t_comm:.6f} "
              f"t_idle={t.t_idle:.6f} total={t.total():.6f}")
    return EXIT_OK


def _append_row(path: Path, procs: int, seconds: float, serial: Optional[float]) -> None:
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a") as fh:
        if serial is not None:
            fh.write(f"# serial_seconds={serial!r}\n")
        if new:
            fh.write("procs,seconds\n")
        fh.write(f"{procs},{seconds!r}\n")


def cmd_predict(args: argparse.Namespace) -> int:
    config = _classifier(args, args.reps)
    if args.curve_file:
        try:
            curve = predictor.load_curve(args.curve_file)
        except FileNotFoundError as exc:
            raise UsageError(str(exc)) from None
        report = predictor.build_report(curve, config, Path(args.curve_file).name,
                                        host={"replayed_from": str(args.curve_file)})
    else:
        if args.workload is None:
            raise UsageError("give --workload or --curve-file")
        if args.max_procs < 2:
            raise UsageError("--max-procs must be >= 2")
        wl = _workload(args)
        report = predictor.predict(wl, args.max_procs, config, args.eager_threshold_bytes,
                                   pin=not args.no_pin)
        if args.curve_out is not None:
            SpeedupCurve([(p["procs"], p["seconds"]) for p in report.points],
                         report.serial_seconds).write_csv(args.curve_out)
    if args.report_out is not None:
        args.report_out.write_text(report.to_json() + "\n")
    if args.json:
        print(report.to_json())
        return EXIT_OK
    _print_table(report)
    print(f"normalized_slope: {report.normalized_slope:.6g}")
    print(f"verdict: {predictor.VerdictKind(report.verdict).label}")
    return EXIT_OK


def _print_table(report: predictor.PredictionReport) -> None:
    if report.serial_seconds is not None:
        print(f"serial_seconds: {report.serial_seconds!r}")
    cols = ["procs", "seconds", "speedup", "efficiency"]
    cols = [c for c in cols if all(c in row for row in report.points)]
    print(",".join(cols))
    for row in report.points:
        print(",".join(f"{row[c]:.6g}" if c != "procs" else str(row[c]) for c in cols))


def cmd_model(args: argparse.Namespace) -> int:
    if args.law == "amdahl":
        if args.f is None:
            raise UsageError("--law amdahl needs --f")
        rows = [(p, metrics.amdahl_bound(args.f, p)) for p in args.procs]
    elif args.law == "gustafson":
        if args.s is None:
            raise UsageError("--law gustafson needs --s")
        rows = [(p, metrics.gustafson_bound(args.s, p)) for p in args.procs]
    else:
        model = metrics.ParallelTimeModel(
            sigma=lambda n: args.sigma,
            phi=lambda n: args.phi,
            kappa=lambda n, p: args.kappa + args.kappa_per_proc * p,
        )
        rows = [(p, metrics.parallel_time(model, 1, p)) for p in args.procs]
    if args.json:
        print(json.dumps([{"p": p, "bound": b} for p, b in rows]))
        return EXIT_OK
    print("p,bound")
    for p, b in rows:
        print(f"{p},{b:.12g}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        curve = predictor.load_curve(args.input)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    serial = args.serial if args.serial is not None else curve.serial_seconds
    if serial is None:
        raise UsageError("no serial time: pass --serial or add '# serial_seconds=' to the file")
    curve = SpeedupCurve(curve.points, serial)
    report = predictor.build_report(curve, _classifier(args), Path(args.input).name)
    if args.json:
        print(report.to_json())
        return EXIT_OK
    print("procs,seconds,speedup,efficiency")
    for row in report.points:
        print(f"{row['procs']},{row['seconds']!r},{row['speedup']:.8g},{row['efficiency']:.8g}")
    print(f"verdict: {predictor.VerdictKind(report.verdict).label}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "predict": cmd_predict, "model": cmd_model, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, predictor.MalformedCurve) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (runtime.RuntimeFailure, predictor.WorkloadFailed) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
