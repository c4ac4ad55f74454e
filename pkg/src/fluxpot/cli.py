"""Command-line entry point: ``fluxpot --problem ... --scheme ...``.

Exit codes: 0 success, 2 bound violation detected, 3 solver failure.
The run report (and, with ``--trace``, one record per step) is written to
stdout as JSON lines.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import bench, obpp
from .problems import ProblemKind
from .schemes import Diverged, Scheme

EXIT_OK = 0
EXIT_BOUNDS = 2
EXIT_SOLVER = 3

log = logging.getLogger("fluxpot")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fluxpot", description="Bound-preserving flux correction benchmarks.")
    p.add_argument("--problem", required=True, choices=[k.value for k in ProblemKind])
    p.add_argument("--scheme", default="obpp-fd", choices=[s.value for s in Scheme])
    p.add_argument("--n", type=int, default=None, help="cells per direction (problem default if omitted)")
    p.add_argument("--dt", type=float, default=None, help="(pseudo-)time step")
    p.add_argument("--t-final", type=float, default=None, help="final (pseudo-)time")
    p.add_argument("--mu", type=float, default=0.01, help="weight of the potential smoothing term")
    p.add_argument("--bounds", default=None, help="'local' or 'global:lo:hi'")
    p.add_argument("--sigma-min", type=float, default=1e-8, help="final barrier parameter")
    p.add_argument("--dc-sweeps", type=int, default=3, help="deferred correction sweeps (0: exact mass solves)")
    p.add_argument("--reference-n", type=int, default=bench.REFERENCE_N,
                   help="resolution of the diffusion reference solution")
    p.add_argument("--table", default=None,
                   help="comma-separated resolutions: write a convergence table instead of a single run")
    p.add_argument("--out", type=Path, default=None, help="directory for fields, history and figures")
    p.add_argument("--trace", action="store_true", help="emit one JSON line per step")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _spec(args, n=None) -> bench.ProblemSpec:
    return bench.ProblemSpec(
        problem=args.problem,
        scheme=args.scheme,
        n=n if n is not None else args.n,
        dt=args.dt,
        t_final=args.t_final,
        bounds=args.bounds,
        mu=args.mu,
        sigma_min=args.sigma_min,
        dc_sweeps=args.dc_sweeps or None,
        reference_n=args.reference_n,
    )


def _emit(record: dict, stream) -> None:
    stream.write(json.dumps(record) + "\n")
    stream.flush()


def _write_outputs(out: Path, report: bench.RunReport, result: dict) -> None:
    from . import plotting

    out.mkdir(parents=True, exist_ok=True)
    stem = f"{report.problem}_{report.scheme}_n{report.n}"
    bench.write_field(result["u"], result["mesh"], out / f"{stem}.vtk")
    bench.write_field(result["u"], result["mesh"], out / f"{stem}.csv")
    bench.write_history(result["history"], out / f"{stem}_history.csv")
    (out / f"{stem}_report.json").write_text(report.to_json() + "\n")
    plotting.plot_field(result["u"], result["mesh"], out / f"{stem}.png",
                        title=f"{report.scheme}: u in [{report.u_min:.4g}, {report.u_max:.4g}]")
    if len(result["history"]):
        plotting.plot_history(result["history"], out / f"{stem}_history.png")


def main(argv=None, stdout=None) -> int:
    args = build_parser().parse_args(argv)
    stdout = stdout or sys.stdout
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        if args.table:
            resolutions = [int(s) for s in args.table.split(",")]
            path = None
            if args.out is not None:
                args.out.mkdir(parents=True, exist_ok=True)
                path = args.out / f"{args.problem}_{args.scheme}_convergence.csv"
            spec0 = _spec(args, resolutions[0])
            rows = bench.convergence_table(
                spec0.problem, resolutions, spec0.scheme, path=path,
                dt=args.dt, t_final=args.t_final, bounds=spec0.bounds, mu=args.mu,
                sigma_min=args.sigma_min, dc_sweeps=spec0.dc_sweeps, reference_n=args.reference_n,
            )
            for row in rows:
                _emit(row, stdout)
            return EXIT_OK

        spec = _spec(args)
        callback = None
        if args.trace:
            def callback(u, info):
                _emit({"event": "step", **asdict(info)}, stdout)

        report, result = bench.run_benchmark(spec, callback=callback)
    except (Diverged, obpp.InfeasibleBackup, obpp.SolverBreakdown, obpp.NotConverged) as exc:
        _emit({"event": "error", "type": type(exc).__name__, "message": str(exc)}, stdout)
        return EXIT_SOLVER
    except ValueError as exc:
        _emit({"event": "error", "type": "ValueError", "message": str(exc)}, stdout)
        return EXIT_SOLVER

    _emit({"event": "report", **asdict(report)}, stdout)
    if args.out is not None:
        _write_outputs(args.out, report, result)
    if Scheme(spec.scheme).bound_preserving and not report.range_ok():
        log.warning("range [%g, %g] leaves [%g, %g]", report.u_min, report.u_max, report.bound_lo, report.bound_hi)
        return EXIT_BOUNDS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
