"""Command-line front end.

    grape run problem.json --out results/

Exit codes: 0 converged, 1 invalid input, 2 not converged (or, with
``--check-gradient``, gradient error above tolerance).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence, TextIO

from .engine import (
    GrapeResult,
    IterationRecord,
    compute_gradient,
    finite_difference_gradient,
    optimize,
    relative_error,
)
from .optimizer import Method
from .problemfile import ProblemFileError, load_problem

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_NOT_CONVERGED = 2

GRADIENT_CHECK_TOL = 1e-6
CSV_HEADER = "iter,J,J_T,J_a,grad_norm,step,fidelity"


def _csv_row(rec: IterationRecord) -> str:
    values = (rec.j_total, rec.j_t, rec.j_running, rec.grad_norm, rec.step_size, rec.fidelity)
    return f"{rec.iteration}," + ",".join(f"{v:.16e}" for v in values)


def _write_outputs(out_dir: Path, result: GrapeResult, t_mid) -> None:
    lines = [CSV_HEADER] + [_csv_row(rec) for rec in result.records]
    (out_dir / "iterations.csv").write_text("\n".join(lines) + "\n")

    controls = result.optimized_controls
    lines = [",".join(("t_mid",) + controls.labels)]
    for t, row in zip(t_mid, controls.values):
        lines.append(",".join(f"{v:.16e}" for v in (t, *row)))
    (out_dir / "controls_opt.csv").write_text("\n".join(lines) + "\n")

    final = result.final
    summary = {
        "converged": result.converged,
        "reason": result.reason,
        "iterations": result.iterations,
        "final_J_T": final.j_t,
        "final_fidelity": final.fidelity,
    }
    (out_dir / "result.json").write_text(json.dumps(summary, indent=2) + "\n")


def run(
    problem_path: str | Path,
    out_dir: str | Path | None,
    *,
    method: str | None = None,
    max_iter: int | None = None,
    seed: int | None = None,
    threads: int | None = None,
    check_gradient: bool = False,
    quiet: bool = False,
    stdout: TextIO | None = None,
    stderr: TextIO | None = None,
) -> int:
    """Load, optimize, and write results; returns the process exit code."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        loaded = load_problem(problem_path, seed=seed)
    except ProblemFileError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_INPUT_ERROR
    problem, options = loaded.problem, loaded.options
    if method is not None:
        options.method = Method(method)
    if max_iter is not None:
        if max_iter < 0:
            print("error: --max-iter: must be >= 0", file=stderr)
            return EXIT_INPUT_ERROR
        options.max_iter = max_iter
    workers = threads if threads is not None else os.cpu_count()

    if check_gradient:
        _, grad = compute_gradient(problem, workers=workers)
        fd = finite_difference_gradient(problem, relative=True)
        err = relative_error(grad, fd)
        ok = err <= GRADIENT_CHECK_TOL
        print(f"max relative gradient error: {err:.3e} ({'ok' if ok else 'FAILED'})", file=stdout)
        return EXIT_OK if ok else EXIT_NOT_CONVERGED

    if out_dir is None:
        print("error: --out: required unless --check-gradient is given", file=stderr)
        return EXIT_INPUT_ERROR
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: --out: cannot create {out_dir} ({exc.strerror})", file=stderr)
        return EXIT_INPUT_ERROR
    if not os.access(out_dir, os.W_OK):
        print(f"error: --out: {out_dir} is not writable", file=stderr)
        return EXIT_INPUT_ERROR

    def progress(rec: IterationRecord):
        if not quiet:
            print(_csv_row(rec), file=stdout, flush=True)

    if not quiet:
        print(CSV_HEADER, file=stdout)
    result = optimize(problem, options, callback=progress, workers=workers)
    _write_outputs(out_dir, result, problem.grid.midpoints)
    if not quiet:
        print(f"# {result.reason} after {result.iterations} iterations", file=stdout)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grape", description="GRAPE quantum optimal control")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="optimize the controls of a problem file")
    p.add_argument("problem", help="problem definition (JSON)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--check-gradient", action="store_true",
                   help="compare the exact gradient with finite differences and exit")
    p.add_argument("--method", choices=[m.value for m in Method], help="override the optimizer")
    p.add_argument("--max-iter", type=int, help="override the iteration limit")
    p.add_argument("--seed", type=int, help="seed for random initial controls")
    p.add_argument("--threads", type=int, help="worker threads for trajectories (default: all CPUs)")
    p.add_argument("--quiet", action="store_true", help="no progress output")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return run(
        args.problem,
        args.out,
        method=args.method,
        max_iter=args.max_iter,
        seed=args.seed,
        threads=args.threads,
        check_gradient=args.check_gradient,
        quiet=args.quiet,
    )
