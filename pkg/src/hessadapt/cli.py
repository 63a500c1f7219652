"""Command-line entry point: ``hessadapt run`` and ``hessadapt check``."""

from __future__ import annotations

import argparse
import logging
import sys

from .checks import run_checks
from .problems import PROBLEMS
from .study import RECOVERIES, STUDY_COLUMNS, StudyConfig, run_study

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FLAGGED = 2


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hessadapt", description="Hessian-based anisotropic mesh adaptation studies")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a convergence study")
    run.add_argument("--problem", choices=PROBLEMS, required=True)
    run.add_argument("--recovery", choices=RECOVERIES, required=True, type=str.lower)
    run.add_argument("--metric", choices=("h1", "l2"), default="h1", type=str.lower)
    run.add_argument("--n", type=_int_list, default=[256, 1024, 4096], help="comma-separated target element counts")
    run.add_argument("--iters", type=int, default=5, help="fixed-point adaptation iterations per target")
    run.add_argument("--seed", type=int, default=42)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--flower-fix-typo", action="store_true")
    run.add_argument("--debug-meshes", action="store_true", help="write the mesh after every remeshing pass")

    chk = sub.add_parser("check", help="run the invariant suite")
    chk.add_argument("--samples", type=int, default=10_000)
    chk.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_run(args) -> int:
    config = StudyConfig(
        problem=args.problem,
        recovery=args.recovery,
        metric_kind=args.metric,
        n_targets=args.n,
        fixed_point_iters=args.iters,
        seed=args.seed,
        output_dir=args.out,
        flower_fix_typo=args.flower_fix_typo,
        debug_meshes=args.debug_meshes,
    )
    records = run_study(config)
    shown = ("n_target", "n_actual", "h1_error", "c_eq", "c_ali", "eps", "cr_ratio", "alpha_h", "flagged")
    print(" ".join(f"{c:>12}" for c in shown))
    for r in records:
        cells = []
        for c in shown:
            v = getattr(r, c)
            cells.append(f"{v:>12}" if isinstance(v, (int, bool)) else f"{v:>12.5g}")
        print(" ".join(cells))
        if r.error:
            print(f"  n={r.n_target}: {r.error}", file=sys.stderr)
    print(f"wrote {len(STUDY_COLUMNS)}-column study.csv to {args.out}")
    return EXIT_FLAGGED if any(r.flagged for r in records) else EXIT_OK


def _cmd_check(args) -> int:
    results = run_checks(samples=args.samples, seed=args.seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_ERROR


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_check(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"hessadapt: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
