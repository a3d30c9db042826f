from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .continuum import DEFAULT_EPSILON_GRID, search_epsilon
from .harness import build_stream, emit_k2_plot, k2_histogram, network_for, plan_from_config, run_plan
from .tasks import partition_cv

log = logging.getLogger("megacl")


def _run_overrides(args) -> dict:
    return {
        "methods": args.method,
        "kind": args.dataset,
        "num_tasks": args.tasks,
        "examples_per_task": args.examples_per_task,
        "mem_capacity": args.memory_per_task,
        "batch_size": args.batch_size,
        "ref_batch_size": args.ref_batch_size,
        "lr": args.lr,
        "epsilon": args.epsilon,
        "seeds": args.seeds,
        "dir": args.output,
        "plots": "false" if args.no_plots else None,
        "trace": "true" if args.trace else None,
        "workers": args.workers,
    }


def cmd_run(args) -> int:
    plan = plan_from_config(args.config, {k: (None if v is None else str(v)) for k, v in _run_overrides(args).items()})
    table = run_plan(plan)
    for method, agg in table.aggregates.items():
        parts = [f"{key}={agg[key + '_mean']:.4f}" + (f"±{agg[key + '_std']:.4f}" if key + "_std" in agg else "")
                 for key in ("A_T", "F_T", "LCA_10") if key + "_mean" in agg]
        print(f"{method:10s} " + "  ".join(parts))
    for fail in table.failures:
        print(f"FAILED {fail['method']} seed {fail['seed']}: {fail['error']}", file=sys.stderr)
    print(f"results written to {plan.output_dir}")
    return 1 if table.failures else 0


def cmd_k2_hist(args) -> int:
    paths = sorted(Path(args.traces).rglob("trace.csv")) if Path(args.traces).is_dir() else [Path(args.traces)]
    if not paths:
        print(f"no trace.csv files under {args.traces}", file=sys.stderr)
        return 1
    hist = k2_histogram(paths, bins=args.bins)
    print(f"steps with k2: {hist.total}")
    print(f"fraction k2 < 1: {hist.fraction_below_one:.4%}")
    print(f"underflow: {hist.underflow}  overflow: {hist.overflow}")
    for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
        if c:
            print(f"[{lo:+.3f}, {hi:+.3f})  {c}")
    if args.svg:
        emit_k2_plot(hist, args.svg)
    return 0


def cmd_search_epsilon(args) -> int:
    plan = plan_from_config(args.config)
    stream = build_stream(plan)
    cv, _ = partition_cv(stream, plan.stream_cfg)
    if not cv:
        print("config has cv_tasks = 0; nothing to search on", file=sys.stderr)
        return 1
    spec = network_for(stream, plan.hidden)
    base = next((c for c in plan.run_cfgs if c.method == "mega1"), None)
    grid = [float(x) for x in args.grid.split(",")] if args.grid else list(DEFAULT_EPSILON_GRID)
    best = search_epsilon(spec, cv, grid, base, passes=args.passes)
    print(best)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="megacl", description="Episodic-memory continual learning benchmarks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a method x seed experiment plan")
    run.add_argument("--config", type=Path)
    run.add_argument("--method", help="one method or a comma-separated list")
    run.add_argument("--dataset", choices=["permuted", "split", "synthetic"])
    run.add_argument("--tasks", type=int)
    run.add_argument("--examples-per-task", type=int)
    run.add_argument("--memory-per-task", type=int)
    run.add_argument("--batch-size", type=int)
    run.add_argument("--ref-batch-size", type=int)
    run.add_argument("--lr", type=float)
    run.add_argument("--epsilon")
    run.add_argument("--seeds")
    run.add_argument("--output")
    run.add_argument("--workers", type=int)
    run.add_argument("--no-plots", action="store_true")
    run.add_argument("--trace", action="store_true")
    run.set_defaults(func=cmd_run)

    analyze = sub.add_parser("analyze", help="post-hoc analyses of saved traces")
    asub = analyze.add_subparsers(dest="analysis", required=True)
    k2 = asub.add_parser("k2-hist", help="histogram of log10 gradient-norm ratios")
    k2.add_argument("--traces", required=True, help="trace.csv file or directory searched recursively")
    k2.add_argument("--bins", type=int, default=31)
    k2.add_argument("--svg", type=Path)
    k2.set_defaults(func=cmd_k2_hist)

    eps = sub.add_parser("search-epsilon", help="pick the MEGA-I loss threshold on the CV tasks")
    eps.add_argument("--config", type=Path, required=True)
    eps.add_argument("--grid", help="comma-separated epsilon values")
    eps.add_argument("--passes", type=int, default=1)
    eps.set_defaults(func=cmd_search_epsilon)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
