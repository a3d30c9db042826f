"""Experiment plans: config parsing, method x seed grids, result files and plots.

Config files are INI-style (``[section]`` headers, ``key = value`` lines)::

    [stream]
    kind = synthetic            ; permuted | split | synthetic
    num_tasks = 5
    examples_per_task = 1000    ; 0 = everything available
    cv_tasks = 0
    seed = 0
    base = synthetic            ; permuted/split only: synthetic | mnist
    mnist_dir = data/mnist
    base_train = 2000           ; synthetic base / MNIST subsample size (0 = all)
    base_test = 1000

    [network]
    hidden = 32,32

    [run]
    methods = van,agem,mega1,mega2
    seeds = 0,1,2
    lr = 0.1
    batch_size = 10
    ref_batch_size = 128
    mem_capacity = 250
    epsilon = auto              ; mega1 only; auto = search on the CV tasks
    eval_batches = 10

    [output]
    dir = results
    plots = true
    trace = false
    wall_time = true
    workers = 1
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .continuum import (DEFAULT_EPSILON_GRID, RunConfig, RunFailedError, read_trace, run_continuum,
                        search_epsilon, trace_to_csv)
from .net import NetworkSpec
from .plots import bar_chart, emit_accuracy_plot, emit_lca_plot
from .tasks import StreamConfig, TaskSpec, load_mnist, make_stream, partition_cv, synthetic_base

RESULT_FIELDS = ("method", "seed", "A_T", "F_T", "LCA_10", "wall_time_s")
METRIC_FIELDS = ("A_T", "F_T", "LCA_10")


@dataclass
class ExperimentPlan:
    stream_cfg: StreamConfig
    run_cfgs: list[RunConfig]
    output_dir: Path
    emit_plots: bool = True
    emit_trace: bool = False
    hidden: tuple[int, ...] = (32, 32)
    base: str = "synthetic"
    mnist_dir: str | None = None
    base_train: int = 2000
    base_test: int = 1000
    record_wall_time: bool = True
    workers: int = 1
    epsilon_grid: tuple[float, ...] = DEFAULT_EPSILON_GRID
    auto_epsilon: bool = False

    def __post_init__(self):
        self.output_dir = Path(self.output_dir)
        seen = set()
        for cfg in self.run_cfgs:
            key = (cfg.method, cfg.seed)
            if key in seen:
                raise ValueError(f"seed {cfg.seed} repeated for method {cfg.method}")
            seen.add(key)


@dataclass
class ResultsTable:
    rows: list[dict]
    aggregates: dict
    failures: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        return results_csv(self.rows)


# --- configuration ---------------------------------------------------------

def _ints(text: str) -> list[int]:
    return [int(x) for x in str(text).replace(" ", "").split(",") if x]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    val = str(text).strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def plan_from_config(path=None, overrides: dict | None = None) -> ExperimentPlan:
    """Build a plan from an INI file, with ``overrides`` (flat keys) winning."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path is not None:
        with open(path) as fh:
            cp.read_file(fh)
    flat: dict[str, str] = {}
    for section in cp.sections():
        flat.update(cp[section])
    for key, val in (overrides or {}).items():
        if val is not None:
            flat[key] = val

    def get(key, default):
        return flat.get(key, default)

    kind = get("kind", "synthetic")
    stream_cfg = StreamConfig(
        kind=kind,
        num_tasks=int(get("num_tasks", 5)),
        examples_per_task=int(get("examples_per_task", 0)),
        cv_tasks=int(get("cv_tasks", 0)),
        seed=int(get("stream_seed", get("seed", 0))),
        input_dim=int(get("input_dim", 20)),
        num_classes=int(get("num_classes", 5)),
        test_per_task=int(get("test_per_task", 500)),
        cluster_std=float(get("cluster_std", 1.0)),
        cluster_spread=float(get("cluster_spread", 2.0)),
    )
    methods = [m.strip() for m in str(get("methods", get("method", "van,agem,mega1,mega2"))).split(",") if m.strip()]
    seeds = _ints(get("seeds", "0"))
    eps_raw = str(get("epsilon", "auto"))
    epsilon = None if eps_raw == "auto" else float(eps_raw)
    default_ref = 256 if kind == "permuted" else 128
    run_cfgs = []
    for method in methods:
        for seed in seeds:
            run_cfgs.append(RunConfig(
                method=method,
                lr=float(get("lr", 0.1)),
                batch_size=int(get("batch_size", 10)),
                ref_batch_size=int(get("ref_batch_size", default_ref)),
                mem_capacity=int(get("mem_capacity", get("memory_per_task", 250))),
                epsilon=(epsilon if epsilon is not None else 1e-3) if method == "mega1" else None,
                seed=seed,
                eval_batches=int(get("eval_batches", 10)),
                memory_mode=get("memory_mode", "reservoir"),
            ))
    plan = ExperimentPlan(
        stream_cfg=stream_cfg,
        run_cfgs=run_cfgs,
        output_dir=get("dir", get("output", "results")),
        emit_plots=_bool(get("plots", True)),
        emit_trace=_bool(get("trace", False)),
        hidden=tuple(_ints(get("hidden", "32,32"))),
        base=get("base", "synthetic"),
        mnist_dir=get("mnist_dir", None),
        base_train=int(get("base_train", 2000)),
        base_test=int(get("base_test", 1000)),
        record_wall_time=_bool(get("wall_time", True)),
        workers=int(get("workers", 1)),
        auto_epsilon=epsilon is None and stream_cfg.cv_tasks > 0,
    )
    return plan


# --- data ------------------------------------------------------------------

def build_stream(plan: ExperimentPlan) -> list[TaskSpec]:
    cfg = plan.stream_cfg
    if cfg.kind == "synthetic":
        return make_stream(cfg)
    if plan.base == "mnist":
        if not plan.mnist_dir:
            raise ValueError("base = mnist needs mnist_dir")
        train, test = load_mnist(plan.mnist_dir)
        if plan.base_train:
            train = train.take(np.arange(min(plan.base_train, len(train))))
        if plan.base_test:
            test = test.take(np.arange(min(plan.base_test, len(test))))
        base = (train, test)
    elif plan.base == "synthetic":
        n_classes = cfg.num_classes * (cfg.num_tasks if cfg.kind == "split" else 1)
        base = synthetic_base(plan.base_train, plan.base_test, cfg.input_dim, n_classes, cfg.seed,
                              cfg.cluster_std, cfg.cluster_spread)
    else:
        raise ValueError(f"unknown base dataset {plan.base!r}")
    return make_stream(cfg, base)


def network_for(stream: list[TaskSpec], hidden) -> NetworkSpec:
    classes = 1 + max(int(max(t.train.labels.max(), t.test.labels.max())) for t in stream)
    heads = 1 + max(t.head for t in stream)
    return NetworkSpec(stream[0].train.inputs.shape[1], tuple(hidden), heads, classes)


# --- results ---------------------------------------------------------------

def _num(x) -> str:
    return repr(float(x))


def results_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_FIELDS)
    for r in rows:
        wall = "" if r.get("wall_time_s") is None else _num(r["wall_time_s"])
        writer.writerow([r["method"], r["seed"], _num(r["A_T"]), _num(r["F_T"]), _num(r["LCA_10"]), wall])
    return buf.getvalue()


def parse_results_csv(text: str) -> list[dict]:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append({
            "method": r["method"],
            "seed": int(r["seed"]),
            **{k: float(r[k]) for k in METRIC_FIELDS},
            "wall_time_s": float(r["wall_time_s"]) if r["wall_time_s"] else None,
        })
    return rows


def aggregate(rows: list[dict]) -> dict:
    """Mean and sample std per method; std only with two or more seeds."""
    out = {}
    for method in sorted({r["method"] for r in rows}):
        mine = [r for r in rows if r["method"] == method]
        agg = {"runs": len(mine)}
        for key in METRIC_FIELDS + ("wall_time_s",):
            vals = [r[key] for r in mine if r.get(key) is not None and not math.isnan(r[key])]
            if not vals:
                continue
            agg[f"{key}_mean"] = statistics.fmean(vals)
            if len(vals) >= 2:
                agg[f"{key}_std"] = statistics.stdev(vals)
        out[method] = agg
    return out


def mean_curves(runs: list[dict], key: str) -> dict[str, list[float]]:
    curves = {}
    for method in sorted({r["method"] for r in runs}):
        series = [r[key] for r in runs if r["method"] == method and r.get(key)]
        if series:
            curves[method] = [math.fsum(vals) / len(vals) for vals in zip(*series)]
    return curves


def _execute(args):
    spec, stream, cfg, record_wall_time = args
    start = time.perf_counter()
    try:
        res = run_continuum(spec, stream, cfg)
    except RunFailedError as exc:
        return cfg, None, exc, None
    wall = time.perf_counter() - start if record_wall_time else None
    return cfg, res, None, wall


def run_plan(plan: ExperimentPlan) -> ResultsTable:
    """Run every (method, seed) of the plan and write results under ``output_dir``."""
    stream = build_stream(plan)
    cv, ev = partition_cv(stream, plan.stream_cfg)
    spec = network_for(stream, plan.hidden)

    run_cfgs = list(plan.run_cfgs)
    best_eps = None
    mega1 = next((c for c in run_cfgs if c.method == "mega1"), None)
    if plan.auto_epsilon and cv and mega1 is not None:
        best_eps = search_epsilon(spec, cv, plan.epsilon_grid, replace(mega1, seed=0))
        run_cfgs = [replace(c, epsilon=best_eps) if c.method == "mega1" else c for c in run_cfgs]
    run_cfgs.sort(key=lambda c: (c.method, c.seed))

    out = plan.output_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc

    jobs = [(spec, ev, cfg, plan.record_wall_time) for cfg in run_cfgs]
    if plan.workers > 1:
        with ProcessPoolExecutor(plan.workers) as pool:
            outcomes = list(pool.map(_execute, jobs))
    else:
        outcomes = [_execute(job) for job in jobs]

    rows, runs, failures, traces = [], [], [], []
    for cfg, res, err, wall in outcomes:
        run_dir = out / "runs" / f"{cfg.method}_seed{cfg.seed}"
        if err is not None:
            run_dir.mkdir(parents=True, exist_ok=True)
            trace_to_csv(err.trace, run_dir / "trace.csv", failure=str(err))
            failures.append({"method": cfg.method, "seed": cfg.seed, "step": err.step, "error": str(err)})
            continue
        row = {"method": cfg.method, "seed": cfg.seed, "A_T": res.report["A_T"], "F_T": res.report["F_T"],
               "LCA_10": res.report["LCA"], "wall_time_s": wall}
        rows.append(row)
        runs.append({**{k: _nan_to_none(v) for k, v in row.items()}, "epsilon": cfg.epsilon,
                     "A_curve": res.report["A_curve"], "Z_curve": res.report["Z_curve"]})
        if plan.emit_trace:
            run_dir.mkdir(parents=True, exist_ok=True)
            trace_to_csv(res.trace, run_dir / "trace.csv")
            res.matrix.to_csv(run_dir / "accuracy.csv")
        traces.append((cfg.method, res.trace))

    table = ResultsTable(rows, aggregate(rows), failures)
    (out / "results.csv").write_text(results_csv(rows))
    payload = {
        "runs": runs,
        "aggregates": table.aggregates,
        "accuracy_curves": mean_curves(runs, "A_curve"),
        "learning_curves": mean_curves(runs, "Z_curve"),
        "failures": failures,
        "epsilon": best_eps,
    }
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default, allow_nan=False)
    (out / "metrics.json").write_text(text + "\n")

    if plan.emit_plots:
        plots = out / "plots"
        plots.mkdir(exist_ok=True)
        emit_accuracy_plot(payload["accuracy_curves"], plots / "avg_accuracy.svg")
        emit_lca_plot(payload["learning_curves"], plots / "lca.svg")
        # the norm-ratio analysis is defined on MEGA-I runs; use any k2 source otherwise
        chosen = [tr for m, tr in traces if m == "mega1"] or [tr for _, tr in traces]
        try:
            emit_k2_plot(k2_histogram(chosen), plots / "k2_hist.svg")
        except ValueError:
            pass  # no run produced k2 values (e.g. only van/gem)
    return table


def _nan_to_none(x):
    return None if isinstance(x, float) and math.isnan(x) else x


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj)}")


# --- k2 analysis -----------------------------------------------------------

@dataclass
class K2Histogram:
    edges: list[float]
    counts: list[int]
    underflow: int
    overflow: int
    fraction_below_one: float
    total: int


def k2_histogram(traces, bins: int | list[float] = 31, lo: float = -3.0, hi: float = 3.0) -> K2Histogram:
    """Histogram of log10(k2) over every step that has a defined k2.

    ``traces`` holds trace row lists or paths to trace CSV files. Zero k2 goes
    to the underflow bin and infinite k2 to the overflow bin, along with
    anything outside the bin range.
    """
    values = []
    for tr in traces:
        rows = read_trace(tr) if isinstance(tr, (str, Path)) else tr
        values.extend(float(r["k2"]) for r in rows if not math.isnan(float(r["k2"])))
    if not values:
        raise ValueError("no k2 values in the given traces")
    edges = np.asarray(bins, dtype=float) if not np.isscalar(bins) else np.linspace(lo, hi, int(bins) + 1)
    k2 = np.asarray(values)
    finite = (k2 > 0) & np.isfinite(k2)
    logs = np.log10(k2[finite])
    inside = (logs >= edges[0]) & (logs <= edges[-1])
    counts, _ = np.histogram(logs[inside], bins=edges)
    under = int(np.sum(k2 == 0) + np.sum(logs < edges[0]))
    over = int(np.sum(np.isinf(k2)) + np.sum(logs > edges[-1]))
    return K2Histogram([float(e) for e in edges], [int(c) for c in counts], under, over,
                       float(np.mean(k2 < 1.0)), len(values))


def emit_k2_plot(hist: K2Histogram, path) -> str:
    svg = bar_chart(hist.edges, hist.counts, "Gradient-norm ratio", "log10(k2)",
                    extra={"fraction_k2_below_1": hist.fraction_below_one, "underflow": hist.underflow,
                           "overflow": hist.overflow})
    Path(path).write_text(svg)
    return svg
