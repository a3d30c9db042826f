"""Single-pass sequential training over a task stream with episodic memory."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics as M
from .memory import EmptyMemoryError, EpisodicMemory
from .mixing import MixInputs, mix_agem, mix_gem, mix_mega1, mix_mega2, mix_van
from .net import Batch, NetworkSpec, NumericOverflowError, evaluate, init_params, loss_and_grad, sgd_step
from .tasks import Dataset, TaskSpec

METHODS = ("van", "gem", "agem", "mega1", "mega2", "multitask")
DEFAULT_EPSILON_GRID = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)
TRACE_FIELDS = ("step", "task", "loss_t", "loss_ref", "g_norm", "gref_norm", "theta_tilde", "theta", "k1", "k2")

# rng purposes
_SHUFFLE, _MEMORY, _REFERENCE = 21, 22, 23


class RunFailedError(RuntimeError):
    """A run aborted mid-way; carries the step index and the trace so far."""

    def __init__(self, step: int, cause: Exception, trace: list[dict]):
        super().__init__(f"run aborted at step {step}: {cause}")
        self.step = step
        self.cause = cause
        self.trace = trace


@dataclass(frozen=True)
class RunConfig:
    method: str = "mega2"
    lr: float = 0.1
    batch_size: int = 10
    ref_batch_size: int = 256
    mem_capacity: int = 250
    epsilon: float | None = None
    seed: int = 0
    eval_batches: int = 10
    memory_mode: str = "reservoir"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.lr <= 0 or self.batch_size < 1 or self.ref_batch_size < 1 or self.mem_capacity < 1:
            raise ValueError("lr, batch sizes and memory capacity must be positive")
        if self.eval_batches < 0:
            raise ValueError("eval_batches must be nonnegative")
        if self.method == "mega1":
            if self.epsilon is None or self.epsilon <= 0:
                raise ValueError("mega1 needs a positive epsilon")
        elif self.epsilon is not None:
            raise ValueError(f"epsilon only applies to mega1, not {self.method}")


@dataclass
class RunResult:
    matrix: M.AccuracyMatrix
    report: dict
    trace: list[dict] = field(repr=False)
    final_params: np.ndarray = field(repr=False)


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[s:s + size] for s in range(0, n, size)]


def _accuracy(spec, w, task: TaskSpec) -> float:
    return evaluate(spec, w, [Batch(task.test.inputs, task.test.labels, task.head)])


def _report(matrix: M.AccuracyMatrix, T: int, beta: int) -> dict:
    report = {"A_T": M.average_accuracy(matrix, T)}
    report["F_T"] = M.forgetting(matrix, T) if T >= 2 else math.nan
    report["LCA"] = M.lca(matrix, beta, T)
    report["A_curve"] = M.accuracy_curve(matrix, T)
    report["Z_curve"] = M.learning_curve(matrix, beta, T)
    return report


def _trace_row(step, task, loss_t, g_norm, diag=None, loss_ref=math.nan):
    diag = diag or {}
    return {
        "step": step,
        "task": task,
        "loss_t": loss_t,
        "loss_ref": loss_ref,
        "g_norm": g_norm,
        "gref_norm": diag.get("gref_norm", math.nan),
        "theta_tilde": diag.get("theta_tilde", math.nan),
        "theta": diag.get("theta", math.nan),
        "k1": diag.get("k1", math.nan),
        "k2": diag.get("k2", math.nan),
    }


def _mixed_gradient(cfg: RunConfig, spec, w, cur, memory: EpisodicMemory, t: int, ref_rng):
    """Strategy-specific update direction plus a trace row fragment."""
    g = cur.grad
    if cfg.method == "van" or t == 0:
        return mix_van(g=g).mixed, {}, math.nan
    if cfg.method == "gem":
        refs = memory.per_task_ref_grads(spec, w, t)
        dec = mix_gem(g, [r.grad for r in refs])
        return dec.mixed, {}, math.fsum(r.loss for r in refs) / len(refs)
    try:
        ref_batch = memory.sample_ref_batch(t, cfg.ref_batch_size, ref_rng)
    except EmptyMemoryError:
        return mix_van(g=g).mixed, {}, math.nan
    ref = loss_and_grad(spec, w, ref_batch)
    inp = MixInputs(g, cur.loss, ref.grad, ref.loss)
    if cfg.method == "agem":
        dec = mix_agem(inp)
    elif cfg.method == "mega1":
        dec = mix_mega1(inp, cfg.epsilon)
    else:
        dec = mix_mega2(inp)
    return dec.mixed, dec.diagnostics, ref.loss


def run_continuum(spec: NetworkSpec, stream: Sequence[TaskSpec], cfg: RunConfig) -> RunResult:
    """Train on each task's data once, in order, mixing in episodic memory.

    Stream positions (not ``task_id`` values) index tasks internally, so a
    stream that starts after a cross-validation segment behaves the same as
    one that starts at zero.
    """
    if not stream:
        raise ValueError("empty task stream")
    if cfg.method == "multitask":
        return run_multitask(spec, stream, cfg)
    if max(task.head for task in stream) >= spec.heads:
        raise ValueError("stream uses more heads than the network has")

    w = init_params(spec, cfg.seed)
    memory = EpisodicMemory(cfg.mem_capacity, np.random.default_rng([cfg.seed, _MEMORY]), cfg.memory_mode)
    ref_rng = np.random.default_rng([cfg.seed, _REFERENCE])
    matrix = M.AccuracyMatrix()
    trace: list[dict] = []
    step = 0

    for t, task in enumerate(stream):
        k = t + 1
        batches = _batches(len(task.train), cfg.batch_size, np.random.default_rng([cfg.seed, _SHUFFLE, t]))
        try:
            matrix.record(k, 0, k, _accuracy(spec, w, task))
            for b, idx in enumerate(batches, start=1):
                batch = Batch(task.train.inputs[idx], task.train.labels[idx], task.head)
                cur = loss_and_grad(spec, w, batch)
                mixed, diag, loss_ref = _mixed_gradient(cfg, spec, w, cur, memory, t, ref_rng)
                w = sgd_step(w, mixed, cfg.lr)
                if not np.all(np.isfinite(w)):
                    raise NumericOverflowError("non-finite parameters after update")
                trace.append(_trace_row(step, t, cur.loss, float(np.linalg.norm(cur.grad)), diag, loss_ref))
                step += 1
                if cfg.method != "van":
                    memory.offer_batch(t, batch.inputs, batch.labels, task.head)
                if b <= cfg.eval_batches:
                    matrix.record(k, b, k, _accuracy(spec, w, task))
            matrix.set_batches(k, len(batches))
            for j, old in enumerate(stream[:k], start=1):
                matrix.record(k, len(batches), j, _accuracy(spec, w, old))
        except (NumericOverflowError, ArithmeticError) as exc:
            # ``step`` is the update that failed or, for an evaluation, the next one
            raise RunFailedError(step, exc, trace) from exc

    T = len(stream)
    return RunResult(matrix, _report(matrix, T, cfg.eval_batches), trace, w)


def run_multitask(spec: NetworkSpec, stream: Sequence[TaskSpec], cfg: RunConfig) -> RunResult:
    """One shuffled pass of plain SGD over every task's training data pooled."""
    if not stream:
        raise ValueError("empty task stream")
    X = np.concatenate([task.train.inputs for task in stream])
    y = np.concatenate([task.train.labels for task in stream])
    heads = np.concatenate([np.full(len(task.train), task.head, dtype=np.int64) for task in stream])
    tasks_of = np.concatenate([np.full(len(task.train), t) for t, task in enumerate(stream)])

    w = init_params(spec, cfg.seed)
    trace = []
    batches = _batches(len(y), cfg.batch_size, np.random.default_rng([cfg.seed, _SHUFFLE, 0]))
    for step, idx in enumerate(batches):
        batch = Batch(X[idx], y[idx], heads[idx] if len(stream) > 1 else stream[0].head)
        try:
            cur = loss_and_grad(spec, w, batch)
            w = sgd_step(w, cur.grad, cfg.lr)
        except (NumericOverflowError, ArithmeticError) as exc:
            raise RunFailedError(step, exc, trace) from exc
        trace.append(_trace_row(step, int(tasks_of[idx[0]]), cur.loss, float(np.linalg.norm(cur.grad))))

    T = len(stream)
    matrix = M.AccuracyMatrix()
    matrix.set_batches(T, len(batches))
    for j, task in enumerate(stream, start=1):
        matrix.record(T, len(batches), j, _accuracy(spec, w, task))
    report = {"A_T": M.average_accuracy(matrix, T), "F_T": math.nan, "LCA": math.nan,
              "A_curve": [], "Z_curve": []}
    return RunResult(matrix, report, trace, w)


def repeat_passes(stream: Sequence[TaskSpec], passes: int) -> list[TaskSpec]:
    """Tile each task's training set ``passes`` times (cross-validation only)."""
    if passes == 1:
        return list(stream)
    return [replace(task, train=Dataset(np.tile(task.train.inputs, (passes, 1)),
                                        np.tile(task.train.labels, passes))) for task in stream]


def search_epsilon(spec: NetworkSpec, cv_tasks: Sequence[TaskSpec], grid: Sequence[float] = DEFAULT_EPSILON_GRID,
                   cfg: RunConfig | None = None, passes: int = 1) -> float:
    """Epsilon with the best final average accuracy on the cross-validation tasks.

    Ties go to the smaller epsilon.
    """
    if not cv_tasks:
        raise ValueError("no cross-validation tasks")
    if not grid:
        raise ValueError("empty epsilon grid")
    base = cfg or RunConfig(method="mega1", epsilon=grid[0])
    stream = repeat_passes(cv_tasks, passes)
    best_eps, best_acc = None, -math.inf
    for eps in sorted(grid):
        run_cfg = replace(base, method="mega1", epsilon=eps)
        acc = run_continuum(spec, stream, run_cfg).report["A_T"]
        if acc > best_acc:
            best_eps, best_acc = eps, acc
    return best_eps


def trace_to_csv(trace: Sequence[dict], path=None, failure: str | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_FIELDS)
    for row in trace:
        writer.writerow([row[f] if isinstance(row[f], int) else repr(float(row[f])) for f in TRACE_FIELDS])
    if failure is not None:
        writer.writerow(["FAILED", failure] + [""] * (len(TRACE_FIELDS) - 2))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_trace(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["step"] == "FAILED":
                continue
            rows.append({k: (int(v) if k in ("step", "task") else float(v)) for k, v in row.items()})
    return rows
