"""Average accuracy, forgetting, and learning-curve area from an accuracy matrix.

Tasks are numbered from 1 in memory (``k``, ``j``), matching the usual
notation; the minibatch index ``i`` counts completed updates on task ``k``, so
``i = 0`` is the zero-shot evaluation and ``i = N_k`` the end of the task.

CSV schema (``k,i,j,accuracy``) stores ``k`` and ``j`` 0-based; ``i`` is
written as-is. ``N_k`` is recovered as the largest ``i`` recorded for ``k``.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path


class MissingEntriesError(KeyError):
    def __init__(self, missing):
        super().__init__(f"accuracy matrix lacks entries {sorted(missing)}")
        self.missing = sorted(missing)


class UndefinedMetricError(ValueError):
    pass


class AccuracyMatrix:
    def __init__(self):
        self.entries: dict[tuple[int, int, int], float] = {}
        self.per_task_batches: dict[int, int] = {}

    def record(self, k: int, i: int, j: int, accuracy: float) -> None:
        if not 0.0 <= accuracy <= 1.0:
            raise ValueError(f"accuracy {accuracy} outside [0, 1]")
        self.entries[(k, i, j)] = float(accuracy)

    def set_batches(self, k: int, n: int) -> None:
        self.per_task_batches[k] = n

    def final(self, k: int, j: int) -> float:
        return self.entries[(k, self.per_task_batches[k], j)]

    def _require(self, keys):
        missing = [key for key in keys if key not in self.entries]
        if missing:
            raise MissingEntriesError(missing)

    def _end_key(self, k, j):
        if k not in self.per_task_batches:
            raise MissingEntriesError([(k, "N_k", j)])
        return (k, self.per_task_batches[k], j)

    @property
    def num_tasks(self) -> int:
        return max(self.per_task_batches, default=0)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "i", "j", "accuracy"])
        for (k, i, j), acc in sorted(self.entries.items()):
            writer.writerow([k - 1, i, j - 1, repr(acc)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "AccuracyMatrix":
        text = source if "\n" in str(source) else Path(source).read_text()
        m = cls()
        for row in csv.DictReader(io.StringIO(text)):
            k, i, j = int(row["k"]) + 1, int(row["i"]), int(row["j"]) + 1
            m.record(k, i, j, float(row["accuracy"]))
            m.per_task_batches[k] = max(m.per_task_batches.get(k, 0), i)
        return m


def average_accuracy(m: AccuracyMatrix, k: int) -> float:
    keys = [m._end_key(k, j) for j in range(1, k + 1)]
    m._require(keys)
    return math.fsum(m.entries[key] for key in keys) / k


def forgetting(m: AccuracyMatrix, k: int) -> float:
    """Mean drop from each old task's best earlier end-of-task accuracy.

    Task ``j`` is only evaluated once it has been trained, so the best is
    taken over ``l = j..k-1``.
    """
    if k < 2:
        raise UndefinedMetricError("forgetting needs at least two tasks")
    keys = [m._end_key(l, j) for j in range(1, k) for l in range(j, k + 1)]
    m._require(keys)
    drops = []
    for j in range(1, k):
        best = max(m.final(l, j) for l in range(j, k))
        drops.append(best - m.final(k, j))
    return math.fsum(drops) / (k - 1)


def lca(m: AccuracyMatrix, beta: int, T: int) -> float:
    return math.fsum(learning_curve(m, beta, T)) / (beta + 1)


def learning_curve(m: AccuracyMatrix, beta: int, T: int) -> list[float]:
    """``Z_b`` for ``b = 0..beta``: mean accuracy on the current task after ``b`` updates.

    A task with fewer than ``beta`` minibatches keeps its end-of-task
    accuracy for the remaining ``b``.
    """
    def key(k, b):
        n = m.per_task_batches.get(k)
        return (k, b if n is None else min(b, n), k)

    m._require([key(k, b) for k in range(1, T + 1) for b in range(beta + 1)])
    return [math.fsum(m.entries[key(k, b)] for k in range(1, T + 1)) / T for b in range(beta + 1)]


def accuracy_curve(m: AccuracyMatrix, T: int) -> list[float]:
    """``A_k`` for ``k = 1..T``."""
    return [average_accuracy(m, k) for k in range(1, T + 1)]
