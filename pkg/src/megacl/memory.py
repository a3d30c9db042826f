from __future__ import annotations

import numpy as np

from .net import Batch, NetworkSpec, loss_and_grad


class EmptyMemoryError(LookupError):
    """No past task has stored examples yet; train on the current gradient only."""


class EpisodicMemory:
    """Bounded per-task example stores filled online.

    ``mode="reservoir"`` keeps a uniform random subset of everything offered
    for a task. ``mode="ring"`` keeps the most recent ``capacity`` examples.
    """

    def __init__(self, capacity_per_task: int, seed: int | np.random.Generator = 0, mode: str = "reservoir"):
        if capacity_per_task < 1:
            raise ValueError("capacity must be positive")
        if mode not in ("reservoir", "ring"):
            raise ValueError(f"unknown memory mode {mode!r}")
        self.capacity_per_task = capacity_per_task
        self.mode = mode
        self.rng = np.random.default_rng(seed)
        self.stores: dict[int, list[tuple[np.ndarray, int]]] = {}
        self.heads: dict[int, int] = {}
        self.seen_counts: dict[int, int] = {}
        self._union_cache = None

    def offer(self, task_id: int, x: np.ndarray, y: int, head: int = 0) -> None:
        store = self.stores.setdefault(task_id, [])
        self.heads[task_id] = head
        n = self.seen_counts.get(task_id, 0) + 1
        self.seen_counts[task_id] = n
        item = (np.asarray(x, dtype=np.float64), int(y))
        if self._union_cache is not None and task_id < self._union_cache[0][0]:
            self._union_cache = None
        if len(store) < self.capacity_per_task:
            store.append(item)
        elif self.mode == "ring":
            store[(n - 1) % self.capacity_per_task] = item
        else:
            slot = self.rng.integers(n)
            if slot < self.capacity_per_task:
                store[slot] = item

    def offer_batch(self, task_id: int, inputs: np.ndarray, labels: np.ndarray, head: int = 0) -> None:
        for x, y in zip(inputs, labels):
            self.offer(task_id, x, y, head)

    def _past(self, current_task: int) -> list[int]:
        return sorted(t for t, s in self.stores.items() if t < current_task and s)

    def store_batch(self, task_id: int) -> Batch:
        store = self.stores.get(task_id)
        if not store:
            raise EmptyMemoryError(f"no stored examples for task {task_id}")
        return Batch(np.stack([x for x, _ in store]), np.array([y for _, y in store]), self.heads[task_id])

    def sample_ref_batch(self, current_task: int, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform draw with replacement from the union of stores of tasks before ``current_task``.

        When the union holds no more than ``batch_size`` examples it is
        returned whole, once.
        """
        past = self._past(current_task)
        if not past:
            raise EmptyMemoryError(f"memory holds nothing from tasks before {current_task}")
        key = (current_task, tuple(past))
        if self._union_cache is None or self._union_cache[0] != key:
            X = np.stack([x for t in past for x, _ in self.stores[t]])
            y = np.array([y for t in past for _, y in self.stores[t]])
            h = np.array([self.heads[t] for t in past for _ in self.stores[t]], dtype=np.int64)
            self._union_cache = (key, X, y, h)
        _, X, y, h = self._union_cache
        if len(y) <= batch_size:
            return Batch(X.copy(), y.copy(), h.copy())
        idx = rng.integers(len(y), size=batch_size)
        return Batch(X[idx], y[idx], h[idx])

    def per_task_ref_grads(self, spec: NetworkSpec, w: np.ndarray, current_task: int):
        """Full-store loss and gradient for every task before ``current_task``."""
        out = []
        for t in range(current_task):
            if not self.stores.get(t):
                raise EmptyMemoryError(f"store for past task {t} is empty")
            out.append(loss_and_grad(spec, w, self.store_batch(t)))
        return out
