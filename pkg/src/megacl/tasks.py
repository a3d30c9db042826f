"""Task sequences for continual learning: permuted-input tasks, disjoint
class splits, Gaussian-cluster tasks, and MNIST-style IDX ingestion."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 2051  # 0x00000803
IDX_LABELS_MAGIC = 2049  # 0x00000801

# child-seed purposes, so a task's randomness never depends on other tasks
_PERMUTE, _SUBSAMPLE, _SPLIT, _CLUSTERS = 11, 12, 13, 14


class IdxFormatError(ValueError):
    pass


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    def __init__(self, path, offset, expected):
        super().__init__(f"{path}: truncated at byte offset {offset}, expected {expected} bytes")
        self.offset = offset


class IdxCountMismatchError(IdxFormatError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def take(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx])


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    train: Dataset
    test: Dataset
    head: int = 0


@dataclass(frozen=True)
class StreamConfig:
    kind: str = "synthetic"
    num_tasks: int = 5
    examples_per_task: int = 0
    cv_tasks: int = 0
    seed: int = 0
    # synthetic-only knobs
    input_dim: int = 20
    num_classes: int = 5
    test_per_task: int = 500
    cluster_std: float = 1.0
    cluster_spread: float = 2.0

    def __post_init__(self):
        if self.kind not in ("permuted", "split", "synthetic"):
            raise ValueError(f"unknown stream kind {self.kind!r}")
        if self.num_tasks < 1:
            raise ValueError("num_tasks must be positive")
        if not 0 <= self.cv_tasks < self.num_tasks:
            raise ValueError("cv_tasks must satisfy 0 <= cv_tasks < num_tasks")
        if self.examples_per_task < 0:
            raise ValueError("examples_per_task must be nonnegative")


def _child_rng(seed: int, purpose: int, task: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, purpose, task])


def _read_header(buf: bytes, path, ndims: int):
    need = 4 * (1 + ndims)
    if len(buf) < need:
        raise IdxTruncatedError(path, len(buf), need)
    magic, *dims = struct.unpack(f">{1 + ndims}I", buf[:need])
    return magic, dims, need


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair; pixels come back scaled to [0, 1]."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    ibuf = images_path.read_bytes()
    lbuf = labels_path.read_bytes()

    magic, _, _ = _read_header(ibuf, images_path, 0)
    if magic != IDX_IMAGES_MAGIC:
        raise IdxMagicError(f"{images_path}: magic {magic}, expected {IDX_IMAGES_MAGIC} for images")
    magic, (count, rows, cols), off = _read_header(ibuf, images_path, 3)
    expected = off + count * rows * cols
    if len(ibuf) < expected:
        raise IdxTruncatedError(images_path, len(ibuf), expected)
    if len(ibuf) > expected:
        raise IdxCountMismatchError(f"{images_path}: {len(ibuf) - expected} trailing bytes after {count} images")

    lmagic, _, _ = _read_header(lbuf, labels_path, 0)
    if lmagic != IDX_LABELS_MAGIC:
        raise IdxMagicError(f"{labels_path}: magic {lmagic}, expected {IDX_LABELS_MAGIC} for labels")
    _, (lcount,), loff = _read_header(lbuf, labels_path, 1)
    if len(lbuf) < loff + lcount:
        raise IdxTruncatedError(labels_path, len(lbuf), loff + lcount)
    if len(lbuf) > loff + lcount:
        raise IdxCountMismatchError(f"{labels_path}: trailing bytes after {lcount} labels")
    if lcount != count:
        raise IdxCountMismatchError(f"{count} images but {lcount} labels")

    pixels = np.frombuffer(ibuf, dtype=np.uint8, offset=off).reshape(count, rows * cols)
    labels = np.frombuffer(lbuf, dtype=np.uint8, offset=loff).astype(np.int64)
    return Dataset(pixels.astype(np.float64) / 255.0, labels)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images (n, rows, cols) and labels (n,) in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, n)
                                  + np.asarray(labels, dtype=np.uint8).tobytes())


def load_mnist(directory) -> tuple[Dataset, Dataset]:
    d = Path(directory)
    train = load_idx(d / "train-images-idx3-ubyte", d / "train-labels-idx1-ubyte")
    test = load_idx(d / "t10k-images-idx3-ubyte", d / "t10k-labels-idx1-ubyte")
    return train, test


def task_permutation(seed: int, task: int, dim: int) -> np.ndarray:
    if task == 0:
        return np.arange(dim)
    return _child_rng(seed, _PERMUTE, task).permutation(dim)


def _subsample(data: Dataset, x: int, seed: int, task: int) -> Dataset:
    if x == 0:
        return data
    if x > len(data):
        raise ValueError(f"requested {x} examples per task but only {len(data)} available")
    idx = _child_rng(seed, _SUBSAMPLE, task).choice(len(data), size=x, replace=False)
    return data.take(np.sort(idx))


def make_permuted_stream(base_data: tuple[Dataset, Dataset], cfg: StreamConfig) -> list[TaskSpec]:
    """One task per input permutation; task 0 sees the data unpermuted.

    Only training sets are subsampled to ``examples_per_task``; test sets
    stay whole.
    """
    if cfg.kind != "permuted":
        raise ValueError("config kind must be 'permuted'")
    train, test = base_data
    if cfg.examples_per_task > len(train):
        raise ValueError(f"examples_per_task={cfg.examples_per_task} exceeds base size {len(train)}")
    dim = train.inputs.shape[1]
    tasks = []
    for t in range(cfg.num_tasks):
        perm = task_permutation(cfg.seed, t, dim)
        sub = _subsample(train, cfg.examples_per_task, cfg.seed, t)
        tasks.append(TaskSpec(
            t,
            Dataset(sub.inputs[:, perm], sub.labels),
            Dataset(test.inputs[:, perm], test.labels),
            head=0,
        ))
    return tasks


def make_split_stream(base_data: tuple[Dataset, Dataset], cfg: StreamConfig) -> list[TaskSpec]:
    """Disjoint class groups, one per task and head, labels remapped to 0..group-1."""
    if cfg.kind != "split":
        raise ValueError("config kind must be 'split'")
    train, test = base_data
    classes = np.unique(np.concatenate([train.labels, test.labels]))
    if len(classes) < cfg.num_tasks:
        raise ValueError(f"{len(classes)} classes cannot fill {cfg.num_tasks} tasks")
    if len(classes) % cfg.num_tasks:
        raise ValueError(f"{len(classes)} classes do not split evenly into {cfg.num_tasks} tasks")

    def select(data: Dataset, members: np.ndarray) -> Dataset:
        mask = np.isin(data.labels, members)
        remap = {int(c): i for i, c in enumerate(members)}
        return Dataset(data.inputs[mask], np.array([remap[int(c)] for c in data.labels[mask]], dtype=np.int64))

    tasks = []
    for t, members in enumerate(split_classes(cfg, classes)):
        tr = select(train, members)
        tasks.append(TaskSpec(t, _subsample(tr, cfg.examples_per_task, cfg.seed, t), select(test, members), head=t))
    return tasks


def split_classes(cfg: StreamConfig, classes) -> list[np.ndarray]:
    """Original class ids assigned to each task of a split stream."""
    classes = np.unique(np.asarray(classes))
    group = len(classes) // cfg.num_tasks
    order = _child_rng(cfg.seed, _SPLIT).permutation(classes)
    return [order[t * group:(t + 1) * group] for t in range(cfg.num_tasks)]


def cluster_means(rng: np.random.Generator, num_classes: int, dim: int, spread: float, min_gap: float) -> np.ndarray:
    """Random class means, redrawn until every pair is at least ``min_gap`` apart."""
    for _ in range(1000):
        means = rng.normal(0.0, spread, size=(num_classes, dim))
        diff = means[:, None, :] - means[None, :, :]
        gaps = np.sqrt((diff ** 2).sum(-1))[np.triu_indices(num_classes, 1)]
        if gaps.size == 0 or gaps.min() >= min_gap:
            return means
    raise RuntimeError("could not place well-separated cluster means; raise cluster_spread")


def gaussian_clusters(rng, means, std, n) -> Dataset:
    labels = rng.integers(len(means), size=n)
    inputs = means[labels] + rng.normal(0.0, std, size=(n, means.shape[1]))
    return Dataset(inputs, labels.astype(np.int64))


def make_synthetic_stream(cfg: StreamConfig) -> list[TaskSpec]:
    """Each task: ``num_classes`` Gaussian clusters with task-specific means.

    All tasks share output head 0, so tasks compete for the same classifier
    the way permuted-input tasks do. ``examples_per_task=0`` means 1000.
    """
    if cfg.kind != "synthetic":
        raise ValueError("config kind must be 'synthetic'")
    n_train = cfg.examples_per_task or 1000
    tasks = []
    for t in range(cfg.num_tasks):
        rng = _child_rng(cfg.seed, _CLUSTERS, t)
        means = cluster_means(rng, cfg.num_classes, cfg.input_dim, cfg.cluster_spread, 6.0 * cfg.cluster_std)
        train = gaussian_clusters(rng, means, cfg.cluster_std, n_train)
        test = gaussian_clusters(rng, means, cfg.cluster_std, cfg.test_per_task)
        tasks.append(TaskSpec(t, train, test, head=0))
    return tasks


def synthetic_base(n_train: int, n_test: int, dim: int, num_classes: int, seed: int,
                   std: float = 1.0, spread: float = 2.0) -> tuple[Dataset, Dataset]:
    """A single cluster dataset to stand in for MNIST under input permutations."""
    rng = _child_rng(seed, _CLUSTERS, 10_000)
    means = cluster_means(rng, num_classes, dim, spread, 6.0 * std)
    return gaussian_clusters(rng, means, std, n_train), gaussian_clusters(rng, means, std, n_test)


def make_stream(cfg: StreamConfig, base_data: tuple[Dataset, Dataset] | None = None) -> list[TaskSpec]:
    if cfg.kind == "synthetic":
        return make_synthetic_stream(cfg)
    if base_data is None:
        raise ValueError(f"{cfg.kind} streams need base data")
    if cfg.kind == "permuted":
        return make_permuted_stream(base_data, cfg)
    return make_split_stream(base_data, cfg)


def partition_cv(stream: list[TaskSpec], cfg: StreamConfig) -> tuple[list[TaskSpec], list[TaskSpec]]:
    """First ``cv_tasks`` tasks for hyperparameter search, the rest for evaluation."""
    return list(stream[:cfg.cv_tasks]), list(stream[cfg.cv_tasks:])
