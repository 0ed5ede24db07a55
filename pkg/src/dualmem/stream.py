"""Samples, class-incremental task streams, and stream transforms.

A stream is an ordered list of tasks with pairwise-disjoint class sets.
Each task holds its samples in construction order; batching is a view
produced by `batches` (or `task_batches` for a single task), so sample
identity survives every transform. `stack` turns a batch of samples into
the (X, Y) matrix pair consumed by numeric code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_BATCH_SIZE = 32


@dataclass(eq=False)
class Sample:
    """One labeled feature vector with a stream-unique id."""

    id: int
    features: np.ndarray
    label: int


@dataclass
class TaskData:
    task_index: int
    classes: tuple[int, ...]
    samples: list[Sample] = field(repr=False)

    def __post_init__(self):
        for s in self.samples:
            if s.label not in self.classes:
                raise ValueError(
                    f"sample {s.id} has label {s.label}, not in task "
                    f"{self.task_index} classes {self.classes}"
                )


@dataclass
class TaskStream:
    tasks: list[TaskData]
    classes_per_task: int
    batch_size: int
    dim: int

    @property
    def n(self) -> int:
        return len(self.tasks)

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(c for task in self.tasks for c in task.classes)

    def all_samples(self) -> list[Sample]:
        return [s for task in self.tasks for s in task.samples]

    def __post_init__(self):
        seen: set[int] = set()
        for task in self.tasks:
            overlap = seen.intersection(task.classes)
            if overlap:
                raise ValueError(
                    f"classes must be disjoint across tasks; task "
                    f"{task.task_index} reuses {sorted(overlap)}"
                )
            seen.update(task.classes)
            if len(task.classes) != self.classes_per_task:
                raise ValueError(
                    f"task {task.task_index} declares {len(task.classes)} "
                    f"classes, expected classes_per_task={self.classes_per_task}"
                )
            for s in task.samples:
                if s.features.shape != (self.dim,):
                    raise ValueError(
                        f"sample {s.id} has feature shape "
                        f"{s.features.shape}, expected ({self.dim},)"
                    )


def stack(batch: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """Matrix view (X, Y) of a batch of samples."""
    X = np.stack([s.features for s in batch])
    Y = np.array([s.label for s in batch], dtype=int)
    return X, Y


def task_batches(task: TaskData, batch_size: int,
                 rng: np.random.Generator | None = None) -> list[list[Sample]]:
    """Cut one task into batches of at most batch_size samples.

    The final short batch is kept. With an rng the within-task order is
    shuffled first; without one, construction order is preserved.
    """
    order = list(task.samples)
    if rng is not None:
        perm = rng.permutation(len(order))
        order = [order[i] for i in perm]
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def batches(stream: TaskStream, shuffle_seed: int | None = None):
    """Yield every batch of the stream exactly once, in task order."""
    for task in stream.tasks:
        rng = None
        if shuffle_seed is not None:
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=shuffle_seed,
                                       spawn_key=(task.task_index,)))
        yield from task_batches(task, stream.batch_size, rng)


PLACEMENTS = ("axes", "line", "ring")


def _class_means(n_classes: int, dim: int, separation: float,
                 placement: str = "axes") -> np.ndarray:
    if placement == "line":
        # collinear means spaced `separation` apart along the first axis
        means = np.zeros((n_classes, dim))
        means[:, 0] = np.arange(n_classes) * separation
        return means
    if placement == "ring":
        # consecutive pairs (2t, 2t+1) sit at antipodes of a circle in the
        # first two dimensions, each pair's axis rotated per pair, so a
        # class-incremental run over the pairs has overlapping geometry
        if n_classes % 2:
            raise ValueError(
                f"ring placement needs an even class count, got {n_classes}")
        if dim < 2:
            raise ValueError("ring placement needs dim >= 2")
        means = np.zeros((n_classes, dim))
        radius = separation / 2.0
        for pair in range(n_classes // 2):
            theta = pair * np.pi / (n_classes // 2)
            axis = np.array([np.cos(theta), np.sin(theta)])
            means[2 * pair, :2] = radius * axis
            means[2 * pair + 1, :2] = -radius * axis
        return means
    if n_classes <= dim:
        # scaled one-hot corners: every pair sits exactly `separation` apart
        means = np.zeros((n_classes, dim))
        np.fill_diagonal(means[:, :n_classes], separation / np.sqrt(2.0))
        return means
    # axis-aligned lattice with spacing `separation`
    side = int(np.ceil(n_classes ** (1.0 / dim)))
    coords = np.stack(
        np.unravel_index(np.arange(n_classes), (side,) * dim), axis=1)
    return coords.astype(float) * separation


def make_synthetic_stream(n_tasks: int, classes_per_task: int, per_class: int,
                          dim: int, separation: float, seed: int,
                          batch_size: int = DEFAULT_BATCH_SIZE,
                          placement: str = "axes") -> TaskStream:
    """Class-incremental stream of unit-variance Gaussian blobs.

    axes and line placements keep class means at pairwise distance >=
    separation, so the stream is separable by construction and accuracy
    checks measure memory behavior rather than task difficulty. ring
    keeps that guarantee only within a task: each task's class pair sits
    `separation` apart on a shared circle, but distinct tasks' pairs
    overlap, which makes sequential training interfere across tasks.
    """
    if min(n_tasks, classes_per_task, per_class, dim) < 1:
        raise ValueError("n_tasks, classes_per_task, per_class, dim must be >= 1")
    if separation <= 0:
        raise ValueError(f"separation must be positive, got {separation}")
    if placement not in PLACEMENTS:
        raise ValueError(
            f"placement must be one of {PLACEMENTS}, got {placement!r}")
    n_classes = n_tasks * classes_per_task
    means = _class_means(n_classes, dim, separation, placement)
    rng = np.random.default_rng(seed)
    tasks = []
    next_id = 0
    for t in range(n_tasks):
        classes = tuple(range(t * classes_per_task, (t + 1) * classes_per_task))
        samples = []
        for c in classes:
            X = means[c] + rng.normal(size=(per_class, dim))
            for row in X:
                samples.append(Sample(next_id, row, c))
                next_id += 1
        tasks.append(TaskData(t, classes, samples))
    return TaskStream(tasks, classes_per_task, batch_size, dim)


def apply_imbalance(stream: TaskStream) -> TaskStream:
    """Drop the even-positioned samples of every class.

    Positions count per class over the class's original ordering, so a
    class of c samples keeps c - ceil(c/2) of them; survivor order is
    unchanged. Ids are preserved, not renumbered.
    """
    new_tasks = []
    for task in stream.tasks:
        position: dict[int, int] = {}
        kept = []
        for s in task.samples:
            pos = position.get(s.label, 0)
            position[s.label] = pos + 1
            if pos % 2 == 1:
                kept.append(s)
        new_tasks.append(TaskData(task.task_index, task.classes, kept))
    return TaskStream(new_tasks, stream.classes_per_task, stream.batch_size,
                      stream.dim)


def _require(manifest: dict, key: str, path: Path):
    if key not in manifest:
        raise ValueError(f"manifest {path} is missing required field {key!r}")
    return manifest[key]


def load_manifest(path) -> TaskStream:
    """Materialize a TaskStream from a JSON manifest.

    Two sources are supported. `synthetic` embeds the generator
    parameters; `csv` lists per-task feature files of comma-separated
    rows, d floats then one integer label. File paths resolve relative
    to the manifest. Set `"imbalance": true` to apply the even-position
    drop after loading.
    """
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot parse manifest {path}: {exc}") from exc
    if not isinstance(manifest, dict):
        raise ValueError(f"manifest {path} must be a JSON object")
    source = _require(manifest, "source", path)
    batch_size = int(manifest.get("batch_size", DEFAULT_BATCH_SIZE))
    if batch_size < 1:
        raise ValueError(f"manifest field batch_size must be >= 1, got {batch_size}")

    if source == "synthetic":
        stream = make_synthetic_stream(
            n_tasks=int(_require(manifest, "n_tasks", path)),
            classes_per_task=int(_require(manifest, "classes_per_task", path)),
            per_class=int(_require(manifest, "per_class", path)),
            dim=int(_require(manifest, "dim", path)),
            separation=float(_require(manifest, "separation", path)),
            seed=int(_require(manifest, "seed", path)),
            batch_size=batch_size,
            placement=str(manifest.get("placement", "axes")),
        )
    elif source == "csv":
        stream = _load_csv_stream(manifest, path, batch_size)
    else:
        raise ValueError(
            f"manifest field source must be 'synthetic' or 'csv', got {source!r}")

    if manifest.get("imbalance", False):
        stream = apply_imbalance(stream)
    return stream


def _load_csv_stream(manifest: dict, path: Path, batch_size: int) -> TaskStream:
    dim = int(_require(manifest, "dim", path))
    task_specs = _require(manifest, "tasks", path)
    if not task_specs:
        raise ValueError(f"manifest field tasks must be a non-empty list ({path})")
    tasks = []
    next_id = 0
    for t, spec in enumerate(task_specs):
        classes = tuple(int(c) for c in _require(spec, "classes", path))
        file_field = _require(spec, "file", path)
        csv_path = path.parent / file_field
        if not csv_path.exists():
            raise ValueError(f"manifest field file: {csv_path} does not exist")
        samples = []
        for r, line in enumerate(csv_path.read_text().splitlines()):
            if not line.strip():
                continue
            cells = line.split(",")
            if len(cells) != dim + 1:
                raise ValueError(
                    f"dimension mismatch in {csv_path}: row {r} has "
                    f"{len(cells)} values, expected dim+1={dim + 1}")
            try:
                feats = np.array([float(c) for c in cells[:dim]])
                label = int(cells[dim])
            except ValueError as exc:
                raise ValueError(
                    f"cannot parse {csv_path} row {r}: {exc}") from exc
            if label not in classes:
                raise ValueError(
                    f"unknown class id {label} in {csv_path} row {r}; "
                    f"task {t} declares classes {classes}")
            samples.append(Sample(next_id, feats, label))
            next_id += 1
        tasks.append(TaskData(t, classes, samples))
    counts = {len(task.classes) for task in tasks}
    if len(counts) != 1:
        raise ValueError(
            f"manifest field tasks: class counts differ across tasks ({counts})")
    return TaskStream(tasks, counts.pop(), batch_size, dim)
