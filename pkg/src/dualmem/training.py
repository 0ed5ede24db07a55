"""One-pass online trainer over a task stream, with replay and metrics.

The model is a single linear softmax layer: large enough to show
forgetting and replay effects, small enough that seeds are cheap and
closed-form oracles stay exact. Each stream sample feeds exactly one
gradient step as fresh data; replayed samples may recur freely.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from dualmem.memory import DualMemory, replay_batch
from dualmem.stream import Sample, TaskData, TaskStream, stack

HOLDOUT_FRACTION = 0.2
EVAL_MODES = ("class_il", "task_il")


class TrainingDiverged(RuntimeError):
    """Raised when a gradient step produces a non-finite loss."""


@dataclass
class ModelConfig:
    n_classes: int
    dim: int
    learning_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError(f"n_classes must be >= 1, got {self.n_classes}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if not self.learning_rate > 0:
            raise ValueError(
                f"learning_rate must be > 0, got {self.learning_rate}")


class LinearModel:
    """Linear softmax classifier trained by plain cross-entropy SGD."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=cfg.seed, spawn_key=(0,)))
        self.weights = rng.normal(0.0, 0.01, size=(cfg.n_classes, cfg.dim))
        self.bias = np.zeros(cfg.n_classes)
        self.learning_rate = cfg.learning_rate
        self.seed = cfg.seed

    def logits(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights.T + self.bias

    def sgd_step(self, X: np.ndarray, y: np.ndarray) -> float:
        """One cross-entropy step over the batch; returns the mean loss."""
        # overflow surfaces as non-finite values caught below, not as noise
        with np.errstate(over="ignore", invalid="ignore"):
            z = self.logits(X)
            z = z - z.max(axis=1, keepdims=True)
            expz = np.exp(z)
            probs = expz / expz.sum(axis=1, keepdims=True)
            n = X.shape[0]
            loss = float(-np.mean(np.log(probs[np.arange(n), y] + 1e-300)))
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} on a batch of {n}; lower the "
                    f"learning rate (currently {self.learning_rate})")
            grad = probs
            grad[np.arange(n), y] -= 1.0
            grad /= n
            self.weights -= self.learning_rate * (grad.T @ X)
            self.bias -= self.learning_rate * grad.sum(axis=0)
        if not (np.all(np.isfinite(self.weights))
                and np.all(np.isfinite(self.bias))):
            raise TrainingDiverged(
                "parameters left the finite range after a step; lower the "
                f"learning rate (currently {self.learning_rate})")
        return loss


@dataclass
class RunMetrics:
    """Everything one training run produces, ready for CSV/JSON export."""

    accuracy_class_il: list = field(default_factory=list)
    accuracy_task_il: list = field(default_factory=list)
    forgetting: list = field(default_factory=list)
    final_average_accuracy: float = 0.0
    histogram: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


def holdout_split(task: TaskData,
                  fraction: float = HOLDOUT_FRACTION) -> tuple[list, list]:
    """Per-class split: the last share of each class's samples is held out."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0,1), got {fraction}")
    train: list[Sample] = []
    held: list[Sample] = []
    for c in task.classes:
        rows = [s for s in task.samples if s.label == c]
        n_test = max(1, int(np.floor(fraction * len(rows) + 0.5)))
        train.extend(rows[:-n_test])
        held.extend(rows[-n_test:])
    return train, held


def evaluate(model: LinearModel, tasks: list[TaskData],
             mode: str = "class_il") -> list[float]:
    """Per-task accuracy over held-out samples.

    class_il lets the argmax range over every class the given tasks
    cover; task_il restricts it to each task's own classes.
    """
    if mode not in EVAL_MODES:
        raise ValueError(f"mode must be one of {EVAL_MODES}, got {mode!r}")
    if not tasks:
        return []
    seen = np.array(sorted({c for t in tasks for c in t.classes}))
    accs = []
    for task in tasks:
        if not task.samples:
            raise ValueError(
                f"task {task.task_index} has no held-out samples")
        X, y = stack(task.samples)
        allowed = seen if mode == "class_il" else np.array(sorted(task.classes))
        z = model.logits(X)[:, allowed]
        pred = allowed[z.argmax(axis=1)]
        accs.append(float(np.mean(pred == y)))
    return accs


def forgetting_curve(metrics) -> list[float]:
    """Error over all seen tasks at each boundary: 1 - mean of A's row t."""
    rows = metrics.accuracy_class_il if isinstance(metrics, RunMetrics) else metrics
    curve = []
    for t, row in enumerate(rows):
        if len(row) != t + 1:
            raise ValueError(
                f"accuracy row {t} has {len(row)} entries, expected {t + 1}")
        curve.append(1.0 - float(np.mean(row)))
    return curve


def buffer_histogram(mem: DualMemory | None) -> dict[int, int]:
    """Class counts over everything stored, short and long together."""
    if mem is None:
        return {}
    return dict(sorted(Counter(s.label for s in mem.all_samples()).items()))


def _batches(samples: list[Sample], size: int):
    for i in range(0, len(samples), size):
        yield samples[i:i + size]


def train_online(stream: TaskStream, mem: DualMemory | None,
                 model_cfg: ModelConfig,
                 replay_size: int = 32) -> tuple[LinearModel, RunMetrics]:
    """Single pass over the stream with replay, evaluated at boundaries.

    Per fresh batch: draw a replay batch, take one SGD step on the
    concatenation, then reservoir-insert the fresh samples. At each task
    boundary the memory reorganizes and the model is scored on the
    held-out split of every task seen so far.
    """
    if replay_size < 0:
        raise ValueError(f"replay_size must be >= 0, got {replay_size}")
    model = LinearModel(model_cfg)
    metrics = RunMetrics()
    rng_replay = np.random.default_rng(
        np.random.SeedSequence(entropy=model_cfg.seed, spawn_key=(1,)))
    held_tasks: list[TaskData] = []
    t_train = 0.0
    t_eval = 0.0
    for task in stream.tasks:
        start = time.perf_counter()
        train_rows, held_rows = holdout_split(task)
        shuffle = np.random.default_rng(np.random.SeedSequence(
            entropy=model_cfg.seed, spawn_key=(2, task.task_index)))
        order = shuffle.permutation(len(train_rows))
        train_rows = [train_rows[i] for i in order]
        for batch in _batches(train_rows, stream.batch_size):
            X, y = stack(batch)
            if mem is not None and replay_size >= 1:
                replayed = replay_batch(mem, replay_size, rng_replay)
                if replayed:
                    Xr, yr = stack(replayed)
                    X = np.concatenate([X, Xr])
                    y = np.concatenate([y, yr])
            try:
                model.sgd_step(X, y)
            except TrainingDiverged as exc:
                raise TrainingDiverged(
                    f"task {task.task_index}: {exc}") from exc
            if mem is not None:
                mem.observe_batch(batch)
        if mem is not None:
            mem.end_task(TaskData(task.task_index, task.classes, train_rows))
        t_train += time.perf_counter() - start
        start = time.perf_counter()
        held_tasks.append(TaskData(task.task_index, task.classes, held_rows))
        metrics.accuracy_class_il.append(evaluate(model, held_tasks,
                                                  "class_il"))
        metrics.accuracy_task_il.append(evaluate(model, held_tasks,
                                                 "task_il"))
        t_eval += time.perf_counter() - start
    metrics.forgetting = forgetting_curve(metrics)
    if metrics.accuracy_class_il:
        metrics.final_average_accuracy = float(
            np.mean(metrics.accuracy_class_il[-1]))
    metrics.histogram = buffer_histogram(mem)
    metrics.timings = {"train_seconds": t_train, "eval_seconds": t_eval}
    return model, metrics


def pca_alignment(buffer_features: np.ndarray,
                  dataset_features: np.ndarray) -> float:
    """Unsigned cosine between best-fit lines in the dataset's top-2 PC plane.

    Components come from power iteration with one deflation step; both
    point sets are projected through the same map, each gets an ordinary
    least-squares line, and the score is |cos| of the two directions.
    """
    buf = np.atleast_2d(np.asarray(buffer_features, dtype=float))
    data = np.atleast_2d(np.asarray(dataset_features, dtype=float))
    if buf.size == 0 or data.size == 0:
        raise ValueError("both feature sets must be non-empty")
    if buf.shape[1] != data.shape[1]:
        raise ValueError(
            f"dimension mismatch: buffer has {buf.shape[1]}, "
            f"dataset has {data.shape[1]}")
    if data.shape[1] < 2:
        raise ValueError("need at least 2 feature dimensions")
    mean = data.mean(axis=0)
    centered = data - mean
    if np.allclose(centered, 0.0):
        raise ValueError("dataset has zero variance")
    cov = centered.T @ centered / max(data.shape[0] - 1, 1)
    v1 = _power_iteration(cov)
    lam1 = float(v1 @ cov @ v1)
    v2 = _power_iteration(cov - lam1 * np.outer(v1, v1))
    v2 -= (v2 @ v1) * v1
    norm2 = np.linalg.norm(v2)
    if norm2 < 1e-12:
        raise ValueError("dataset variance collapses onto a single direction")
    v2 /= norm2
    basis = np.stack([v1, v2], axis=1)
    proj_data = centered @ basis
    proj_buf = (buf - mean) @ basis
    if np.allclose(proj_buf, proj_buf.mean(axis=0)):
        raise ValueError("buffer has zero variance in the component plane")
    d_data = _line_direction(proj_data)
    d_buf = _line_direction(proj_buf)
    return float(abs(d_data @ d_buf))


def _power_iteration(mat: np.ndarray, iters: int = 1000,
                     tol: float = 1e-13) -> np.ndarray:
    rng = np.random.default_rng(0)
    v = rng.normal(size=mat.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = mat @ v
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            return v
        w /= norm
        if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol:
            return w
        v = w
    return v


def _line_direction(points2d: np.ndarray) -> np.ndarray:
    x = points2d[:, 0] - points2d[:, 0].mean()
    y = points2d[:, 1] - points2d[:, 1].mean()
    sxx = float(x @ x)
    if sxx < 1e-18:
        return np.array([0.0, 1.0])
    slope = float(x @ y) / sxx
    d = np.array([1.0, slope])
    return d / np.linalg.norm(d)
