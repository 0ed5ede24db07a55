"""Dual short/long-term replay memory under a shared sample budget.

The short-term buffer reservoir-samples the incoming stream. At each
task boundary the long-term side grows prototype-anchored sub-buffers
for every class of the finished task, then the short-term side gives up
capacity until the combined occupancy fits the budget again. Long-term
contents are never evicted.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from dualmem.clustering import DacConfig, dac, kmeans, snap_to_medoid
from dualmem.ot import METRIC_KINDS, SinkhornConfig, metric_distance
from dualmem.stream import Sample, TaskData

log = logging.getLogger(__name__)

SELECTION_MODES = ("nearest", "farthest")
EVICTION_POLICIES = ("most_represented", "uniform")
DAC_FEEDS = ("merged", "all")


def fk(rho: float, lambda_max: int, n: int, classes_in_task: int) -> int:
    """Per-class prototype count for one task under the long-term budget.

    Computes rho * lambda_max / (n - 1) spread over the task's classes,
    rounded half-up. The denominator uses n - 1 because the first task
    contributes nothing to long-term memory.
    """
    if not 0 <= rho <= 1:
        raise ValueError("rho must lie in [0,1]")
    if n < 2:
        raise ValueError(f"n must be >= 2 for a long-term split, got {n}")
    if classes_in_task < 1:
        raise ValueError(f"classes_in_task must be >= 1, got {classes_in_task}")
    return int(np.floor(rho * lambda_max / ((n - 1) * classes_in_task) + 0.5))


def default_sub_capacity(rho: float, lambda_max: int, n: int, k: int,
                         classes_in_task: int) -> int:
    """Per-sub-buffer capacity that keeps k sub-buffers per class on budget."""
    if k < 1:
        return 1
    return max(1, int(rho * lambda_max // ((n - 1) * k * classes_in_task)))


def class_filter(data, c: int) -> list[Sample]:
    """Order-preserving subsequence of samples labeled c."""
    samples = data.samples if isinstance(data, TaskData) else data
    return [s for s in samples if s.label == c]


@dataclass
class ShortTermBuffer:
    capacity: int
    items: list[Sample] = field(default_factory=list)
    seen: int = 0


@dataclass
class SubMemoryBuffer:
    class_id: int
    prototype: Sample
    items: list[Sample]
    capacity: int

    def __post_init__(self):
        if len(self.items) > self.capacity:
            raise ValueError(
                f"sub-buffer holds {len(self.items)} > capacity {self.capacity}")
        for s in self.items:
            if s.label != self.class_id:
                raise ValueError(
                    f"sample {s.id} labeled {s.label} cannot enter a "
                    f"class-{self.class_id} sub-buffer")
        if all(s.id != self.prototype.id for s in self.items):
            raise ValueError("prototype must be stored among its items")


@dataclass
class LongTermMemory:
    sub_buffers: list[SubMemoryBuffer] = field(default_factory=list)

    @property
    def size(self) -> int:
        return sum(len(sb.items) for sb in self.sub_buffers)

    def samples(self) -> list[Sample]:
        return [s for sb in self.sub_buffers for s in sb.items]


def reservoir_insert(buf: ShortTermBuffer, s: Sample,
                     rng: np.random.Generator) -> None:
    """Classic one-pass reservoir step: keep each seen item w.p. capacity/seen."""
    buf.seen += 1
    if len(buf.items) < buf.capacity:
        buf.items.append(s)
        return
    j = int(rng.integers(0, buf.seen))
    if j < buf.capacity:
        buf.items[j] = s


def build_sub_buffer(prototype: Sample, candidates: list[Sample], lam: int,
                     metric: str, mode: str = "nearest", sigma: float = 1.0,
                     sinkhorn_cfg: SinkhornConfig | None = None) -> SubMemoryBuffer:
    """Fill one sub-buffer around a prototype by metric rank.

    nearest keeps the lam - 1 candidates closest to the prototype,
    farthest keeps the most discrepant ones. Distance ties break toward
    the lower sample id. The prototype itself never competes.
    """
    if lam < 1:
        raise ValueError(f"lam must be >= 1, got {lam}")
    if mode not in SELECTION_MODES:
        raise ValueError(f"mode must be one of {SELECTION_MODES}, got {mode!r}")
    for c in candidates:
        if c.label != prototype.label:
            raise ValueError(
                f"candidate {c.id} labeled {c.label} does not match "
                f"prototype label {prototype.label}")
    pool = [c for c in candidates if c.id != prototype.id]
    sign = 1.0 if mode == "nearest" else -1.0
    ranked = sorted(
        pool,
        key=lambda c: (sign * metric_distance(metric, prototype.features,
                                              c.features, sigma=sigma,
                                              cfg=sinkhorn_cfg), c.id),
    )
    items = [prototype] + ranked[:lam - 1]
    return SubMemoryBuffer(prototype.label, prototype, items, lam)


class DualMemory:
    """Budgeted pairing of a reservoir buffer and prototype sub-buffers.

    All internal randomness derives from the seed, so two instances fed
    the same stream evolve identically. Replay draws come from a
    caller-provided generator and never disturb that internal state.
    """

    def __init__(self, lambda_max: int, rho: float, n_tasks: int,
                 metric: str = "sinkhorn", selection_mode: str = "nearest",
                 seed: int = 0, lam: int | None = None,
                 eviction: str = "most_represented",
                 dac_cfg: DacConfig | None = None, dac_feed: str = "merged",
                 sigma: float = 1.0,
                 sinkhorn_cfg: SinkhornConfig | None = None):
        if lambda_max < 1:
            raise ValueError(f"lambda_max must be >= 1, got {lambda_max}")
        if not 0 <= rho <= 1:
            raise ValueError("rho must lie in [0,1]")
        if n_tasks < 1:
            raise ValueError(f"n_tasks must be >= 1, got {n_tasks}")
        if metric not in METRIC_KINDS:
            raise ValueError(f"metric must be one of {METRIC_KINDS}, got {metric!r}")
        if selection_mode not in SELECTION_MODES:
            raise ValueError(
                f"selection_mode must be one of {SELECTION_MODES}, "
                f"got {selection_mode!r}")
        if eviction not in EVICTION_POLICIES:
            raise ValueError(
                f"eviction must be one of {EVICTION_POLICIES}, got {eviction!r}")
        if dac_feed not in DAC_FEEDS:
            raise ValueError(f"dac_feed must be one of {DAC_FEEDS}, got {dac_feed!r}")
        if lam is not None and lam < 1:
            raise ValueError(f"lam must be >= 1, got {lam}")
        self.lambda_max = lambda_max
        self.rho = rho
        self.n_tasks = n_tasks
        self.metric = metric
        self.selection_mode = selection_mode
        self.seed = seed
        self.lam = lam
        self.eviction = eviction
        self.dac_cfg = dac_cfg
        self.dac_feed = dac_feed
        self.sigma = sigma
        self.sinkhorn_cfg = sinkhorn_cfg
        self.short = ShortTermBuffer(capacity=lambda_max)
        self.long = LongTermMemory()
        self._rng_reservoir = self._spawn_rng(0)
        self._rng_rebalance = self._spawn_rng(1)

    def _spawn_rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed, spawn_key=key))

    def observe_batch(self, batch: list[Sample]) -> None:
        for s in batch:
            reservoir_insert(self.short, s, self._rng_reservoir)

    def end_task(self, task: TaskData, dac_cfg: DacConfig | None = None) -> None:
        on_task_end(self, task, dac_cfg if dac_cfg is not None else self.dac_cfg)

    @property
    def occupancy(self) -> int:
        return len(self.short.items) + self.long.size

    def all_samples(self) -> list[Sample]:
        return list(self.short.items) + self.long.samples()

    def snapshot(self) -> dict:
        """JSON-ready view of the stored ids, labels, flags, and capacities."""
        return {
            "lambda_max": self.lambda_max,
            "rho": self.rho,
            "n_tasks": self.n_tasks,
            "metric": self.metric,
            "selection_mode": self.selection_mode,
            "short": {
                "capacity": self.short.capacity,
                "seen": self.short.seen,
                "items": [{"id": s.id, "label": s.label}
                          for s in self.short.items],
            },
            "long": {
                "sub_buffers": [
                    {
                        "class_id": sb.class_id,
                        "capacity": sb.capacity,
                        "items": [
                            {"id": s.id, "label": s.label,
                             "prototype": s.id == sb.prototype.id}
                            for s in sb.items
                        ],
                    }
                    for sb in self.long.sub_buffers
                ],
            },
            "totals": {"short": len(self.short.items), "long": self.long.size},
        }

    def snapshot_json(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True,
                          separators=(",", ":")) + "\n"


def select_prototype_buffers(working: list[Sample], k: int, lam: int,
                             metric: str, mode: str = "nearest", seed=0,
                             sigma: float = 1.0,
                             sinkhorn_cfg: SinkhornConfig | None = None,
                             ) -> list[SubMemoryBuffer]:
    """Cluster one class's samples and build a sub-buffer per centroid.

    Each centroid snaps to a distinct stored sample; sub-buffers fill
    sequentially, so no sample lands in two of them.
    """
    if not working:
        raise ValueError("working set must be non-empty")
    labels = {s.label for s in working}
    if len(labels) > 1:
        raise ValueError(
            f"prototype selection runs per class, got labels {sorted(labels)}")
    if k > len(working):
        raise ValueError(f"k={k} exceeds the working set size {len(working)}")
    feats = np.stack([s.features for s in working])
    km = kmeans(feats, k, seed=seed)
    prototypes: list[Sample] = []
    chosen: set[int] = set()
    for h in range(k):
        members = [working[i] for i in np.flatnonzero(km.assignments == h)
                   if working[i].id not in chosen]
        if not members:
            members = [s for s in working if s.id not in chosen]
        if not members:
            log.warning("working set exhausted while snapping prototype %d", h)
            break
        proto = snap_to_medoid(km.centroids[h], members)
        prototypes.append(proto)
        chosen.add(proto.id)
    buffers: list[SubMemoryBuffer] = []
    stored = set(chosen)
    for proto in prototypes:
        candidates = [s for s in working if s.id not in stored]
        sb = build_sub_buffer(proto, candidates, lam, metric, mode, sigma,
                              sinkhorn_cfg)
        stored.update(s.id for s in sb.items)
        buffers.append(sb)
    return buffers


def on_task_end(mem: DualMemory, task: TaskData,
                dac_cfg: DacConfig | None = None) -> None:
    """Grow long-term memory from a finished task, then re-fit the budget.

    The first task (index 0) grows nothing: the budget stays entirely
    with the short-term buffer. Later tasks add, per class, fk prototype
    sub-buffers selected from the task's own data, optionally after a
    divide-and-conquer reduction of the working set.
    """
    if task.task_index >= 1:
        k_nominal = fk(mem.rho, mem.lambda_max, mem.n_tasks, len(task.classes))
        if k_nominal >= 1:
            lam = mem.lam if mem.lam is not None else default_sub_capacity(
                mem.rho, mem.lambda_max, mem.n_tasks, k_nominal,
                len(task.classes))
            for class_id in sorted(task.classes):
                working = class_filter(task, class_id)
                if not working:
                    log.warning("task %d class %d has no samples; skipped",
                                task.task_index, class_id)
                    continue
                if dac_cfg is not None and mem.dac_feed == "merged":
                    feats = np.stack([s.features for s in working])
                    dac_seed = int(np.random.SeedSequence(
                        entropy=mem.seed,
                        spawn_key=(3, task.task_index, class_id),
                    ).generate_state(1)[0])
                    reduced = dac(feats, dac_cfg, seed=dac_seed,
                                  sinkhorn_cfg=mem.sinkhorn_cfg)
                    working = [working[i] for i in reduced.indices]
                k = k_nominal
                if k > len(working):
                    log.warning(
                        "task %d class %d has %d samples < k=%d; clamping",
                        task.task_index, class_id, len(working), k)
                    k = len(working)
                km_seed = np.random.SeedSequence(
                    entropy=mem.seed, spawn_key=(2, task.task_index, class_id))
                mem.long.sub_buffers.extend(select_prototype_buffers(
                    working, k, lam, mem.metric, mem.selection_mode,
                    seed=km_seed, sigma=mem.sigma,
                    sinkhorn_cfg=mem.sinkhorn_cfg))
    rebalance(mem, mem._rng_rebalance)


def _evict_index(mem: DualMemory, rng: np.random.Generator) -> int:
    if mem.eviction == "uniform":
        return int(rng.integers(0, len(mem.short.items)))
    counts: dict[int, int] = {}
    for s in mem.short.items:
        counts[s.label] = counts.get(s.label, 0) + 1
    # heaviest class first; ties go to the smallest class id
    target = min(counts, key=lambda c: (-counts[c], c))
    positions = [i for i, s in enumerate(mem.short.items) if s.label == target]
    return positions[int(rng.integers(0, len(positions)))]


def rebalance(mem: DualMemory, rng: np.random.Generator) -> None:
    """Shrink the short-term side until the shared budget holds again."""
    if mem.long.size > mem.lambda_max:
        raise ValueError(
            f"long-term occupancy {mem.long.size} exceeds the budget "
            f"{mem.lambda_max}; fk or the sub-buffer capacity is mis-sized")
    while mem.occupancy > mem.lambda_max:
        del mem.short.items[_evict_index(mem, rng)]
    mem.short.capacity = mem.lambda_max - mem.long.size


def replay_batch(mem: DualMemory, size: int,
                 rng: np.random.Generator) -> list[Sample]:
    """Uniform-with-replacement draw over everything currently stored."""
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    pool = mem.all_samples()
    if not pool:
        return []
    picks = rng.integers(0, len(pool), size=size)
    return [pool[i] for i in picks]
