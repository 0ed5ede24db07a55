"""Dual short/long-term replay memory with transport-based sample selection."""

from dualmem.clustering import (
    DacConfig,
    DacResult,
    dac,
    find_best_path,
    kmeans,
    snap_to_medoid,
)
from dualmem.memory import (
    DualMemory,
    LongTermMemory,
    ShortTermBuffer,
    SubMemoryBuffer,
    build_sub_buffer,
    default_sub_capacity,
    fk,
    on_task_end,
    rebalance,
    replay_batch,
    reservoir_insert,
    select_prototype_buffers,
)
from dualmem.ot import (
    SinkhornConfig,
    TransportResult,
    exact_ot_1d,
    index_cost_matrix,
    metric_distance,
    sinkhorn_distance,
    sinkhorn_point_clouds,
    to_distribution,
)
from dualmem.stream import (
    Sample,
    TaskData,
    TaskStream,
    load_manifest,
    make_synthetic_stream,
    task_batches,
)
from dualmem.training import (
    LinearModel,
    ModelConfig,
    RunMetrics,
    TrainingDiverged,
    buffer_histogram,
    evaluate,
    forgetting_curve,
    holdout_split,
    pca_alignment,
    train_online,
)

__version__ = "0.1.0"

__all__ = [
    "DacConfig",
    "DacResult",
    "DualMemory",
    "LinearModel",
    "LongTermMemory",
    "ModelConfig",
    "RunMetrics",
    "Sample",
    "ShortTermBuffer",
    "SinkhornConfig",
    "SubMemoryBuffer",
    "TaskData",
    "TaskStream",
    "TrainingDiverged",
    "TransportResult",
    "buffer_histogram",
    "build_sub_buffer",
    "dac",
    "default_sub_capacity",
    "evaluate",
    "exact_ot_1d",
    "find_best_path",
    "fk",
    "forgetting_curve",
    "holdout_split",
    "index_cost_matrix",
    "kmeans",
    "load_manifest",
    "make_synthetic_stream",
    "metric_distance",
    "on_task_end",
    "pca_alignment",
    "rebalance",
    "replay_batch",
    "reservoir_insert",
    "select_prototype_buffers",
    "sinkhorn_distance",
    "sinkhorn_point_clouds",
    "snap_to_medoid",
    "task_batches",
    "to_distribution",
    "train_online",
    "__version__",
]
