"""Command-line front end: simulations, distances, merges, and benchmarks.

Every subcommand is deterministic under a fixed --seed: one root seed is
split into independent subsystem seeds (stream, model, memory) through
numpy's SeedSequence, so no subsystem's draws can perturb another's.
Output files are written atomically (temp file + rename) and their
schemas are documented in docs/formats.md.

Exit codes: 0 success, 2 configuration or parse error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from dualmem import rpc
from dualmem.clustering import DacConfig, dac
from dualmem.memory import DualMemory, select_prototype_buffers
from dualmem.ot import (
    METRIC_KINDS,
    SinkhornConfig,
    index_cost_matrix,
    sinkhorn_distance,
    to_distribution,
)
from dualmem.stream import (
    PLACEMENTS,
    Sample,
    TaskData,
    load_manifest,
    make_synthetic_stream,
    task_batches,
)
from dualmem.training import (
    ModelConfig,
    TrainingDiverged,
    train_online,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

OUTPUT_DIR_ENV = "DUALMEM_OUT"


def _derive_seed(root: int, *key: int) -> int:
    """Independent subsystem seed split from one root seed."""
    seq = np.random.SeedSequence(entropy=root, spawn_key=key)
    return int(seq.generate_state(1)[0])


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f"{path.name}.tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(str(v) for v in row) for row in rows)
    _atomic_write(path, "\n".join(lines) + "\n")


def _out_dir(args) -> Path:
    if args.out is not None:
        return Path(args.out)
    env = os.environ.get(OUTPUT_DIR_ENV)
    return Path(env) if env else Path("runs")


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"seeds must be comma-separated integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _dac_config(args) -> DacConfig | None:
    given = [args.dac_k, args.dac_m, args.dac_depth]
    if all(v is None for v in given):
        return None
    if any(v is None for v in given):
        raise ValueError(
            "--dac-k, --dac-m and --dac-depth must be given together")
    return DacConfig(K=args.dac_k, m=args.dac_m, depth=args.dac_depth,
                     cloud_cap=args.cloud_cap)


def _load_matrix(path: str) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except Exception:
        try:
            data = np.loadtxt(path, ndmin=2)
        except Exception as exc:
            raise ValueError(f"cannot parse points file {path}: {exc}")
    if data.size == 0:
        raise ValueError(f"points file {path} is empty")
    return data


def _load_vector(path: str) -> np.ndarray:
    data = _load_matrix(path)
    return data.reshape(-1)


def _build_stream(args, run_seed: int):
    if args.manifest is not None:
        return load_manifest(args.manifest)
    return make_synthetic_stream(
        n_tasks=args.tasks, classes_per_task=args.classes_per_task,
        per_class=args.per_class, dim=args.dim, separation=args.separation,
        seed=_derive_seed(run_seed, 0), batch_size=args.batch_size,
        placement=args.placement)


def _check_rho(rho: float) -> None:
    if not 0 <= rho <= 1:
        raise ValueError("rho must lie in [0,1]")


# ----------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    _check_rho(args.rho)
    dac_cfg = _dac_config(args)
    out = _out_dir(args)
    acc_rows: list[list] = []
    forget_rows: list[list] = []
    hist_rows: list[list] = []
    per_seed_final: list[float] = []
    per_seed_task_il: list[float] = []
    per_seed_forget: list[float] = []
    timings: list[float] = []
    for run_seed in args.seeds:
        stream = _build_stream(args, run_seed)
        mem = None
        if not args.no_memory:
            mem = DualMemory(
                args.buffer, args.rho, stream.n, metric=args.metric,
                selection_mode=args.selection, seed=_derive_seed(run_seed, 2),
                lam=args.lam, dac_cfg=dac_cfg)
        model_cfg = ModelConfig(
            n_classes=max(stream.class_ids) + 1, dim=stream.dim,
            learning_rate=args.lr, seed=_derive_seed(run_seed, 1))
        model, metrics = train_online(stream, mem, model_cfg,
                                      replay_size=args.replay_size)
        for t, row in enumerate(metrics.accuracy_class_il):
            for tau, acc in enumerate(row):
                acc_rows.append([run_seed, "class_il", t, tau, repr(acc)])
        for t, row in enumerate(metrics.accuracy_task_il):
            for tau, acc in enumerate(row):
                acc_rows.append([run_seed, "task_il", t, tau, repr(acc)])
        for t, err in enumerate(metrics.forgetting):
            forget_rows.append([run_seed, t, repr(err)])
        for class_id, count in sorted(metrics.histogram.items()):
            hist_rows.append([run_seed, class_id, count])
        per_seed_final.append(metrics.final_average_accuracy)
        per_seed_task_il.append(float(np.mean(metrics.accuracy_task_il[-1])))
        per_seed_forget.append(metrics.forgetting[-1])
        timings.append(metrics.timings["train_seconds"])
    _write_csv(out / "accuracy.csv",
               ["seed", "mode", "after_task", "eval_task", "accuracy"],
               acc_rows)
    _write_csv(out / "forgetting.csv", ["seed", "after_task", "forgetting"],
               forget_rows)
    _write_csv(out / "histogram.csv", ["seed", "class_id", "count"],
               hist_rows)
    summary = {
        "config": {
            "manifest": args.manifest,
            "tasks": args.tasks,
            "classes_per_task": args.classes_per_task,
            "per_class": args.per_class,
            "dim": args.dim,
            "separation": args.separation,
            "placement": args.placement,
            "batch_size": args.batch_size,
            "buffer": args.buffer,
            "rho": args.rho,
            "metric": args.metric,
            "selection": args.selection,
            "lam": args.lam,
            "dac": None if dac_cfg is None else {
                "k": dac_cfg.K, "m": dac_cfg.m, "depth": dac_cfg.depth,
                "cloud_cap": dac_cfg.cloud_cap},
            "replay_size": args.replay_size,
            "lr": args.lr,
            "no_memory": args.no_memory,
            "seeds": args.seeds,
        },
        "final_average_accuracy": _aggregate(per_seed_final),
        "final_task_il_accuracy": _aggregate(per_seed_task_il),
        "final_forgetting": _aggregate(per_seed_forget),
        "train_seconds": _aggregate(timings),
    }
    _atomic_write(out / "summary.json",
                  json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote accuracy.csv, forgetting.csv, histogram.csv, summary.json "
          f"to {out}")
    return EXIT_OK


def _aggregate(values: list[float]) -> dict:
    return {
        "mean": float(np.mean(values)),
        "std": float(np.std(values)),
        "per_seed": [float(v) for v in values],
    }


# ----------------------------------------------------------- sinkhorn


def cmd_sinkhorn(args) -> int:
    a = _load_vector(args.file_a)
    b = _load_vector(args.file_b)
    if a.shape[0] != b.shape[0]:
        raise ValueError(
            f"vectors differ in length: {a.shape[0]} vs {b.shape[0]}")
    mass_a = to_distribution(a)
    mass_b = to_distribution(b)
    cost = index_cost_matrix(a.shape[0])
    cfg = SinkhornConfig(reg=args.reg)
    result = sinkhorn_distance(mass_a, mass_b, cost, cfg)
    print(f"{result.cost:.9f}")
    return EXIT_OK


# ----------------------------------------------------------------- dac


def cmd_dac(args) -> int:
    points = _load_matrix(args.points_file)
    cfg = DacConfig(K=args.dac_k or 3, m=args.dac_m or 10,
                    depth=args.dac_depth if args.dac_depth is not None else 2,
                    cloud_cap=args.cloud_cap)
    result = dac(points, cfg, seed=args.seed)
    out = _out_dir(args)
    _write_csv(out / "dac.csv", ["index"],
               [[int(i)] for i in result.indices])
    _write_csv(out / "cardinality.csv", ["cardinality", "levels_run"],
               [[result.size, result.levels_run]])
    print(f"merged {points.shape[0]} -> {result.size} points "
          f"({result.levels_run} levels); wrote dac.csv, cardinality.csv "
          f"to {out}")
    return EXIT_OK


# --------------------------------------------------------------- bench


def _mixture_points(n: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(7,)))
    centers = rng.normal(size=(8, dim)) * 6.0
    assign = rng.integers(0, 8, size=n)
    return centers[assign] + rng.normal(size=(n, dim))


def cmd_bench(args) -> int:
    if args.points_file is not None:
        points = _load_matrix(args.points_file)
    else:
        points = _mixture_points(args.n, args.dim, args.seed)
    n = points.shape[0]
    cfg = DacConfig(K=args.dac_k or 5, m=args.dac_m or max(1, n // 2),
                    depth=args.dac_depth if args.dac_depth is not None else 3,
                    cloud_cap=args.cloud_cap)
    if n < 2 * cfg.K:
        raise ValueError(f"need at least {2 * cfg.K} points, got {n}")
    samples = [Sample(i, row, 0) for i, row in enumerate(points)]
    select_seed = _derive_seed(args.seed, 1)

    start = time.perf_counter()
    full_buffers = select_prototype_buffers(
        samples, args.k, args.lam, args.metric, seed=select_seed)
    t_full = time.perf_counter() - start

    start = time.perf_counter()
    reduced = dac(points, cfg, seed=_derive_seed(args.seed, 2))
    working = [samples[i] for i in reduced.indices]
    dac_buffers = select_prototype_buffers(
        working, args.k, args.lam, args.metric, seed=select_seed)
    t_dac = time.perf_counter() - start

    speedup = t_full / t_dac if t_dac > 0 else float("inf")
    out = _out_dir(args)
    _write_csv(out / "bench.csv",
               ["variant", "seconds", "candidates", "prototypes"],
               [["no_dac", repr(t_full), n, len(full_buffers)],
                ["dac", repr(t_dac), reduced.size, len(dac_buffers)]])
    _write_csv(out / "selected_no_dac.csv", ["id"],
               [[s.id] for sb in full_buffers for s in sb.items])
    _write_csv(out / "selected_dac.csv", ["id"],
               [[s.id] for sb in dac_buffers for s in sb.items])
    _atomic_write(out / "bench_summary.json", json.dumps({
        "n": n, "merged": reduced.size, "no_dac_seconds": t_full,
        "dac_seconds": t_dac, "speedup": speedup,
    }, indent=2, sort_keys=True) + "\n")
    print(f"no_dac {t_full:.3f}s  dac {t_dac:.3f}s  speedup {speedup:.2f}x")
    return EXIT_OK


# --------------------------------------------------------------- trace


def cmd_trace(args) -> int:
    _check_rho(args.rho)
    stream = _build_stream(args, args.seed)
    mem = DualMemory(args.buffer, args.rho, stream.n, metric=args.metric,
                     selection_mode=args.selection, seed=args.seed,
                     lam=args.lam, dac_cfg=_dac_config(args))
    dump = {"batch_size": stream.batch_size, "dim": stream.dim, "tasks": []}
    for task in stream.tasks:
        batches = []
        for batch in task_batches(task, stream.batch_size):
            mem.observe_batch(batch)
            batches.append({
                "features": [s.features.tolist() for s in batch],
                "labels": [s.label for s in batch],
            })
        mem.end_task(TaskData(task.task_index, task.classes, task.samples))
        dump["tasks"].append({
            "task_index": task.task_index,
            "classes": list(task.classes),
            "batches": batches,
        })
    out = _out_dir(args)
    snapshot_path = out / "trace_snapshot.json"
    _atomic_write(snapshot_path, mem.snapshot_json())
    if args.dump_stream is not None:
        _atomic_write(Path(args.dump_stream),
                      json.dumps(dump, sort_keys=True) + "\n")
    print(f"wrote {snapshot_path}")
    return EXIT_OK


# ----------------------------------------------------------------- rpc


def cmd_rpc(_args) -> int:
    return rpc.serve()


# ---------------------------------------------------------------- main


def _add_synthetic_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tasks", type=int, default=5,
                   help="synthetic task count (default 5)")
    p.add_argument("--classes-per-task", type=int, default=2,
                   help="classes per synthetic task (default 2)")
    p.add_argument("--per-class", type=int, default=100,
                   help="samples per class (default 100)")
    p.add_argument("--dim", type=int, default=16,
                   help="feature dimension (default 16)")
    p.add_argument("--separation", type=float, default=6.0,
                   help="class mean separation (default 6.0)")
    p.add_argument("--placement", choices=PLACEMENTS, default="axes",
                   help="class mean layout (default axes)")
    p.add_argument("--batch-size", type=int, default=32,
                   help="stream batch size (default 32)")


def _add_memory_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--buffer", type=int, default=200,
                   help="total memory budget lambda_max (default 200)")
    p.add_argument("--rho", type=float, default=0.5,
                   help="long-term share of the budget (default 0.5)")
    p.add_argument("--metric", choices=METRIC_KINDS, default="sinkhorn",
                   help="selection metric (default sinkhorn)")
    p.add_argument("--selection", choices=("nearest", "farthest"),
                   default="nearest", help="sub-buffer fill rule")
    p.add_argument("--lam", type=int, default=None,
                   help="per-sub-buffer capacity override")


def _add_dac_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dac-k", type=int, default=None,
                   help="clusters per merge level")
    p.add_argument("--dac-m", type=int, default=None,
                   help="minimum merged cardinality")
    p.add_argument("--dac-depth", type=int, default=None,
                   help="merge recursion depth")
    p.add_argument("--cloud-cap", type=int, default=None,
                   help="subsample cap for cluster-to-cluster costs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualmem",
        description="Dual-memory continual-learning simulations and tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the online trainer over seeds")
    p.add_argument("--manifest", default=None,
                   help="stream manifest JSON (overrides synthetic options)")
    _add_synthetic_args(p)
    _add_memory_args(p)
    _add_dac_args(p)
    p.add_argument("--replay-size", type=int, default=32,
                   help="replayed samples per step (default 32)")
    p.add_argument("--lr", type=float, default=0.1,
                   help="learning rate (default 0.1)")
    p.add_argument("--no-memory", action="store_true",
                   help="pure online SGD baseline, no buffers")
    p.add_argument("--seeds", type=_seed_list, default=[0],
                   help="comma-separated run seeds (default 0)")
    p.add_argument("--out", default=None,
                   help="output directory (default $" + OUTPUT_DIR_ENV
                   + " or ./runs)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sinkhorn", help="entropic transport cost of two "
                                        "vectors on the index line")
    p.add_argument("file_a")
    p.add_argument("file_b")
    p.add_argument("--reg", type=float, default=None,
                   help="entropic regularizer (default 0.05 * max cost)")
    p.set_defaults(func=cmd_sinkhorn)

    p = sub.add_parser("dac", help="merge a point cloud and write indices")
    p.add_argument("points_file")
    _add_dac_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_dac)

    p = sub.add_parser("bench", help="time prototype selection with and "
                                     "without the merge accelerator")
    p.add_argument("--points-file", default=None,
                   help="points CSV; otherwise synthetic")
    p.add_argument("--n", type=int, default=200,
                   help="synthetic point count (default 200)")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--k", type=int, default=20,
                   help="prototype count (default 20)")
    p.add_argument("--lam", type=int, default=8,
                   help="sub-buffer capacity (default 8)")
    p.add_argument("--metric", choices=METRIC_KINDS, default="sinkhorn")
    _add_dac_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("trace", help="drive a memory over a stream and "
                                     "write its snapshot")
    _add_synthetic_args(p)
    _add_memory_args(p)
    _add_dac_args(p)
    p.add_argument("--manifest", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-stream", default=None,
                   help="also write the streamed batches as JSON")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("rpc", help="serve managers over line-delimited "
                                   "JSON on stdio")
    p.set_defaults(func=cmd_rpc)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
