"""Line-delimited JSON control channel for driving memory managers.

One request per line: {"id": ..., "op": ..., "handle": ..., "params":
{...}}; one response per line: {"id": ..., "result": ...} or {"id":
..., "error": {"message": ...}}. Handles are small integers naming
independent manager sessions; create_manager returns one and every
other op takes one. The snapshot op returns the canonical
snapshot string so a host can persist it byte-for-byte.

Sample ids are assigned by arrival order, starting at 0, which makes a
session reproduce the core library exactly when the host streams the
same data in the same batch order. end_task must resend the finished
task's samples in that arrival order.
"""

from __future__ import annotations

import json
import sys

import numpy as np

from dualmem.clustering import DacConfig
from dualmem.memory import DualMemory, replay_batch
from dualmem.stream import Sample, TaskData

OPS = ("create_manager", "observe_batch", "end_task", "replay", "snapshot",
       "close")


def _as_batch(params: dict) -> tuple[np.ndarray, list[int]]:
    features = np.asarray(params["features"], dtype=float)
    labels = params["labels"]
    if features.ndim != 2:
        raise ValueError(
            f"features must be a 2-D array, got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ValueError("features must be finite")
    if len(labels) != features.shape[0]:
        raise ValueError(
            f"got {features.shape[0]} feature rows but {len(labels)} labels")
    labels = [int(v) for v in labels]
    return features, labels


class ManagerSession:
    """One memory manager plus the id bookkeeping the wire protocol needs."""

    def __init__(self, lambda_max: int, rho: float, n: int, metric: str,
                 mode: str, dac_cfg: DacConfig | None, seed: int):
        self.mem = DualMemory(lambda_max, rho, n, metric=metric,
                              selection_mode=mode, seed=seed, dac_cfg=dac_cfg)
        self.dim: int | None = None
        self.next_id = 0
        self.task_index = 0
        self.task_first_id = 0
        # replay draws get a dedicated stream so they never disturb the
        # memory's own rng state
        self.replay_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(100,)))

    def _check_dim(self, features: np.ndarray) -> None:
        if self.dim is None:
            self.dim = features.shape[1]
        elif features.shape[1] != self.dim:
            raise ValueError(
                f"feature dimension changed from {self.dim} to "
                f"{features.shape[1]}")

    def observe_batch(self, features: np.ndarray, labels: list[int]) -> dict:
        self._check_dim(features)
        batch = []
        for row, label in zip(features, labels):
            batch.append(Sample(self.next_id, row.copy(), label))
            self.next_id += 1
        self.mem.observe_batch(batch)
        return {"inserted": len(batch), "seen": self.mem.short.seen}

    def end_task(self, features: np.ndarray, labels: list[int]) -> dict:
        self._check_dim(features)
        observed = self.next_id - self.task_first_id
        if len(labels) != observed:
            raise ValueError(
                f"end_task got {len(labels)} samples but {observed} were "
                f"observed for task {self.task_index}; resend the task's "
                f"data in arrival order")
        samples = [Sample(self.task_first_id + i, row.copy(), label)
                   for i, (row, label) in enumerate(zip(features, labels))]
        task = TaskData(self.task_index, tuple(sorted(set(labels))), samples)
        self.mem.end_task(task)
        ended = self.task_index
        self.task_index += 1
        self.task_first_id = self.next_id
        return {
            "task_index": ended,
            "long_size": self.mem.long.size,
            "short_capacity": self.mem.short.capacity,
        }

    def replay(self, size: int) -> dict:
        if size < 1:
            raise ValueError(f"size must be >= 1, got {size}")
        picked = replay_batch(self.mem, size, self.replay_rng)
        return {
            "features": [s.features.tolist() for s in picked],
            "labels": [s.label for s in picked],
        }

    def snapshot(self) -> dict:
        return {"snapshot": self.mem.snapshot_json()}


class RpcServer:
    def __init__(self):
        self.sessions: dict[int, ManagerSession] = {}
        self.next_handle = 1

    def _session(self, handle) -> ManagerSession:
        session = self.sessions.get(handle)
        if session is None:
            raise ValueError(f"unknown or closed handle {handle!r}")
        return session

    def dispatch(self, op: str, handle, params: dict):
        if op == "create_manager":
            dac = params.get("dac")
            dac_cfg = None
            if dac is not None:
                dac_cfg = DacConfig(
                    K=int(dac["k"]), m=int(dac["m"]), depth=int(dac["depth"]),
                    cloud_cap=dac.get("cloud_cap"))
            session = ManagerSession(
                lambda_max=int(params["lambda_max"]),
                rho=float(params["rho"]),
                n=int(params["n"]),
                metric=params.get("metric", "sinkhorn"),
                mode=params.get("mode", "nearest"),
                dac_cfg=dac_cfg,
                seed=int(params.get("seed", 0)),
            )
            handle = self.next_handle
            self.next_handle += 1
            self.sessions[handle] = session
            return {"handle": handle}
        if op == "close":
            if handle not in self.sessions:
                raise ValueError(f"unknown or closed handle {handle!r}")
            del self.sessions[handle]
            return {"closed": True}
        session = self._session(handle)
        if op == "observe_batch":
            return session.observe_batch(*_as_batch(params))
        if op == "end_task":
            return session.end_task(*_as_batch(params))
        if op == "replay":
            return session.replay(int(params["size"]))
        if op == "snapshot":
            return session.snapshot()
        raise ValueError(f"unknown op {op!r}; expected one of {OPS}")

    def handle_line(self, line: str) -> str | None:
        line = line.strip()
        if not line:
            return None
        rid = None
        try:
            req = json.loads(line)
            if not isinstance(req, dict):
                raise ValueError("request must be a JSON object")
            rid = req.get("id")
            result = self.dispatch(req.get("op"), req.get("handle"),
                                   req.get("params") or {})
            body = {"id": rid, "result": result}
        except Exception as exc:
            body = {"id": rid, "error": {"message": str(exc)}}
        return json.dumps(body, sort_keys=True) + "\n"


def serve(stdin=None, stdout=None) -> int:
    """Serve requests until stdin closes. Returns 0."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    server = RpcServer()
    for line in stdin:
        response = server.handle_line(line)
        if response is not None:
            stdout.write(response)
            stdout.flush()
    return 0
