"""In-process SPMD worker group with barrier-based collectives.

Workers are OS threads sharing one process.  The collectives (all-gather,
all-reduce-sum) are full barriers and the only cross-worker communication;
between barriers each worker owns its embedding shard exclusively.  Every
reduction folds contributions in ascending worker order, so results are
bit-identical across repeated runs at a fixed worker count.

Element counters model the communication volume: an all-gather moves
M*(M-1)*|local| elements (each worker receives every other worker's
tensor), an all-reduce accounts M*|local| (each worker contributes its
local tensor to the reduction).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingShard
from .errors import CollectiveError


@dataclass
class CommStats:
    """Monotone per-epoch counters of collective traffic.

    ``by_tag`` breaks element counts down by the logical operation that
    triggered the collective (gather/scatter/gramian/stats), on top of the
    per-primitive totals.
    """

    all_gather_elems: int = 0
    all_reduce_elems: int = 0
    all_gather_calls: int = 0
    all_reduce_calls: int = 0
    by_tag: dict = field(default_factory=dict)

    def add(self, kind: str, tag: str, elems: int) -> None:
        if kind == "all_gather":
            self.all_gather_elems += elems
            self.all_gather_calls += 1
        else:
            self.all_reduce_elems += elems
            self.all_reduce_calls += 1
        self.by_tag[tag] = self.by_tag.get(tag, 0) + elems

    def reset(self) -> None:
        self.all_gather_elems = 0
        self.all_reduce_elems = 0
        self.all_gather_calls = 0
        self.all_reduce_calls = 0
        self.by_tag = {}

    def snapshot(self) -> dict:
        return {
            "all_gather_elems": self.all_gather_elems,
            "all_reduce_elems": self.all_reduce_elems,
            "all_gather_calls": self.all_gather_calls,
            "all_reduce_calls": self.all_reduce_calls,
            "by_tag": dict(self.by_tag),
        }


class WorkerGroup:
    """Collective context shared by the M workers of one SPMD launch."""

    def __init__(self, size: int, timeout: float = 60.0, comm: CommStats | None = None):
        if size < 1:
            raise CollectiveError(f"worker group size must be >= 1, got {size}")
        self.size = size
        self.timeout = timeout
        self.comm = comm if comm is not None else CommStats()
        self._barrier = threading.Barrier(size)
        self._slots: list = [None] * size

    def abort(self) -> None:
        """Break the barrier; workers blocked in a collective raise."""
        self._barrier.abort()

    def _sync(self) -> None:
        try:
            self._barrier.wait(self.timeout)
        except threading.BrokenBarrierError:
            err = CollectiveError(
                "collective aborted: a worker failed or missed the barrier "
                f"(timeout {self.timeout}s)"
            )
            err.cascade = True  # secondary failure; some peer holds the real error
            raise err from None

    def _collective(self, worker_id: int, local: np.ndarray, combine) -> np.ndarray:
        """Publish, combine all workers' tensors, and release the slots.

        The combine step runs between two barriers so no worker reads a
        peer's tensor after that peer has moved on and possibly mutated
        its buffer.
        """
        local = np.asarray(local)
        if local.ndim < 1:
            raise CollectiveError("collectives require tensors of rank >= 1")
        self._slots[worker_id] = local
        self._sync()
        ref_shape = self._slots[0].shape
        if any(s.shape != ref_shape for s in self._slots):
            # every worker sees the same published slots and raises the same
            # error; aborting here instead would race peers still waking up
            shapes = [s.shape for s in self._slots]
            raise CollectiveError(f"collective shape mismatch across workers: {shapes}")
        out = combine(self._slots)
        self._sync()  # all workers done reading; slots reusable
        return out

    def all_gather(self, worker_id: int, local: np.ndarray, tag: str = "all_gather") -> np.ndarray:
        """Concatenation of every worker's tensor (axis 0), in worker order."""
        out = self._collective(worker_id, local, lambda views: np.concatenate(views, axis=0))
        if worker_id == 0:
            self.comm.add("all_gather", tag, self.size * (self.size - 1) * (out.size // self.size))
        return out

    def all_reduce_sum(self, worker_id: int, local: np.ndarray, tag: str = "all_reduce") -> np.ndarray:
        """Element-wise sum over workers, folded in ascending worker order."""

        def fold(views: list) -> np.ndarray:
            total = views[0].copy()
            for v in views[1:]:
                total = total + v
            return total

        out = self._collective(worker_id, local, fold)
        if worker_id == 0:
            self.comm.add("all_reduce", tag, self.size * out.size)
        return out


def sharded_gather(
    group: WorkerGroup,
    worker_id: int,
    shard: EmbeddingShard,
    ids: np.ndarray,
    num_rows: int,
    tag: str = "gather",
) -> np.ndarray:
    """Fetch table rows for this worker's (R, L) id batch from all shards.

    All workers' id batches are all-gathered; each worker reads its local
    shard for the ids it owns and zero-fills the rest (including the
    sentinel id ``num_rows``, the all-zero phantom row backing padded
    slots).  Exactly one worker owns each real row, so an all-reduce-sum
    of the stacked candidates reconstructs every row exactly; each worker
    keeps the slice for its own batch.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ValueError(f"ids must be (R, L), got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() > num_rows):
        raise IndexError(
            f"gather id out of bounds: valid range is [0, {num_rows}] including sentinel"
        )
    all_ids = group.all_gather(worker_id, ids, tag=f"{tag}_ids")
    d = shard.data.shape[1]
    own = (all_ids >= shard.start) & (all_ids < shard.stop)
    contrib = np.zeros((*all_ids.shape, d), dtype=np.float32)
    contrib[own] = shard.data[all_ids[own] - shard.start]
    summed = group.all_reduce_sum(worker_id, contrib, tag=tag)
    rows_per_worker = ids.shape[0]
    lo = worker_id * rows_per_worker
    return summed[lo:lo + rows_per_worker]


def sharded_scatter(
    group: WorkerGroup,
    worker_id: int,
    shard: EmbeddingShard,
    ids: np.ndarray,
    emb: np.ndarray,
    num_rows: int,
    tag: str = "scatter",
) -> None:
    """Write solved rows back into the sharded table.

    Ids and embeddings are all-gathered; each worker overwrites exactly
    the gathered rows its shard owns (sentinel ids are inert padding).
    A real id appearing more than once across the call is a contract
    violation: each row must be solved exactly once per pass.
    """
    ids = np.asarray(ids, dtype=np.int64)
    emb = np.asarray(emb, dtype=np.float32)
    if ids.ndim != 1 or emb.ndim != 2 or emb.shape[0] != ids.shape[0]:
        raise ValueError("scatter expects ids (R,) and embeddings (R, d)")
    if ids.size and (ids.min() < 0 or ids.max() > num_rows):
        raise IndexError(
            f"scatter id out of bounds: valid range is [0, {num_rows}] including sentinel"
        )
    all_ids = group.all_gather(worker_id, ids, tag=f"{tag}_ids")
    all_emb = group.all_gather(worker_id, emb, tag=tag)
    real = all_ids[all_ids < num_rows]
    if len(np.unique(real)) != len(real):
        # identical gathered data on every worker: all raise deterministically
        raise ValueError("duplicate row id in scatter: rows must be written at most once")
    own = (all_ids >= shard.start) & (all_ids < shard.stop)
    shard.data[all_ids[own] - shard.start] = all_emb[own]


def run_spmd(size: int, program, comm: CommStats | None = None, timeout: float = 60.0) -> list:
    """Launch ``size`` workers running ``program(worker_id, group)``.

    Joins all workers and returns their results in worker order.  If any
    worker raises, the group is aborted (unblocking peers stuck at a
    barrier) and the originating error is re-raised; barrier-abort
    cascades on other workers are suppressed in its favor.
    """
    group = WorkerGroup(size, timeout=timeout, comm=comm)
    results: list = [None] * size
    errors: list = [None] * size

    def runner(wid: int) -> None:
        try:
            results[wid] = program(wid, group)
        except BaseException as exc:  # noqa: BLE001 - must not hang the group
            errors[wid] = exc
            group.abort()

    if size == 1:
        # degenerate group: run inline, keeping tracebacks simple
        runner(0)
    else:
        threads = [threading.Thread(target=runner, args=(wid,), name=f"alsx-worker-{wid}")
                   for wid in range(size)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    raised = [e for e in errors if e is not None]
    if raised:
        primary = [e for e in raised if not isinstance(e, CollectiveError)]
        direct = [e for e in raised if not getattr(e, "cascade", False)]
        raise (primary[0] if primary else (direct[0] if direct else raised[0]))
    return results
