"""Alternating-least-squares training over the sharded worker group.

One epoch is a user half-pass followed by an item half-pass.  Each
half-pass reduces the fixed side's Gramian, zeroes the solved table, and
walks fixed-shape batches: gather embeddings for the batch's links, build
and solve the per-row normal equations, and scatter the solutions back to
their owning shards.  Rows with no links stay at the zero vector, which
is exactly what their regularized solve would return.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .batching import densify, plan_batches
from .bf16 import round_to_bf16
from .collectives import CommStats, WorkerGroup, run_spmd, sharded_gather, sharded_scatter
from .embeddings import (
    EmbeddingShard,
    Gramian,
    concat_shards,
    init_embeddings,
    mirror_upper,
    shards_from_table,
    write_table,
)
from .errors import ConfigError, NumericalError
from .params import HyperParams
from .solvers import NormalEqBatch, accumulate_stats, solve_batch
from .sparse import SparseMatrix, transpose

log = logging.getLogger(__name__)


@dataclass
class WorkStats:
    """Per-worker accounting of one half-pass."""

    batches: int = 0
    solves: int = 0
    filled_slots: int = 0
    dense_slots: int = 0
    per_worker: list = field(default_factory=list)

    def merge(self, other: "WorkStats") -> None:
        self.batches += other.batches
        self.solves += other.solves
        self.filled_slots += other.filled_slots
        self.dense_slots += other.dense_slots


@dataclass
class TrainState:
    """Sharded model tables plus the per-half-pass metrics history."""

    w_shards: list[EmbeddingShard]
    h_shards: list[EmbeddingShard]
    epoch: int = 0
    history: list[dict] = field(default_factory=list)

    def user_table(self) -> np.ndarray:
        return concat_shards(self.w_shards)

    def item_table(self) -> np.ndarray:
        return concat_shards(self.h_shards)

    @classmethod
    def from_tables(cls, users: np.ndarray, items: np.ndarray, num_shards: int = 1) -> "TrainState":
        return cls(
            shards_from_table(users, num_shards, "users"),
            shards_from_table(items, num_shards, "items"),
        )


def compute_gramian(shards: list[EmbeddingShard], comm: CommStats | None = None) -> Gramian:
    """Reduce per-shard self-products into the global Gramian.

    Every worker computes its local slice's d x d product; an
    all-reduce-sum makes the full table's Gramian available everywhere.
    """

    def program(wid: int, group: WorkerGroup) -> Gramian:
        local = shards[wid].data.T @ shards[wid].data
        return Gramian.from_product(group.all_reduce_sum(wid, local, tag="gramian"))

    return run_spmd(len(shards), program, comm=comm)[0]


def _assigned_rows(mat: SparseMatrix, size: int, wid: int) -> np.ndarray:
    """Non-empty rows owned by this worker (round-robin on global row id)."""
    lens = mat.row_lengths()
    ids = np.arange(mat.num_rows, dtype=np.int64)
    return ids[(ids % size == wid) & (lens > 0)]


def _reduced_gramian(wid: int, group: WorkerGroup, shard: EmbeddingShard) -> Gramian:
    local = shard.data.T @ shard.data
    return Gramian.from_product(group.all_reduce_sum(wid, local, tag="gramian"))


def _scatter_padded(group, wid, shard, rows, solutions, num_solved, batch_rows, dim):
    """Scatter up to batch_rows solutions, padding with inert sentinel ids."""
    ids = np.full(batch_rows, num_solved, dtype=np.int64)
    emb = np.zeros((batch_rows, dim), dtype=np.float32)
    if len(rows):
        ids[: len(rows)] = rows
        emb[: len(rows)] = solutions
    sharded_scatter(group, wid, shard, ids, emb, num_solved, tag="scatter")


def _gather_pass_worker(
    wid: int,
    group: WorkerGroup,
    mat: SparseMatrix,
    solved_shard: EmbeddingShard,
    fixed_shard: EmbeddingShard,
    num_fixed: int,
    hp: HyperParams,
) -> WorkStats:
    gram = _reduced_gramian(wid, group, fixed_shard)
    solved_shard.data[:] = 0.0
    rows = _assigned_rows(mat, group.size, wid)
    plan = plan_batches(mat.row_lengths()[rows], hp.row_len, hp.batch_rows)
    n_steps = int(group.all_gather(wid, np.array([len(plan)], dtype=np.int64), tag="plan").max())
    stats = WorkStats()
    for step in range(n_steps):
        sel = rows[plan[step]] if step < len(plan) else np.zeros(0, dtype=np.int64)
        batch = densify(mat, sel, hp.row_len, pad_to=hp.batch_rows)
        emb = sharded_gather(group, wid, fixed_shard, batch.ids, num_fixed, tag="gather")
        eqs = accumulate_stats(batch, emb, gram, hp)
        solutions = solve_batch(eqs, hp.solver, hp)
        if hp.precision == "bf16_storage":
            solutions = round_to_bf16(solutions)
        _scatter_padded(group, wid, solved_shard, eqs.rows, solutions,
                        mat.num_rows, hp.batch_rows, hp.dim)
        stats.batches += 1
        stats.solves += len(eqs)
        stats.filled_slots += batch.filled_slots
        stats.dense_slots += batch.ids.size
    return stats


def _stats_pass_worker(
    wid: int,
    group: WorkerGroup,
    mat: SparseMatrix,
    solved_shard: EmbeddingShard,
    fixed_shard: EmbeddingShard,
    num_fixed: int,
    hp: HyperParams,
) -> WorkStats:
    """Half-pass in statistics-reduction mode: one target row per step.

    Each worker builds partial normal equations for every worker's current
    row using only its local slice of the fixed table (the training matrix
    is shared host memory, so no id exchange is needed), then a single
    all-reduce of the stacked (M, d, d+1) statistics completes them.
    Communication is d*(d+1) per solved row instead of d per link.
    """
    gram = _reduced_gramian(wid, group, fixed_shard)
    solved_shard.data[:] = 0.0
    d = hp.dim
    m = group.size
    lens = mat.row_lengths()
    all_rows = [_assigned_rows(mat, m, nu) for nu in range(m)]
    n_steps = max(len(r) for r in all_rows)
    base = np.float32(hp.alpha) * gram.values + np.float32(hp.reg) * np.eye(d, dtype=np.float32)
    stats = WorkStats()
    for step in range(n_steps):
        current = [int(r[step]) if step < len(r) else -1 for r in all_rows]
        local = np.zeros((m, d, d + 1), dtype=np.float32)
        for nu, row in enumerate(current):
            if row < 0:
                continue
            cols, vals = mat.row(row)
            sel = (cols >= fixed_shard.start) & (cols < fixed_shard.stop)
            if sel.any():
                sub = fixed_shard.data[cols[sel] - fixed_shard.start]
                local[nu, :, :d] = mirror_upper(sub.T @ sub)
                local[nu, :, d] = vals[sel] @ sub
        full = group.all_reduce_sum(wid, local, tag="stats")
        row = current[wid]
        if row >= 0:
            lhs = mirror_upper(full[wid, :, :d] + base)
            eqs = NormalEqBatch(lhs[None], full[wid, :, d][None],
                                np.array([row], dtype=np.int64))
            solutions = solve_batch(eqs, hp.solver, hp)
            if hp.precision == "bf16_storage":
                solutions = round_to_bf16(solutions)
            _scatter_padded(group, wid, solved_shard, eqs.rows, solutions,
                            mat.num_rows, 1, d)
            stats.solves += 1
            stats.filled_slots += int(lens[row])
        else:
            _scatter_padded(group, wid, solved_shard,
                            np.zeros(0, dtype=np.int64), None, mat.num_rows, 1, d)
        stats.batches += 1
    return stats


def half_pass(side: str, mat: SparseMatrix, state: TrainState, hp: HyperParams,
              comm: CommStats | None = None) -> WorkStats:
    """Solve every row of one side once; the other side stays fixed.

    ``mat`` must be the training matrix for the user side and its
    transpose for the item side.
    """
    if side == "users":
        solved, fixed = state.w_shards, state.h_shards
    elif side == "items":
        solved, fixed = state.h_shards, state.w_shards
    else:
        raise ValueError(f"side must be 'users' or 'items', got {side!r}")
    if len(solved) != hp.shards or len(fixed) != hp.shards:
        raise ConfigError(
            f"state has {len(solved)} shards but hp.shards = {hp.shards}"
        )
    num_fixed = mat.num_cols
    worker = _stats_pass_worker if hp.stats_mode == "stats_reduce" else _gather_pass_worker

    def program(wid: int, group: WorkerGroup) -> WorkStats:
        return worker(wid, group, mat, solved[wid], fixed[wid], num_fixed, hp)

    results = run_spmd(hp.shards, program, comm=comm)
    total = WorkStats(per_worker=results)
    for r in results:
        total.merge(r)
    return total


def compute_objective(state: TrainState, train: SparseMatrix, hp: HyperParams) -> float:
    """Full training objective, accumulated in float64.

    Squared error over observed links, plus alpha times the all-pairs
    predicted-score energy (via the Gramian identity: the sum of squared
    scores over every pair equals sum_u w_u^T (H^T H) w_u), plus the L2
    penalty on both tables.
    """
    w = state.user_table().astype(np.float64)
    h = state.item_table().astype(np.float64)
    rows, cols, vals = train.to_coo()
    obs = 0.0
    chunk = 1 << 18
    for lo in range(0, len(rows), chunk):
        hi = min(lo + chunk, len(rows))
        pred = np.einsum("nd,nd->n", w[rows[lo:hi]], h[cols[lo:hi]])
        obs += float(np.sum((vals[lo:hi].astype(np.float64) - pred) ** 2))
    gram64 = h.T @ h
    weak = hp.alpha * float(np.einsum("ud,de,ue->", w, gram64, w))
    penalty = hp.reg * (float(np.sum(w * w)) + float(np.sum(h * h)))
    total = obs + weak + penalty
    if not np.isfinite(total):
        raise NumericalError(f"objective is non-finite: {total}")
    return total


def train(
    matrix: SparseMatrix,
    hp: HyperParams,
    out_dir: str | None = None,
    metrics_sink=None,
) -> TrainState:
    """Run the full epoch loop and return the trained state.

    Emits one metrics record per half-pass (objective, wall time, and the
    epoch's communication counters so far).  If ``out_dir`` is given,
    checkpoints are written there at the end; on a failed pass a partial
    checkpoint of the current tables is attempted before re-raising.
    """
    matrix.validate()
    transposed = transpose(matrix)
    state = TrainState(
        init_embeddings(matrix.num_rows, hp, "users"),
        init_embeddings(matrix.num_cols, hp, "items"),
    )
    comm = CommStats()
    try:
        for epoch in range(hp.epochs):
            comm.reset()
            for side, mat in (("users", matrix), ("items", transposed)):
                t0 = time.perf_counter()
                work = half_pass(side, mat, state, hp, comm=comm)
                seconds = time.perf_counter() - t0
                objective = compute_objective(state, matrix, hp)
                record = {
                    "epoch": epoch,
                    "side": side,
                    "objective": objective,
                    "seconds": round(seconds, 6),
                    "comm": comm.snapshot(),
                    "work": {
                        "batches": work.batches,
                        "solves": work.solves,
                        "filled_slots": work.filled_slots,
                        "dense_slots": work.dense_slots,
                        "padding_fraction": (
                            1.0 - work.filled_slots / work.dense_slots
                            if work.dense_slots else 0.0
                        ),
                        "per_worker": [
                            {"batches": s.batches, "solves": s.solves,
                             "filled_slots": s.filled_slots}
                            for s in work.per_worker
                        ],
                    },
                }
                state.history.append(record)
                if metrics_sink is not None:
                    metrics_sink(record)
                log.info("epoch %d %s pass: objective %.6g (%.2fs)",
                         epoch, side, objective, seconds)
            state.epoch += 1
    except Exception:
        if out_dir is not None:
            _try_checkpoint(state, hp, out_dir)
        raise
    if out_dir is not None:
        write_checkpoint(state, hp, out_dir)
    return state


def write_checkpoint(state: TrainState, hp: HyperParams, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_table(os.path.join(out_dir, "users.ckpt"), state.user_table(), hp.precision)
    write_table(os.path.join(out_dir, "items.ckpt"), state.item_table(), hp.precision)


def _try_checkpoint(state: TrainState, hp: HyperParams, out_dir: str) -> None:
    try:
        write_checkpoint(state, hp, out_dir)
        log.warning("wrote partial checkpoint to %s after failed pass", out_dir)
    except Exception:  # noqa: BLE001 - best effort; the original error matters more
        log.exception("could not write partial checkpoint")
