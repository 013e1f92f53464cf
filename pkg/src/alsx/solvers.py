"""Per-row normal equations and the linear-solver backends.

Each target row's ridge system is lhs = alpha*G + reg*I + sum(h h^T) over
its observed links, rhs = sum(y * h).  Inputs are float32; the solve
itself runs in float64 scratch (well within float32 conditioning) and the
solution is returned as float32.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from .batching import DenseBatch
from .bf16 import round_to_bf16
from .embeddings import Gramian
from .errors import NumericalError, SolverError
from .params import SOLVERS, HyperParams


@dataclass
class NormalEq:
    """Sufficient statistics of one row's least-squares problem."""

    lhs: np.ndarray  # (d, d) float32, symmetric
    rhs: np.ndarray  # (d,) float32
    row_id: int


@dataclass
class NormalEqBatch:
    """Stacked normal equations for a batch of target rows."""

    lhs: np.ndarray  # (n, d, d) float32
    rhs: np.ndarray  # (n, d) float32
    rows: np.ndarray  # (n,) int64 global row ids

    def __len__(self) -> int:
        return self.lhs.shape[0]

    def __getitem__(self, i: int) -> NormalEq:
        return NormalEq(self.lhs[i], self.rhs[i], int(self.rows[i]))


def accumulate_stats(
    batch: DenseBatch, emb: np.ndarray, gram: Gramian, hp: HyperParams
) -> NormalEqBatch:
    """Build per-source-row normal equations from gathered embeddings.

    ``emb`` is (R, L, d) with all-zero vectors at padded slots, so padding
    contributes nothing; dense rows are merged per source row by
    segment-sum over the batch's row map.  A source row with no links gets
    the bare regularized system alpha*G + reg*I, rhs = 0.
    """
    emb = np.asarray(emb, dtype=np.float32)
    if emb.shape[:2] != batch.ids.shape:
        raise ValueError(f"embeddings shape {emb.shape} does not match batch {batch.ids.shape}")
    d = emb.shape[2]
    if gram.dim != d:
        raise ValueError(f"gramian dim {gram.dim} != embedding dim {d}")
    n_src = len(batch.source_rows)
    # one extra segment absorbs filler rows; dropped below
    lhs = np.zeros((n_src + 1, d, d), dtype=np.float32)
    rhs = np.zeros((n_src + 1, d), dtype=np.float32)
    per_dense_lhs = np.einsum("rkd,rke->rde", emb, emb)
    per_dense_rhs = np.einsum("rk,rkd->rd", batch.vals, emb)
    np.add.at(lhs, batch.row_map, per_dense_lhs)
    np.add.at(rhs, batch.row_map, per_dense_rhs)
    lhs = lhs[:n_src]
    rhs = rhs[:n_src]
    base = np.float32(hp.alpha) * gram.values + np.float32(hp.reg) * np.eye(d, dtype=np.float32)
    lhs += base
    return NormalEqBatch(lhs, rhs, np.asarray(batch.source_rows, dtype=np.int64))


def build_normal_eq(
    item_ids: np.ndarray,
    labels: np.ndarray,
    table: np.ndarray,
    gram: Gramian,
    hp: HyperParams,
    row_id: int = -1,
) -> NormalEq:
    """Normal equation for one row directly from its link list."""
    d = table.shape[1]
    sub = table[np.asarray(item_ids, dtype=np.int64)].astype(np.float32)
    labels = np.asarray(labels, dtype=np.float32)
    lhs = (
        np.float32(hp.alpha) * gram.values
        + np.float32(hp.reg) * np.eye(d, dtype=np.float32)
        + sub.T @ sub
    )
    rhs = labels @ sub if len(labels) else np.zeros(d, dtype=np.float32)
    return NormalEq(lhs.astype(np.float32), rhs.astype(np.float32), row_id)


def _check_finite(arr: np.ndarray, rows: np.ndarray, what: str) -> None:
    if np.isfinite(arr).all():
        return
    flat = np.isfinite(arr.reshape(len(rows), -1)).all(axis=1)
    bad = int(rows[np.argmin(flat)])
    raise NumericalError(f"non-finite {what} in system for row {bad}")


def _solve_lower(l_fact: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched forward substitution: L x = b with L lower triangular."""
    d = b.shape[1]
    x = np.empty_like(b)
    for j in range(d):
        acc = np.einsum("nk,nk->n", l_fact[:, j, :j], x[:, :j]) if j else 0.0
        x[:, j] = (b[:, j] - acc) / l_fact[:, j, j]
    return x


def _solve_upper(u_fact: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched back substitution: U x = b with U upper triangular."""
    d = b.shape[1]
    x = np.empty_like(b)
    for j in range(d - 1, -1, -1):
        acc = np.einsum("nk,nk->n", u_fact[:, j, j + 1:], x[:, j + 1:]) if j < d - 1 else 0.0
        x[:, j] = (b[:, j] - acc) / u_fact[:, j, j]
    return x


def _find_non_pd_row(lhs: np.ndarray, rows: np.ndarray) -> int:
    for i in range(lhs.shape[0]):
        try:
            np.linalg.cholesky(lhs[i])
        except np.linalg.LinAlgError:
            return int(rows[i])
    return int(rows[0])


def solve_batch(eqs: NormalEqBatch, backend: str, hp: HyperParams) -> np.ndarray:
    """Solve every system in the batch; returns (n, d) float32 solutions."""
    if backend not in SOLVERS:
        raise SolverError(f"unknown solver backend {backend!r}")
    if len(eqs) == 0:
        return np.zeros((0, eqs.lhs.shape[-1] if eqs.lhs.ndim == 3 else 0), dtype=np.float32)
    lhs32 = np.asarray(eqs.lhs, dtype=np.float32)
    rhs32 = np.asarray(eqs.rhs, dtype=np.float32)
    if hp.bf16_solve_inputs:
        lhs32 = round_to_bf16(lhs32)
        rhs32 = round_to_bf16(rhs32)
    _check_finite(lhs32, eqs.rows, "lhs")
    _check_finite(rhs32, eqs.rows, "rhs")
    lhs = lhs32.astype(np.float64)
    rhs = rhs32.astype(np.float64)

    if backend == "cholesky":
        try:
            l_fact = np.linalg.cholesky(lhs)
        except np.linalg.LinAlgError as exc:
            bad = _find_non_pd_row(lhs, eqs.rows)
            raise SolverError(f"cholesky failed: system for row {bad} not positive definite",
                              row_id=bad) from exc
        x = _solve_upper(np.swapaxes(l_fact, 1, 2), _solve_lower(l_fact, rhs))
    elif backend == "lu":
        try:
            x = np.linalg.solve(lhs, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SolverError("lu solve failed: singular system") from exc
    elif backend == "qr":
        q_fact, r_fact = np.linalg.qr(lhs)
        if np.any(np.abs(np.diagonal(r_fact, axis1=1, axis2=2)) < np.finfo(np.float64).tiny):
            raise SolverError("qr solve failed: singular system")
        x = _solve_upper(r_fact, np.einsum("nij,ni->nj", q_fact, rhs))
    else:  # cg
        x = cg_batch(lhs, rhs, hp.effective_cg_iters, hp.cg_tol)

    _check_finite(x, eqs.rows, "solution")
    return x.astype(np.float32)


def solve(eq: NormalEq, backend: str, hp: HyperParams) -> np.ndarray:
    """Solve a single normal equation; see :func:`solve_batch`."""
    batch = NormalEqBatch(eq.lhs[None], eq.rhs[None], np.array([eq.row_id], dtype=np.int64))
    return solve_batch(batch, backend, hp)[0]


def cg_batch(lhs: np.ndarray, rhs: np.ndarray, iters: int, tol: float) -> np.ndarray:
    """Conjugate gradients from x0 = 0 on a stack of SPD systems.

    Each system stops at min(iters, first k with ||r|| <= tol * ||rhs||);
    converged systems are frozen while the rest continue, so the result is
    deterministic and independent of batch composition.
    """
    lhs = np.asarray(lhs, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rs = np.einsum("ni,ni->n", r, r)
    limit = (tol * np.sqrt(np.einsum("ni,ni->n", rhs, rhs))) ** 2
    active = rs > limit
    for _ in range(iters):
        if not active.any():
            break
        ap = np.einsum("nij,nj->ni", lhs, p)
        pap = np.einsum("ni,ni->n", p, ap)
        if np.any(active & (pap <= 0)):
            raise NumericalError("conjugate gradient breakdown: p^T A p <= 0")
        step = np.where(active, rs / np.where(pap == 0, 1.0, pap), 0.0)
        x += step[:, None] * p
        r -= step[:, None] * ap
        rs_new = np.einsum("ni,ni->n", r, r)
        beta = np.where(active, rs_new / np.where(rs == 0, 1.0, rs), 0.0)
        p = np.where(active[:, None], r + beta[:, None] * p, p)
        rs = np.where(active, rs_new, rs)
        active = active & (rs > limit)
    return x


def solve_cg(lhs: np.ndarray, rhs: np.ndarray, iters: int, tol: float) -> np.ndarray:
    """Single-system conjugate gradients; preconditioning hook point.

    Unpreconditioned by design; wrap the system before calling to apply
    one.
    """
    out = cg_batch(np.asarray(lhs)[None], np.asarray(rhs)[None], iters, tol)
    return out[0]


def random_spd(rng: np.random.Generator, count: int, d: int,
               eig_range: tuple[float, float] = (0.5, 5.0)) -> np.ndarray:
    """Stack of well-conditioned random SPD matrices (Q diag(e) Q^T)."""
    lo, hi = eig_range
    out = np.empty((count, d, d), dtype=np.float64)
    for i in range(count):
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        eigs = rng.uniform(lo, hi, size=d)
        out[i] = (q * eigs) @ q.T
        out[i] = (out[i] + out[i].T) / 2.0
    return out


def bench_solvers(dims, trials: int = 5, seed: int = 0, batch: int = 64) -> str:
    """Time every backend on random SPD batches; returns CSV text.

    One row per (backend, dim) with mean and stddev wall-clock seconds
    over the trials.  Rankings are hardware-dependent; treat the output
    as qualitative.
    """
    rng = np.random.default_rng(seed)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["backend", "d", "trials", "mean_seconds", "stddev_seconds"])
    for d in dims:
        lhs = random_spd(rng, batch, d)
        rhs = rng.standard_normal((batch, d))
        eqs = NormalEqBatch(
            lhs.astype(np.float32), rhs.astype(np.float32),
            np.arange(batch, dtype=np.int64),
        )
        hp = HyperParams(dim=d, cg_tol=1e-6)
        for backend in SOLVERS:
            times = []
            solve_batch(eqs, backend, hp)  # warm-up
            for _ in range(trials):
                t0 = time.perf_counter()
                solve_batch(eqs, backend, hp)
                times.append(time.perf_counter() - t0)
            arr = np.asarray(times)
            writer.writerow([backend, d, trials, f"{arr.mean():.6g}", f"{arr.std():.6g}"])
    return buf.getvalue()
