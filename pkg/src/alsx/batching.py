"""Fixed-shape densification of variable-length sparse rows.

Static-shape execution cannot consume ragged rows directly, so each
source row is broken into ceil(len / L) dense rows of length L, padded
with a sentinel column id.  A row map records which dense rows belong to
which source row so its statistics can be merged back by segment-sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CodecError, ConfigError
from .sparse import SparseMatrix


@dataclass
class DenseBatch:
    """Densified view of selected sparse rows.

    ``ids``/``vals``/``mask`` are (R, L); mask is 0 exactly where ids holds
    the padding sentinel (one past the last valid column).  ``row_map[r]``
    is the index into ``source_rows`` of the source row that dense row r
    belongs to, or ``len(source_rows)`` for all-padding filler rows; the
    dense rows of one source row are consecutive.
    """

    ids: np.ndarray  # (R, L) int64
    vals: np.ndarray  # (R, L) float32
    mask: np.ndarray  # (R, L) uint8
    row_map: np.ndarray  # (R,) int64
    source_rows: np.ndarray  # int64, distinct source row ids in batch order
    sentinel: int

    @property
    def num_dense_rows(self) -> int:
        return self.ids.shape[0]

    @property
    def row_len(self) -> int:
        return self.ids.shape[1]

    @property
    def filled_slots(self) -> int:
        return int(self.mask.sum())

    @property
    def wasted_slots(self) -> int:
        return self.ids.size - self.filled_slots


def densify(m: SparseMatrix, rows, row_len: int, pad_to: int | None = None) -> DenseBatch:
    """Pack the given source rows into a dense (R, L) batch.

    Padded slots carry the sentinel id ``m.num_cols`` and value 0, so a
    gather that maps the sentinel to a zero embedding lets padded slots
    contribute exactly nothing downstream.  ``pad_to`` appends fully
    masked filler rows up to a fixed batch height.  A source row with no
    links contributes zero dense rows but still appears in
    ``source_rows``.
    """
    if row_len < 1:
        raise ConfigError(f"row_len must be >= 1, got {row_len}")
    rows = np.asarray(list(rows), dtype=np.int64)
    if len(np.unique(rows)) != len(rows):
        raise ValueError("batch rows must be distinct")
    sentinel = m.num_cols
    lens = np.diff(m.row_ptr)[rows] if len(rows) else np.zeros(0, dtype=np.int64)
    chunks = (lens + row_len - 1) // row_len
    total = int(chunks.sum())
    height = total if pad_to is None else pad_to
    if height < total:
        raise ConfigError(f"pad_to={pad_to} smaller than required {total} dense rows")

    ids = np.full((height, row_len), sentinel, dtype=np.int64)
    vals = np.zeros((height, row_len), dtype=np.float32)
    mask = np.zeros((height, row_len), dtype=np.uint8)
    row_map = np.full(height, len(rows), dtype=np.int64)

    cursor = 0
    for pos, r in enumerate(rows.tolist()):
        cols, rvals = m.row(r)
        n = len(cols)
        if n == 0:
            continue
        nchunk = math.ceil(n / row_len)
        padded = nchunk * row_len
        block_ids = np.full(padded, sentinel, dtype=np.int64)
        block_vals = np.zeros(padded, dtype=np.float32)
        block_ids[:n] = cols
        block_vals[:n] = rvals
        sl = slice(cursor, cursor + nchunk)
        ids[sl] = block_ids.reshape(nchunk, row_len)
        vals[sl] = block_vals.reshape(nchunk, row_len)
        mask[sl] = (ids[sl] != sentinel).astype(np.uint8)
        row_map[sl] = pos
        cursor += nchunk
    return DenseBatch(ids, vals, mask, row_map, rows, sentinel)


def undensify(b: DenseBatch) -> list[tuple[int, list[tuple[int, float]]]]:
    """Reconstruct the source rows exactly, in batch order.

    Raises CodecError if the mask and ids disagree or the row map is not
    grouped in consecutive blocks.
    """
    if np.any((b.mask == 0) != (b.ids == b.sentinel)):
        raise CodecError("mask and padding sentinel disagree")
    n_src = len(b.source_rows)
    if np.any((b.row_map < 0) | (b.row_map > n_src)):
        raise CodecError("row_map index out of range")
    real = b.row_map[b.row_map < n_src]
    if len(real) > 1 and np.any(np.diff(real) < 0):
        raise CodecError("dense rows of one source row must be consecutive")
    if np.any(b.mask[b.row_map == n_src]):
        raise CodecError("filler rows must be fully masked")
    out: list[tuple[int, list[tuple[int, float]]]] = []
    for pos, src in enumerate(b.source_rows.tolist()):
        sel = b.row_map == pos
        keep = b.mask[sel].astype(bool)
        cols = b.ids[sel][keep]
        vals = b.vals[sel][keep]
        out.append((src, list(zip(cols.tolist(), vals.astype(float).tolist()))))
    return out


def plan_batches(lens: np.ndarray, row_len: int, batch_rows: int) -> list[slice]:
    """Greedily group rows (given their lengths, in order) into batches.

    Each group's dense-row demand (sum of ceil(len / L), empty rows cost
    zero) fits in ``batch_rows``.  Returns slices into the row sequence.
    Rows are never split across batches, so a single row must fit.
    """
    chunks = (np.asarray(lens, dtype=np.int64) + row_len - 1) // row_len
    if len(chunks) and int(chunks.max()) > batch_rows:
        raise ConfigError(
            f"a row needs {int(chunks.max())} dense rows, more than batch_rows={batch_rows}"
        )
    plans: list[slice] = []
    start = 0
    used = 0
    for i, c in enumerate(chunks.tolist()):
        if used + c > batch_rows:
            plans.append(slice(start, i))
            start, used = i, 0
        used += c
    if len(chunks):
        plans.append(slice(start, len(chunks)))
    return plans
