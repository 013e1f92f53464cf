"""CSR link matrices: ingestion, transpose, splits, synthetic instances."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ParseError

_CSR_MAGIC = b"ALSC"
_MAX_ID = 2**63 - 1

_SPLITMIX_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SPLITMIX_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SPLITMIX_M2 = np.uint64(0x94D049BB133111EB)


@dataclass
class SparseMatrix:
    """Immutable CSR matrix of labeled links.

    ``row_ptr`` has ``num_rows + 1`` nondecreasing offsets; within each
    row the column ids are strictly increasing (no duplicate links) and
    ``values`` carries the float32 labels.
    """

    num_rows: int
    num_cols: int
    row_ptr: np.ndarray  # int64, len num_rows + 1
    col_idx: np.ndarray  # int64, len nnz
    values: np.ndarray  # float32, len nnz

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def validate(self) -> None:
        """Check all CSR structural invariants; raises DataError on violation."""
        rp, ci = self.row_ptr, self.col_idx
        if len(rp) != self.num_rows + 1:
            raise DataError("row_ptr length != num_rows + 1")
        if rp[0] != 0:
            raise DataError("row_ptr[0] != 0")
        if rp[-1] != len(ci) or len(ci) != len(self.values):
            raise DataError("row_ptr[-1] inconsistent with nnz arrays")
        if np.any(np.diff(rp) < 0):
            raise DataError("row_ptr not nondecreasing")
        if len(ci) and (ci.min() < 0 or ci.max() >= self.num_cols):
            raise DataError("column id out of range")
        # strictly increasing within each row: any non-increase must sit on
        # a row boundary
        if len(ci) > 1:
            flat_bad = np.where(np.diff(ci) <= 0)[0] + 1
            boundaries = set(rp[1:-1].tolist())
            for pos in flat_bad.tolist():
                if pos not in boundaries:
                    raise DataError("column ids not strictly increasing within a row")

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.num_rows, self.num_cols), dtype=np.float32)
        rows = np.repeat(np.arange(self.num_rows), np.diff(self.row_ptr))
        out[rows, self.col_idx] = self.values
        return out

    def to_coo(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows = np.repeat(np.arange(self.num_rows, dtype=np.int64), np.diff(self.row_ptr))
        return rows, self.col_idx.copy(), self.values.copy()


def from_coo(num_rows, num_cols, rows, cols, vals, dedupe="error") -> SparseMatrix:
    """Build a CSR from triplets.

    ``dedupe='last'`` keeps the final value per (row, col) in input order,
    matching streaming ingestion of repeated links; ``'error'`` rejects
    duplicates.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float32)
    if len(rows):
        if rows.min() < 0 or rows.max() >= num_rows:
            raise DataError("row id out of range")
        if cols.min() < 0 or cols.max() >= num_cols:
            raise DataError("column id out of range")
    seq = np.arange(len(rows), dtype=np.int64)
    order = np.lexsort((seq, cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if len(rows) > 1:
        same = (np.diff(rows) == 0) & (np.diff(cols) == 0)
        if same.any():
            if dedupe == "error":
                raise DataError("duplicate (row, col) entries")
            keep = np.concatenate([~same, [True]])
            rows, cols, vals = rows[keep], cols[keep], vals[keep]
    row_ptr = np.zeros(num_rows + 1, dtype=np.int64)
    np.add.at(row_ptr[1:], rows, 1)
    np.cumsum(row_ptr, out=row_ptr)
    return SparseMatrix(num_rows, num_cols, row_ptr, cols, vals)


def empty_matrix(num_rows: int, num_cols: int) -> SparseMatrix:
    return SparseMatrix(
        num_rows, num_cols,
        np.zeros(num_rows + 1, dtype=np.int64),
        np.zeros(0, dtype=np.int64),
        np.zeros(0, dtype=np.float32),
    )


def load_edge_list(path: str, default_value: float = 1.0) -> SparseMatrix:
    """Parse a TSV edge list "src<TAB>dst[<TAB>value]" into a CSR matrix.

    Lines starting with '#' are comments; a "#dims m n" header fixes the
    dimensions (otherwise 1 + max id per axis).  Repeated links keep the
    last value seen.
    """
    srcs: list[int] = []
    dsts: list[int] = []
    vals: list[float] = []
    declared = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("#dims"):
                    parts = line.split()
                    if len(parts) != 3:
                        raise ParseError(f"{path}:{lineno}: bad #dims header")
                    try:
                        declared = (int(parts[1]), int(parts[2]))
                    except ValueError as exc:
                        raise ParseError(f"{path}:{lineno}: bad #dims header") from exc
                    if declared[0] < 0 or declared[1] < 0:
                        raise ParseError(f"{path}:{lineno}: negative dims")
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise ParseError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields")
            try:
                src, dst = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-integer id") from exc
            if src < 0 or dst < 0:
                raise ParseError(f"{path}:{lineno}: negative id")
            if src > _MAX_ID or dst > _MAX_ID:
                raise ParseError(f"{path}:{lineno}: id overflow")
            if len(parts) == 3:
                try:
                    val = float(parts[2])
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: bad value field") from exc
            else:
                val = default_value
            srcs.append(src)
            dsts.append(dst)
            vals.append(val)
    if declared is not None:
        num_rows, num_cols = declared
    elif srcs:
        num_rows, num_cols = max(srcs) + 1, max(dsts) + 1
    else:
        num_rows = num_cols = 0
    if srcs:
        if max(srcs) >= num_rows or max(dsts) >= num_cols:
            raise DataError(f"{path}: id exceeds declared dims {num_rows}x{num_cols}")
    return from_coo(num_rows, num_cols, srcs, dsts, vals, dedupe="last")


def write_edge_list(path: str, m: SparseMatrix, header_dims: bool = True) -> None:
    """Write a CSR back out as a TSV edge list with a #dims header."""
    from .embeddings import _atomic_write  # shared atomic writer

    lines = []
    if header_dims:
        lines.append(f"#dims {m.num_rows} {m.num_cols}")
    rows, cols, vals = m.to_coo()
    # 9 significant digits round-trip float32 exactly
    for r, c, v in zip(rows.tolist(), cols.tolist(), vals.tolist()):
        lines.append(f"{r}\t{c}\t{v:.9g}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def write_csr_binary(path: str, m: SparseMatrix) -> None:
    """Binary CSR: magic, u64 num_rows/num_cols/nnz, then the three arrays."""
    from .embeddings import _atomic_write

    head = _CSR_MAGIC + struct.pack("<QQQ", m.num_rows, m.num_cols, m.nnz)
    blob = (
        head
        + m.row_ptr.astype("<u8").tobytes()
        + m.col_idx.astype("<u8").tobytes()
        + m.values.astype("<f4").tobytes()
    )
    _atomic_write(path, blob)


def read_csr_binary(path: str) -> SparseMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    head = len(_CSR_MAGIC) + 24
    if len(blob) < head or blob[:4] != _CSR_MAGIC:
        raise DataError(f"{path}: not a binary CSR file")
    num_rows, num_cols, nnz = struct.unpack_from("<QQQ", blob, 4)
    expected = head + (num_rows + 1) * 8 + nnz * 8 + nnz * 4
    if len(blob) != expected:
        raise DataError(f"{path}: size {len(blob)} != expected {expected}")
    off = head
    row_ptr = np.frombuffer(blob, dtype="<u8", count=num_rows + 1, offset=off).astype(np.int64)
    off += (num_rows + 1) * 8
    col_idx = np.frombuffer(blob, dtype="<u8", count=nnz, offset=off).astype(np.int64)
    off += nnz * 8
    values = np.frombuffer(blob, dtype="<f4", count=nnz, offset=off).astype(np.float32)
    m = SparseMatrix(int(num_rows), int(num_cols), row_ptr, col_idx, values)
    m.validate()
    return m


def transpose(m: SparseMatrix) -> SparseMatrix:
    """Exact CSR transpose; an involution."""
    rows, cols, vals = m.to_coo()
    counts = np.bincount(cols, minlength=m.num_cols)
    row_ptr = np.zeros(m.num_cols + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    order = np.argsort(cols, kind="stable")
    # stable sort keeps original row order within each new row, which is
    # already increasing, so the strict-ordering invariant is preserved
    return SparseMatrix(m.num_cols, m.num_rows, row_ptr, rows[order], vals[order])


def _splitmix01(seed: int, ids: np.ndarray) -> np.ndarray:
    """Deterministic per-id hash mapped to [0, 1)."""
    z = ids.astype(np.uint64) + np.uint64(1)
    z = z * _SPLITMIX_GAMMA + (np.uint64(seed) & np.uint64(0xFFFFFFFFFFFFFFFF))
    z = (z ^ (z >> np.uint64(30))) * _SPLITMIX_M1
    z = (z ^ (z >> np.uint64(27))) * _SPLITMIX_M2
    z = z ^ (z >> np.uint64(31))
    return z.astype(np.float64) / float(2**64)


def _row_permutation(seed: int, row: int, n: int) -> np.ndarray:
    key = np.array([np.uint64(seed) & np.uint64(0xFFFFFFFFFFFFFFFF), np.uint64(2)],
                   dtype=np.uint64)
    counter = np.array([0, 0, 0, row], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
    return gen.permutation(n)


@dataclass
class EvalSplit:
    """Strong-generalization split.

    Train rows and test rows are disjoint source-id sets; each test row's
    links are partitioned into fold-in inputs and held-out truth (truth
    non-empty).  All three matrices share the original dimensions.
    """

    train: SparseMatrix
    test_inputs: SparseMatrix
    test_truth: SparseMatrix

    def test_rows(self) -> np.ndarray:
        return np.where(np.diff(self.test_truth.row_ptr) > 0)[0]


def split_strong_generalization(
    m: SparseMatrix,
    row_frac: float = 0.9,
    holdout_frac: float = 0.25,
    seed: int = 0,
) -> EvalSplit:
    """Split rows into train and test sets, holding out part of each test row.

    Row membership comes from a seeded hash of the row id, so ~row_frac of
    rows land in train independent of row order.  Within a test row,
    ceil(holdout_frac * len) links (capped at len - 1 so the fold-in input
    stays non-empty) are chosen by a seeded shuffle as ground truth.  Rows
    with fewer than two links always train: truth and inputs must both be
    non-empty.
    """
    if not (0.0 < row_frac < 1.0) or not (0.0 < holdout_frac < 1.0):
        raise ConfigError("row_frac and holdout_frac must lie in (0, 1)")
    lens = m.row_lengths()
    hashes = _splitmix01(seed, np.arange(m.num_rows, dtype=np.int64))
    is_test = (hashes >= row_frac) & (lens >= 2)

    tr_r, tr_c, tr_v = [], [], []
    in_r, in_c, in_v = [], [], []
    th_r, th_c, th_v = [], [], []
    for r in range(m.num_rows):
        cols, vals = m.row(r)
        if len(cols) == 0:
            continue
        if not is_test[r]:
            tr_r.append(np.full(len(cols), r, dtype=np.int64))
            tr_c.append(cols)
            tr_v.append(vals)
            continue
        k = min(math.ceil(holdout_frac * len(cols)), len(cols) - 1)
        perm = _row_permutation(seed, r, len(cols))
        truth_pos = np.sort(perm[:k])
        input_pos = np.sort(perm[k:])
        th_r.append(np.full(k, r, dtype=np.int64))
        th_c.append(cols[truth_pos])
        th_v.append(vals[truth_pos])
        in_r.append(np.full(len(cols) - k, r, dtype=np.int64))
        in_c.append(cols[input_pos])
        in_v.append(vals[input_pos])

    def build(rs, cs, vs):
        if not rs:
            return empty_matrix(m.num_rows, m.num_cols)
        return from_coo(
            m.num_rows, m.num_cols,
            np.concatenate(rs), np.concatenate(cs), np.concatenate(vs),
        )

    return EvalSplit(build(tr_r, tr_c, tr_v), build(in_r, in_c, in_v), build(th_r, th_c, th_v))


def synth_low_rank(
    m: int, n: int, true_rank: int, per_row_nnz: int, seed: int = 0
) -> SparseMatrix:
    """Synthetic positive-only instance with planted low-rank structure.

    Samples ground-truth factors and keeps, per row, the ``per_row_nnz``
    columns with the largest inner products as links of value 1.0.
    """
    if true_rank > min(m, n):
        raise ConfigError(f"true_rank={true_rank} exceeds min(m, n)={min(m, n)}")
    if per_row_nnz > n:
        raise ConfigError(f"per_row_nnz={per_row_nnz} exceeds num_cols={n}")
    rng = np.random.default_rng(seed)
    left = rng.standard_normal((m, true_rank))
    right = rng.standard_normal((n, true_rank))
    col_idx = np.empty((m, per_row_nnz), dtype=np.int64)
    chunk = 256
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        scores = left[lo:hi] @ right.T
        top = np.argsort(-scores, axis=1, kind="stable")[:, :per_row_nnz]
        col_idx[lo:hi] = np.sort(top, axis=1)
    row_ptr = np.arange(0, (m + 1) * per_row_nnz, per_row_nnz, dtype=np.int64)
    return SparseMatrix(
        m, n, row_ptr, col_idx.reshape(-1),
        np.ones(m * per_row_nnz, dtype=np.float32),
    )
