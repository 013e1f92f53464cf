"""Sharded embedding tables: initialization, Gramians, checkpoints.

Initialization is counter-based: each global row's entries come from an
independent Philox stream keyed on (seed, table side, row index), so the
assembled global table is identical for any shard count.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .bf16 import round_to_bf16
from .errors import ConfigError, DataError
from .params import HyperParams
from .sharding import ShardLayout

SIDES = ("users", "items")
_SIDE_CODE = {"users": 0, "items": 1}

_CKPT_MAGIC = b"ALSX"
_CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIQIB")  # magic, version, num_rows, dim, precision
_PRECISION_CODE = {"f32": 0, "bf16_storage": 1}
_PRECISION_NAME = {v: k for k, v in _PRECISION_CODE.items()}

_U64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@dataclass
class EmbeddingShard:
    """One worker's contiguous slice of an embedding table.

    ``data`` is (stop - start, dim) float32, owned exclusively by its
    worker between collective barriers.  Under bf16 storage every value
    is kept exactly bfloat16-representable.
    """

    shard_id: int
    start: int
    stop: int
    data: np.ndarray
    side: str

    @property
    def num_local_rows(self) -> int:
        return self.stop - self.start

    def owns(self, row: int) -> bool:
        return self.start <= row < self.stop


@dataclass(frozen=True)
class Gramian:
    """d x d self-product of an embedding table, exactly symmetric.

    Symmetry is enforced by construction: the upper triangle is computed
    and mirrored, so ``values == values.T`` bit for bit.
    """

    values: np.ndarray  # (dim, dim) float32

    @classmethod
    def from_product(cls, raw: np.ndarray) -> "Gramian":
        return cls(mirror_upper(np.asarray(raw, dtype=np.float32)))

    @classmethod
    def from_table(cls, table: np.ndarray) -> "Gramian":
        table = np.asarray(table, dtype=np.float32)
        return cls.from_product(table.T @ table)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def mirror_upper(m: np.ndarray) -> np.ndarray:
    """Copy the upper triangle onto the lower one; result is exactly symmetric."""
    upper = np.triu(m)
    return upper + np.triu(m, k=1).T


def _row_normals(seed: int, side_code: int, row: int, dim: int) -> np.ndarray:
    key = np.array([np.uint64(seed) & _U64, np.uint64(side_code)], dtype=np.uint64)
    counter = np.array([0, 0, 0, row], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
    return gen.standard_normal(dim, dtype=np.float32)


def init_rows(seed: int, side: str, start: int, stop: int, dim: int) -> np.ndarray:
    """Initial entries for global rows [start, stop): N(0, 1/sqrt(dim)) i.i.d.

    Deterministic per (seed, side, row), independent of how the table is
    sharded.  The 1/sqrt(dim) scale keeps initial dot-product scores O(1)
    for any dimension.
    """
    scale = np.float32(1.0 / np.sqrt(dim))
    out = np.empty((stop - start, dim), dtype=np.float32)
    code = _SIDE_CODE[side]
    for row in range(start, stop):
        out[row - start] = _row_normals(seed, code, row, dim)
    out *= scale
    return out


def init_embeddings(num_rows: int, hp: HyperParams, side: str) -> list[EmbeddingShard]:
    """Create the table's shards for all workers, quantized per precision."""
    if side not in SIDES:
        raise ConfigError(f"side must be one of {SIDES}, got {side!r}")
    if num_rows < hp.shards:
        raise ConfigError(
            f"num_rows={num_rows} is smaller than shard count {hp.shards}"
        )
    layout = ShardLayout(num_rows, hp.shards)
    shards = []
    for sid in range(hp.shards):
        start, stop = layout.row_range(sid)
        data = init_rows(hp.seed, side, start, stop, hp.dim)
        if hp.precision == "bf16_storage":
            data = round_to_bf16(data)
        shards.append(EmbeddingShard(sid, start, stop, data, side))
    return shards


def concat_shards(shards: list[EmbeddingShard]) -> np.ndarray:
    """Assemble the global table; validates contiguity of the shard ranges."""
    expect = 0
    for s in sorted(shards, key=lambda s: s.shard_id):
        if s.start != expect:
            raise DataError(f"shard {s.shard_id} starts at {s.start}, expected {expect}")
        expect = s.stop
    return np.concatenate([s.data for s in sorted(shards, key=lambda s: s.shard_id)], axis=0)


def shards_from_table(table: np.ndarray, num_shards: int, side: str) -> list[EmbeddingShard]:
    """Split an in-memory global table into owned shard views (copies)."""
    table = np.ascontiguousarray(table, dtype=np.float32)
    layout = ShardLayout(table.shape[0], num_shards)
    out = []
    for sid in range(num_shards):
        start, stop = layout.row_range(sid)
        out.append(EmbeddingShard(sid, start, stop, table[start:stop].copy(), side))
    return out


def write_table(path: str, table: np.ndarray, precision: str = "f32") -> None:
    """Write a checkpoint: header then row-major little-endian float32 data.

    The write is atomic (temp file in the same directory, then rename), so
    a crashed run never leaves a truncated file carrying a valid header.
    """
    table = np.ascontiguousarray(table, dtype=np.float32)
    if table.ndim != 2:
        raise DataError("checkpoint tables must be 2-D")
    header = _CKPT_HEADER.pack(
        _CKPT_MAGIC, _CKPT_VERSION, table.shape[0], table.shape[1],
        _PRECISION_CODE[precision],
    )
    payload = table.astype("<f4", copy=False).tobytes()
    _atomic_write(path, header + payload)


def read_table(path: str) -> tuple[np.ndarray, str]:
    """Read a checkpoint written by :func:`write_table`; returns (table, precision)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _CKPT_HEADER.size:
        raise DataError(f"{path}: truncated checkpoint header")
    magic, version, num_rows, dim, pcode = _CKPT_HEADER.unpack_from(blob)
    if magic != _CKPT_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != _CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    if pcode not in _PRECISION_NAME:
        raise DataError(f"{path}: unknown precision code {pcode}")
    expected = _CKPT_HEADER.size + num_rows * dim * 4
    if len(blob) != expected:
        raise DataError(f"{path}: payload size {len(blob)} != expected {expected}")
    data = np.frombuffer(blob, dtype="<f4", offset=_CKPT_HEADER.size)
    table = data.reshape(num_rows, dim).astype(np.float32)
    return table, _PRECISION_NAME[pcode]


def _atomic_write(path: str, blob: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
