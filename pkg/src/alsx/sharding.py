"""Contiguous balanced partitioning of table rows across workers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class ShardLayout:
    """Uniform split of ``num_rows`` table rows over ``num_shards`` workers.

    Shards own contiguous, disjoint half-open ranges covering
    ``[0, num_rows)`` exactly; sizes differ by at most one, with the
    remainder going to the lowest shard ids.
    """

    num_rows: int
    num_shards: int

    def __post_init__(self):
        if self.num_shards < 1:
            raise ConfigError(f"num_shards must be >= 1, got {self.num_shards}")
        if self.num_rows < self.num_shards:
            raise ConfigError(
                f"cannot shard {self.num_rows} rows over {self.num_shards} workers"
            )

    @property
    def base(self) -> int:
        return self.num_rows // self.num_shards

    @property
    def remainder(self) -> int:
        return self.num_rows % self.num_shards

    def row_range(self, shard_id: int) -> tuple[int, int]:
        """Half-open global row interval owned by ``shard_id``."""
        if not 0 <= shard_id < self.num_shards:
            raise IndexError(f"shard id {shard_id} out of range")
        start = shard_id * self.base + min(shard_id, self.remainder)
        size = self.base + (1 if shard_id < self.remainder else 0)
        return start, start + size

    def shard_of(self, row: int) -> tuple[int, int]:
        """Map a global row to (shard id, local index)."""
        if not 0 <= row < self.num_rows:
            raise IndexError(f"row {row} out of range [0, {self.num_rows})")
        big = self.base + 1
        boundary = self.remainder * big
        if row < boundary:
            sid = row // big
        else:
            sid = self.remainder + (row - boundary) // self.base
        start, _ = self.row_range(sid)
        return sid, row - start

    def owner_of(self, rows: np.ndarray) -> np.ndarray:
        """Vectorized shard-id lookup for an array of global rows."""
        rows = np.asarray(rows, dtype=np.int64)
        big = self.base + 1
        boundary = self.remainder * big
        low = rows // max(big, 1)
        high = self.remainder + (rows - boundary) // max(self.base, 1)
        return np.where(rows < boundary, low, high)

    def ranges(self) -> list[tuple[int, int]]:
        return [self.row_range(s) for s in range(self.num_shards)]
