"""Run hyperparameters and the precision policy shared by every stage."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

from .errors import ConfigError

SOLVERS = ("cholesky", "lu", "qr", "cg")
PRECISIONS = ("f32", "bf16_storage")
STATS_MODES = ("embedding_gather", "stats_reduce")

# Standard tuning grid for the norm penalty and the unobserved weight.
GRID_LAMBDA = (5e-2, 1e-2, 5e-3, 1e-3, 5e-4, 1e-4)
GRID_ALPHA = (1e-3, 5e-4, 1e-4, 5e-5, 1e-5, 5e-6, 1e-6)


@dataclass(frozen=True)
class HyperParams:
    """Model and run configuration.

    ``dim`` is the embedding dimension, ``reg`` the L2 penalty, ``alpha``
    the weight applied to the all-pairs weakly-negative term.  ``row_len``
    is the fixed dense-row length used when variable-length sparse rows
    are repacked into static-shape batches, and ``batch_rows`` the fixed
    number of dense rows per batch.  ``shards`` is the number of SPMD
    workers the embedding tables are partitioned over.
    """

    dim: int = 128
    reg: float = 5e-2
    alpha: float = 1e-6
    epochs: int = 16
    solver: str = "cg"
    cg_iters: int | None = None  # defaults to dim at solve time
    cg_tol: float = 1e-5
    row_len: int = 8
    batch_rows: int = 4096
    precision: str = "f32"
    seed: int = 0
    shards: int = 1
    stats_mode: str = "embedding_gather"
    # Diagnostic only: quantize normal-equation inputs to bfloat16 before
    # solving.  This is the failure mode the storage/solve precision split
    # exists to avoid; useful for demonstrating the resulting divergence.
    bf16_solve_inputs: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.row_len < 1:
            raise ConfigError(f"row_len must be >= 1, got {self.row_len}")
        if self.batch_rows < 1:
            raise ConfigError(f"batch_rows must be >= 1, got {self.batch_rows}")
        if self.shards < 1:
            raise ConfigError(f"shards must be >= 1, got {self.shards}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not (self.cg_tol > 0):
            raise ConfigError(f"cg_tol must be > 0, got {self.cg_tol}")
        if self.cg_iters is not None and self.cg_iters < 1:
            raise ConfigError(f"cg_iters must be >= 1, got {self.cg_iters}")
        for name in ("reg", "alpha"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        if self.stats_mode not in STATS_MODES:
            raise ConfigError(f"stats_mode must be one of {STATS_MODES}, got {self.stats_mode!r}")

    @property
    def effective_cg_iters(self) -> int:
        return self.dim if self.cg_iters is None else self.cg_iters

    def with_overrides(self, **kwargs) -> "HyperParams":
        """Return a copy with the given fields replaced (re-validated)."""
        return replace(self, **kwargs)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


def grid_cells(lambdas=GRID_LAMBDA, alphas=GRID_ALPHA):
    """Yield (reg, alpha) combinations of the tuning grid, row-major."""
    for lam in lambdas:
        for a in alphas:
            yield lam, a
