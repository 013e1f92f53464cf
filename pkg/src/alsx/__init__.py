"""Sharded alternating-least-squares matrix factorization.

Implicit-feedback ALS with the embedding tables uniformly sharded over a
group of simulated SPMD workers; collective gather/scatter and Gramian
reduction keep every worker's view consistent.  Includes dense batching
for static-shape execution, software-emulated bfloat16 table storage,
four linear-solver backends, and a strong-generalization Recall@K
evaluation harness.
"""

from .batching import DenseBatch, densify, undensify
from .bf16 import is_bf16_exact, round_to_bf16
from .collectives import CommStats, WorkerGroup, run_spmd, sharded_gather, sharded_scatter
from .embeddings import (
    EmbeddingShard,
    Gramian,
    concat_shards,
    init_embeddings,
    read_table,
    write_table,
)
from .errors import (
    AlsxError,
    CodecError,
    CollectiveError,
    ConfigError,
    DataError,
    NumericalError,
    ParseError,
    SolverError,
)
from .evaluate import EvalReport, evaluate, fold_in, recall_at_k, top_k
from .params import HyperParams
from .sharding import ShardLayout
from .solvers import (
    NormalEq,
    NormalEqBatch,
    accumulate_stats,
    bench_solvers,
    solve,
    solve_batch,
    solve_cg,
)
from .sparse import (
    EvalSplit,
    SparseMatrix,
    load_edge_list,
    split_strong_generalization,
    synth_low_rank,
    transpose,
)
from .trainer import TrainState, compute_gramian, compute_objective, half_pass, train

__version__ = "0.1.0"

__all__ = [
    "AlsxError",
    "CodecError",
    "CollectiveError",
    "CommStats",
    "ConfigError",
    "DataError",
    "DenseBatch",
    "EmbeddingShard",
    "EvalReport",
    "EvalSplit",
    "Gramian",
    "HyperParams",
    "NormalEq",
    "NormalEqBatch",
    "NumericalError",
    "ParseError",
    "ShardLayout",
    "SolverError",
    "SparseMatrix",
    "TrainState",
    "WorkerGroup",
    "accumulate_stats",
    "bench_solvers",
    "compute_gramian",
    "compute_objective",
    "concat_shards",
    "densify",
    "evaluate",
    "fold_in",
    "half_pass",
    "init_embeddings",
    "is_bf16_exact",
    "load_edge_list",
    "read_table",
    "recall_at_k",
    "round_to_bf16",
    "run_spmd",
    "sharded_gather",
    "sharded_scatter",
    "solve",
    "solve_batch",
    "solve_cg",
    "split_strong_generalization",
    "synth_low_rank",
    "top_k",
    "train",
    "transpose",
    "undensify",
    "write_table",
]
