"""Command-line entry point: train / eval / split / synth / bench-solvers.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical error.  Metrics stream as one JSON object per half-pass to
stdout or to --log.  Set ALSX_LOG to control log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass

from .embeddings import read_table, _atomic_write
from .errors import ConfigError, DataError, NumericalError
from .evaluate import evaluate, per_row_dump
from .params import PRECISIONS, SOLVERS, STATS_MODES, HyperParams
from .solvers import bench_solvers
from .sparse import load_edge_list, split_strong_generalization, synth_low_rank, write_edge_list
from .sparse import EvalSplit
from .trainer import train

log = logging.getLogger(__name__)

# CLI flag name -> HyperParams field
_HP_FLAGS = {
    "d": "dim",
    "epochs": "epochs",
    "lambda": "reg",
    "alpha": "alpha",
    "solver": "solver",
    "cg_iters": "cg_iters",
    "cg_tol": "cg_tol",
    "dense_row_len": "row_len",
    "batch_rows": "batch_rows",
    "shards": "shards",
    "precision": "precision",
    "stats_mode": "stats_mode",
    "seed": "seed",
    "bf16_solve_inputs": "bf16_solve_inputs",
}
_INT_KEYS = {"d", "epochs", "cg_iters", "dense_row_len", "batch_rows", "shards", "seed"}
_FLOAT_KEYS = {"lambda", "alpha", "cg_tol"}
_BOOL_KEYS = {"bf16_solve_inputs"}


@dataclass
class RunConfig:
    """Fully validated invocation: subcommand, paths, and hyperparameters."""

    command: str
    args: argparse.Namespace
    hp: HyperParams | None = None
    ks: tuple[int, ...] = (20, 50)
    grid: list[tuple[float, float]] | None = None


def _add_hyper_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file mirroring the hyperparameters")
    p.add_argument("--d", type=int, help="embedding dimension")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lambda", dest="lambda_", type=float, help="L2 penalty")
    p.add_argument("--alpha", type=float, help="unobserved-pair weight")
    p.add_argument("--solver", choices=SOLVERS)
    p.add_argument("--cg-iters", type=int)
    p.add_argument("--cg-tol", type=float)
    p.add_argument("--dense-row-len", type=int)
    p.add_argument("--batch-rows", type=int)
    p.add_argument("--shards", type=int)
    p.add_argument("--precision", choices=PRECISIONS)
    p.add_argument("--stats-mode", choices=STATS_MODES)
    p.add_argument("--seed", type=int)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alsx",
        description="Sharded alternating-least-squares matrix factorization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model on an edge list")
    p_train.add_argument("--data", required=True, help="training edge list (TSV)")
    p_train.add_argument("--out", help="directory for checkpoints")
    p_train.add_argument("--log", help="metrics JSONL path (default: stdout)")
    p_train.add_argument("--grid-lambda", help="comma list; run every lambda x alpha cell")
    p_train.add_argument("--grid-alpha", help="comma list; run every lambda x alpha cell")
    _add_hyper_flags(p_train)

    p_eval = sub.add_parser("eval", help="recall@K of a checkpoint on a split")
    p_eval.add_argument("--checkpoint", required=True, help="directory with items.ckpt")
    p_eval.add_argument("--inputs", required=True, help="fold-in edge list")
    p_eval.add_argument("--truth", required=True, help="held-out edge list")
    p_eval.add_argument("--k", default="20,50", help="comma list of cutoffs")
    p_eval.add_argument("--out", help="report JSON path (default: stdout)")
    p_eval.add_argument("--dump", help="optional per-row TSV dump path")
    _add_hyper_flags(p_eval)

    p_split = sub.add_parser("split", help="strong-generalization split of an edge list")
    p_split.add_argument("--data", required=True)
    p_split.add_argument("--out", required=True, help="output prefix (.train/.inputs/.truth)")
    p_split.add_argument("--row-frac", type=float, default=0.9)
    p_split.add_argument("--holdout-frac", type=float, default=0.25)
    p_split.add_argument("--seed", type=int, default=0)

    p_synth = sub.add_parser("synth", help="generate a planted low-rank edge list")
    p_synth.add_argument("--rows", type=int, required=True)
    p_synth.add_argument("--cols", type=int, required=True)
    p_synth.add_argument("--rank", type=int, required=True)
    p_synth.add_argument("--nnz", type=int, required=True, help="links per row")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True)

    p_bench = sub.add_parser("bench-solvers", help="time the solver backends")
    p_bench.add_argument("--dims", default="32,64,128,256", help="comma list")
    p_bench.add_argument("--trials", type=int, default=5)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", help="CSV path (default: stdout)")

    return parser


def _read_config_file(path: str) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in _HP_FLAGS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value.strip()
    return out


def _coerce(key: str, value):
    if isinstance(value, str):
        try:
            if key in _INT_KEYS:
                return int(value)
            if key in _FLOAT_KEYS:
                return float(value)
            if key in _BOOL_KEYS:
                if value.lower() in ("1", "true", "yes"):
                    return True
                if value.lower() in ("0", "false", "no"):
                    return False
                raise ValueError(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


def build_hyperparams(args: argparse.Namespace) -> HyperParams:
    """Merge defaults < config file < explicit flags into HyperParams."""
    merged: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        for key, value in _read_config_file(config_path).items():
            merged[_HP_FLAGS[key]] = _coerce(key, value)
    for flag, field_name in _HP_FLAGS.items():
        attr = "lambda_" if flag == "lambda" else flag
        value = getattr(args, attr, None)
        if value is not None:
            merged[field_name] = _coerce(flag, value)
    return HyperParams(**merged)


def _parse_int_list(text: str, what: str) -> tuple[int, ...]:
    try:
        values = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad {what} list: {text!r}") from exc
    if not values:
        raise ConfigError(f"empty {what} list")
    return values


def _parse_float_list(text: str, what: str) -> tuple[float, ...]:
    try:
        values = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad {what} list: {text!r}") from exc
    if not values:
        raise ConfigError(f"empty {what} list")
    return values


def parse_args(argv) -> RunConfig:
    """Parse and validate; raises SystemExit(2) on usage errors."""
    args = _build_parser().parse_args(argv)
    cfg = RunConfig(command=args.command, args=args)
    if args.command in ("train", "eval"):
        cfg.hp = build_hyperparams(args)
    if args.command == "eval":
        cfg.ks = _parse_int_list(args.k, "k")
    if args.command == "train" and (args.grid_lambda or args.grid_alpha):
        lambdas = _parse_float_list(args.grid_lambda, "lambda") if args.grid_lambda \
            else (cfg.hp.reg,)
        alphas = _parse_float_list(args.grid_alpha, "alpha") if args.grid_alpha \
            else (cfg.hp.alpha,)
        cfg.grid = [(lam, a) for lam in lambdas for a in alphas]
    return cfg


def _metrics_writer(path: str | None):
    if path is None:
        return lambda rec: print(json.dumps(rec), flush=True), lambda: None
    fh = open(path, "w", encoding="utf-8")
    return (lambda rec: (fh.write(json.dumps(rec) + "\n"), fh.flush())), fh.close


def _cmd_train(cfg: RunConfig) -> int:
    args = cfg.args
    matrix = load_edge_list(args.data)
    cells = cfg.grid or [(cfg.hp.reg, cfg.hp.alpha)]
    multi = len(cells) > 1
    for lam, alpha in cells:
        hp = cfg.hp.with_overrides(reg=lam, alpha=alpha)
        suffix = f"-lambda{lam:g}-alpha{alpha:g}" if multi else ""
        out_dir = (args.out + suffix) if args.out else None
        log_path = (args.log + suffix) if args.log else None
        sink, close = _metrics_writer(log_path)
        try:
            train(matrix, hp, out_dir=out_dir, metrics_sink=sink)
        finally:
            close()
        if multi:
            log.info("finished grid cell lambda=%g alpha=%g", lam, alpha)
    return 0


def _cmd_eval(cfg: RunConfig) -> int:
    args = cfg.args
    items, _precision = read_table(os.path.join(args.checkpoint, "items.ckpt"))
    inputs = load_edge_list(args.inputs)
    truth = load_edge_list(args.truth)
    if inputs.num_cols != items.shape[0] or truth.num_cols != items.shape[0]:
        raise DataError(
            f"split dims ({inputs.num_cols} cols) do not match checkpoint "
            f"({items.shape[0]} items); was the split written with a #dims header?"
        )
    hp = cfg.hp.with_overrides(dim=items.shape[1])
    split = EvalSplit(train=inputs, test_inputs=inputs, test_truth=truth)
    report = evaluate(split, items, hp, ks=cfg.ks)
    if args.dump:
        _atomic_write(args.dump, per_row_dump(split, items, hp, max(cfg.ks)).encode())
    if args.out:
        _atomic_write(args.out, report.to_json().encode())
    else:
        print(report.to_json())
    return 0


def _cmd_split(cfg: RunConfig) -> int:
    args = cfg.args
    matrix = load_edge_list(args.data)
    split = split_strong_generalization(
        matrix, row_frac=args.row_frac, holdout_frac=args.holdout_frac, seed=args.seed
    )
    write_edge_list(args.out + ".train", split.train)
    write_edge_list(args.out + ".inputs", split.test_inputs)
    write_edge_list(args.out + ".truth", split.test_truth)
    return 0


def _cmd_synth(cfg: RunConfig) -> int:
    args = cfg.args
    matrix = synth_low_rank(args.rows, args.cols, args.rank, args.nnz, seed=args.seed)
    write_edge_list(args.out, matrix)
    return 0


def _cmd_bench(cfg: RunConfig) -> int:
    args = cfg.args
    dims = _parse_int_list(args.dims, "dims")
    csv_text = bench_solvers(dims, trials=args.trials, seed=args.seed)
    if args.out:
        _atomic_write(args.out, csv_text.encode())
    else:
        print(csv_text, end="")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "split": _cmd_split,
    "synth": _cmd_synth,
    "bench-solvers": _cmd_bench,
}


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("ALSX_LOG", "WARNING").upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        cfg = parse_args(sys.argv[1:] if argv is None else argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
