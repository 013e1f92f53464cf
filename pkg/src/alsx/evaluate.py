"""Strong-generalization evaluation: fold-in, exact top-K, Recall@K.

Test rows never appear in training; each is embedded from its fold-in
links by the same closed-form ridge solve used during training, then
scored against the item table.  Retrieval is exact (full scoring plus
sort) - approximate maximum-inner-product search is deliberately out of
scope, though it could be slotted in behind :func:`top_k`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .embeddings import Gramian
from .errors import DataError
from .params import HyperParams
from .solvers import build_normal_eq, solve
from .sparse import EvalSplit, SparseMatrix


@dataclass
class EvalReport:
    """Mean recall per cutoff over the test rows with non-empty truth."""

    recall_at: dict[int, float]
    num_test_rows: int
    ks: tuple[int, ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "num_test_rows": self.num_test_rows,
                "recall_at": {str(k): self.recall_at[k] for k in self.ks},
            },
            indent=2,
        )


def fold_in(inputs, item_table: np.ndarray, gram: Gramian, hp: HyperParams) -> np.ndarray:
    """Embed an unseen row from its observed links, item table held fixed.

    ``inputs`` is a sequence of (item id, label) pairs.  An empty input
    list yields the zero vector: with no evidence the regularized system
    has rhs 0.
    """
    pairs = list(inputs)
    if not pairs:
        return np.zeros(item_table.shape[1], dtype=np.float32)
    ids = np.array([p[0] for p in pairs], dtype=np.int64)
    labels = np.array([p[1] for p in pairs], dtype=np.float32)
    eq = build_normal_eq(ids, labels, item_table, gram, hp)
    return solve(eq, hp.solver, hp)


def top_k(w: np.ndarray, item_table: np.ndarray, k: int, exclude=()) -> np.ndarray:
    """Ids of the k items with the largest inner product against ``w``.

    Excluded ids are removed from the candidate set entirely; ties break
    toward the smaller id; if fewer than k candidates remain, all are
    returned.  Exact full ranking, no approximation.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores = item_table.astype(np.float32) @ np.asarray(w, dtype=np.float32)
    candidates = np.arange(item_table.shape[0], dtype=np.int64)
    if len(exclude):
        keep = ~np.isin(candidates, np.fromiter(exclude, dtype=np.int64))
        candidates = candidates[keep]
        scores = scores[keep]
    order = np.lexsort((candidates, -scores))
    return candidates[order[:k]]


def recall_at_k(pred, truth) -> float:
    """|pred intersect truth| / |truth|; the caller fixes k by slicing pred."""
    truth = set(int(t) for t in truth)
    if not truth:
        raise DataError("recall is undefined for empty truth")
    hits = sum(1 for p in pred if int(p) in truth)
    return hits / len(truth)


def evaluate(
    split: EvalSplit,
    item_table: np.ndarray,
    hp: HyperParams,
    ks=(20, 50),
) -> EvalReport:
    """Fold in every test row, retrieve top-K, average recall per cutoff.

    The fold-in input links are excluded from the candidate set:
    re-retrieving the links the row was embedded from would be degenerate.
    Rows are processed in ascending id order, so the report is
    deterministic for a fixed split and model.
    """
    ks = tuple(sorted(int(k) for k in ks))
    if not ks:
        raise ValueError("at least one cutoff required")
    gram = Gramian.from_table(item_table)
    kmax = max(ks)
    sums = {k: 0.0 for k in ks}
    rows = split.test_rows()
    for r in rows.tolist():
        in_cols, in_vals = split.test_inputs.row(r)
        truth_cols, _ = split.test_truth.row(r)
        w = fold_in(zip(in_cols.tolist(), in_vals.tolist()), item_table, gram, hp)
        preds = top_k(w, item_table, kmax, exclude=in_cols.tolist())
        truth = set(truth_cols.tolist())
        for k in ks:
            sums[k] += recall_at_k(preds[:k], truth)
    n = len(rows)
    recall = {k: (sums[k] / n if n else 0.0) for k in ks}
    return EvalReport(recall, n, ks)


def per_row_dump(split: EvalSplit, item_table: np.ndarray, hp: HyperParams, k: int) -> str:
    """TSV dump (row id, recall@k, top-k ids) for qualitative inspection."""
    gram = Gramian.from_table(item_table)
    lines = []
    for r in split.test_rows().tolist():
        in_cols, in_vals = split.test_inputs.row(r)
        truth_cols, _ = split.test_truth.row(r)
        w = fold_in(zip(in_cols.tolist(), in_vals.tolist()), item_table, gram, hp)
        preds = top_k(w, item_table, k, exclude=in_cols.tolist())
        rec = recall_at_k(preds, set(truth_cols.tolist()))
        lines.append(f"{r}\t{rec:.4f}\t{','.join(str(p) for p in preds.tolist())}")
    return "\n".join(lines) + ("\n" if lines else "")


def popularity_ranking(train: SparseMatrix) -> np.ndarray:
    """Columns ranked by in-degree (count of training links), ties by id."""
    degree = np.bincount(train.col_idx, minlength=train.num_cols)
    ids = np.arange(train.num_cols, dtype=np.int64)
    return ids[np.lexsort((ids, -degree))]


def evaluate_popularity(split: EvalSplit, ks=(20, 50)) -> EvalReport:
    """Recall of the degree-based ranking; the no-model baseline."""
    ks = tuple(sorted(int(k) for k in ks))
    ranking = popularity_ranking(split.train)
    kmax = max(ks)
    sums = {k: 0.0 for k in ks}
    rows = split.test_rows()
    for r in rows.tolist():
        in_cols, _ = split.test_inputs.row(r)
        truth_cols, _ = split.test_truth.row(r)
        banned = set(in_cols.tolist())
        preds = [c for c in ranking.tolist() if c not in banned][:kmax]
        truth = set(truth_cols.tolist())
        for k in ks:
            sums[k] += recall_at_k(preds[:k], truth)
    n = len(rows)
    return EvalReport({k: (sums[k] / n if n else 0.0) for k in ks}, n, ks)
