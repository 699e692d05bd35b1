"""Alignment trajectories across checkpoints and their instability scores."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from xmas.attn_store import AttentionDump, TrajectoryTable
from xmas.svd_align import alignment_score

INSTABILITY_VARIANTS = ("abs", "sqr", "var")


def build_trajectory_table(dump: AttentionDump, k: int = 5, threads: int = 1) -> TrajectoryTable:
    """Score every example at every checkpoint.

    Row ``i`` of the result holds the alignment scores of example id ``i``
    across checkpoints. Rows may be computed in parallel; output does not
    depend on ``threads``.
    """
    n = dump.n_examples
    scores = np.zeros((n, dump.n_checkpoints), dtype=np.float64)

    def row(rec):
        return [alignment_score(m, k).score for m in rec.matrices]

    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(row, dump.records))
    else:
        rows = [row(rec) for rec in dump.records]
    for rec, vals in zip(dump.records, rows):
        scores[rec.example_id, :] = vals
    return TrajectoryTable(scores=scores)


def instability_score(values, variant: str = "abs") -> float:
    """Oscillation of one trajectory.

    ``abs``: total absolute change across adjacent checkpoints (zero iff the
    trajectory is constant). ``sqr``: squared changes instead. ``var``:
    population variance of the values, ignoring temporal order.
    """
    t = np.asarray(values, dtype=np.float64)
    if t.ndim != 1 or t.size < 1:
        raise ValueError("trajectory must be a non-empty 1-D sequence")
    if not np.isfinite(t).all():
        raise ValueError("trajectory has non-finite values")
    if variant == "abs":
        return float(np.abs(np.diff(t)).sum())
    if variant == "sqr":
        return float((np.diff(t) ** 2).sum())
    if variant == "var":
        return float(np.var(t))
    raise ValueError(f"unknown instability variant {variant!r}")


def instability_scores(table: TrajectoryTable, variant: str = "abs") -> np.ndarray:
    """Per-example instability over the rows of a trajectory table."""
    s = np.asarray(table.scores, dtype=np.float64)
    if variant == "abs":
        return np.abs(np.diff(s, axis=1)).sum(axis=1)
    if variant == "sqr":
        return (np.diff(s, axis=1) ** 2).sum(axis=1)
    if variant == "var":
        return np.var(s, axis=1)
    raise ValueError(f"unknown instability variant {variant!r}")


def normalize_rows(table: TrajectoryTable) -> np.ndarray:
    """Row-wise z-normalized copy of the scores, for clustering experiments.

    Constant rows become all-zero. The default pipeline clusters raw
    trajectories; this is opt-in via the CLI flag. Returns a plain array
    because normalized scores may be negative.
    """
    s = np.asarray(table.scores, dtype=np.float64)
    mean = s.mean(axis=1, keepdims=True)
    std = s.std(axis=1, keepdims=True)
    return np.where(std > 0, (s - mean) / np.where(std > 0, std, 1.0), 0.0)
