"""Budgeted subset selection over clustered examples.

Clusters are visited in ascending size order. Each remaining cluster gets
an equal share of the remaining budget, ``floor(remaining / clusters_left)``;
small clusters that fit under their share are taken whole, which rolls
their unused share forward to the larger clusters visited later. Within a
cluster the quota goes to the members with the lowest instability.

The floor arithmetic provably never strands budget (the final cluster's
quota equals the whole remainder), but a redistribution pass exists anyway
and reports how many residual seats it filled — expected zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from xmas.cluster import ClusterModel, cluster_sizes


@dataclass
class ClusterTake:
    """One cluster's slice of the budget, in visit order."""

    cluster_id: int
    size: int
    quota: int
    taken: int
    fully_included: bool


@dataclass
class SelectionResult:
    indices: np.ndarray  # sorted example indices, int64
    budget: int
    per_cluster: list[ClusterTake] = field(default_factory=list)
    redistributed: int = 0  # residual seats filled by the fallback pass

    def __len__(self) -> int:
        return int(self.indices.size)

    def taken_by_cluster(self) -> dict[int, int]:
        return {t.cluster_id: t.taken for t in self.per_cluster}


def _cluster_visit_order(sizes: np.ndarray) -> np.ndarray:
    # ascending size, ties by cluster index
    return np.lexsort((np.arange(sizes.size), sizes))


def _members_by_instability(members: np.ndarray, instability: np.ndarray) -> np.ndarray:
    # lowest instability first, ties by example index
    order = np.lexsort((members, instability[members]))
    return members[order]


def _quota_sweep(model: ClusterModel, budget: int, pick):
    """Shared budget walk; ``pick(members, quota)`` chooses within a cluster.

    Returns (chosen per visited cluster, ClusterTake rows, members_of).
    """
    sizes = cluster_sizes(model)
    k = sizes.size
    members_of = [np.flatnonzero(model.assignment == c) for c in range(k)]
    chosen: dict[int, np.ndarray] = {}
    takes: list[ClusterTake] = []
    taken_total = 0
    for visit, cluster in enumerate(_cluster_visit_order(sizes)):
        cluster = int(cluster)
        quota = (budget - taken_total) // (k - visit)
        members = members_of[cluster]
        if members.size <= quota:
            picked = members
        else:
            picked = pick(cluster, members, quota)
        chosen[cluster] = picked
        takes.append(
            ClusterTake(
                cluster_id=cluster,
                size=int(members.size),
                quota=int(quota),
                taken=int(picked.size),
                fully_included=bool(picked.size == members.size),
            )
        )
        taken_total += int(picked.size)
    return chosen, takes, members_of, taken_total


def _redistribute(model, chosen, takes, members_of, missing: int, next_pick):
    """Residual seats go to the largest clusters first, one at a time."""
    by_take = {t.cluster_id: t for t in takes}
    sizes = cluster_sizes(model)
    order = np.lexsort((np.arange(sizes.size), -sizes))  # descending, ties low id
    filled = 0
    while missing > 0:
        progress = False
        for cluster in order:
            cluster = int(cluster)
            pool = np.setdiff1d(members_of[cluster], chosen[cluster], assume_unique=True)
            if pool.size == 0:
                continue
            extra = next_pick(cluster, pool)
            chosen[cluster] = np.append(chosen[cluster], extra)
            t = by_take[cluster]
            t.taken += 1
            t.fully_included = t.taken == t.size
            filled += 1
            missing -= 1
            progress = True
            if missing == 0:
                break
        if not progress:
            break
    return filled


def _finish(model, chosen, takes, budget, redistributed) -> SelectionResult:
    parts = [arr for arr in chosen.values() if arr.size]
    indices = np.sort(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
    return SelectionResult(
        indices=indices.astype(np.int64),
        budget=int(budget),
        per_cluster=takes,
        redistributed=redistributed,
    )


def select_subset(
    model: ClusterModel,
    instability: np.ndarray,
    budget: int,
) -> SelectionResult:
    """Pick ``budget`` examples spread across clusters, preferring stable ones.

    Always returns exactly min(budget, n_examples) indices. Oversized
    clusters contribute their quota's worth of lowest-instability members,
    ties by example index.
    """
    instability = np.asarray(instability, dtype=np.float64)
    n = int(model.assignment.size)
    if instability.shape != (n,):
        raise ValueError(f"instability has shape {instability.shape}, expected ({n},)")
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")

    def pick(cluster, members, quota):
        return _members_by_instability(members, instability)[:quota]

    chosen, takes, members_of, taken_total = _quota_sweep(model, budget, pick)
    redistributed = 0
    missing = min(budget, n) - taken_total
    if missing > 0:

        def next_pick(cluster, pool):
            return _members_by_instability(pool, instability)[:1]

        redistributed = _redistribute(
            model, chosen, takes, members_of, missing, next_pick
        )
    return _finish(model, chosen, takes, budget, redistributed)


def sample_random_within_clusters(
    model: ClusterModel,
    budget: int,
    seed: int,
) -> SelectionResult:
    """Same quota sweep, but cluster members are drawn uniformly at random.

    Baseline for ablations: identical cluster coverage, no stability ranking.
    """
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")
    rng = np.random.default_rng(np.uint64(seed))

    def pick(cluster, members, quota):
        return rng.choice(members, size=quota, replace=False)

    chosen, takes, members_of, taken_total = _quota_sweep(model, budget, pick)
    redistributed = 0
    missing = min(budget, int(model.assignment.size)) - taken_total
    if missing > 0:

        def next_pick(cluster, pool):
            return rng.choice(pool, size=1, replace=False)

        redistributed = _redistribute(
            model, chosen, takes, members_of, missing, next_pick
        )
    return _finish(model, chosen, takes, budget, redistributed)


def save_indices(result: SelectionResult, path) -> None:
    """One example index per line, sorted ascending."""
    Path(path).write_text("".join(f"{i}\n" for i in result.indices))


def save_report(result: SelectionResult, path) -> None:
    doc = {
        "budget": result.budget,
        "selected": len(result),
        "redistributed": result.redistributed,
        "per_cluster": [
            {
                "cluster_id": t.cluster_id,
                "size": t.size,
                "quota": t.quota,
                "taken": t.taken,
                "fully_included": t.fully_included,
            }
            for t in result.per_cluster
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
