"""Deterministic K-means over trajectory rows.

Lloyd iterations with k-means++ seeding from an explicit 64-bit seed.
All distance work runs over fixed-size row chunks and partial reductions
are combined in chunk order, so results are bit-identical for any worker
count. Distances avoid BLAS matmul on purpose: elementwise kernels have a
fixed reduction order everywhere.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from xmas.attn_store import TrajectoryTable

_CHUNK = 256  # fixed: chunk layout must not depend on the worker count


@dataclass
class ClusterModel:
    centroids: np.ndarray  # (K, r)
    assignment: np.ndarray  # (n,) int64 cluster index per example
    inertia: float
    seed: int
    iterations_run: int
    converged: bool = False

    @property
    def n_clusters(self) -> int:
        return int(self.centroids.shape[0])


def _rows(table) -> np.ndarray:
    if isinstance(table, TrajectoryTable):
        return np.asarray(table.scores, dtype=np.float64)
    return np.asarray(table, dtype=np.float64)


def _chunks(n: int):
    return [(s, min(s + _CHUNK, n)) for s in range(0, n, _CHUNK)]


def _sq_dists(block: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (b, K) squared Euclidean distances via broadcasting; deterministic
    # reduction order regardless of ambient BLAS threading.
    diff = block[:, None, :] - centroids[None, :, :]
    return np.einsum("bkr,bkr->bk", diff, diff)


def _map_chunks(fn, spans, threads: int):
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, spans))
    return [fn(span) for span in spans]


def _assign(x: np.ndarray, centroids: np.ndarray, threads: int):
    """Nearest-centroid labels (ties to the lowest index) and total inertia."""
    spans = _chunks(x.shape[0])

    def work(span):
        s, e = span
        d = _sq_dists(x[s:e], centroids)
        labels = np.argmin(d, axis=1)
        return labels, d[np.arange(e - s), labels].sum()

    parts = _map_chunks(work, spans, threads)
    labels = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0, dtype=np.int64)
    inertia = 0.0
    for p in parts:  # fixed chunk order
        inertia += float(p[1])
    return labels.astype(np.int64), inertia


def _update_means(x: np.ndarray, labels: np.ndarray, k: int, threads: int) -> np.ndarray:
    spans = _chunks(x.shape[0])

    def work(span):
        s, e = span
        sums = np.zeros((k, x.shape[1]))
        np.add.at(sums, labels[s:e], x[s:e])
        counts = np.bincount(labels[s:e], minlength=k)
        return sums, counts

    parts = _map_chunks(work, spans, threads)
    sums = np.zeros((k, x.shape[1]))
    counts = np.zeros(k, dtype=np.int64)
    for ps, pc in parts:  # fixed chunk order
        sums += ps
        counts += pc
    means = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], 0.0)
    return means, counts


def _min_dist_to(x: np.ndarray, point: np.ndarray, current: np.ndarray, threads: int):
    spans = _chunks(x.shape[0])

    def work(span):
        s, e = span
        diff = x[s:e] - point[None, :]
        return np.minimum(current[s:e], np.einsum("br,br->b", diff, diff))

    parts = _map_chunks(work, spans, threads)
    return np.concatenate(parts) if parts else current


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator, threads: int) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = x[first]
    d2 = _min_dist_to(x, centroids[0], np.full(n, np.inf), threads)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a centroid; pick deterministically
            idx = int(rng.integers(n))
        else:
            target = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), target, side="right"))
            idx = min(idx, n - 1)
        centroids[i] = x[idx]
        d2 = _min_dist_to(x, centroids[i], d2, threads)
    return centroids


def _repair_empty(x, labels, centroids, counts, threads):
    """Give each empty cluster the point currently farthest from its centroid."""
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return labels, centroids
    dist = np.empty(x.shape[0])
    for s, e in _chunks(x.shape[0]):
        diff = x[s:e] - centroids[labels[s:e]]
        dist[s:e] = np.einsum("br,br->b", diff, diff)
    order = np.argsort(-dist, kind="stable")  # farthest first, ties to lowest index
    taken = 0
    for cluster in empty:
        while taken < order.size and counts[labels[order[taken]]] <= 1:
            taken += 1  # do not drain a singleton cluster
        if taken >= order.size:
            break
        point = order[taken]
        counts[labels[point]] -= 1
        labels[point] = cluster
        counts[cluster] = 1
        centroids[cluster] = x[point]
        taken += 1
    return labels, centroids


def kmeans(
    table,
    k: int,
    seed: int,
    max_iter: int = 100,
    tol: float = 1e-4,
    threads: int = 1,
) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when the relative inertia improvement drops below ``tol``, the
    assignment reaches a fixed point, or ``max_iter`` is hit. The final
    assignment is always consistent with the final centroids.
    """
    x = _rows(table)
    if x.ndim != 2:
        raise ValueError(f"expected 2-D data, got shape {x.shape}")
    n = x.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} available examples")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if tol < 0:
        raise ValueError("tol must be >= 0")

    rng = np.random.default_rng(np.uint64(seed))
    centroids = _kmeans_pp(x, k, rng, threads)
    labels, inertia = _assign(x, centroids, threads)
    iterations = 0
    converged = False
    while iterations < max_iter:
        centroids, counts = _update_means(x, labels, k, threads)
        labels_r, centroids = _repair_empty(x, labels.copy(), centroids, counts, threads)
        if not np.array_equal(labels_r, labels):
            centroids, _ = _update_means(x, labels_r, k, threads)
        new_labels, new_inertia = _assign(x, centroids, threads)
        iterations += 1
        if np.array_equal(new_labels, labels):
            labels, inertia = new_labels, new_inertia
            converged = True
            break
        improvement = (inertia - new_inertia) / inertia if inertia > 0 else 0.0
        labels, inertia = new_labels, new_inertia
        if improvement < tol:
            break
    return ClusterModel(
        centroids=centroids,
        assignment=labels,
        inertia=inertia,
        seed=int(seed),
        iterations_run=iterations,
        converged=converged,
    )


def cluster_sizes(model: ClusterModel) -> np.ndarray:
    """Members per cluster; sums to the number of examples."""
    return np.bincount(model.assignment, minlength=model.n_clusters)


def save_model(model: ClusterModel, json_path, assignments_path=None) -> None:
    """Model dump: JSON metadata plus assignments as a raw little-endian u32 file."""
    json_path = Path(json_path)
    if assignments_path is None:
        assignments_path = json_path.with_suffix(json_path.suffix + ".assign")
    assignments_path = Path(assignments_path)
    doc = {
        "format": "xmas-kmeans",
        "version": 1,
        "seed": model.seed,
        "k": model.n_clusters,
        "n_examples": int(model.assignment.size),
        "inertia": model.inertia,
        "iterations_run": model.iterations_run,
        "converged": model.converged,
        "sizes": cluster_sizes(model).tolist(),
        "centroids": [[float(v) for v in row] for row in model.centroids],
        "assignments_file": assignments_path.name,
    }
    json_path.write_text(json.dumps(doc, indent=2) + "\n")
    assignments_path.write_bytes(model.assignment.astype("<u4").tobytes())


def load_model(json_path) -> ClusterModel:
    json_path = Path(json_path)
    doc = json.loads(json_path.read_text())
    if doc.get("format") != "xmas-kmeans" or doc.get("version") != 1:
        raise ValueError(f"{json_path} is not a version-1 k-means model dump")
    assignments_path = json_path.parent / doc["assignments_file"]
    assignment = np.frombuffer(assignments_path.read_bytes(), dtype="<u4").astype(np.int64)
    if assignment.size != doc["n_examples"]:
        raise ValueError(
            f"assignment file has {assignment.size} entries, model says {doc['n_examples']}"
        )
    return ClusterModel(
        centroids=np.asarray(doc["centroids"], dtype=np.float64),
        assignment=assignment,
        inertia=float(doc["inertia"]),
        seed=int(doc["seed"]),
        iterations_run=int(doc["iterations_run"]),
        converged=bool(doc["converged"]),
    )
