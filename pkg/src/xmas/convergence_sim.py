"""Subset-vs-full training comparison on planted-redundancy data.

Builds a corpus of G groups of near-duplicate examples whose labels come
from a teacher model (so the global optimum is realizable), runs the whole
selection pipeline against it with the training model doubling as its own
attention proxy, then trains on the selected subset with per-cluster
importance weights and measures how close it lands to the full-data
optimum. A uniformly random subset trained the same way is the baseline.

Training loops here run tens of thousands of single-example steps, so the
hot paths work on pre-normalized stacked token tensors instead of going
through the per-example model API each step.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from xmas.cluster import cluster_sizes, kmeans
from xmas.select import select_subset
from xmas.svd_align import alignment_score
from xmas.toy_transformer import (
    ToyExample,
    ToyModel,
    _attention_grads,
    _softmax_rows,
    cross_modal_block,
    descent_checkpoints,
    forward,
    rms_normalize,
)
from xmas.trajectory import instability_score

_REF_GRAD_TOL = 1e-8
_REF_MAX_STEPS = 100_000
_DIVERGENCE_LOSS = 1e6
_CURVATURE_FLOOR = 1e-6
_PROXY_INIT_SEED = 0xA11CE
_START_OFFSET_SEED = 0xBEE5


@dataclass
class SyntheticDataset:
    examples: list[ToyExample]
    group_id: np.ndarray
    noise_scale: float
    teacher: ToyModel | None = None

    def __len__(self) -> int:
        return len(self.examples)


@dataclass
class TrainReport:
    distances: np.ndarray  # recorded distance to the reference optimum
    losses: np.ndarray  # recorded mean loss over the evaluation set
    final_gap: float
    weighting: str
    diverged: bool = False
    steps_run: int = 0
    grad_norm_max: float = 0.0
    final_params: np.ndarray | None = None
    params_trace: list = field(default_factory=list)


class _Stacked:
    """Pre-normalized token and label tensors for a uniform example set."""

    def __init__(self, examples: Sequence[ToyExample], gain: float):
        x = np.stack([ex.tokens for ex in examples])
        self.y = np.stack([ex.labels for ex in examples])
        self.xn = rms_normalize(x, gain)
        self.n = len(examples)
        d = x.shape[-1]
        self.shape = (d, self.y.shape[-1])
        self.param_count = 3 * d * self.y.shape[-1]

    def _unflat(self, theta: np.ndarray):
        d, big_d = self.shape
        size = d * big_d
        return (
            theta[:size].reshape(d, big_d),
            theta[size : 2 * size].reshape(d, big_d),
            theta[2 * size :].reshape(d, big_d),
        )

    def sum_grad(self, theta: np.ndarray) -> np.ndarray:
        w_q, w_k, w_v = self._unflat(theta)
        g_q, g_k, g_v = _attention_grads(w_q, w_k, w_v, self.xn, self.y, reduce=True)
        return np.concatenate([g_q.ravel(), g_k.ravel(), g_v.ravel()])

    def one_grad(self, theta: np.ndarray, i: int) -> np.ndarray:
        w_q, w_k, w_v = self._unflat(theta)
        g_q, g_k, g_v = _attention_grads(
            w_q, w_k, w_v, self.xn[i : i + 1], self.y[i : i + 1], reduce=True
        )
        return np.concatenate([g_q.ravel(), g_k.ravel(), g_v.ravel()])

    def per_example_grads(self, theta: np.ndarray) -> np.ndarray:
        w_q, w_k, w_v = self._unflat(theta)
        g_q, g_k, g_v = _attention_grads(w_q, w_k, w_v, self.xn, self.y, reduce=False)
        return np.concatenate(
            [
                g_q.reshape(self.n, -1),
                g_k.reshape(self.n, -1),
                g_v.reshape(self.n, -1),
            ],
            axis=1,
        )

    def mean_loss(self, theta: np.ndarray) -> float:
        w_q, w_k, w_v = self._unflat(theta)
        big_d = w_q.shape[1]
        q = self.xn @ w_q
        k = self.xn @ w_k
        s = _softmax_rows((q @ np.swapaxes(k, -1, -2)) / math.sqrt(big_d))
        f = s @ (self.xn @ w_v)
        n_tok = self.xn.shape[1]
        return float(((f - self.y) ** 2).sum() / (n_tok * big_d) / self.n)


def make_planted_dataset(
    groups: int,
    copies_per_group: int,
    noise_scale: float,
    seed: int,
    n_img: int = 3,
    n_txt: int = 3,
    input_dim: int = 3,
    hidden_dim: int = 2,
    gain: float = 0.25,
) -> SyntheticDataset:
    """G groups of ``copies_per_group`` noisy copies of one seed example.

    Labels are the teacher model's outputs on each (possibly perturbed)
    token matrix, so a model interpolating every example exists.
    """
    if groups < 1:
        raise ValueError("need at least one group")
    if copies_per_group < 1:
        raise ValueError("need at least one copy per group")
    rng = np.random.default_rng(seed)
    teacher = ToyModel(
        w_q=0.8 * rng.standard_normal((input_dim, hidden_dim)),
        w_k=0.8 * rng.standard_normal((input_dim, hidden_dim)),
        w_v=0.8 * rng.standard_normal((input_dim, hidden_dim)),
        gain=gain,
    )
    n = n_img + n_txt
    examples: list[ToyExample] = []
    group_id = np.empty(groups * copies_per_group, dtype=np.int64)
    for g in range(groups):
        base = rng.standard_normal((n, input_dim))
        for c in range(copies_per_group):
            tokens = base if c == 0 else base + noise_scale * rng.standard_normal(
                (n, input_dim)
            )
            ex = ToyExample(
                tokens=tokens,
                labels=np.zeros((n, hidden_dim)),
                n_img=n_img,
                n_txt=n_txt,
            )
            _, _, f = forward(teacher, ex)
            examples.append(
                ToyExample(tokens=tokens, labels=f, n_img=n_img, n_txt=n_txt)
            )
            group_id[len(examples) - 1] = g
    return SyntheticDataset(
        examples=examples, group_id=group_id, noise_scale=noise_scale, teacher=teacher
    )


def mean_loss(model: ToyModel, examples: Sequence[ToyExample]) -> float:
    if not examples:
        return 0.0
    return _Stacked(examples, model.gain).mean_loss(model.flat_params())


def dataset_curvature(
    model: ToyModel,
    examples: Sequence[ToyExample],
    radius: float = 0.1,
    samples: int = 16,
    seed: int = 0,
) -> float:
    """Lipschitz estimate for the summed-loss gradient (step-size control)."""
    rng = np.random.default_rng(seed)
    stack = _Stacked(examples, model.gain)
    theta = model.flat_params()
    base = stack.sum_grad(theta)
    best = 0.0
    for _ in range(samples):
        v = rng.standard_normal(theta.size)
        u = radius * v / np.linalg.norm(v)
        best = max(
            best, float(np.linalg.norm(stack.sum_grad(theta + u) - base)) / radius
        )
    return best


def reference_optimum(
    model: ToyModel,
    examples: Sequence[ToyExample],
    step_size: float,
    grad_tol: float = _REF_GRAD_TOL,
    max_steps: int = _REF_MAX_STEPS,
) -> tuple[np.ndarray, int]:
    """Full-data batch descent until the summed gradient (almost) vanishes."""
    stack = _Stacked(examples, model.gain)
    theta = model.flat_params()
    for step in range(max_steps):
        g = stack.sum_grad(theta)
        if np.linalg.norm(g) < grad_tol:
            return theta, step
        theta = theta - step_size * g
    return theta, max_steps


def train_incremental(
    model: ToyModel,
    dataset: Sequence[ToyExample],
    weights: Sequence[float],
    steps: int,
    step_size: float,
    seed: int,
    reference: np.ndarray | None = None,
    eval_examples: Sequence[ToyExample] | None = None,
    record_every: int = 1,
    weighting_label: str = "custom",
) -> TrainReport:
    """Cyclic single-example descent with per-example weights.

    The visiting order is one seeded shuffle, then cycled. Loss and
    distance-to-reference are recorded every ``record_every`` steps; a loss
    above 1e6 flags divergence and stops the run early.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) != len(dataset):
        raise ValueError("need one weight per example")
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    stack = _Stacked(dataset, model.gain)
    eval_stack = (
        stack if eval_examples is None else _Stacked(eval_examples, model.gain)
    )
    rng = np.random.default_rng(np.uint64(seed))
    order = rng.permutation(len(dataset))

    theta = model.flat_params()
    distances: list[float] = []
    losses: list[float] = []
    trace: list[np.ndarray] = []
    diverged = False
    grad_norm_max = 0.0

    def record():
        losses.append(eval_stack.mean_loss(theta))
        if reference is not None:
            distances.append(float(np.linalg.norm(theta - reference)))
        trace.append(theta.copy())

    record()
    step = 0
    while step < steps:
        idx = int(order[step % len(order)])
        g = stack.one_grad(theta, idx)
        norm = float(np.linalg.norm(g))
        if norm > grad_norm_max:
            grad_norm_max = norm
        theta = theta - step_size * weights[idx] * g
        step += 1
        if step % record_every == 0 or step == steps:
            record()
            if losses[-1] > _DIVERGENCE_LOSS:
                diverged = True
                break

    return TrainReport(
        distances=np.asarray(distances),
        losses=np.asarray(losses),
        final_gap=distances[-1] if distances else float("nan"),
        weighting=weighting_label,
        diverged=diverged,
        steps_run=step,
        grad_norm_max=grad_norm_max,
        final_params=theta,
        params_trace=trace,
    )


def compute_trajectories(
    checkpoints: Sequence[ToyModel],
    examples: Sequence[ToyExample],
    top_k: int = 5,
) -> np.ndarray:
    """(n, r) matrix of cross-modal alignment scores per checkpoint."""
    table = np.empty((len(examples), len(checkpoints)))
    for j, model in enumerate(checkpoints):
        for i, ex in enumerate(examples):
            _, s, _ = forward(model, ex)
            chi = cross_modal_block(s, ex.n_img, ex.n_txt)
            table[i, j] = alignment_score(chi, k=top_k).score
    return table


def _proxy_checkpoints(
    dataset: SyntheticDataset,
    n_checkpoints: int,
    steps_per_span: int,
    step_size: float,
) -> list[ToyModel]:
    ex0 = dataset.examples[0]
    d = ex0.tokens.shape[1]
    big_d = ex0.labels.shape[1]
    gain = dataset.teacher.gain if dataset.teacher is not None else 0.25
    rng = np.random.default_rng(_PROXY_INIT_SEED)
    proxy0 = ToyModel(
        w_q=0.8 * rng.standard_normal((d, big_d)),
        w_k=0.8 * rng.standard_normal((d, big_d)),
        w_v=0.8 * rng.standard_normal((d, big_d)),
        gain=gain,
    )
    return descent_checkpoints(
        proxy0, dataset.examples, n_checkpoints, steps_per_span, step_size
    )


def _train_start(dataset: SyntheticDataset) -> ToyModel:
    """Teacher plus a fixed small offset: realizable optimum, nonzero start."""
    teacher = dataset.teacher
    if teacher is None:
        raise ValueError("dataset has no teacher model")
    rng = np.random.default_rng(_START_OFFSET_SEED)
    theta = teacher.flat_params()
    v = rng.standard_normal(theta.size)
    return teacher.with_params(theta + 0.1 * v / np.linalg.norm(v))


def neighborhood_convergence_bound(
    *,
    eta: float,
    steps: int,
    d0: float,
    xi: float,
    c_prime: float,
    budget: int,
    r_min: int,
    k_per_cluster: int,
    g_max: float,
) -> float:
    """Squared-distance neighborhood certificate for weighted subset descent.

    Contraction of the initial squared gap plus a subset-gradient-error term
    plus a stepsize-noise term. Deliberately evaluated exactly as stated, so
    it is typically very loose; callers report it next to the realized gap.
    """
    contraction = max(0.0, 1.0 - eta * c_prime) ** steps
    return (
        contraction * d0 ** 2
        + 2.0 * xi * min(d0, budget * g_max + xi / c_prime) / c_prime ** 2
        + eta * budget ** 2 * (r_min / k_per_cluster) ** 2 * g_max ** 2
    )


def _directional_curvature(trace, stack: _Stacked) -> float:
    """Smallest full-objective curvature along the recorded trajectory."""
    best = math.inf
    grads = [stack.sum_grad(t) for t in trace]
    for a, b, ga, gb in zip(trace, trace[1:], grads, grads[1:]):
        step_vec = b - a
        norm2 = float(step_vec @ step_vec)
        if norm2 <= 1e-24:
            continue
        best = min(best, float((gb - ga) @ step_vec) / norm2)
    if not math.isfinite(best):
        return _CURVATURE_FLOOR
    return max(best, _CURVATURE_FLOOR)


def _max_pairwise_grad_gap(stack: _Stacked, params_list) -> float:
    worst = 0.0
    for theta in params_list:
        g = stack.per_example_grads(theta)
        for i in range(g.shape[0]):
            diff = g[i + 1 :] - g[i]
            if diff.size:
                worst = max(worst, float(np.linalg.norm(diff, axis=1).max()))
    return worst


def run_xmas_vs_random(
    dataset: SyntheticDataset,
    budget: int,
    seeds: Sequence[int],
    clusters: int | None = None,
    epochs: int = 800,
    n_checkpoints: int = 7,
    top_k: int = 5,
    proxy_steps_per_span: int = 30,
    ref_grad_tol: float = _REF_GRAD_TOL,
    ref_max_steps: int = _REF_MAX_STEPS,
    out_dir=None,
) -> dict:
    """Full pipeline comparison; the training model is its own proxy.

    Per seed: cluster trajectories, pick the budgeted subset, train with
    per-cluster weights, and train an equally sized uniform-random subset
    weighted n/B. Reports planted-group coverage, final parameter gaps, and
    the neighborhood certificate evaluated from measured quantities.
    """
    n = len(dataset)
    if budget > n:
        raise ValueError(f"budget {budget} exceeds dataset size {n}")
    clusters = int(dataset.group_id.max() + 1) if clusters is None else clusters
    examples = dataset.examples

    start = _train_start(dataset)
    full_stack = _Stacked(examples, start.gain)
    beta_hat = dataset_curvature(start, examples)
    eta = 1.0 / (2.0 * beta_hat)
    ref_theta, ref_steps = reference_optimum(
        start, examples, eta, grad_tol=ref_grad_tol, max_steps=ref_max_steps
    )
    full_final_loss = full_stack.mean_loss(ref_theta)
    d0 = float(np.linalg.norm(start.flat_params() - ref_theta))

    checkpoints = _proxy_checkpoints(dataset, n_checkpoints, proxy_steps_per_span, eta)
    table = compute_trajectories(checkpoints, examples, top_k)
    instab = np.array([instability_score(row, "abs") for row in table])

    runs = []
    curves = []
    for seed in seeds:
        cm = kmeans(table, clusters, seed=seed)
        sizes = cluster_sizes(cm)
        r_min, r_max = int(sizes.min()), int(sizes.max())
        sel = select_subset(cm, instab, budget)
        taken = sel.taken_by_cluster()
        picked = [c for c in taken.values() if c > 0]
        k_min = min(picked) if picked else 1
        weights = [r_min / taken[int(cm.assignment[i])] for i in sel.indices]
        subset = [examples[i] for i in sel.indices]
        xmas_report = train_incremental(
            start,
            subset,
            weights,
            steps=epochs * len(subset),
            step_size=eta,
            seed=seed,
            reference=ref_theta,
            eval_examples=examples,
            record_every=len(subset),
            weighting_label="r_min/k per cluster",
        )
        coverage_x = int(np.unique(dataset.group_id[sel.indices]).size)

        rng = np.random.default_rng(np.uint64(seed))
        rand_idx = np.sort(rng.choice(n, size=budget, replace=False))
        rand_subset = [examples[i] for i in rand_idx]
        rand_report = train_incremental(
            start,
            rand_subset,
            [n / budget] * budget,
            steps=epochs * budget,
            step_size=eta,
            seed=seed,
            reference=ref_theta,
            eval_examples=examples,
            record_every=budget,
            weighting_label="uniform n/B",
        )
        coverage_r = int(np.unique(dataset.group_id[rand_idx]).size)

        delta2 = _max_pairwise_grad_gap(
            full_stack,
            [start.flat_params(), xmas_report.final_params, ref_theta],
        )
        g_max = xmas_report.grad_norm_max
        stride = max(1, len(xmas_report.params_trace) // 50)
        c_prime = _directional_curvature(
            xmas_report.params_trace[::stride], full_stack
        )
        xi = clusters * (r_min * delta2 + (r_max - r_min) * g_max)
        bound = neighborhood_convergence_bound(
            eta=eta,
            steps=xmas_report.steps_run,
            d0=d0,
            xi=xi,
            c_prime=c_prime,
            budget=budget,
            r_min=r_min,
            k_per_cluster=k_min,
            g_max=g_max,
        )

        runs.append(
            {
                "seed": int(seed),
                "xmas": {
                    "coverage": coverage_x,
                    "final_gap": xmas_report.final_gap,
                    "final_loss": xmas_report.losses[-1],
                    "diverged": xmas_report.diverged,
                    "selected": sel.indices.tolist(),
                },
                "random": {
                    "coverage": coverage_r,
                    "final_gap": rand_report.final_gap,
                    "final_loss": rand_report.losses[-1],
                    "diverged": rand_report.diverged,
                },
                "neighborhood": {
                    "bound_sq": bound,
                    "realized_gap_sq": xmas_report.final_gap ** 2,
                    "xi": xi,
                    "c_prime": c_prime,
                    "g_max": g_max,
                    "delta2": delta2,
                    "r_min": r_min,
                    "r_max": r_max,
                    "k_per_cluster": k_min,
                },
            }
        )
        for arm, rep in (("xmas", xmas_report), ("random", rand_report)):
            for step_i, (dist, lv) in enumerate(zip(rep.distances, rep.losses)):
                curves.append((int(seed), arm, step_i, dist, lv))

    report = {
        "n_examples": n,
        "groups": int(dataset.group_id.max() + 1),
        "budget": int(budget),
        "clusters": int(clusters),
        "noise_scale": dataset.noise_scale,
        "eta": eta,
        "epochs": epochs,
        "reference_steps": ref_steps,
        "full_final_loss": full_final_loss,
        "d0": d0,
        "runs": runs,
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "simulation.json").write_text(json.dumps(report, indent=2) + "\n")
        with (out_dir / "curves.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "arm", "record", "distance", "loss"])
            writer.writerows(curves)
    return report
