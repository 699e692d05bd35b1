#!/usr/bin/env python3
"""Build a small attention-trajectory dump to exercise the CLI pipeline.

Plants G groups of near-duplicate examples, runs a few proxy descent
checkpoints, and records each example's cross-modal attention block at every
checkpoint. The resulting .xmad file feeds `xmas score` / `cluster` / `select`;
the group labels land next to it for eyeballing coverage.
"""

import argparse
from pathlib import Path

import numpy as np

from xmas.attn_store import AttentionDump, ExampleRecord, write_attention_dump
from xmas.convergence_sim import make_planted_dataset
from xmas.toy_transformer import ToyModel, cross_modal_block, descent_checkpoints, forward


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--groups", type=int, default=8)
    ap.add_argument("--copies", type=int, default=5)
    ap.add_argument("--noise", type=float, default=0.01)
    ap.add_argument("--checkpoints", type=int, default=7)
    ap.add_argument("--steps-per-span", type=int, default=30)
    ap.add_argument("--step-size", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", type=Path, default=Path("demo.xmad"))
    args = ap.parse_args()

    dataset = make_planted_dataset(
        args.groups, args.copies, noise_scale=args.noise, seed=args.seed
    )
    ex0 = dataset.examples[0]
    d, hidden = ex0.tokens.shape[1], ex0.labels.shape[1]
    rng = np.random.default_rng(args.seed)
    proxy = ToyModel(
        w_q=0.8 * rng.standard_normal((d, hidden)),
        w_k=0.8 * rng.standard_normal((d, hidden)),
        w_v=0.8 * rng.standard_normal((d, hidden)),
        gain=dataset.teacher.gain,
    )
    checkpoints = descent_checkpoints(
        proxy, dataset.examples, args.checkpoints, args.steps_per_span, args.step_size
    )

    records = []
    for i, example in enumerate(dataset.examples):
        per_ckpt = []
        for model in checkpoints:
            _, s, _ = forward(model, example)
            per_ckpt.append(cross_modal_block(s, example.n_img, example.n_txt))
        records.append(ExampleRecord(i, per_ckpt))

    write_attention_dump(AttentionDump(1, len(checkpoints), records), args.out)
    labels_path = args.out.with_suffix(".groups.txt")
    labels_path.write_text("".join(f"{g}\n" for g in dataset.group_id))
    print(f"wrote {args.out} ({len(records)} examples x {len(checkpoints)} checkpoints)")
    print(f"wrote {labels_path}")


if __name__ == "__main__":
    main()
