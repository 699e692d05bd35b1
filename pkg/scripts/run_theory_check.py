#!/usr/bin/env python3
"""Run the gradient-bound certificate sweep and print a readable summary.

Same machinery as `xmas verify-theory`, but with a human-oriented report:
per-checkpoint ratios, measured spans, and the tightest certificate, instead
of raw JSON.
"""

import argparse
import sys

from xmas.toy_transformer import build_verification_fixture, verify_bounds


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--interp-points", type=int, default=10)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    models, dataset, cfg = build_verification_fixture(seed=args.seed)
    report = verify_bounds(
        models, dataset, cfg, interp_points=args.interp_points, threads=args.threads
    )

    n = len(dataset)
    print(f"fixture: {n} examples, {len(models)} checkpoints, "
          f"{n * (n - 1) // 2} pairs")
    print(f"checkpoint checks: {report.checkpoint_checks}  "
          f"worst gap/bound ratio {report.max_checkpoint_ratio:.4f}")
    print(f"interval checks:   {report.interval_checks}  "
          f"worst gap/bound ratio {report.max_interval_ratio:.4f}")
    print("measured checkpoint spans: "
          + ", ".join(f"{d:.4f}" for d in report.deltas))
    print(f"largest gradient norm seen: {report.max_grad_norm:.4f}")
    print(f"tightest certificate: {report.min_bound:.4f} "
          f"({'non-vacuous' if report.nonvacuous else 'VACUOUS'})")
    for w in report.warnings:
        print(f"warning: {w}")
    if report.violations:
        print(f"{len(report.violations)} VIOLATIONS:")
        for v in report.violations[:10]:
            print(f"  {v}")
        return 1
    print("all certificates hold")
    return 0


if __name__ == "__main__":
    sys.exit(main())
