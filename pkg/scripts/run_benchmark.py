#!/usr/bin/env python3
"""Run the paired modulated-vs-baseline comparison on the default
synthetic benchmark and print the per-seed and aggregate numbers."""

import argparse
import time


from modfeat.benchmark import run_comparison


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--out", default=None, help="directory for per-run outputs")
    args = parser.parse_args()

    seeds = [int(s) for s in args.seeds.split(",")]
    start = time.time()
    result = run_comparison(seeds=seeds, epochs=args.epochs, out_dir=args.out, verbose=True)
    elapsed = time.time() - start

    fm_acc = result.final("fm", "target_accuracy")
    base_acc = result.final("fixmatch-baseline", "target_accuracy")
    fm_keep = result.final("fm", "keep_rate")
    base_keep = result.final("fixmatch-baseline", "keep_rate")
    print("-" * 64)
    print(f"target accuracy   fm {fm_acc.mean():.4f} +- {fm_acc.std():.4f}   "
          f"baseline {base_acc.mean():.4f} +- {base_acc.std():.4f}")
    print(f"keep rate         fm {fm_keep.mean():.4f}           "
          f"baseline {base_keep.mean():.4f}")
    print(f"mean improvement  {result.mean_improvement:+.4f}")
    print(f"modulation gap    min {result.gaps.min():+.4f}  mean {result.gaps.mean():+.4f}")
    print(f"wall time         {elapsed:.1f}s for {2 * len(seeds)} runs")


if __name__ == "__main__":
    main()
