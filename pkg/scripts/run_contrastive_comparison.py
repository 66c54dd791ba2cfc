#!/usr/bin/env python3
"""Compare contrastive-pretrained fine-tuning against from-scratch training
in the low-label synthetic regime, over several seeds."""

import argparse
import json
import statistics
from pathlib import Path

from clifgan.experiments import DeskRegime, contrastive_vs_vanilla


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out", default="out/contrastive_comparison.json")
    args = p.parse_args()

    regime = DeskRegime()
    rows = []
    for seed in args.seeds:
        vanilla, contrastive = contrastive_vs_vanilla(regime, seed)
        rows.append({"seed": seed, "vanilla_cls_f1": vanilla, "contrastive_cls_f1": contrastive})
        print(f"seed {seed}: vanilla {vanilla:.3f}  contrastive {contrastive:.3f}")
    summary = {
        "runs": rows,
        "median_vanilla": statistics.median(r["vanilla_cls_f1"] for r in rows),
        "median_contrastive": statistics.median(r["contrastive_cls_f1"] for r in rows),
    }
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(summary, indent=2))
    print(f"medians: vanilla {summary['median_vanilla']:.3f}, "
          f"contrastive {summary['median_contrastive']:.3f}")


if __name__ == "__main__":
    main()
