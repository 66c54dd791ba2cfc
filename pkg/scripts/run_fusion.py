#!/usr/bin/env python3
"""Train a 3-member ensemble (seed diversity only) and compare member vs
fused validation segmentation F1."""

import argparse
import json
from pathlib import Path

from clifgan.experiments import DeskRegime, fusion_experiment


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs=3, default=[0, 1, 2])
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--out", default="out/fusion.json")
    args = p.parse_args()

    train_pool, _, val = DeskRegime().datasets()
    member_f1s, fused_f1, _ = fusion_experiment(train_pool, val, seeds=tuple(args.seeds), epochs=args.epochs)
    result = {
        "seeds": args.seeds,
        "member_seg_f1": member_f1s,
        "mean_member_seg_f1": sum(member_f1s) / len(member_f1s),
        "fused_seg_f1": fused_f1,
    }
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(result, indent=2))
    print(json.dumps(result, indent=2))


if __name__ == "__main__":
    main()
