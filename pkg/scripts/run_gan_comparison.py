#!/usr/bin/env python3
"""Compare low-data training with and without generator-synthesized samples
(mask-controllable gan1, random-creator gan2), over several seeds."""

import argparse
import json
import statistics
from pathlib import Path

from clifgan.experiments import DeskRegime, gan_augmentation_trend


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--include-gan2", action="store_true")
    p.add_argument("--out", default="out/gan_comparison.json")
    args = p.parse_args()

    regime = DeskRegime()
    rows = []
    for seed in args.seeds:
        results = gan_augmentation_trend(regime, seed, include_gan2=args.include_gan2)
        rows.append({"seed": seed, **results})
        print(f"seed {seed}: " + "  ".join(f"{k} {v:.3f}" for k, v in results.items()))
    summary = {"runs": rows}
    for arm in rows[0]:
        if arm != "seed":
            summary[f"median_{arm}"] = statistics.median(r[arm] for r in rows)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(summary, indent=2))
    print(json.dumps({k: v for k, v in summary.items() if k != "runs"}, indent=2))


if __name__ == "__main__":
    main()
