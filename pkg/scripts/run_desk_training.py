#!/usr/bin/env python3
"""Train the width-0.25 segmentation model on the synthetic desk-scale
dataset and report validation F1."""

import argparse
import json
from pathlib import Path

from clifgan.experiments import DeskRegime, _val_seg_f1, train_desk_segnet


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=80)
    p.add_argument("--out", default="out/desk_training.json")
    args = p.parse_args()

    train_pool, _, val = DeskRegime().datasets()
    ckpt, model = train_desk_segnet(train_pool, val, seed=args.seed, epochs=args.epochs)
    f1 = _val_seg_f1(model, val)
    result = {"seed": args.seed, "epochs": args.epochs, "val_seg_f1": f1,
              "final_train_loss": ckpt.train_log[-1][1]}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(result, indent=2))
    print(json.dumps(result, indent=2))


if __name__ == "__main__":
    main()
