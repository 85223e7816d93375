"""Data or model scaling sweep on synthetic segments, with power-law fits.

    python scripts/scaling_demo.py --axis segments --grid 250 500 1000 2000 4000
    python scripts/scaling_demo.py --axis model --grid nano small
"""

import argparse
from dataclasses import replace

from neoseize import experiments, training


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--axis", choices=experiments.AXES, default="segments")
    ap.add_argument("--grid", nargs="+", default=["250", "500", "1000", "2000", "4000"])
    ap.add_argument("--trials", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=6)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/scaling")
    args = ap.parse_args()

    grid = args.grid if args.axis == "model" else [int(g) for g in args.grid]
    setup = experiments.ScalingSetup(train=replace(training.TrainConfig(), epochs=args.epochs))
    result = experiments.scaling_run(args.axis, grid, setup, trials=args.trials, seed=args.seed)
    for metric in ("auc", "mcc"):
        med, lo, hi = result.summary(metric)
        for g, m, a, b in zip(grid, med, lo, hi):
            print(f"{metric} @ {g}: median {m:.4f} (range {a:.4f} to {b:.4f})")
    for metric, a in result.exponents().items():
        print(f"{metric}: fitted exponent {a:.4f}")
    for path in experiments.emit_report(result, args.out):
        print(path)


if __name__ == "__main__":
    main()
