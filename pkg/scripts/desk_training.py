"""Train Nano on the separable synthetic task and report held-out AUC per seed.

    python scripts/desk_training.py --seeds 0 1 2 --out results/desk_training
"""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from neoseize import metrics, model, training
from neoseize.synth import synth_segments


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--seizure", type=int, default=500)
    ap.add_argument("--background", type=int, default=25000)
    ap.add_argument("--epochs", type=int, default=training.TrainConfig.epochs)
    ap.add_argument("--out", default="results/desk_training")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    x, y = synth_segments(args.seizure, args.background, seed=0)
    hx, hy = synth_segments(200, 2000, seed=99)
    aucs = []
    for seed in args.seeds:
        cfg = replace(training.TrainConfig(), seed=seed, epochs=args.epochs)
        result = training.train(x, y, model.VARIANTS["nano"], cfg)
        training.write_log(result.history, out / f"nano_seed{seed}.log.csv")
        model.save_weights(result.params, out / f"nano_seed{seed}.weights")
        aucs.append(metrics.auc(model.predict_batches(result.params, hx), hy))
        print(f"seed {seed}: held-out AUC {aucs[-1]:.4f}", flush=True)
    print(f"median held-out AUC {np.median(aucs):.4f}")


if __name__ == "__main__":
    main()
