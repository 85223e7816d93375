"""Montage stress on a synthetic cohort: train (or load) a model, predict every
recording, then zero parts of the per-channel outputs.

    python scripts/montage_stress_demo.py --out results/montage
    python scripts/montage_stress_demo.py --weights results/desk_training/nano_seed0.weights
"""

import argparse
from dataclasses import replace

from neoseize import experiments, inference, metrics, model, preprocessing, training
from neoseize.synth import SyntheticCohort, synth_neonate, synth_segments


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--weights", help="skip training and use these weights")
    ap.add_argument("--neonates", type=int, default=4)
    ap.add_argument("--channels", type=int, default=8)
    ap.add_argument("--hours", type=float, default=1.0)
    ap.add_argument("--trials", type=int, default=experiments.STRESS_TRIALS)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/montage")
    args = ap.parse_args()

    if args.weights:
        params = model.load_weights(args.weights)
    else:
        x, y = synth_segments(250, 6000, seed=1)
        params = training.train(x, y, model.VARIANTS["nano"], replace(training.TrainConfig(), epochs=4)).params

    cohort = SyntheticCohort(n_neonates=args.neonates, n_channels=args.channels,
                             duration_s=int(args.hours * 3600), imbalance=20, seed=args.seed)
    traces, refs = [], []
    for i in range(cohort.n_neonates):
        rec, ann = synth_neonate(cohort, i)
        trace = inference.sliding_predict(params, preprocessing.preprocess(rec))
        ref = preprocessing.events_to_mask(ann.global_events(), trace.n_seconds)
        traces.append(trace.probability_1hz())
        refs.append(ref)
        rep = metrics.evaluate([metrics.RecordingResult(rec.recording_id, trace.global_probability_1hz(),
                                                        trace.global_mask(), ref)])
        print(f"{rec.recording_id}: AUC {rep.auc:.4f}, MCC {rep.mcc:.4f}", flush=True)

    result = experiments.montage_stress(traces, refs, trials=args.trials, seed=args.seed)
    print(f"baseline AUC {result.baseline_auc:.4f}, MCC {result.baseline_mcc:.4f}")
    for path in experiments.emit_report(result, args.out):
        print(path)


if __name__ == "__main__":
    main()
