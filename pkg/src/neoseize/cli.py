"""Command-line entry point: ``neoseize <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import equivalence, experiments, inference, io, metrics, model, preprocessing, synth, training

log = logging.getLogger("neoseize")


class CliError(Exception):
    pass


# --- shared helpers -----------------------------------------------------------------


def _read_json(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: not valid JSON ({exc})") from exc


def _dataclass_from(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise CliError(f"unknown {cls.__name__} field(s): {', '.join(unknown)}")
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


def _model_config(spec: list[str]) -> model.ModelConfig:
    name = spec[0].lower()
    if name == "custom":
        if len(spec) != 3:
            raise CliError("--model custom needs depth and width, e.g. --model custom 2 3")
        return model.ModelConfig(int(spec[1]), int(spec[2]))
    if len(spec) != 1 or name not in model.VARIANTS:
        raise CliError(f"unknown model {' '.join(spec)!r}; choose from {', '.join(model.VARIANTS)} or custom D W")
    return model.VARIANTS[name]


def _labelling_events(sets: dict[str, preprocessing.AnnotationSet], annotator: str | None, channels, duration):
    """Per-channel events used for segment labels: one annotator, or the
    unanimous consensus of all annotators in the file."""
    if not sets:
        return None
    if annotator:
        if annotator not in sets:
            raise CliError(f"annotator {annotator!r} not found; have {', '.join(sets)}")
        return sets[annotator]
    if len(sets) == 1:
        return next(iter(sets.values()))
    per_channel = {}
    for ch in channels:
        masks = [preprocessing.events_to_mask(s.for_channel(ch), duration) for s in sets.values()]
        per_channel[ch] = preprocessing.mask_to_events(metrics.consensus(masks))
    return preprocessing.AnnotationSet("consensus", per_channel)


def _load_trace(path: Path) -> inference.PredictionTrace:
    names, probs, valid = io.read_prediction_csv(path)
    return inference.PredictionTrace(path.stem, names, probs, valid)


def _prediction_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    files = sorted(p for p in path.glob("*.csv") if not p.name.endswith(".events.csv"))
    if not files:
        raise CliError(f"no prediction CSV files in {path}")
    return files


def _reference_file(ref: Path, recording_id: str) -> Path:
    if ref.is_file():
        return ref
    for candidate in (ref / f"{recording_id}.csv", ref / recording_id / io.ANNOTATION_NAME):
        if candidate.is_file():
            return candidate
    raise CliError(f"no reference annotations for {recording_id} under {ref}")


def _reference_mask(path: Path, annotators: list[str] | None, duration: float) -> np.ndarray:
    sets = io.read_annotations(path)
    names = annotators or list(sets)
    missing = [a for a in names if a not in sets]
    if missing:
        raise CliError(f"{path}: annotator(s) {', '.join(missing)} not found; have {', '.join(sets)}")
    return metrics.reference_mask(sets, duration, names)


def _annotator_list(text: str | None) -> list[str] | None:
    return [a.strip() for a in text.split(",") if a.strip()] if text else None


# --- commands -----------------------------------------------------------------------


def cmd_preprocess(args) -> None:
    sources = io.find_recordings(args.input)
    if not sources:
        raise CliError(f"no recording containers under {args.input}")
    out = Path(args.out)
    for src in sources:
        rec = io.read_recording(src)
        processed = preprocessing.preprocess(rec)
        dest = out / rec.recording_id
        io.write_recording(processed, dest)
        ann_path = src / io.ANNOTATION_NAME
        sets = io.read_annotations(ann_path) if ann_path.exists() else {}
        if sets:
            io.write_annotations(sets.values(), dest / io.ANNOTATION_NAME)
        events = _labelling_events(sets, args.annotator, rec.channel_names, processed.duration)
        segs = preprocessing.segment(processed, events)
        kept = segs if args.keep_invalid else [s for s in segs if s.valid]
        io.write_segments(kept, dest / io.SEGMENTS_NAME)
        n_pos = sum(s.label for s in kept)
        print(f"{rec.recording_id}: {len(kept)} segments ({n_pos} seizure, {len(segs) - sum(s.valid for s in segs)} invalid)")


def cmd_train(args) -> None:
    mcfg = _model_config(args.model)
    arrays = io.read_segment_arrays(args.data)
    overrides = {k: v for k, v in (("epochs", args.epochs), ("seed", args.seed)) if v is not None}
    cfg = _dataclass_from(training.TrainConfig, {**_read_json(args.config), **overrides})
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.csv")
    history: list[training.EpochLog] = []

    def on_epoch(entry):
        history.append(entry)
        training.write_log(history, log_path)
        auc = "n/a" if entry.train_auc is None else f"{entry.train_auc:.4f}"
        print(f"epoch {entry.epoch}: loss {entry.loss:.5f} lr {entry.lr:.3g} train-auc {auc}", flush=True)

    try:
        result = training.train(arrays["samples"], arrays["label"], mcfg, cfg, valid=arrays["valid"], on_epoch=on_epoch)
    except training.TrainingDiverged as exc:
        model.save_weights(exc.params, str(args.out) + ".last-finite")
        raise CliError(f"{exc}; last finite weights saved to {args.out}.last-finite") from exc
    model.save_weights(result.params, args.out)
    print(f"saved {mcfg.variant_name} weights ({result.params.n_scalars()} parameters) to {args.out}")


def cmd_predict(args) -> None:
    params = model.load_weights(args.weights)
    sources = io.find_recordings(args.input)
    if not sources:
        raise CliError(f"no recording containers under {args.input}")
    single = io.is_recording_dir(args.input)
    out = Path(args.out)
    if not single:
        out.mkdir(parents=True, exist_ok=True)
    for src in sources:
        rec = io.read_recording(src)
        if rec.rate != preprocessing.TARGET_RATE:
            rec = preprocessing.preprocess(rec)
        trace = inference.sliding_predict(params, rec)
        target = out if single else out / f"{rec.recording_id}.csv"
        io.write_prediction_csv(trace, target)
        p1 = trace.probability_1hz()
        io.write_events_csv(
            inference.binarize(p1, trace.channel_names, args.threshold),
            inference.globalize(p1, args.threshold),
            target.with_suffix(".events.csv"),
        )
        print(f"{rec.recording_id}: {trace.n_seconds} s, {len(inference.globalize(p1, args.threshold))} global events -> {target}")


def _evaluation_inputs(pred: Path, ref: Path, annotators, threshold: float):
    results, traces = [], []
    for f in _prediction_files(pred):
        trace = _load_trace(f)
        ref_mask = _reference_mask(_reference_file(ref, trace.recording_id), annotators, trace.n_seconds)
        results.append(metrics.RecordingResult(
            trace.recording_id, trace.global_probability_1hz(), trace.global_mask(threshold), ref_mask))
        traces.append((trace, ref_mask))
    return results, traces


def cmd_evaluate(args) -> None:
    if args.consensus != "unanimous":
        raise CliError("only unanimous consensus is supported")
    results, traces = _evaluation_inputs(Path(args.pred), Path(args.ref), _annotator_list(args.annotators), args.threshold)
    per, cc = metrics.evaluate_all(results)
    columns = metrics.MetricsReport.columns() + ["undefined"]
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for rep in per + [cc]:
            w.writerow({k: ("" if v is None else v) for k, v in rep.as_row().items()})
    print(f"cc: AUC {cc.auc} MCC {cc.mcc} kappa {cc.cohen_kappa} FD/h {cc.fd_per_hour}")
    if args.plot:
        plot_traces(traces, args.plot, args.threshold)


def plot_traces(traces, path, threshold: float = 0.5) -> None:
    """Global probability (smoothed, 4 Hz) over each recording with the
    reference shaded."""
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "neoseize"
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(len(traces), 1, figsize=(10, 1.8 * len(traces) + 0.6), squeeze=False)
    for ax, (trace, ref) in zip(axes[:, 0], traces):
        p4 = trace.global_probability_4hz()
        hours = np.arange(len(p4)) / inference.TRACE_RATE / 3600
        for on, off in preprocessing.mask_to_events(ref):
            ax.axvspan(on / 3600, off / 3600, color="tab:red", alpha=0.25, lw=0)
        ax.plot(hours, p4, lw=0.6, color="black")
        ax.axhline(threshold, color="tab:blue", lw=0.5, ls="--")
        ax.set_ylim(0, 1)
        ax.set_ylabel("p")
        ax.set_title(trace.recording_id, fontsize=8, loc="left")
    axes[-1, 0].set_xlabel("time (h)")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _split_source(text: str) -> tuple[Path, str | None]:
    """``PATH`` or ``PATH:ANNOTATOR``."""
    if not Path(text).exists() and ":" in text:
        path, name = text.rsplit(":", 1)
        return Path(path), name
    return Path(text), None


def _expert_masks(sources, recording_id: str, duration: int) -> list[np.ndarray]:
    out = []
    for path, name in sources:
        f = _reference_file(path, recording_id)
        sets = io.read_annotations(f)
        if name is not None:
            if name not in sets:
                raise CliError(f"{f}: annotator {name!r} not found; have {', '.join(sets)}")
            sets = {name: sets[name]}
        events = preprocessing.merge_events(e for s in sets.values() for e in s.global_events())
        out.append(preprocessing.events_to_mask(events, duration))
    return out


def cmd_kappa_test(args) -> None:
    if len(args.experts) != equivalence.N_EXPERTS:
        raise CliError(f"exactly {equivalence.N_EXPERTS} expert annotation sources are required")
    experts = [_split_source(p) for p in args.experts]
    expert_masks, ai_masks = [], []
    for f in _prediction_files(Path(args.ai)):
        trace = _load_trace(f)
        expert_masks.append(_expert_masks(experts, trace.recording_id, trace.n_seconds))
        ai_masks.append(trace.global_mask(args.threshold))
    result = equivalence.bootstrap_test(expert_masks, ai_masks, args.iterations, args.seed)
    Path(args.out).write_text(result.to_json())
    verdict = "equivalent" if result.equivalent else "not equivalent"
    print(f"delta-kappa {result.delta_mean:.4f} (95% CI {result.ci_low:.4f} to {result.ci_high:.4f}), "
          f"p={result.p_value:.3f}: {verdict}")


def cmd_synth(args) -> None:
    cfg = _dataclass_from(synth.SyntheticCohort, _read_json(args.config))
    out = Path(args.out)
    panels = synth.synth_annotator_panel(cfg) if args.experts else None
    for i in range(cfg.n_neonates):
        rec, ann = synth.synth_neonate(cfg, i)
        dest = out / rec.recording_id
        io.write_recording(rec, dest)
        sets = [ann]
        if panels is not None:
            for k, mask in enumerate(panels[i], start=1):
                sets.append(preprocessing.AnnotationSet(
                    f"expert{k}", {preprocessing.GLOBAL_CHANNEL: preprocessing.mask_to_events(mask)}))
        io.write_annotations(sets, dest / io.ANNOTATION_NAME)
        print(f"{rec.recording_id}: {rec.duration:.0f} s, {len(ann.global_events())} events")
    (out / "cohort.json").write_text(json.dumps(asdict(cfg), indent=2) + "\n")


def _parse_grid(values: list[str], axis: str):
    items = [v for chunk in values for v in chunk.split(",") if v]
    return items if axis == "model" else [int(float(v)) for v in items]


def cmd_scaling_run(args) -> None:
    raw = _read_json(args.config)
    train_cfg = _dataclass_from(training.TrainConfig, raw.pop("train", {}))
    if args.epochs is not None:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    setup = _dataclass_from(experiments.ScalingSetup, {**raw, "train": train_cfg})
    result = experiments.scaling_run(args.axis, _parse_grid(args.grid, args.axis), setup, args.trials, args.seed)
    for p in experiments.emit_report(result, args.out):
        print(p)
    for metric, a in result.exponents().items():
        print(f"{metric}: power-law exponent {a:.4f}")


def cmd_montage_stress(args) -> None:
    _, pairs = _evaluation_inputs(Path(args.pred), Path(args.ref), _annotator_list(args.annotators), 0.5)
    traces = [t.probability_1hz() for t, _ in pairs]
    refs = [r for _, r in pairs]
    fractions = [float(f) for f in args.fractions.split(",")]
    result = experiments.montage_stress(traces, refs, fractions, args.trials, args.seed)
    for p in experiments.emit_report(result, args.out):
        print(p)


# --- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="neoseize", description="Neonatal EEG seizure detection toolkit")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="filter, resample and segment recording containers")
    p.add_argument("--in", dest="input", required=True, help="container or directory of containers")
    p.add_argument("--out", required=True)
    p.add_argument("--keep-invalid", action="store_true", help="keep artefact segments (flagged) in segments.npz")
    p.add_argument("--annotator", help="label with this annotator (default: the only one, else unanimous consensus)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model on preprocessed segments")
    p.add_argument("--data", required=True, help="directory holding segments.npz files")
    p.add_argument("--model", nargs="+", default=["nano"], help="nano|small|medium|large|xl|custom D W")
    p.add_argument("--config", help="JSON file of training settings")
    p.add_argument("--out", required=True, help="weights file to write")
    p.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="per-channel probability traces and events")
    p.add_argument("--weights", required=True)
    p.add_argument("--in", dest="input", required=True, help="container or directory of containers")
    p.add_argument("--out", required=True, help="prediction CSV (one container) or output directory")
    p.add_argument("--threshold", type=float, default=inference.THRESHOLD)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics of global predictions against annotations")
    p.add_argument("--pred", required=True, help="prediction CSV or directory of them")
    p.add_argument("--ref", required=True, help="annotation CSV, or directory with <id>.csv or <id>/annotations.csv")
    p.add_argument("--annotators", help="comma-separated annotator ids (default: all in the file)")
    p.add_argument("--consensus", default="unanimous", choices=["unanimous"])
    p.add_argument("--threshold", type=float, default=inference.THRESHOLD)
    p.add_argument("--out", required=True, help="report CSV")
    p.add_argument("--plot", help="optional SVG of probability traces over the annotations")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("kappa-test", help="bootstrap test of expert-level agreement")
    p.add_argument("--experts", nargs="+", required=True, help="three annotation sources: CSV or directory, optionally PATH:ANNOTATOR")
    p.add_argument("--ai", required=True, help="prediction CSV or directory of them")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=inference.THRESHOLD)
    p.add_argument("--out", required=True, help="JSON result")
    p.set_defaults(func=cmd_kappa_test)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--config", help="JSON file of cohort settings")
    p.add_argument("--out", required=True)
    p.add_argument("--experts", action="store_true", help="also write three simulated global annotators")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("scaling-run", help="data or model scaling sweep on synthetic data")
    p.add_argument("--axis", required=True, choices=experiments.AXES)
    p.add_argument("--grid", nargs="+", required=True, help="sizes (or model names), space or comma separated")
    p.add_argument("--config", help="JSON ScalingSetup fields, with an optional 'train' object")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scaling_run)

    p = sub.add_parser("montage-stress", help="degradation when per-channel outputs are zeroed")
    p.add_argument("--pred", required=True, help="prediction CSV or directory of them")
    p.add_argument("--ref", required=True)
    p.add_argument("--annotators")
    p.add_argument("--fractions", default=",".join(str(f) for f in experiments.DROP_FRACTIONS))
    p.add_argument("--trials", type=int, default=experiments.STRESS_TRIALS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_montage_stress)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (CliError, ValueError, FileNotFoundError) as exc:
        print(f"neoseize {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
