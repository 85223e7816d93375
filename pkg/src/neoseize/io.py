"""On-disk formats.

Recording container: a directory holding ``meta`` (JSON text with ``id``,
``rate``, ``channels``, ``duration``) and one ``<index>.f32`` file per channel
of little-endian float32 microvolts. An optional ``annotations.csv`` sits
alongside.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from .preprocessing import GLOBAL_CHANNEL, AnnotationSet, LabeledSegment, Recording, merge_events

META_NAME = "meta"
ANNOTATION_NAME = "annotations.csv"
SEGMENTS_NAME = "segments.npz"
ANNOTATION_HEADER = ["annotator", "channel", "onset_s", "offset_s"]
PREDICTION_HEADER = ["channel", "t_s", "probability", "valid"]
EVENTS_HEADER = ["channel", "onset_s", "offset_s"]


def _channel_file(index: int) -> str:
    return f"{index:03d}.f32"


def write_recording(recording: Recording, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "id": recording.recording_id,
        "rate": recording.rate,
        "channels": list(recording.channel_names),
        "duration": recording.duration,
        "n_samples": recording.n_samples,
        "files": [_channel_file(i) for i in range(len(recording.channel_names))],
        "metadata": recording.metadata,
    }
    (directory / META_NAME).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    for i, ch in enumerate(recording.data):
        (directory / _channel_file(i)).write_bytes(np.asarray(ch, dtype="<f4").tobytes())
    return directory


def read_recording(directory) -> Recording:
    directory = Path(directory)
    meta_path = directory / META_NAME
    if not meta_path.exists():
        raise FileNotFoundError(f"{directory}: no '{META_NAME}' file; not a recording container")
    meta = json.loads(meta_path.read_text())
    files = meta.get("files") or [_channel_file(i) for i in range(len(meta["channels"]))]
    data = [np.frombuffer((directory / f).read_bytes(), dtype="<f4") for f in files]
    lengths = {len(d) for d in data}
    if len(lengths) != 1:
        raise ValueError(f"{directory}: channels have unequal lengths {sorted(lengths)}")
    if "n_samples" in meta and meta["n_samples"] != data[0].size:
        raise ValueError(f"{directory}: meta says {meta['n_samples']} samples, files hold {data[0].size}")
    return Recording(str(meta["id"]), list(meta["channels"]), float(meta["rate"]),
                     np.stack(data).astype(np.float64), meta.get("metadata", {}))


def is_recording_dir(path) -> bool:
    return (Path(path) / META_NAME).is_file()


def find_recordings(root) -> list[Path]:
    """``root`` itself if it is a container, else every container below it (sorted)."""
    root = Path(root)
    if is_recording_dir(root):
        return [root]
    return sorted(p.parent for p in root.rglob(META_NAME) if p.is_file())


# --- annotations ---


def write_annotations(annotation_sets, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANNOTATION_HEADER)
        for ann in annotation_sets:
            for ch in sorted(ann.events):
                for on, off in ann.events[ch]:
                    w.writerow([ann.annotator, ch, _fmt(on), _fmt(off)])


def read_annotations(path) -> dict[str, AnnotationSet]:
    """Annotation sets keyed by annotator id, events merged per channel."""
    by_annotator: dict[str, dict[str, list]] = defaultdict(lambda: defaultdict(list))
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ANNOTATION_HEADER:
            raise ValueError(f"{path}: expected header {','.join(ANNOTATION_HEADER)}, got {reader.fieldnames}")
        for row in reader:
            on, off = float(row["onset_s"]), float(row["offset_s"])
            if off <= on:
                raise ValueError(f"{path}: event with offset {off} <= onset {on}")
            by_annotator[row["annotator"]][row["channel"]].append((on, off))
    return {
        a: AnnotationSet(a, {ch: merge_events(evs) for ch, evs in chans.items()})
        for a, chans in sorted(by_annotator.items())
    }


def _fmt(x: float) -> str:
    return repr(float(x)) if float(x) != int(x) else str(int(x))


# --- labelled segments ---


def write_segments(segments: list[LabeledSegment], path) -> None:
    n = len(segments)
    np.savez(
        path,
        samples=np.stack([s.samples for s in segments]).astype(np.float32) if n else np.zeros((0, 1024), np.float32),
        label=np.array([s.label for s in segments], dtype=np.int8),
        valid=np.array([s.valid for s in segments], dtype=bool),
        start=np.array([s.start for s in segments], dtype=np.float64),
        channel=np.array([s.channel for s in segments], dtype=str),
        recording=np.array([s.recording_id for s in segments], dtype=str),
        reason=np.array([s.reason for s in segments], dtype=str),
    )


def read_segment_arrays(root) -> dict[str, np.ndarray]:
    """Concatenate every ``segments.npz`` under ``root`` (sorted by path)."""
    root = Path(root)
    files = [root] if root.is_file() else sorted(root.rglob(SEGMENTS_NAME))
    if not files:
        raise FileNotFoundError(f"no {SEGMENTS_NAME} under {root}")
    parts = [dict(np.load(f)) for f in files]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


# --- predictions ---


def write_prediction_csv(trace, path) -> None:
    """Per-channel 4 Hz probabilities, one row per (channel, time)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        probs, valid = trace.trace_4hz(), trace.valid_4hz()
        times = np.arange(probs.shape[1]) / 4.0
        for c, name in enumerate(trace.channel_names):
            for t, p, v in zip(times, probs[c], valid[c]):
                w.writerow([name, f"{t:.2f}", f"{p:.9g}", int(v)])


def read_prediction_csv(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    """``(channel_names, probabilities (C, N), valid (C, N))`` at 4 Hz."""
    rows: dict[str, list[tuple[float, float, int]]] = defaultdict(list)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PREDICTION_HEADER:
            raise ValueError(f"{path}: expected header {','.join(PREDICTION_HEADER)}, got {reader.fieldnames}")
        for r in reader:
            rows[r["channel"]].append((float(r["t_s"]), float(r["probability"]), int(r["valid"])))
    names = list(rows)
    lengths = {len(v) for v in rows.values()}
    if len(lengths) != 1:
        raise ValueError(f"{path}: channels have unequal trace lengths")
    probs = np.array([[p for _, p, _ in sorted(rows[n])] for n in names])
    valid = np.array([[v for _, _, v in sorted(rows[n])] for n in names], dtype=bool)
    return names, probs, valid


def write_events_csv(per_channel: dict[str, list], global_events: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENTS_HEADER)
        for ch, evs in per_channel.items():
            for on, off in evs:
                w.writerow([ch, _fmt(on), _fmt(off)])
        for on, off in global_events:
            w.writerow([GLOBAL_CHANNEL, _fmt(on), _fmt(off)])


def read_events_csv(path) -> dict[str, list]:
    out: dict[str, list] = defaultdict(list)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != EVENTS_HEADER:
            raise ValueError(f"{path}: expected header {','.join(EVENTS_HEADER)}, got {reader.fieldnames}")
        for r in reader:
            out[r["channel"]].append((float(r["onset_s"]), float(r["offset_s"])))
    return dict(out)
