"""Detection metrics on 1 s masks and probability series.

Agreement statistics (Cohen, Fleiss, MCC) are evaluated from integer tallies
with a single final division, so they do not depend on item order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .preprocessing import GLOBAL_CHANNEL, AnnotationSet, Event, events_to_mask, mask_to_events, merge_events

SECONDS_PER_HOUR = 3600
DURATION_BIN_EDGES = (30.0, 60.0, 120.0, 300.0)
CE_CLAMP = 1e-7


class UndefinedMetric(ValueError):
    """The metric has no value for this input (e.g. a single-class reference)."""


def _binary(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.dtype != bool and not np.isin(m, (0, 1)).all():
        raise ValueError("mask values must be 0 or 1")
    return m.astype(bool)


def _same_length(*arrays):
    if len({len(a) for a in arrays}) != 1:
        raise ValueError(f"length mismatch: {[len(a) for a in arrays]}")


# --- confusion-based ------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @staticmethod
    def _ratio(num: int, den: int, what: str) -> float:
        if den == 0:
            raise UndefinedMetric(f"{what}: zero denominator")
        return num / den

    @property
    def ppv(self) -> float:
        return self._ratio(self.tp, self.tp + self.fp, "PPV (no predicted positives)")

    @property
    def npv(self) -> float:
        return self._ratio(self.tn, self.tn + self.fn, "NPV (no predicted negatives)")

    @property
    def sensitivity(self) -> float:
        return self._ratio(self.tp, self.tp + self.fn, "sensitivity (no reference positives)")

    @property
    def specificity(self) -> float:
        return self._ratio(self.tn, self.tn + self.fp, "specificity (no reference negatives)")

    @property
    def error_rate(self) -> float:
        return self._ratio(self.fp + self.fn, self.n, "error rate (empty)")


def confusion(pred, ref) -> ConfusionCounts:
    p, r = _binary(pred), _binary(ref)
    _same_length(p, r)
    tp = int(np.count_nonzero(p & r))
    fp = int(np.count_nonzero(p & ~r))
    fn = int(np.count_nonzero(~p & r))
    return ConfusionCounts(tp, fp, len(p) - tp - fp - fn, fn)


def mcc(counts: ConfusionCounts) -> float:
    """Matthews correlation; 0 when any marginal is empty."""
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if den == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(den)


def cohen_kappa(a, b) -> float:
    a, b = _binary(a), _binary(b)
    _same_length(a, b)
    n = len(a)
    if n == 0:
        raise UndefinedMetric("Cohen kappa of empty masks")
    agree = int(np.count_nonzero(a == b))
    a1, b1 = int(a.sum()), int(b.sum())
    expected = a1 * b1 + (n - a1) * (n - b1)  # n^2 * chance agreement
    den = n * n - expected
    if den == 0:
        return 1.0 if agree == n else 0.0
    return (n * agree - expected) / den


def fleiss_from_tally(positives: np.ndarray, raters: int) -> float:
    """Fleiss kappa for two categories from per-item positive-vote counts."""
    positives = np.asarray(positives, dtype=np.int64)
    n_items = len(positives)
    return fleiss_from_sums(n_items, int(positives.sum()), int((positives * positives).sum()), raters)


def fleiss_from_sums(n_items: int, sum_pos: int, sum_pos_sq: int, raters: int) -> float:
    """Fleiss kappa from ``N``, ``sum(n1)`` and ``sum(n1**2)`` over items.

    Everything is an exact Python integer until the final division.
    """
    m = raters
    if m < 2:
        raise ValueError("Fleiss kappa needs at least 2 raters")
    if n_items == 0:
        raise UndefinedMetric("Fleiss kappa of zero items")
    nm = n_items * m
    sum_neg = nm - sum_pos
    # sum over items of n1^2 + n0^2, with n0 = m - n1
    sum_sq = sum_pos_sq + (n_items * m * m - 2 * m * sum_pos + sum_pos_sq)
    agree = sum_sq - nm  # N m (m-1) * mean per-item agreement
    chance = sum_pos * sum_pos + sum_neg * sum_neg  # (N m)^2 * chance agreement
    den = (m - 1) * (nm * nm - chance)
    if den == 0:
        return 1.0 if agree == n_items * m * (m - 1) else 0.0
    return (agree * nm - chance * (m - 1)) / den


def fleiss_kappa(masks: Sequence) -> float:
    arr = np.vstack([_binary(m) for m in masks])
    return fleiss_from_tally(arr.sum(axis=0), arr.shape[0])


# --- continuous -----------------------------------------------------------------


def _two_class(ref) -> np.ndarray:
    r = _binary(ref)
    if r.all() or not r.any():
        raise UndefinedMetric("reference has a single class")
    return r


def auc(scores, ref) -> float:
    """ROC area via the rank-sum statistic, ties at mid-rank."""
    s = np.asarray(scores, dtype=np.float64)
    r = _two_class(ref)
    _same_length(s, r)
    ranks = rankdata(s, method="average")
    n_pos = int(r.sum())
    n_neg = len(r) - n_pos
    return float((ranks[r].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def average_precision(scores, ref) -> tuple[float, float]:
    """Step-wise area under precision-recall, and the same area over recall in
    ``(0.5, 1]`` doubled."""
    s = np.asarray(scores, dtype=np.float64)
    r = _two_class(ref)
    _same_length(s, r)
    order = np.argsort(-s, kind="mergesort")
    s_sorted, r_sorted = s[order], r[order]
    # last index of each run of tied scores
    cut = np.flatnonzero(np.diff(s_sorted)) if len(s) > 1 else np.zeros(0, dtype=int)
    ends = np.concatenate((cut, [len(s) - 1]))
    tp = np.cumsum(r_sorted)[ends]
    n_pred = ends + 1
    precision = tp / n_pred
    recall = tp / r.sum()
    prev = np.concatenate(([0.0], recall[:-1]))
    ap = float(np.sum((recall - prev) * precision))
    upper = np.clip(recall - np.maximum(prev, 0.5), 0.0, None)
    ap50 = float(2.0 * np.sum(upper * precision))
    return ap, ap50


def pearson(a, b) -> float:
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    _same_length(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx == 0 or syy == 0:
        raise UndefinedMetric("Pearson r of a constant series")
    return float(np.clip((xc @ yc) / math.sqrt(sxx * syy), -1.0, 1.0))


def cross_entropy(prob, ref) -> float:
    """Mean negative log-likelihood, probabilities clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(np.asarray(prob, dtype=np.float64), CE_CLAMP, 1 - CE_CLAMP)
    y = _binary(ref).astype(np.float64)
    _same_length(p, y)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


# --- event-based ----------------------------------------------------------------


def _overlaps(a: Event, b: Event) -> bool:
    return min(a[1], b[1]) - max(a[0], b[0]) > 0


def false_detections(pred_events, ref_events) -> int:
    ref = merge_events(ref_events)
    return sum(1 for e in pred_events if not any(_overlaps(e, r) for r in ref))


def fd_per_hour(pred_events, ref_events, duration_hours: float) -> float:
    """Predicted events with no temporal overlap with any reference event, per hour."""
    if duration_hours <= 0:
        raise ValueError("duration must be positive")
    return false_detections(pred_events, ref_events) / duration_hours


def hourly_burden(mask, resolution: float = 1.0) -> np.ndarray:
    """Seizure minutes per hour in consecutive one-hour bins; a trailing partial
    bin is scaled to a per-hour rate."""
    m = _binary(mask).astype(np.float64)
    per_bin = int(round(SECONDS_PER_HOUR / resolution))
    out = []
    for i in range(0, len(m), per_bin):
        chunk = m[i : i + per_bin]
        minutes = chunk.sum() * resolution / 60.0
        out.append(minutes * per_bin / len(chunk))
    return np.array(out)


def seizure_burden_r(pred, ref) -> float:
    """Pearson r of hourly burden, bins pooled over all recordings.

    ``pred``/``ref`` are a single mask each or equal-length lists of masks.
    """
    preds = [pred] if np.ndim(pred[0]) == 0 else list(pred)
    refs = [ref] if np.ndim(ref[0]) == 0 else list(ref)
    if len(preds) != len(refs):
        raise ValueError("prediction and reference lists differ in length")
    for p, r in zip(preds, refs):
        _same_length(p, r)
    pb = np.concatenate([hourly_burden(p) for p in preds])
    rb = np.concatenate([hourly_burden(r) for r in refs])
    if len(pb) < 2:
        raise UndefinedMetric("seizure burden r needs at least 2 hourly bins")
    return pearson(pb, rb)


def consensus(masks: Sequence) -> np.ndarray:
    """Unanimous agreement: a second is seizure only if every annotator marked it."""
    if not len(masks):
        raise ValueError("no annotator masks")
    arr = np.vstack([_binary(m) for m in masks])
    return arr.all(axis=0).astype(np.int8)


def group_events(per_channel: dict[str, list[Event]]) -> list[Event]:
    """Global events: channel events joined transitively by strict temporal overlap."""
    spans = sorted(e for evs in per_channel.values() for e in evs)
    groups: list[list[float]] = []
    for on, off in spans:
        if groups and on < groups[-1][1]:
            groups[-1][1] = max(groups[-1][1], off)
        else:
            groups.append([on, off])
    return [(a, b) for a, b in groups]


@dataclass
class EventAgreement:
    onset: float
    offset: float
    n_channels: int
    kappa: float


def annotation_stats(annotations: AnnotationSet, channels: Sequence[str], duration: float):
    """Per global event: channels involved and cross-channel Fleiss kappa over the
    event span; per channel: total seizure minutes."""
    per_channel = {ch: annotations.for_channel(ch) for ch in channels}
    masks = {ch: events_to_mask(per_channel[ch], duration) for ch in channels}
    events = []
    for on, off in group_events(per_channel):
        a, b = int(math.floor(on)), int(math.ceil(off))
        window = np.vstack([masks[ch][a:b] for ch in channels])
        involved = int(np.count_nonzero(window.any(axis=1)))
        kappa = fleiss_from_tally(window.sum(axis=0), len(channels)) if len(channels) >= 2 else float("nan")
        events.append(EventAgreement(on, off, involved, kappa))
    burden = {ch: masks[ch].sum() / 60.0 for ch in channels}
    return events, burden


@dataclass
class DurationBin:
    low: float
    high: float
    n_events: int
    n_detected: int

    @property
    def rate(self) -> float | None:
        return self.n_detected / self.n_events if self.n_events else None


def detection_by_duration(pred_events, ref_events, edges=DURATION_BIN_EDGES) -> list[DurationBin]:
    """Share of reference events overlapped by at least one predicted event,
    binned by reference event duration."""
    bounds = [0.0, *edges, math.inf]
    bins = [DurationBin(lo, hi, 0, 0) for lo, hi in zip(bounds[:-1], bounds[1:])]
    for ev in ref_events:
        length = ev[1] - ev[0]
        b = next(b for b in bins if b.low <= length < b.high)
        b.n_events += 1
        b.n_detected += any(_overlaps(ev, p) for p in pred_events)
    return bins


# --- full report ----------------------------------------------------------------


@dataclass
class MetricsReport:
    recording_id: str
    n_seconds: int
    ap: float | None = None
    ap50: float | None = None
    pearson_r: float | None = None
    cross_entropy: float | None = None
    auc: float | None = None
    ppv: float | None = None
    npv: float | None = None
    sensitivity: float | None = None
    specificity: float | None = None
    error_rate: float | None = None
    mcc: float | None = None
    cohen_kappa: float | None = None
    fd_per_hour: float | None = None
    burden_r: float | None = None
    reasons: dict[str, str] = field(default_factory=dict)

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name != "reasons"]

    def as_row(self) -> dict:
        row = {k: v for k, v in asdict(self).items() if k != "reasons"}
        row["undefined"] = "; ".join(f"{k}: {v}" for k, v in sorted(self.reasons.items()))
        return row


@dataclass
class RecordingResult:
    """1 Hz probability, predicted mask and reference mask for one recording."""

    recording_id: str
    probability: np.ndarray
    prediction: np.ndarray
    reference: np.ndarray

    def __post_init__(self):
        _same_length(self.probability, self.prediction, self.reference)


def evaluate(results: Sequence[RecordingResult], recording_id: str | None = None) -> MetricsReport:
    """One report over the concatenation of ``results`` (ordered by recording id)."""
    results = sorted(results, key=lambda r: r.recording_id)
    prob = np.concatenate([r.probability for r in results])
    pred = np.concatenate([r.prediction for r in results])
    ref = np.concatenate([r.reference for r in results])
    label = recording_id or (results[0].recording_id if len(results) == 1 else "cc")
    report = MetricsReport(label, len(ref))

    def put(name, fn):
        try:
            setattr(report, name, fn())
        except UndefinedMetric as exc:
            report.reasons[name] = str(exc)

    counts = confusion(pred, ref)
    put("ap", lambda: average_precision(prob, ref)[0])
    put("ap50", lambda: average_precision(prob, ref)[1])
    put("pearson_r", lambda: pearson(prob, ref))
    put("cross_entropy", lambda: cross_entropy(prob, ref))
    put("auc", lambda: auc(prob, ref))
    for name in ("ppv", "npv", "sensitivity", "specificity", "error_rate"):
        put(name, lambda name=name: getattr(counts, name))
    put("mcc", lambda: mcc(counts))
    put("cohen_kappa", lambda: cohen_kappa(pred, ref))
    false = sum(false_detections(mask_to_events(r.prediction), mask_to_events(r.reference)) for r in results)
    put("fd_per_hour", lambda: false / (len(ref) / SECONDS_PER_HOUR))
    put("burden_r", lambda: seizure_burden_r([r.prediction for r in results], [r.reference for r in results]))
    return report


def evaluate_all(results: Sequence[RecordingResult]) -> tuple[list[MetricsReport], MetricsReport]:
    """Per-recording reports and the concatenated (cc) report."""
    ordered = sorted(results, key=lambda r: r.recording_id)
    return [evaluate([r]) for r in ordered], evaluate(ordered, "cc")


def reference_mask(annotations: dict[str, AnnotationSet], duration: float, annotators=None) -> np.ndarray:
    """Global 1 s reference: one annotator's union of channels, or the unanimous
    consensus of several."""
    names = list(annotators or annotations)
    masks = [events_to_mask(annotations[a].global_events(), duration) for a in names]
    return masks[0] if len(masks) == 1 else consensus(masks)


__all__ = [
    "ConfusionCounts", "DurationBin", "EventAgreement", "GLOBAL_CHANNEL", "MetricsReport", "RecordingResult",
    "UndefinedMetric", "annotation_stats", "auc", "average_precision", "cohen_kappa", "confusion", "consensus",
    "cross_entropy", "detection_by_duration", "evaluate", "evaluate_all", "false_detections", "fd_per_hour",
    "fleiss_from_sums", "fleiss_from_tally", "fleiss_kappa", "group_events", "hourly_burden", "mcc", "pearson",
    "reference_mask", "seizure_burden_r",
]
