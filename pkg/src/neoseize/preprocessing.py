"""EEG ingest, filtering, resampling, artefact rules and segmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import signal

TARGET_RATE = 64
SUPPORTED_RATES = (200, 256, 500)
PASSBAND = (0.3, 30.0)
FILTER_ORDER = 4
SEGMENT_SECONDS = 16
TRAIN_STEP_SECONDS = 4
SEIZURE_OVERLAP_SECONDS = 8.0
ZERO_RUN_SECONDS = 1.0
MAX_STD_UV = 1000.0
GLOBAL_CHANNEL = "*"


@dataclass
class Recording:
    recording_id: str
    channel_names: list[str]
    rate: float
    data: np.ndarray  # (channels, samples), microvolts
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data))
        if self.data.shape[0] != len(self.channel_names):
            raise ValueError(f"{len(self.channel_names)} channel names for {self.data.shape[0]} channels")

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.rate


Event = tuple[float, float]


@dataclass
class AnnotationSet:
    """Seizure events keyed by channel name; ``"*"`` holds global events."""

    annotator: str
    events: dict[str, list[Event]] = field(default_factory=dict)

    def for_channel(self, channel: str) -> list[Event]:
        """Events that apply to ``channel``: its own plus any global ones."""
        return merge_events(self.events.get(channel, []) + self.events.get(GLOBAL_CHANNEL, []))

    def global_events(self) -> list[Event]:
        """Union of every channel's events (what a single global annotation would mark)."""
        return merge_events([e for evs in self.events.values() for e in evs])

    def validate(self, duration: float) -> None:
        for ch, evs in self.events.items():
            for on, off in evs:
                if not 0 <= on < off <= duration + 1e-9:
                    raise ValueError(f"{self.annotator}/{ch}: event ({on}, {off}) outside [0, {duration}]")


@dataclass
class LabeledSegment:
    recording_id: str
    channel: str
    start: float  # seconds
    samples: np.ndarray  # 1024 samples at 64 Hz
    label: int
    valid: bool
    reason: str = ""


def merge_events(events) -> list[Event]:
    """Sort and merge overlapping or touching intervals."""
    merged: list[list[float]] = []
    for on, off in sorted((float(a), float(b)) for a, b in events):
        if merged and on <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], off)
        else:
            merged.append([on, off])
    return [(a, b) for a, b in merged]


# --- filtering and resampling -------------------------------------------------


def bandpass(x: np.ndarray, rate: float, band: tuple[float, float] = PASSBAND) -> np.ndarray:
    """Zero-phase Butterworth band-pass (forward-backward)."""
    if rate <= 2 * band[1]:
        raise ValueError(f"sample rate {rate} Hz too low for a {band[1]} Hz upper edge")
    sos = signal.butter(FILTER_ORDER, band, btype="bandpass", fs=rate, output="sos")
    return signal.sosfiltfilt(sos, np.asarray(x, dtype=np.float64), axis=-1)


def resample_to_64(x: np.ndarray, rate: float) -> np.ndarray:
    """Polyphase resampling to 64 Hz with a Kaiser-windowed anti-alias filter."""
    if int(rate) != rate or int(rate) not in SUPPORTED_RATES + (TARGET_RATE,):
        raise ValueError(f"unsupported sample rate {rate}; expected one of {SUPPORTED_RATES}")
    x = np.asarray(x, dtype=np.float64)
    if int(rate) == TARGET_RATE:
        return x.copy()
    ratio = Fraction(TARGET_RATE, int(rate))
    up, down = ratio.numerator, ratio.denominator
    y = signal.resample_poly(x, up, down, axis=-1, window=_polyphase_filter(up, down), padtype="line")
    n_out = int(round(x.shape[-1] * TARGET_RATE / rate))
    return y[..., :n_out]


def _polyphase_filter(up: int, down: int) -> np.ndarray:
    """Kaiser-windowed sinc low-pass whose every polyphase branch has unit DC gain."""
    max_rate = max(up, down)
    half_len = 10 * max_rate
    h = signal.firwin(2 * half_len + 1, 1.0 / max_rate, window=("kaiser", 5.0))
    for phase in range(up):
        h[phase::up] /= h[phase::up].sum()
    return h / up  # resample_poly scales the taps by ``up``


def zero_runs(x: np.ndarray, min_len: int) -> np.ndarray:
    """Boolean mask marking runs of exact zeros at least ``min_len`` samples long."""
    x = np.asarray(x)
    is_zero = x == 0
    mask = np.zeros(x.shape, dtype=bool)
    if not is_zero.any():
        return mask
    edges = np.diff(np.concatenate(([0], is_zero.astype(np.int8), [0])))
    starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    for a, b in zip(starts, stops):
        if b - a >= min_len:
            mask[a:b] = True
    return mask


def preprocess_channel(x: np.ndarray, rate: float) -> np.ndarray:
    """Band-pass then resample one channel to 64 Hz.

    Runs of exact zeros (>= 1 s) in the raw signal are zero again in the output,
    since filtering would otherwise smear them into small non-zero values and
    hide them from :func:`reject_artifacts`.
    """
    x = np.asarray(x, dtype=np.float64)
    raw_zero = zero_runs(x, int(math.ceil(ZERO_RUN_SECONDS * rate)))
    y = resample_to_64(bandpass(x, rate), rate)
    if raw_zero.any():
        t_out = np.arange(y.shape[-1]) * rate / TARGET_RATE
        idx = np.minimum(np.round(t_out).astype(int), x.shape[-1] - 1)
        y[raw_zero[idx]] = 0.0
    return y


def preprocess(recording: Recording) -> Recording:
    if recording.rate == TARGET_RATE:
        data = np.asarray(recording.data, dtype=np.float64)
    else:
        data = np.stack([preprocess_channel(ch, recording.rate) for ch in recording.data])
    return Recording(recording.recording_id, list(recording.channel_names), TARGET_RATE, data, dict(recording.metadata))


# --- artefacts and segmentation -------------------------------------------------


def reject_artifacts(segment: np.ndarray, rate: float = TARGET_RATE) -> tuple[bool, str]:
    """``(valid, reason)`` under the two artefact rules."""
    segment = np.asarray(segment)
    if zero_runs(segment, int(round(ZERO_RUN_SECONDS * rate))).any():
        return False, "zero-run"
    if segment.std() > MAX_STD_UV:
        return False, "amplitude"
    return True, ""


def overlap_seconds(start: float, stop: float, events) -> float:
    return sum(max(0.0, min(stop, off) - max(start, on)) for on, off in events)


def segment_starts(duration: float, window: float = SEGMENT_SECONDS, step: float = TRAIN_STEP_SECONDS) -> np.ndarray:
    if duration < window:
        return np.zeros(0)
    n = int(math.floor((duration - window) / step + 1e-9)) + 1
    return np.arange(n) * step


def label_for(start: float, events, window: float = SEGMENT_SECONDS) -> int:
    return int(overlap_seconds(start, start + window, events) >= SEIZURE_OVERLAP_SECONDS - 1e-9)


def segment(
    recording: Recording,
    annotations: AnnotationSet | None = None,
    window: float = SEGMENT_SECONDS,
    step: float = TRAIN_STEP_SECONDS,
) -> list[LabeledSegment]:
    """Fixed-length labelled windows from a 64 Hz recording, channel by channel."""
    if recording.rate != TARGET_RATE:
        raise ValueError("segment() expects a recording at 64 Hz; run preprocess() first")
    n = int(round(window * TARGET_RATE))
    out = []
    starts = segment_starts(recording.duration, window, step)
    for ch, name in enumerate(recording.channel_names):
        events = annotations.for_channel(name) if annotations else []
        for start in starts:
            i = int(round(start * TARGET_RATE))
            samples = recording.data[ch, i : i + n]
            valid, reason = reject_artifacts(samples)
            out.append(
                LabeledSegment(recording.recording_id, name, float(start), samples.astype(np.float32),
                               label_for(start, events, window), valid, reason)
            )
    return out


# --- masks --------------------------------------------------------------------


def events_to_mask(events, duration: float, resolution: float = 1.0) -> np.ndarray:
    """Per-bin mask; bin ``i`` is set iff ``[i*res, (i+1)*res)`` intersects an event."""
    n = int(math.floor(duration / resolution + 1e-9))
    mask = np.zeros(n, dtype=np.int8)
    for on, off in events:
        if on < 0 or off > duration + 1e-9 or off <= on:
            raise ValueError(f"event ({on}, {off}) outside recording of {duration} s")
        a = int(math.floor(on / resolution + 1e-9))
        b = int(math.ceil(off / resolution - 1e-9))
        mask[a:b] = 1
    return mask


def mask_to_events(mask, resolution: float = 1.0) -> list[Event]:
    m = np.asarray(mask).astype(np.int8)
    edges = np.diff(np.concatenate(([0], m, [0])))
    starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    return [(float(a * resolution), float(b * resolution)) for a, b in zip(starts, stops)]
