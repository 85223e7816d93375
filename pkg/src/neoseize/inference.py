"""Sliding-window probability traces and their binary decisions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .model import SEGMENT_LENGTH, ModelParams, predict_batches
from .preprocessing import TARGET_RATE, Event, Recording, mask_to_events, reject_artifacts

STRIDE = 16  # samples at 64 Hz = 0.25 s
TRACE_RATE = TARGET_RATE // STRIDE  # 4 Hz
HALF_WINDOW = SEGMENT_LENGTH // STRIDE // 2  # trace steps from window start to centre (8 s)
SMOOTH_TAPS = 128  # 32 s at 4 Hz
THRESHOLD = 0.5


def window_count(n_samples: int) -> int:
    """Number of full 16 s windows at a 0.25 s stride."""
    return 0 if n_samples < SEGMENT_LENGTH else (n_samples - SEGMENT_LENGTH) // STRIDE + 1


@dataclass
class PredictionTrace:
    """Per-channel probabilities on a 4 Hz grid (sample ``i`` at ``i / 4`` s).

    The grid spans the whole recording. Each point takes the window centred on
    it, or the nearest full window within 8 s of either edge.
    """

    recording_id: str
    channel_names: list[str]
    probability: np.ndarray  # (C, N4)
    valid: np.ndarray  # (C, N4) bool

    def __post_init__(self):
        self.probability = np.atleast_2d(np.asarray(self.probability, dtype=np.float64))
        self.valid = np.atleast_2d(np.asarray(self.valid, dtype=bool))
        if self.probability.shape != self.valid.shape or self.probability.shape[0] != len(self.channel_names):
            raise ValueError("probability/valid shapes disagree with the channel list")
        if self.probability.size and (self.probability.min() < 0 or self.probability.max() > 1):
            raise ValueError("probabilities must lie in [0, 1]")

    @classmethod
    def from_windows(cls, recording_id, channel_names, window_prob, window_valid, n_samples) -> "PredictionTrace":
        window_prob = np.atleast_2d(window_prob)
        k = window_prob.shape[1]
        if k == 0:
            empty = np.zeros((len(channel_names), 0))
            return cls(recording_id, list(channel_names), empty, empty.astype(bool))
        idx = np.clip(np.arange(n_samples // STRIDE) - HALF_WINDOW, 0, k - 1)
        return cls(recording_id, list(channel_names), window_prob[:, idx], np.atleast_2d(window_valid)[:, idx])

    def trace_4hz(self) -> np.ndarray:
        return self.probability

    def valid_4hz(self) -> np.ndarray:
        return self.valid

    @property
    def n_seconds(self) -> int:
        return self.probability.shape[1] // TRACE_RATE

    def smoothed_4hz(self) -> np.ndarray:
        return smooth(self.probability)

    def probability_1hz(self) -> np.ndarray:
        """Per-second mean of the smoothed trace, ``(C, seconds)``."""
        return to_1hz(self.smoothed_4hz())

    def global_probability_1hz(self) -> np.ndarray:
        return self.probability_1hz().max(axis=0)

    def global_probability_4hz(self) -> np.ndarray:
        return self.smoothed_4hz().max(axis=0)

    def masks(self, threshold: float = THRESHOLD) -> np.ndarray:
        return (self.probability_1hz() >= threshold).astype(np.int8)

    def global_mask(self, threshold: float = THRESHOLD) -> np.ndarray:
        return (self.global_probability_1hz() >= threshold).astype(np.int8)


def sliding_predict(params: ModelParams, recording: Recording, batch_size: int = 256) -> PredictionTrace:
    """Window probabilities for every channel; artefact windows get 0 and a flag."""
    if recording.rate != TARGET_RATE:
        raise ValueError("sliding_predict expects a 64 Hz recording; run preprocess() first")
    k = window_count(recording.n_samples)
    probs = np.zeros((len(recording.channel_names), k))
    valid = np.zeros((len(recording.channel_names), k), dtype=bool)
    for c, channel in enumerate(recording.data):
        if k == 0:
            continue
        windows = sliding_window_view(channel, SEGMENT_LENGTH)[::STRIDE][:k]
        valid[c] = [reject_artifacts(w)[0] for w in windows]
        if valid[c].any():
            probs[c, valid[c]] = predict_batches(params, windows[valid[c]], batch_size)
    return PredictionTrace.from_windows(recording.recording_id, recording.channel_names, probs, valid,
                                        recording.n_samples)


def smooth(trace: np.ndarray, taps: int = SMOOTH_TAPS) -> np.ndarray:
    """Centred moving average over ``[i - taps/2, i + taps/2)``; at the edges the
    truncated window is averaged over its valid length."""
    x = np.asarray(trace, dtype=np.float64)
    n = x.shape[-1]
    if n == 0:
        return x.copy()
    csum = np.concatenate((np.zeros(x.shape[:-1] + (1,)), np.cumsum(x, axis=-1)), axis=-1)
    i = np.arange(n)
    lo = np.clip(i - taps // 2, 0, n)
    hi = np.clip(i + taps - taps // 2, 0, n)
    return (csum[..., hi] - csum[..., lo]) / (hi - lo)


def to_1hz(trace_4hz: np.ndarray) -> np.ndarray:
    x = np.asarray(trace_4hz)
    s = x.shape[-1] // TRACE_RATE
    return x[..., : s * TRACE_RATE].reshape(x.shape[:-1] + (s, TRACE_RATE)).mean(axis=-1)


def binarize(probability_1hz: np.ndarray, channel_names, threshold: float = THRESHOLD) -> dict[str, list[Event]]:
    """Per-channel events where the 1 Hz probability is at or above ``threshold``."""
    p = np.atleast_2d(probability_1hz)
    return {name: mask_to_events(p[c] >= threshold) for c, name in enumerate(channel_names)}


def globalize(probability_1hz: np.ndarray, threshold: float = THRESHOLD) -> list[Event]:
    """Global events: threshold the channel-wise maximum."""
    p = np.atleast_2d(probability_1hz)
    if p.shape[1] == 0:
        return []
    return mask_to_events(p.max(axis=0) >= threshold)
