"""Synthetic neonatal-style EEG: 1/f background with rhythmic seizure bursts.

Events are placed on whole seconds so annotations survive a round trip through
1 s masks unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .preprocessing import AnnotationSet, Recording

SEGMENT_SAMPLES = 1024
SEGMENT_RATE = 64


@dataclass(frozen=True)
class SyntheticCohort:
    n_neonates: int = 4
    n_channels: int = 8
    duration_s: int = 3600
    rate: int = 256
    imbalance: float = 50.0  # non-seizure : seizure time
    event_min_s: int = 20
    event_max_s: int = 240
    freq_band: tuple[float, float] = (1.0, 4.0)
    amp_start_uv: float = 40.0
    amp_end_uv: float = 120.0
    participation: float = 0.6
    onset_jitter_s: int = 5
    background_uv: float = 15.0
    background_exponent: float = 1.0  # power spectrum ~ 1/f^exponent
    seed: int = 0

    def __post_init__(self):
        if self.n_neonates < 1 or self.n_channels < 1 or self.duration_s < 1:
            raise ValueError("cohort needs at least one neonate, channel and second")
        if self.imbalance < 1:
            raise ValueError("imbalance must be >= 1")
        if not 1 <= self.event_min_s <= self.event_max_s:
            raise ValueError("need 1 <= event_min_s <= event_max_s")
        if not 0 < self.participation <= 1:
            raise ValueError("participation must be in (0, 1]")

    @property
    def prevalence(self) -> float:
        return 1.0 / (1.0 + self.imbalance)

    def channel_names(self) -> list[str]:
        return [f"ch{i}" for i in range(self.n_channels)]


def pink_noise(n: int, rng: np.random.Generator, exponent: float = 1.0, std: float = 1.0) -> np.ndarray:
    """Zero-mean noise with power spectrum proportional to ``1/f**exponent``."""
    if n == 0:
        return np.zeros(0)
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    spec *= f ** (-exponent / 2)
    spec[0] = 0.0
    x = np.fft.irfft(spec, n)
    sd = x.std()
    return x * (std / sd) if sd > 0 else x


def burst(n: int, rate: float, freq: float, amp_start: float, amp_end: float, phase: float) -> np.ndarray:
    """Rhythmic oscillation whose amplitude ramps linearly across the burst."""
    t = np.arange(n) / rate
    return np.linspace(amp_start, amp_end, n) * np.sin(2 * np.pi * freq * t + phase)


def _event_durations(total: int, lo: int, hi: int, rng) -> list[int]:
    out = []
    while sum(out) < total:
        out.append(int(rng.integers(lo, hi + 1)))
    excess = sum(out) - total
    out[-1] -= excess
    if out[-1] < lo and len(out) > 1:  # fold a short remainder into its neighbour
        tail = out.pop()
        out[-1] += tail
    return out


def synth_events(config: SyntheticCohort, neonate: int) -> list[tuple[int, int]]:
    """Global seizure intervals (whole seconds) for one neonate."""
    rng = np.random.default_rng([config.seed, neonate, 0])
    total = int(round(config.prevalence * config.duration_s))
    if total == 0:
        return []
    if total < config.event_min_s:
        raise ValueError(
            f"prevalence {config.prevalence:.4g} over {config.duration_s} s gives {total} s of seizure, "
            f"shorter than one {config.event_min_s} s event"
        )
    durations = _event_durations(total, config.event_min_s, config.event_max_s, rng)
    free = config.duration_s - total
    if free < len(durations) - 1:
        raise ValueError(
            f"seizure time {total} s in {len(durations)} events cannot fit in {config.duration_s} s"
        )
    # gaps: one mandatory second between events, the rest spread at random
    spare = free - (len(durations) - 1)
    cuts = np.sort(rng.integers(0, spare + 1, len(durations)))
    gaps = np.diff(np.concatenate(([0], cuts)))
    events, t = [], 0
    for i, (gap, d) in enumerate(zip(gaps, durations)):
        t += int(gap) + (1 if i else 0)
        events.append((t, t + d))
        t += d
    return events


def _channel_spans(config, events, rng) -> list[list[tuple[int, int]]]:
    spans: list[list[tuple[int, int]]] = [[] for _ in range(config.n_channels)]
    for on, off in events:
        involved = rng.random(config.n_channels) < config.participation
        involved[rng.integers(config.n_channels)] = True
        lead = int(rng.integers(config.n_channels))
        for ch in np.flatnonzero(involved):
            if ch == lead:
                spans[ch].append((on, off))  # one channel carries the full global event
                continue
            max_j = min(config.onset_jitter_s, (off - on - 1) // 2)
            a = on + int(rng.integers(0, max_j + 1))
            b = off - int(rng.integers(0, max_j + 1))
            spans[ch].append((a, b))
    return spans


def synth_neonate(config: SyntheticCohort, neonate: int) -> tuple[Recording, AnnotationSet]:
    events = synth_events(config, neonate)
    rng = np.random.default_rng([config.seed, neonate, 1])
    spans = _channel_spans(config, events, rng)
    n = config.duration_s * config.rate
    data = np.empty((config.n_channels, n))
    event_params = [
        (rng.uniform(*config.freq_band), rng.uniform(0, 2 * np.pi)) for _ in events
    ]
    for ch in range(config.n_channels):
        data[ch] = pink_noise(n, rng, config.background_exponent, config.background_uv)
        for on, off in spans[ch]:
            freq, phase = next(p for e, p in zip(events, event_params) if e[0] <= on and off <= e[1])
            a, b = on * config.rate, off * config.rate
            data[ch, a:b] += burst(b - a, config.rate, freq, config.amp_start_uv, config.amp_end_uv, phase)
    names = config.channel_names()
    rec = Recording(f"neonate{neonate:03d}", names, config.rate, data.astype(np.float32).astype(np.float64),
                    {"synthetic": True, "seed": config.seed})
    ann = AnnotationSet("synthetic", {names[c]: [(float(a), float(b)) for a, b in s] for c, s in enumerate(spans) if s})
    return rec, ann


def synth_generate(config: SyntheticCohort) -> list[tuple[Recording, AnnotationSet]]:
    return [synth_neonate(config, i) for i in range(config.n_neonates)]


def synth_segments(
    n_seizure: int,
    n_background: int,
    seed: int | tuple[int, ...] = 0,
    freq_band: tuple[float, float] = (1.0, 4.0),
    amp_range: tuple[float, float] = (40.0, 120.0),
    background_uv: float = 15.0,
    min_burst_s: float = 8.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Labelled 16 s segments at 64 Hz, ``(samples (N, 1024) float32, labels (N,))``.

    Seizure segments hold a burst covering at least ``min_burst_s`` seconds of
    the window, so their labels agree with the >= 8 s overlap rule. Order is
    shuffled.
    """
    rng = np.random.default_rng(seed)
    n = n_seizure + n_background
    x = np.empty((n, SEGMENT_SAMPLES), dtype=np.float32)
    labels = np.zeros(n, dtype=np.int8)
    labels[:n_seizure] = 1
    min_len = int(math.ceil(min_burst_s * SEGMENT_RATE))
    for i in range(n):
        seg = pink_noise(SEGMENT_SAMPLES, rng, 1.0, background_uv)
        if labels[i]:
            length = int(rng.integers(min_len, SEGMENT_SAMPLES + 1))
            start = int(rng.integers(0, SEGMENT_SAMPLES - length + 1))
            lo, hi = sorted(rng.uniform(*amp_range, 2))
            seg[start : start + length] += burst(length, SEGMENT_RATE, rng.uniform(*freq_band), lo, hi,
                                                 rng.uniform(0, 2 * np.pi))
        x[i] = seg
    order = rng.permutation(n)
    return x[order], labels[order]


def synth_annotator_panel(
    config: SyntheticCohort,
    n_annotators: int = 3,
    boundary_jitter_s: int = 10,
    miss_prob: float = 0.1,
) -> list[np.ndarray]:
    """Per neonate, ``(n_annotators, duration_s)`` global 1 s masks: the cohort's
    true events with per-annotator boundary jitter and occasional misses."""
    panels = []
    for i in range(config.n_neonates):
        events = synth_events(config, i)
        rng = np.random.default_rng([config.seed, i, 2])
        masks = np.zeros((n_annotators, config.duration_s), dtype=np.int8)
        for k in range(n_annotators):
            for on, off in events:
                if rng.random() < miss_prob:
                    continue
                a = int(np.clip(on + rng.integers(-boundary_jitter_s, boundary_jitter_s + 1), 0, config.duration_s))
                b = int(np.clip(off + rng.integers(-boundary_jitter_s, boundary_jitter_s + 1), 0, config.duration_s))
                masks[k, a:max(a + 1, b)] = 1
        panels.append(masks)
    return panels
