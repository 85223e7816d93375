"""Scaling sweeps, montage-degradation stress and their CSV/SVG reports."""

from __future__ import annotations

import csv
import io as _io
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics as MT
from .model import VARIANTS, ModelConfig, count_params, predict_batches
from .synth import synth_segments
from .training import TrainConfig, TrainingDiverged, train

AXES = ("segments", "neonates", "model")
DROP_FRACTIONS = (0.10, 0.25, 0.50, 1.00)
STRESS_TRIALS = 20
HELDOUT_STREAM = 2**31 - 1  # seed stream of the held-out split, apart from neonate ids
SCALING_METRICS = ("auc", "ap", "ap50", "mcc", "cohen_kappa", "sensitivity", "specificity", "pearson_r")


def fit_power_law(x, y) -> tuple[float, float]:
    """Least-squares ``log y = log c + a log x`` over points with ``x, y > 0``;
    returns ``(a, c)``."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    keep = (x > 0) & (y > 0) & np.isfinite(y)
    if keep.sum() < 2:
        return math.nan, math.nan
    a, log_c = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(a), float(math.exp(log_c))


# --- scaling ------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingSetup:
    """Synthetic data and training settings shared by every grid point."""

    n_neonates: int = 20
    seizure_per_neonate: int = 25
    background_per_neonate: int = 1250
    heldout_seizure: int = 100
    heldout_background: int = 1000
    model: str = "nano"
    train: TrainConfig = field(default_factory=TrainConfig)
    data_seed: int = 0


@dataclass
class ScalingPool:
    segments: np.ndarray
    labels: np.ndarray
    neonate: np.ndarray
    heldout_x: np.ndarray
    heldout_y: np.ndarray


def build_pool(setup: ScalingSetup) -> ScalingPool:
    xs, ys, ids = [], [], []
    for i in range(setup.n_neonates):
        x, y = synth_segments(setup.seizure_per_neonate, setup.background_per_neonate, seed=(setup.data_seed, i))
        xs.append(x)
        ys.append(y)
        ids.append(np.full(len(y), i))
    hx, hy = synth_segments(setup.heldout_seizure, setup.heldout_background, seed=(setup.data_seed, HELDOUT_STREAM))
    return ScalingPool(np.concatenate(xs), np.concatenate(ys), np.concatenate(ids), hx, hy)


def training_subset(pool: ScalingPool, axis: str, size: int, trial: int, seed: int) -> np.ndarray:
    """Indices for one grid point; for a fixed trial, growing ``size`` only
    appends to the list, so the subsets are nested."""
    rng = np.random.default_rng([seed, trial])
    if axis == "segments":
        order = rng.permutation(len(pool.labels))
        return np.sort(order[:size])
    if axis == "neonates":
        chosen = rng.permutation(pool.neonate.max() + 1)[:size]
        return np.flatnonzero(np.isin(pool.neonate, chosen))
    if axis == "model":
        return np.arange(len(pool.labels))
    raise ValueError(f"unknown axis {axis!r}; expected one of {AXES}")


def train_seed(seed: int, point: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, point, trial]).generate_state(1)[0])


def train_and_evaluate(x, y, model_config: ModelConfig, config: TrainConfig, heldout_x, heldout_y) -> MT.MetricsReport:
    """Train on ``(x, y)`` and score the held-out segments at the 0.5 threshold."""
    result = train(x, y, model_config, config)
    prob = predict_batches(result.params, heldout_x)
    return MT.evaluate([MT.RecordingResult("heldout", prob, (prob >= 0.5).astype(np.int8), heldout_y)])


@dataclass
class ScalingRunResult:
    axis: str
    grid: list
    sizes: list[float]  # numeric x for fits: segment/neonate counts or parameter counts
    values: dict[str, np.ndarray]  # metric -> (points, trials), NaN where undefined or failed
    flags: list[tuple[int, int, str]]
    subsets: dict[tuple[int, int], np.ndarray] = field(default_factory=dict, repr=False)

    def summary(self, metric: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per point ``(median, min, max)`` over trials, ignoring failed trials."""
        v = self.values[metric]
        if v.size == 0:
            return np.zeros(0), np.zeros(0), np.zeros(0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN rows stay NaN
            return np.nanmedian(v, axis=1), np.nanmin(v, axis=1), np.nanmax(v, axis=1)

    def exponents(self) -> dict[str, float]:
        return {m: fit_power_law(self.sizes, self.summary(m)[0])[0] for m in self.values}


def scaling_run(
    axis: str,
    grid: Sequence,
    setup: ScalingSetup = ScalingSetup(),
    trials: int = 3,
    seed: int = 0,
    pool: ScalingPool | None = None,
) -> ScalingRunResult:
    """One training run per (grid point, trial), evaluated on a fixed held-out set."""
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}; expected one of {AXES}")
    grid = list(grid)
    if axis == "model":
        configs = [VARIANTS[g.lower()] for g in grid]
        sizes = [float(count_params(c)) for c in configs]
    else:
        configs = [VARIANTS[setup.model.lower()]] * len(grid)
        sizes = [float(g) for g in grid]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("grid must be strictly increasing")
    pool = pool or build_pool(setup)
    values = {m: np.full((len(grid), trials), np.nan) for m in SCALING_METRICS}
    flags: list[tuple[int, int, str]] = []
    subsets = {}
    for p, (g, cfg) in enumerate(zip(grid, configs)):
        for t in range(trials):
            idx = training_subset(pool, axis, int(g) if axis != "model" else 0, t, seed)
            subsets[(p, t)] = idx
            tcfg = replace(setup.train, seed=train_seed(seed, p, t))
            try:
                report = train_and_evaluate(pool.segments[idx], pool.labels[idx], cfg, tcfg,
                                            pool.heldout_x, pool.heldout_y)
            except TrainingDiverged as exc:
                flags.append((p, t, f"diverged: {exc}"))
                continue
            except ValueError as exc:  # e.g. too few seizure segments for the ratio
                flags.append((p, t, str(exc)))
                continue
            for m in SCALING_METRICS:
                v = getattr(report, m)
                values[m][p, t] = np.nan if v is None else v
    return ScalingRunResult(axis, grid, sizes, values, flags, subsets)


# --- montage stress ------------------------------------------------------------------


@dataclass
class MontageStressResult:
    fractions: list[float]
    affected: list[int]
    trials: int
    seed: int
    baseline_auc: float
    baseline_mcc: float
    auc_degradation: np.ndarray  # (fractions, affected) mean % over trials
    mcc_degradation: np.ndarray


def _global_scores(traces: list[np.ndarray], refs: list[np.ndarray], threshold: float) -> tuple[float, float]:
    prob = np.concatenate([t.max(axis=0) for t in traces])
    ref = np.concatenate(refs)
    return MT.auc(prob, ref), MT.mcc(MT.confusion(prob >= threshold, ref))


def _percent_drop(base: float, new: float) -> float:
    return math.nan if base == 0 else 100.0 * (base - new) / base


def drop_channel_output(trace: np.ndarray, channels, fraction: float, positions) -> np.ndarray:
    """Zero a contiguous run of ``round(fraction * S)`` seconds in each listed
    channel. ``positions`` in [0, 1) place each run; for a fixed position a
    shorter run lies inside a longer one."""
    out = np.array(trace, dtype=np.float64, copy=True)
    n = out.shape[1]
    length = int(round(fraction * n))
    for c, u in zip(channels, positions):
        if length:
            start = int(math.floor(u * (n - length + 1)))
            out[c, start : start + length] = 0.0
    return out


def montage_stress(
    traces,
    references,
    fractions: Sequence[float] = DROP_FRACTIONS,
    trials: int = STRESS_TRIALS,
    seed: int = 0,
    threshold: float = 0.5,
    affected: Sequence[int] | None = None,
    candidates: Sequence[int] | None = None,
) -> MontageStressResult:
    """Mean % loss of global AUC and MCC when parts of per-channel outputs are zeroed.

    ``traces`` are per-recording ``(C, S)`` smoothed 1 Hz channel probabilities
    (or one such array) and ``references`` the matching global 1 s masks.
    ``candidates`` limits which channels may be hit (default: all).
    """
    if isinstance(traces, np.ndarray) and traces.ndim == 2:
        traces, references = [traces], [references]
    traces = [np.asarray(t, dtype=np.float64) for t in traces]
    references = [np.asarray(r) for r in references]
    n_channels = traces[0].shape[0]
    if any(t.shape[0] != n_channels for t in traces):
        raise ValueError("every recording must have the same channel count")
    for t, r in zip(traces, references):
        if t.shape[1] != len(r):
            raise ValueError("trace and reference lengths differ")
    pool = list(range(n_channels)) if candidates is None else list(candidates)
    affected = list(range(0, n_channels)) if affected is None else list(affected)
    for k in affected:
        if k >= n_channels:
            raise ValueError(f"cannot affect {k} of {n_channels} channels; at least one must stay intact")
        if k > len(pool):
            raise ValueError(f"only {len(pool)} candidate channels for {k} affected")
    base_auc, base_mcc = _global_scores(traces, references, threshold)
    auc_deg = np.zeros((len(fractions), len(affected)))
    mcc_deg = np.zeros_like(auc_deg)
    for ki, k in enumerate(affected):
        if k == 0:
            continue  # nothing is removed; stays exactly 0
        for t in range(trials):
            # one draw of channels and run positions per (k, trial), shared by
            # every fraction so the comparison across fractions is paired
            rng = np.random.default_rng([seed, k, t])
            draws = [(rng.choice(pool, k, replace=False), rng.random(k)) for _ in traces]
            for fi, f in enumerate(fractions):
                if f == 0:
                    continue
                dropped = [drop_channel_output(tr, ch, f, u) for tr, (ch, u) in zip(traces, draws)]
                a, m = _global_scores(dropped, references, threshold)
                auc_deg[fi, ki] += _percent_drop(base_auc, a) / trials
                mcc_deg[fi, ki] += _percent_drop(base_mcc, m) / trials
    return MontageStressResult(list(fractions), affected, trials, seed, base_auc, base_mcc, auc_deg, mcc_deg)


# --- reports ----------------------------------------------------------------------


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _svg(fig, path: Path) -> None:
    buf = _io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    path.write_text(buf.getvalue())


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "neoseize"
    import matplotlib.pyplot as plt

    return plt


def emit_report(result, out_dir, stem: str | None = None) -> list[Path]:
    """CSV table(s) plus an SVG plot; output bytes depend only on ``result``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(result, ScalingRunResult):
        return _emit_scaling(result, out, stem or f"scaling_{result.axis}")
    if isinstance(result, MontageStressResult):
        return _emit_stress(result, out, stem or "montage_stress")
    raise TypeError(f"no report for {type(result).__name__}")


def _emit_scaling(r: ScalingRunResult, out: Path, stem: str) -> list[Path]:
    metrics = list(r.values)
    rows = []
    for p, g in enumerate(r.grid):
        n_trials = next(iter(r.values.values())).shape[1] if r.values else 0
        for t in range(n_trials):
            rows.append([r.axis, g, t] + [_fmt(float(r.values[m][p, t])) for m in metrics])
    table = out / f"{stem}.csv"
    _write_csv(table, ["axis", "point", "trial"] + metrics, rows)
    fits = out / f"{stem}_fit.csv"
    exps = r.exponents()
    _write_csv(fits, ["metric", "exponent"], [[m, _fmt(exps[m])] for m in metrics])
    flags = out / f"{stem}_flags.csv"
    _write_csv(flags, ["point", "trial", "reason"], [list(f) for f in r.flags])
    plt = _pyplot()
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for ax, m in zip(axes, ("auc", "mcc")):
        med, lo, hi = r.summary(m)
        if len(med):
            ax.errorbar(np.asarray(r.sizes), med, yerr=np.vstack([med - lo, hi - med]), marker="o", capsize=3)
            ax.set_xscale("log")
        ax.set_xlabel({"segments": "training segments", "neonates": "training neonates",
                       "model": "parameters"}[r.axis])
        ax.set_ylabel(m.upper())
        ax.set_title(f"{m.upper()} vs {r.axis}")
    fig.tight_layout()
    plot = out / f"{stem}.svg"
    _svg(fig, plot)
    plt.close(fig)
    return [table, fits, flags, plot]


def _emit_stress(r: MontageStressResult, out: Path, stem: str) -> list[Path]:
    rows = [
        [_fmt(float(f)), k, _fmt(float(r.auc_degradation[i, j])), _fmt(float(r.mcc_degradation[i, j]))]
        for i, f in enumerate(r.fractions)
        for j, k in enumerate(r.affected)
    ]
    table = out / f"{stem}.csv"
    _write_csv(table, ["fraction", "affected_channels", "auc_degradation_pct", "mcc_degradation_pct"], rows)
    plt = _pyplot()
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for ax, name, data in ((axes[0], "AUC", r.auc_degradation), (axes[1], "MCC", r.mcc_degradation)):
        for i, f in enumerate(r.fractions):
            ax.plot(r.affected, data[i], marker="o", label=f"{f:.0%} dropped")
        ax.set_xlabel("affected channels")
        ax.set_ylabel(f"{name} degradation (%)")
        if r.fractions:
            ax.legend(fontsize=7)
    fig.tight_layout()
    plot = out / f"{stem}.svg"
    _svg(fig, plot)
    plt.close(fig)
    return [table, plot]
