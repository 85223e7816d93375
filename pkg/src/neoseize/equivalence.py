"""Expert-equivalence test: the change in 3-rater Fleiss kappa when the model
replaces one expert, with a neonate-level bootstrap.

Each neonate is reduced to integer sums ``(N, sum n1, sum n1^2)`` per rater
panel. Those sums add across neonates, so a bootstrap replicate is a weighted
sum of integer rows followed by one exact kappa evaluation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .metrics import fleiss_from_sums

N_EXPERTS = 3
CI_PERCENTILES = (2.5, 97.5)


@dataclass
class KappaTestResult:
    kappa_experts: float
    kappa_ai: list[float]  # panel with expert a replaced
    delta: list[float]  # kappa_ai[a] - kappa_experts
    delta_mean: float
    iterations: int
    ci_low: float
    ci_high: float
    p_value: float
    seed: int
    n_neonates: int
    samples: list[float]

    @property
    def equivalent(self) -> bool:
        return self.ci_low <= 0.0 <= self.ci_high

    def to_json(self) -> str:
        d = asdict(self)
        d["equivalent"] = self.equivalent
        return json.dumps(d, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "KappaTestResult":
        d = json.loads(text)
        d.pop("equivalent", None)
        return cls(**d)


def _check_panel(experts: Sequence, ai) -> tuple[np.ndarray, np.ndarray]:
    if len(experts) != N_EXPERTS:
        raise ValueError(f"expected exactly {N_EXPERTS} expert masks, got {len(experts)}")
    e = np.vstack([np.asarray(m).astype(bool) for m in experts]).astype(np.int64)
    a = np.asarray(ai).astype(bool).astype(np.int64)
    if a.shape != e.shape[1:]:
        raise ValueError(f"AI mask length {a.shape} differs from expert masks {e.shape[1:]}")
    return e, a


def panel_sums(experts: Sequence, ai) -> np.ndarray:
    """Rows ``[experts, ai-for-1, ai-for-2, ai-for-3]``, columns ``(N, sum n1, sum n1^2)``."""
    e, a = _check_panel(experts, ai)
    votes = e.sum(axis=0)
    rows = [votes] + [votes - e[k] + a for k in range(N_EXPERTS)]
    return np.array([[len(v), int(v.sum()), int((v * v).sum())] for v in rows], dtype=np.int64)


def _kappas(sums: np.ndarray) -> np.ndarray:
    return np.array([fleiss_from_sums(int(n), int(s1), int(s2), N_EXPERTS) for n, s1, s2 in sums])


def _delta(sums: np.ndarray) -> float:
    k = _kappas(sums)
    return float(np.mean(k[1:] - k[0]))


def delta_kappa(experts: Sequence, ai) -> tuple[list[float], float, float, list[float]]:
    """``(delta per replaced expert, mean delta, kappa_experts, kappa_ai)`` on
    the given (already concatenated) masks."""
    k = _kappas(panel_sums(experts, ai))
    deltas = [float(x - k[0]) for x in k[1:]]
    return deltas, float(np.mean(deltas)), float(k[0]), [float(x) for x in k[1:]]


def bootstrap_test(
    expert_masks: Sequence[Sequence],
    ai_masks: Sequence,
    iterations: int = 1000,
    seed: int = 0,
) -> KappaTestResult:
    """Point estimate on all neonates pooled, percentile CI from resampling
    neonates with replacement.

    ``expert_masks[i]`` holds the three expert masks of neonate ``i``;
    ``ai_masks[i]`` the model's global mask for the same seconds.
    """
    n = len(expert_masks)
    if n < 2:
        raise ValueError("the bootstrap needs at least 2 neonates")
    if len(ai_masks) != n:
        raise ValueError("one AI mask per neonate is required")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    per = np.stack([panel_sums(e, a) for e, a in zip(expert_masks, ai_masks)])  # (n, 4, 3)
    pooled = per.sum(axis=0)
    k = _kappas(pooled)
    deltas = [float(x - k[0]) for x in k[1:]]
    samples = []
    for it in range(iterations):
        draw = np.random.default_rng([seed, it]).integers(0, n, n)
        weights = np.bincount(draw, minlength=n)
        samples.append(_delta(np.tensordot(weights, per, axes=1)))
    arr = np.array(samples)
    lo, hi = np.percentile(arr, CI_PERCENTILES)
    p = min(1.0, 2.0 * min(np.mean(arr <= 0), np.mean(arr >= 0)))
    return KappaTestResult(
        kappa_experts=float(k[0]), kappa_ai=[float(x) for x in k[1:]], delta=deltas,
        delta_mean=float(np.mean(deltas)), iterations=iterations, ci_low=float(lo), ci_high=float(hi),
        p_value=float(p), seed=seed, n_neonates=n, samples=samples,
    )
