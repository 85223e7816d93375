"""Class-balanced training: dynamic undersampling, AdamW, four-phase schedule."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import tensor as T
from .metrics import UndefinedMetric, auc
from .model import ModelConfig, ModelParams, as_tensors, build, logits

log = logging.getLogger(__name__)

# warmup, freeze-at-max, cooldown, freeze-at-min as shares of all steps, used
# when the config leaves the phase lengths unset
DEFAULT_PHASE_SHARES = (0.1, 0.4, 0.4, 0.1)


@dataclass(frozen=True)
class TrainConfig:
    ratio: int = 5
    pos_weight: float | None = None  # None -> ratio
    neg_weight: float = 1.0
    peak_lr: float = 3e-4
    floor_lr: float = 3e-6
    warmup_steps: int | None = None
    hold_steps: int | None = None
    cooldown_steps: int | None = None
    floor_steps: int | None = None
    batch_size: int = 64
    epochs: int = 10
    weight_decay: float = 0.05
    clip_norm: float = 1.0
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    p_flip: float = 0.5
    p_cutout: float = 0.5
    cutout_max_fraction: float = 0.125
    seed: int = 0

    def __post_init__(self):
        if self.ratio < 1:
            raise ValueError("undersampling ratio must be >= 1")
        for name in ("warmup_steps", "hold_steps", "cooldown_steps", "floor_steps"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("p_flip", "p_cutout", "cutout_max_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 < self.floor_lr <= self.peak_lr:
            raise ValueError("need 0 < floor_lr <= peak_lr")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    @property
    def class_weights(self) -> tuple[float, float]:
        """``(w0, w1)``; positives default to ``ratio`` for an even effective balance."""
        return self.neg_weight, float(self.ratio if self.pos_weight is None else self.pos_weight)

    def phases(self, total_steps: int) -> tuple[int, int, int, int]:
        given = (self.warmup_steps, self.hold_steps, self.cooldown_steps, self.floor_steps)
        if all(v is not None for v in given):
            return given  # type: ignore[return-value]
        return tuple(
            v if v is not None else int(round(share * total_steps))
            for v, share in zip(given, DEFAULT_PHASE_SHARES)
        )  # type: ignore[return-value]

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


# --- sampling ---------------------------------------------------------------------


@dataclass(frozen=True)
class EpochPlan:
    epoch: int
    positives: np.ndarray
    negatives: np.ndarray

    @property
    def indices(self) -> np.ndarray:
        return np.concatenate((self.positives, self.negatives))


def _cycle_orders(n_neg: int, k: int, seed: int, last_cycle: int) -> list[np.ndarray]:
    """Per-cycle orderings of the negative pool.

    An epoch that straddles two cycles must not draw a segment twice, so items
    taken from the tail of cycle ``c`` are pushed to the back of cycle ``c+1``.
    """
    orders = []
    for c in range(last_cycle + 1):
        perm = np.random.default_rng([seed, c]).permutation(n_neg)
        if orders:
            tail = (c * n_neg) % k  # items of the straddling epoch already drawn in cycle c-1
            if tail:
                taken = orders[-1][n_neg - tail :]
                keep = ~np.isin(perm, taken)
                perm = np.concatenate((perm[keep], perm[~keep]))
        orders.append(perm)
    return orders


def plan_epoch(labels: np.ndarray, epoch: int, seed: int = 0, ratio: int = 5) -> EpochPlan:
    """All positives plus ``ratio`` times as many negatives.

    Negatives are read from successive shuffles of the pool: epoch ``e`` takes
    positions ``[e*k, (e+1)*k)`` of their concatenation, so every negative is
    seen once before any is repeated.
    """
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if pos.size == 0:
        raise ValueError("no seizure segments to train on")
    k = ratio * pos.size
    if neg.size < k:
        raise ValueError(f"need at least {k} non-seizure segments for ratio {ratio}, have {neg.size}")
    start, stop = epoch * k, (epoch + 1) * k
    first, last = start // neg.size, (stop - 1) // neg.size
    orders = _cycle_orders(neg.size, k, seed, last)
    stream = np.concatenate(orders[first : last + 1])
    chosen = stream[start - first * neg.size : stop - first * neg.size]
    return EpochPlan(epoch, pos, neg[chosen])


# --- loss, schedule, optimizer ------------------------------------------------------


def weighted_loss(prob, label, pos_weight: float = 1.0, neg_weight: float = 1.0) -> float:
    """Weighted negative log-likelihood, probabilities clamped to [1e-7, 1-1e-7]."""
    p = np.atleast_1d(np.asarray(prob, dtype=np.float64))
    return float(T.weighted_bce(T.Tensor(p), np.atleast_1d(label), pos_weight, neg_weight).data)


def lr_at(step: int, config: TrainConfig, total_steps: int | None = None) -> float:
    """Log-linear warmup to the peak, hold, log-linear cooldown, then hold at the floor."""
    if step < 0:
        raise ValueError("step must be >= 0")
    warm, hold, cool, _ = config.phases(total_steps or 0)
    lo, hi = math.log(config.floor_lr), math.log(config.peak_lr)
    if step < warm:
        return math.exp(lo + (hi - lo) * step / warm)
    step -= warm
    if step <= hold:
        return config.peak_lr
    step -= hold
    if step < cool:
        return math.exp(hi + (lo - hi) * step / cool)
    return config.floor_lr


def decays(name: str) -> bool:
    """Weight decay applies to conv and linear weights only, never to biases."""
    return name.endswith(".weight")


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(0, {k: np.zeros_like(v) for k, v in params.items()}, {k: np.zeros_like(v) for k, v in params.items()})


def adamw_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    decay_filter: Callable[[str], bool] = decays,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One AdamW update with bias correction and decoupled weight decay."""
    b1, b2 = betas
    t = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} does not match parameter {p.shape}")
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay and decay_filter(name):
            update = update + lr * weight_decay * p
        new_params[name] = p - update
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(t, m_new, v_new)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        grads = {k: g * factor for k, g in grads.items()}
    return grads, norm


# --- augmentation -----------------------------------------------------------------

# "polarity" negates amplitudes; "time" reverses the segment instead
FLIP_MODE = "polarity"


def augment_flip(segment: np.ndarray, mode: str = FLIP_MODE) -> np.ndarray:
    if mode == "polarity":
        return -np.asarray(segment)
    if mode == "time":
        return np.asarray(segment)[..., ::-1].copy()
    raise ValueError(f"unknown flip mode {mode!r}")


def augment_cutout(segment: np.ndarray, max_fraction: float = 0.125, rng: np.random.Generator | None = None) -> np.ndarray:
    """Zero one contiguous run of at most ``max_fraction`` of the samples."""
    x = np.array(segment, copy=True)
    n = x.shape[-1]
    longest = int(math.floor(max_fraction * n))
    if longest == 0:
        return x
    rng = rng or np.random.default_rng()
    length = int(rng.integers(1, longest + 1))
    start = int(rng.integers(0, n - length + 1))
    x[..., start : start + length] = 0.0
    return x


def augment_batch(x: np.ndarray, config: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    out = np.array(x, dtype=np.float64, copy=True)
    for i in range(len(out)):
        if rng.random() < config.p_flip:
            out[i] = augment_flip(out[i])
        if rng.random() < config.p_cutout:
            out[i] = augment_cutout(out[i], config.cutout_max_fraction, rng)
    return out


# --- training loop ------------------------------------------------------------------


@dataclass
class EpochLog:
    epoch: int
    loss: float
    lr: float
    train_auc: float | None


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, params: ModelParams, history: list[EpochLog], epoch: int, step: int):
        super().__init__(message)
        self.params = params
        self.history = history
        self.epoch = epoch
        self.step = step


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochLog]
    step_losses: list[float]


def loss_and_grads(params: ModelParams, x: np.ndarray, y: np.ndarray, w0: float, w1: float):
    """Batch loss, probabilities and parameter gradients. ``x`` is ``(B, 1024)``."""
    weights = as_tensors(params, requires_grad=True)
    with T.Tape() as tape:
        prob = T.sigmoid(logits(weights, T.Tensor(x[:, None, :]), params.config))
        loss = T.weighted_bce(prob, y, w1, w0)
    grads = tape.backward(loss)
    return float(loss.data), prob.data.copy(), {k: grads[t] for k, t in weights.items()}


def steps_per_epoch(n_positive: int, config: TrainConfig) -> int:
    return math.ceil(n_positive * (1 + config.ratio) / config.batch_size)


def train(
    segments: np.ndarray,
    labels: np.ndarray,
    model_config: ModelConfig,
    config: TrainConfig = TrainConfig(),
    valid: np.ndarray | None = None,
    init: ModelParams | None = None,
    on_epoch: Callable[[EpochLog], None] | None = None,
) -> TrainResult:
    """Fixed-length training run; no early stopping.

    Invalid segments (``valid == False``) are left out of every epoch plan.
    """
    segments = np.asarray(segments)
    labels = np.asarray(labels).astype(np.int8)
    if segments.ndim != 2 or segments.shape[0] != labels.shape[0]:
        raise ValueError("segments must be (N, 1024) with one label each")
    usable = np.ones(len(labels), bool) if valid is None else np.asarray(valid, bool)
    pool = np.flatnonzero(usable)
    params = init if init is not None else build(model_config, seed=config.seed)
    w0, w1 = config.class_weights
    n_steps = steps_per_epoch(int((labels[pool] == 1).sum()), config)
    total = n_steps * config.epochs
    state = AdamState.zeros_like(params)
    history: list[EpochLog] = []
    step_losses: list[float] = []
    step = 0
    for epoch in range(config.epochs):
        plan = plan_epoch(labels[pool], epoch, config.seed, config.ratio)
        rng = np.random.default_rng([config.seed, epoch, 1])
        order = pool[rng.permutation(plan.indices)]
        probs, targets, losses, sizes = [], [], [], []
        lr = lr_at(step, config, total)
        for b in range(0, len(order), config.batch_size):
            idx = order[b : b + config.batch_size]
            x = augment_batch(segments[idx], config, rng)
            y = labels[idx].astype(np.float64)
            loss, prob, grads = loss_and_grads(params, x, y, w0, w1)
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, step {step}; returning the last finite parameters",
                    params, history, epoch, step,
                )
            grads, _ = clip_by_global_norm(grads, config.clip_norm)
            lr = lr_at(step, config, total)
            updated, state = adamw_step(params, grads, state, lr, config.weight_decay, config.betas, config.adam_eps)
            params = params.replace(updated)
            step += 1
            step_losses.append(loss)
            losses.append(loss)
            sizes.append(len(idx))
            probs.append(prob)
            targets.append(y)
        try:
            train_auc = auc(np.concatenate(probs), np.concatenate(targets))
        except UndefinedMetric:
            train_auc = None
        entry = EpochLog(epoch, float(np.average(losses, weights=sizes)), lr, train_auc)
        history.append(entry)
        log.info("epoch %d loss %.5f lr %.3g train-auc %s", entry.epoch, entry.loss, entry.lr, entry.train_auc)
        if on_epoch:
            on_epoch(entry)
    return TrainResult(params, history, step_losses)


def write_log(history: list[EpochLog], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "loss", "lr", "train_auc"], lineterminator="\n")
        w.writeheader()
        for e in history:
            w.writerow({k: ("" if v is None else v) for k, v in asdict(e).items()})
