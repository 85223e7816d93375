"""Small reverse-mode engine for the 1-D ConvNeXt layer set.

Arrays are float64 with layout ``(..., channels, length)``; any leading axes
are batch axes. Operations record themselves on the active :class:`Tape`
when at least one input requires a gradient, and :func:`backward` replays the
records in reverse order.
"""

from __future__ import annotations

import contextvars
import math
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("tape", default=None)
_MAC_COUNTER: contextvars.ContextVar["MacCounter | None"] = contextvars.ContextVar("macs", default=None)

LN_EPS = 1e-8


class Tensor:
    """A float64 array plus a flag saying whether gradients flow into it."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)


VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; a tape belongs to one computation and must not
    be shared between threads.
    """

    def __init__(self) -> None:
        self.records: list[tuple[Tensor, tuple[Tensor, ...], VJP]] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        return backward(self, loss)


class MacCounter:
    """Counts multiply-accumulates performed by conv and linear layers."""

    def __init__(self) -> None:
        self.macs = 0


@contextmanager
def count_macs() -> Iterator[MacCounter]:
    counter = MacCounter()
    token = _MAC_COUNTER.set(counter)
    try:
        yield counter
    finally:
        _MAC_COUNTER.reset(token)


def _tally(n: int) -> None:
    counter = _MAC_COUNTER.get()
    if counter is not None:
        counter.macs += int(n)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: VJP) -> Tensor:
    out = Tensor(data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append((out, inputs, vjp))
    return out


def _sum_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-mode pass from a scalar ``loss``.

    Returns the accumulated gradient of every leaf tensor that requires one
    and lies on a path to ``loss``.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {loss.shape}")
    grads: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.data)}
    produced = set()
    for out, inputs, vjp in reversed(tape.records):
        produced.add(out)
        g = grads.pop(out, None)
        if g is None:
            continue
        for inp, gi in zip(inputs, vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp in grads:
                grads[inp] = grads[inp] + gi
            else:
                grads[inp] = gi
    if loss not in produced and not loss.requires_grad:
        raise ValueError("loss was not recorded on this tape")
    return {t: g for t, g in grads.items() if t not in produced}


# --- layers -----------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _emit(a.data + b.data, (a, b), lambda g: (_sum_to(g, a.shape), _sum_to(g, b.shape)))


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Unpadded 1-D cross-correlation, kernel shaped ``(out_ch, in_ch, k)``."""
    x, kernel = _wrap(x), _wrap(kernel)
    out_ch, in_ch, k = kernel.shape
    if x.shape[-2] != in_ch:
        raise ValueError(f"conv1d: kernel expects {in_ch} input channels, input has {x.shape[-2]}")
    length = x.shape[-1]
    if stride < 1:
        raise ValueError("conv1d: stride must be >= 1")
    if length < k:
        raise ValueError(f"conv1d: input length {length} shorter than kernel {k}")
    n_out = (length - k) // stride + 1
    batch = int(np.prod(x.shape[:-2], dtype=np.int64))
    _tally(batch * out_ch * in_ch * k * n_out)

    if k == 1 and stride == 1:
        w2 = kernel.data[:, :, 0]
        out = np.matmul(w2, x.data)

        def vjp(g):
            gx = np.matmul(w2.T, g)
            gw = np.tensordot(g, x.data, axes=(_batch_and_last(g), _batch_and_last(x.data)))
            return gx, gw[:, :, None]
    else:
        win = sliding_window_view(x.data, k, axis=-1)[..., ::stride, :][..., :n_out, :]
        out = np.moveaxis(np.tensordot(win, kernel.data, axes=([-3, -1], [1, 2])), -1, -2)

        def vjp(g):
            lead = tuple(range(g.ndim - 2))
            gw = np.tensordot(g, win, axes=(lead + (g.ndim - 1,), lead + (win.ndim - 2,)))
            gwin = np.tensordot(g, kernel.data, axes=([-2], [0]))  # (..., L_out, in_ch, k)
            gx = np.zeros_like(x.data)
            span = stride * (n_out - 1) + 1
            for j in range(k):
                gx[..., j : j + span : stride] += np.moveaxis(gwin[..., j], -1, -2)
            return gx, gw

    inputs: tuple[Tensor, ...] = (x, kernel)
    if bias is not None:
        bias = _wrap(bias)
        out = out + bias.data[:, None]
        inputs = inputs + (bias,)
        inner = vjp

        def vjp(g):
            return (*inner(g), g.sum(axis=tuple(range(g.ndim - 2)) + (g.ndim - 1,)))

    return _emit(out, inputs, vjp)


def _batch_and_last(a: np.ndarray) -> tuple[int, ...]:
    return tuple(range(a.ndim - 2)) + (a.ndim - 1,)


def depthwise_conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel convolution with ``(k - 1) // 2`` zero padding each side."""
    x, kernel = _wrap(x), _wrap(kernel)
    channels, k = kernel.shape
    if x.shape[-2] != channels:
        raise ValueError(f"depthwise_conv1d: kernel has {channels} channels, input has {x.shape[-2]}")
    if k % 2 != 1:
        raise ValueError("depthwise_conv1d: kernel length must be odd for same-length output")
    pad = (k - 1) // 2
    length = x.shape[-1]
    batch = int(np.prod(x.shape[:-2], dtype=np.int64))
    _tally(batch * channels * k * length)

    widths = [(0, 0)] * (x.data.ndim - 1) + [(pad, pad)]
    xp = np.pad(x.data, widths)
    w = kernel.data
    out = np.zeros_like(x.data)
    for j in range(k):
        out += w[:, j, None] * xp[..., j : j + length]

    def vjp(g):
        red = tuple(range(g.ndim - 2)) + (g.ndim - 1,)
        gw = np.empty_like(w)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gw[:, j] = (g * xp[..., j : j + length]).sum(axis=red)
            gxp[..., j : j + length] += w[:, j, None] * g
        return gxp[..., pad : pad + length], gw

    inputs: tuple[Tensor, ...] = (x, kernel)
    if bias is not None:
        bias = _wrap(bias)
        out = out + bias.data[:, None]
        inputs = inputs + (bias,)
        inner = vjp

        def vjp(g):
            return (*inner(g), g.sum(axis=tuple(range(g.ndim - 2)) + (g.ndim - 1,)))

    return _emit(out, inputs, vjp)


def layer_norm(
    x: Tensor,
    gain: Tensor | None = None,
    shift: Tensor | None = None,
    epsilon: float = LN_EPS,
) -> Tensor:
    """Normalize across channels at every time position (population variance)."""
    x = _wrap(x)
    mean = x.data.mean(axis=-2, keepdims=True)
    centred = x.data - mean
    var = (centred * centred).mean(axis=-2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = centred * inv_std
    out = xhat
    inputs: tuple[Tensor, ...] = (x,)
    if gain is not None:
        gain = _wrap(gain)
        out = out * gain.data[:, None]
        inputs = inputs + (gain,)
    if shift is not None:
        shift = _wrap(shift)
        out = out + shift.data[:, None]
        inputs = inputs + (shift,)

    def vjp(g):
        red = tuple(range(g.ndim - 2)) + (g.ndim - 1,)
        grads = []
        gxhat = g * gain.data[:, None] if gain is not None else g
        gx = inv_std * (
            gxhat
            - gxhat.mean(axis=-2, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-2, keepdims=True)
        )
        grads.append(gx)
        if gain is not None:
            grads.append((g * xhat).sum(axis=red))
        if shift is not None:
            grads.append(g.sum(axis=red))
        return grads

    return _emit(out, inputs, vjp)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    x = _wrap(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _emit(x.data * cdf, (x,), vjp)


def avg_pool_full(x: Tensor) -> Tensor:
    """Mean over the whole time axis; output length 1."""
    x = _wrap(x)
    length = x.shape[-1]
    if length == 0:
        raise ValueError("avg_pool_full: zero-length input")
    return _emit(
        x.data.mean(axis=-1, keepdims=True),
        (x,),
        lambda g: (np.broadcast_to(g / length, x.shape).copy(),),
    )


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map of a pooled ``(..., features, 1)`` vector to one logit per item."""
    x, weight = _wrap(x), _wrap(weight)
    feats = x.data[..., 0] if x.data.ndim >= 2 and x.shape[-1] == 1 else x.data
    if feats.shape[-1] != weight.shape[-1]:
        raise ValueError(f"linear: weight has {weight.shape[-1]} features, input has {feats.shape[-1]}")
    batch = int(np.prod(feats.shape[:-1], dtype=np.int64))
    _tally(batch * weight.shape[-1])
    out = feats @ weight.data
    inputs: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        bias = _wrap(bias)
        out = out + bias.data.reshape(())
        inputs = inputs + (bias,)

    def vjp(g):
        gx = (g[..., None] * weight.data).reshape(x.shape)
        lead = list(range(g.ndim))
        gw = np.tensordot(g, feats, axes=(lead, lead))
        if bias is None:
            return gx, gw
        return gx, gw, np.atleast_1d(np.sum(g)).reshape(bias.shape)

    return _emit(np.asarray(out), inputs, vjp)


def sigmoid(x: Tensor) -> Tensor:
    x = _wrap(x)
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit(out, (x,), lambda g: (g * out * (1.0 - out),))


def weighted_bce(
    prob: Tensor,
    target: np.ndarray,
    pos_weight: float = 1.0,
    neg_weight: float = 1.0,
    clamp: float = 1e-7,
) -> Tensor:
    """Mean weighted negative log-likelihood of binary targets."""
    prob = _wrap(prob)
    y = np.asarray(target, dtype=np.float64).reshape(prob.shape)
    p = np.clip(prob.data, clamp, 1.0 - clamp)
    inside = (prob.data > clamp) & (prob.data < 1.0 - clamp)
    n = p.size
    terms = -(pos_weight * y * np.log(p) + neg_weight * (1.0 - y) * np.log1p(-p))
    loss = np.asarray(terms.sum() / n)

    def vjp(g):
        dp = -(pos_weight * y / p - neg_weight * (1.0 - y) / (1.0 - p)) / n
        return (g * dp * inside,)

    return _emit(loss, (prob,), vjp)


def scale(x: Tensor, factor: float) -> Tensor:
    x = _wrap(x)
    return _emit(x.data * factor, (x,), lambda g: (g * factor,))


def total(x: Tensor) -> Tensor:
    """Sum of every element, as a scalar."""
    x = _wrap(x)
    return _emit(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))
