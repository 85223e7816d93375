"""Central finite differences, kept independent of the engine's backward pass."""

import numpy as np


def numeric_grad(f, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Gradient of scalar ``f()`` w.r.t. ``x`` (perturbed in place, then restored)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        g[i] = (hi - lo) / (2 * step)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, small: float = 1e-6) -> float:
    """Largest relative error; entries where both sides are below ``small`` use absolute error."""
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    scale = np.maximum(np.abs(a), np.abs(n))
    err = np.where(scale < small, np.abs(a - n), np.abs(a - n) / np.where(scale < small, 1.0, scale))
    return float(err.max(initial=0.0))


def assert_grad_close(
    analytic,
    numeric,
    rtol: float = 1e-3,
    small: float = 1e-6,
    small_atol: float = 1e-6,
    small_rtol: float | None = None,
):
    """Relative error below ``rtol``; where the gradient magnitude is below ``small``
    the absolute error must be below ``small_atol``, or, if ``small_rtol`` is given,
    the relative error below ``small_rtol``."""
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    scale = np.maximum(np.abs(a), np.abs(n))
    big = scale >= small
    rel = np.abs(a - n)[big] / scale[big]
    absolute = np.abs(a - n)[~big]
    if small_rtol is not None:
        tiny_scale = scale[~big]
        loose_ok = absolute <= small_rtol * tiny_scale
        absolute = np.where(loose_ok, 0.0, absolute)
    worst_rel = float(rel.max(initial=0.0))
    worst_abs = float(absolute.max(initial=0.0))
    assert worst_rel < rtol, f"relative gradient error {worst_rel:.3g} >= {rtol}"
    assert worst_abs < small_atol, f"absolute gradient error {worst_abs:.3g} on tiny entries"
    return worst_rel
