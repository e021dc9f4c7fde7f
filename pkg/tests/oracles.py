"""Independent reference computations shared by the tests."""

from __future__ import annotations

import numpy as np

from wavemap.network import NetworkParams, _forward_trace, backward


def central_difference_gradient(params: NetworkParams, X, Y, step: float = 1e-6) -> np.ndarray:
    """Loss gradient by central differences, in ``params.flat()`` order."""
    base = params.flat()
    out = np.empty_like(base)
    for i in range(base.size):
        d = np.zeros_like(base)
        d[i] = step
        plus = backward(params.with_flat(base + d), X, Y)[0]
        minus = backward(params.with_flat(base - d), X, Y)[0]
        out[i] = (plus - minus) / (2 * step)
    return out


def analytic_gradient(params: NetworkParams, X, Y) -> np.ndarray:
    _, gW, gb = backward(params, X, Y)
    flat = []
    for w, b in zip(gW, gb):
        flat += [w.ravel(), b.ravel()]
    return np.concatenate(flat)


def near_relu_kink(params: NetworkParams, X, margin: float = 1e-4) -> bool:
    if params.activation != "relu":
        return False
    _, trace = _forward_trace(params, np.atleast_2d(X))
    return any(z is not None and np.any(np.abs(z) < margin) for _, z, _ in trace)


def gradient_discrepancy(params: NetworkParams, X, Y) -> float:
    g = analytic_gradient(params, X, Y)
    num = central_difference_gradient(params, X, Y)
    return float(np.max(np.abs(g - num)) / max(np.max(np.abs(g)), 1e-300))


def periodic_laplacian(u: np.ndarray, spacing: float) -> np.ndarray:
    """Fourth-order central difference on a periodic 1D array."""
    return (
        -np.roll(u, 2) + 16 * np.roll(u, 1) - 30 * u + 16 * np.roll(u, -1) - np.roll(u, -2)
    ) / (12 * spacing**2)


def fit_order(errors, steps) -> float:
    """Least-squares slope of log(error) against log(step)."""
    return float(np.polyfit(np.log(steps), np.log(errors), 1)[0])
