"""Smooth cut-off profiles built from ``exp(-1/s)``."""

from __future__ import annotations

import math

import numpy as np


def _e(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s, dtype=float)
    # below 1/700 the value underflows to 0 anyway, and 1/s may overflow
    pos = s > 1.0 / 700.0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def smooth_step(s) -> np.ndarray:
    """C-infinity step: 0 for ``s <= 0``, 1 for ``s >= 1``."""
    s = np.asarray(s, dtype=float)
    a = _e(s)
    b = _e(1.0 - s)
    return a / (a + b)


def plateau(t, inner: float, outer: float) -> np.ndarray:
    """Even profile equal to 1 for ``|t| <= inner`` and 0 for ``|t| >= outer``."""
    t = np.abs(np.asarray(t, dtype=float))
    return smooth_step((outer - t) / (outer - inner))


def cube_plateau(x, inner: float, outer: float) -> np.ndarray:
    """Tensor product of :func:`plateau` over the last axis of ``x``."""
    x = np.asarray(x, dtype=float)
    return np.prod(plateau(x, inner, outer), axis=-1)


def _e_jet(s: np.ndarray, order: int) -> list[np.ndarray]:
    """``exp(-1/s)`` and its derivatives up to ``order`` (zero for ``s <= 0``)."""
    out = [np.zeros_like(s, dtype=float) for _ in range(order + 1)]
    pos = s > 0
    sp = s[pos]
    e = np.exp(-1.0 / sp)
    inv = 1.0 / sp
    polys = [np.ones_like(sp), inv**2, inv**4 - 2 * inv**3, inv**6 - 6 * inv**5 + 6 * inv**4]
    if order > 3:
        raise ValueError("profile jets are implemented up to order 3")
    for k in range(order + 1):
        out[k][pos] = e * polys[k]
    return out


def smooth_step_jet(s, order: int = 2) -> list[np.ndarray]:
    """``[f, f', ..., f^(order)]`` for :func:`smooth_step`."""
    s = np.asarray(s, dtype=float)
    a = _e_jet(s, order)
    b = [(-1) ** k * d for k, d in enumerate(_e_jet(1.0 - s, order))]
    D = [x + y for x, y in zip(a, b)]
    q = []
    for k in range(order + 1):
        # Leibniz rule for q * D = a, solved for the k-th derivative of q
        acc = a[k].copy()
        for j in range(k):
            acc -= math.comb(k, j) * q[j] * D[k - j]
        q.append(acc / D[0])
    return q


def plateau_jet(t, inner: float, outer: float, order: int = 2) -> list[np.ndarray]:
    """Derivatives of :func:`plateau` in ``t`` up to ``order``."""
    t = np.asarray(t, dtype=float)
    width = outer - inner
    f = smooth_step_jet((outer - np.abs(t)) / width, order)
    c = -np.sign(t) / width
    return [f[k] * c**k for k in range(order + 1)]
