"""Second-order finite differences on chart lattices.

Central differences in the interior and three-point one-sided stencils on
the first and last lattice layers (``numpy.gradient`` with ``edge_order=2``).
Iterating the stencil loses one order on the outermost layers, which callers
track as a lattice margin.
"""

from __future__ import annotations

import itertools

import numpy as np


def partial(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    if arr.shape[axis] < 3:
        raise ValueError("finite differences need at least three nodes per axis")
    return np.gradient(arr, h, axis=axis, edge_order=2)


def second(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Pure second derivative: compact 3-point stencil inside, 4-point one-sided at the ends."""
    n = arr.shape[axis]
    if n < 4:
        raise ValueError("second differences need at least four nodes per axis")
    a = np.moveaxis(arr, axis, 0)
    out = np.empty_like(a, dtype=np.result_type(a, float))
    out[1:-1] = a[2:] - 2 * a[1:-1] + a[:-2]
    out[0] = 2 * a[0] - 5 * a[1] + 4 * a[2] - a[3]
    out[-1] = 2 * a[-1] - 5 * a[-2] + 4 * a[-3] - a[-4]
    return np.moveaxis(out / h**2, 0, axis)


def gradient(arr: np.ndarray, h: float, ndim: int) -> np.ndarray:
    """All first partials of a component array, new index appended last."""
    return np.stack([partial(arr, i, h) for i in range(ndim)], axis=-1)


def multi_partials(arr: np.ndarray, order: int, h: float, ndim: int) -> dict[tuple[int, ...], np.ndarray]:
    """``{alpha: d^alpha arr}`` for all non-decreasing index tuples with ``|alpha| <= order``.

    A repeated trailing index uses the compact second-difference stencil.
    """
    out = {(): arr}
    frontier = [()]
    for _ in range(order):
        nxt = []
        for a in frontier:
            start = a[-1] if a else 0
            for i in range(start, ndim):
                b = a + (i,)
                if a and a[-1] == i:
                    out[b] = second(out[a[:-1]], i, h)
                else:
                    out[b] = partial(out[a], i, h)
                nxt.append(b)
        frontier = nxt
    return out


def interior(arr: np.ndarray, margin: int, ndim: int) -> np.ndarray:
    """Drop ``margin`` lattice layers on every side of the first ``ndim`` axes."""
    if margin <= 0:
        return arr
    sl = tuple(slice(margin, -margin) for _ in range(ndim))
    return arr[sl]


def sup_norm(arr: np.ndarray, k: int, h: float, ndim: int, margin: int = 0) -> float:
    """``max_{|alpha| <= k} sup |d^alpha arr|`` over lattice nodes (max-abs over components)."""
    best = 0.0
    for a, d in multi_partials(arr, k, h, ndim).items():
        best = max(best, float(np.max(np.abs(interior(d, margin, ndim)))))
    return best


def multi_indices(order: int, ndim: int):
    for n in range(order + 1):
        yield from itertools.combinations_with_replacement(range(ndim), n)


def refine_linear(arr: np.ndarray, factor: int, ndim: int) -> np.ndarray:
    """Separable linear interpolation onto a lattice ``factor`` times finer (nodes kept)."""
    if factor == 1:
        return arr
    out = arr
    for ax in range(ndim):
        n = out.shape[ax]
        pos = np.arange((n - 1) * factor + 1) / factor
        lo = np.minimum(pos.astype(int), n - 2)
        t = pos - lo
        a = np.take(out, lo, axis=ax)
        b = np.take(out, lo + 1, axis=ax)
        shp = [1] * out.ndim
        shp[ax] = len(pos)
        t = t.reshape(shp)
        out = (1 - t) * a + t * b
    return out
