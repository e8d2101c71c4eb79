"""Christoffel symbols, covariant derivatives and the uniform chart estimates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import fd
from .geometry_core import (
    ChartGrid,
    GeometryError,
    ManifoldModel,
    TensorFieldSample,
    ValenceError,
    inner_components,
)

__all__ = [
    "ChristoffelSample",
    "UniformEstimatesReport",
    "christoffel",
    "christoffel_on_grid",
    "nabla_components",
    "nabla2_components",
    "connection_terms",
    "covariant_derivative",
    "verify_uniform_estimates",
    "MAX_RANK",
]

MAX_RANK = 6


@dataclass(frozen=True)
class ChristoffelSample:
    """``gamma[..., k, i, j]`` holds the symbol with upper index ``k``."""

    chart_id: str
    N: int
    gamma: np.ndarray
    derivative_mode: str


def christoffel_on_grid(grid: ChartGrid, mode: str = "analytic") -> np.ndarray:
    cache = grid.__dict__.setdefault("_christoffel", {})
    if mode in cache:
        return cache[mode]
    gi = grid.metric.g_inv
    if mode == "analytic":
        J = grid.chart.jacobian(grid.x)
        H = grid.chart.hessian(grid.x)
        first = np.einsum("...al,...aij->...lij", J, H)
    elif mode == "fd":
        dg = fd.gradient(grid.metric.g, grid.h, grid.chart.dim)  # dg[..., i, j, k] = d_k g_ij
        n = dg.ndim
        lead = tuple(range(n - 3))
        # first kind: (d_i g_lj + d_j g_li - d_l g_ij) / 2
        first = 0.5 * (
            np.transpose(dg, lead + (n - 3, n - 1, n - 2))
            + dg
            - np.transpose(dg, lead + (n - 1, n - 3, n - 2))
        )
    else:
        raise GeometryError(f"unknown derivative mode {mode!r}")
    gamma = np.einsum("...kl,...lij->...kij", gi, first)
    cache[mode] = gamma
    return gamma


def christoffel(model: ManifoldModel, chart_id: str, N: int, mode: str = "analytic") -> ChristoffelSample:
    """Christoffel symbols of the pulled-back metric on a chart lattice.

    ``mode="analytic"`` uses closed-form Jacobians and Hessians of the
    parametrization; ``mode="fd"`` differentiates the sampled metric.
    """
    grid = model.grid(chart_id, N)
    try:
        gamma = christoffel_on_grid(grid, mode)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded by evaluate_metric
        raise GeometryError(f"singular metric on chart {chart_id}") from exc
    return ChristoffelSample(chart_id, N, gamma, mode)


def _flat(a: np.ndarray, lead: int):
    P = int(np.prod(a.shape[:lead]))
    return a.reshape((P,) + a.shape[lead:])


def connection_terms(comp: np.ndarray, valence, gamma: np.ndarray) -> np.ndarray:
    """Christoffel part of one covariant derivative; the direction index is appended last.

    Upper slots gain ``+Gamma^i_{kl} a^l`` and lower slots ``-Gamma^l_{kj} a_l``.
    """
    sigma, tau = valence
    rank = sigma + tau
    m = gamma.shape[-1]
    lead = comp.ndim - rank
    lat = comp.shape[:lead]
    P = int(np.prod(lat))
    G = gamma.reshape(P, m, m, m)
    a = _flat(comp, lead)  # (P, m, ..., m)
    o = np.zeros(a.shape + (m,), dtype=np.result_type(a, G))
    for s in range(rank):
        moved = np.moveaxis(a, 1 + s, -1)
        rest = moved.shape[1:-1]
        a2 = moved.reshape(P, -1, m)
        if s < sigma:
            t = np.einsum("pikl,prl->prik", G, a2)
        else:
            t = -np.einsum("plkj,prl->prjk", G, a2)
        t = t.reshape((P,) + rest + (m, m))
        # t axes: (P, rest..., slot, k) -> put slot back at position s
        o = o + np.moveaxis(t, -2, 1 + s)
    return o.reshape(lat + o.shape[1:])


def nabla_components(comp: np.ndarray, valence, gamma: np.ndarray, h: float) -> np.ndarray:
    """One covariant derivative of chart components; new covariant index last."""
    lead = comp.ndim - sum(valence)
    return fd.gradient(comp, h, lead) + connection_terms(comp, valence, gamma)


def nabla2_components(comp: np.ndarray, valence, gamma: np.ndarray, h: float) -> np.ndarray:
    """Second covariant derivative from the coordinate formula with direct second partials.

    ``(nabla^2 a)_{..;j;k} = d_k d_j a + ((d_k Gamma) . a)_j + (Gamma . d_k a)_j
    + (Gamma . nabla a)_{j,k}``, where ``Gamma .`` is :func:`connection_terms`
    and the last term acts on ``nabla a`` as a tensor with one more lower slot.
    """
    sigma, tau = valence
    lead = comp.ndim - sigma - tau
    m = gamma.shape[-1]
    parts = fd.multi_partials(comp, 2, h, lead)
    d1 = np.stack([parts[(j,)] for j in range(m)], axis=-1)
    d2 = np.empty(comp.shape + (m, m), dtype=comp.dtype)
    for j in range(m):
        for k in range(m):
            d2[..., j, k] = parts[tuple(sorted((j, k)))]
    dgamma = fd.gradient(gamma, h, lead)  # dgamma[..., a, b, c, k] = d_k Gamma^a_bc
    first = d1 + connection_terms(comp, valence, gamma)
    out = d2 + connection_terms(first, (sigma, tau + 1), gamma)
    for k in range(m):
        out[..., k] += connection_terms(comp, valence, dgamma[..., k]) + connection_terms(parts[(k,)], valence, gamma)
    return out


def covariant_derivative(field: TensorFieldSample, order: int = 1, mode: str = "analytic") -> TensorFieldSample:
    """``nabla^order`` of a tensor field by repeated single steps."""
    if order < 1:
        raise GeometryError("order must be ≥ 1")
    if field.rank + order > MAX_RANK:
        raise ValenceError(f"valence cap exceeded: sigma + tau + order must be ≤ {MAX_RANK}")
    N = field.N
    if 2 * N + 1 < 3 * (order + 1):
        raise GeometryError("order too large for the mesh")
    cur = field
    for step in range(order):
        per = {}
        for cid, comp in cur.per_chart.items():
            grid = cur.model.grid(cid, N)
            per[cid] = nabla_components(comp, cur.valence, christoffel_on_grid(grid, mode), grid.h)
        # one-sided edge stencils lose an order once they are iterated
        margin = cur.margin + (1 if step else 0)
        cur = TensorFieldSample(cur.model, (cur.valence[0], cur.valence[1] + 1), N, per, margin)
    return cur


# ---------------------------------------------------------------------------
# uniform estimates


@dataclass
class UniformEstimatesReport:
    """Per-chart brackets of the uniform chart estimates.

    Keys: ``metric`` (eigenvalues of ``g / rho_k^2``), ``cometric``
    (eigenvalues of ``rho_k^2 g^*``), ``volume`` (``sqrt det g / rho_k^m``),
    ``nabla_r`` (pointwise ratio of covariant to partial derivative sums),
    ``norm_s_t`` (``|a|_g / (rho_k^{s-t} |a|)`` for valence ``(s, t)``);
    ``derivative_k`` holds ``rho_k^-2 ||g||_{k,inf} + rho_k^2 ||g^*||_{k,inf}``.
    """

    model: str
    N: int
    per_chart: dict[str, dict[str, tuple[float, float]]]
    shells: dict[str, int]

    def per_shell(self, key: str) -> dict[int, tuple[float, float]]:
        out: dict[int, tuple[float, float]] = {}
        for cid, d in self.per_chart.items():
            if key not in d:
                continue
            lo, hi = d[key]
            s = self.shells[cid]
            if s in out:
                out[s] = (min(out[s][0], lo), max(out[s][1], hi))
            else:
                out[s] = (lo, hi)
        return dict(sorted(out.items()))

    def bracket(self, key: str, shells: Iterable[int] | None = None) -> tuple[float, float]:
        ps = self.per_shell(key)
        keys = list(ps) if shells is None else [s for s in shells if s in ps]
        return min(ps[s][0] for s in keys), max(ps[s][1] for s in keys)

    def bracket_drift(self, key: str, split: int = 4) -> float:
        """Relative change of the bracket endpoints when shells deeper than ``split`` are added."""
        ps = self.per_shell(key)
        shallow = self.bracket(key, [s for s in ps if s <= split])
        full = self.bracket(key)
        lo = abs(full[0] - shallow[0]) / abs(shallow[0]) if shallow[0] else 0.0
        hi = abs(full[1] - shallow[1]) / abs(shallow[1]) if shallow[1] else 0.0
        return max(lo, hi)

    def keys(self) -> list[str]:
        ks: list[str] = []
        for d in self.per_chart.values():
            for k in d:
                if k not in ks:
                    ks.append(k)
        return ks


def _eig_bracket(mat: np.ndarray) -> tuple[float, float]:
    ev = np.linalg.eigvalsh(0.5 * (mat + np.swapaxes(mat, -1, -2)))
    return float(ev[..., 0].min()), float(ev[..., -1].max())


def _random_poly(rng: np.random.Generator, x: np.ndarray, ncomp: int, degree: int = 3) -> np.ndarray:
    m = x.shape[-1]
    out = np.zeros(x.shape[:-1] + (ncomp,))
    exps = [e for e in np.ndindex(*(degree + 1,) * m) if sum(e) <= degree]
    for c in range(ncomp):
        coef = rng.normal(size=len(exps))
        for a, e in zip(coef, exps):
            out[..., c] += a * np.prod(x ** np.array(e), axis=-1)
    return out


def verify_uniform_estimates(
    model: ManifoldModel,
    k_max: int = 1,
    r_max: int = 1,
    N: int = 8,
    *,
    valences: Sequence[tuple[int, int]] = ((1, 0), (0, 1)),
    samples: int = 2,
    seed: int = 0,
    charts: Iterable[str] | None = None,
) -> UniformEstimatesReport:
    """Measure the chart-uniform metric, volume and norm estimates chart by chart."""
    rng = np.random.default_rng(seed)
    m = model.dim
    per_chart: dict[str, dict[str, tuple[float, float]]] = {}
    shells = {}
    for cid in charts if charts is not None else model.chart_ids:
        grid = model.grid(cid, N)
        chart = grid.chart
        rk = chart.center_rho
        met = grid.metric
        # pointwise brackets only see nodes on the truncated manifold
        live = model.core_contains(grid.natural)
        if not live.any():
            continue
        d: dict[str, tuple[float, float]] = {}
        d["metric"] = _eig_bracket(met.g[live] / rk**2)
        d["cometric"] = _eig_bracket(met.g_inv[live] * rk**2)
        vol = met.sqrt_det[live] / rk**m
        d["volume"] = (float(vol.min()), float(vol.max()))
        for k in range(k_max + 1):
            v = fd.sup_norm(met.g, k, grid.h, m) / rk**2 + fd.sup_norm(met.g_inv, k, grid.h, m) * rk**2
            d[f"derivative_{k}"] = (v, v)
        gamma = christoffel_on_grid(grid)
        for sigma, tau in valences:
            rank = sigma + tau
            lo, hi = np.inf, 0.0
            nlo, nhi = np.inf, 0.0
            for _ in range(samples):
                a = _random_poly(rng, grid.x, m**rank).reshape(grid.shape + (m,) * rank)
                # norm comparison
                ng = np.sqrt(np.maximum(inner_components(a, a, met.g, met.g_inv, (sigma, tau)).real, 0))
                ne = np.sqrt(np.sum(np.abs(a.reshape(grid.shape + (-1,))) ** 2, axis=-1))
                ok = live & (ne > 1e-8 * ne.max())
                ratio = ng[ok] / (rk ** (sigma - tau) * ne[ok])
                nlo, nhi = min(nlo, float(ratio.min())), max(nhi, float(ratio.max()))
                # covariant versus partial derivatives
                cov = [a]
                par = fd.multi_partials(a, r_max, grid.h, m)
                cur = a
                for i in range(r_max):
                    cur = nabla_components(cur, (sigma, tau + i), gamma, grid.h)
                    cov.append(cur)
                sc = sum(np.sqrt(np.sum(np.abs(c.reshape(grid.shape + (-1,))) ** 2, axis=-1)) for c in cov)
                sp = sum(np.sqrt(np.sum(np.abs(p.reshape(grid.shape + (-1,))) ** 2, axis=-1)) for p in par.values())
                sl = fd.interior(sc, r_max - 1, m)
                pl = fd.interior(sp, r_max - 1, m)
                ok = fd.interior(live, r_max - 1, m) & (pl > 1e-8 * pl.max())
                if not ok.any():
                    continue
                ratio = sl[ok] / pl[ok]
                lo, hi = min(lo, float(ratio.min())), max(hi, float(ratio.max()))
            d[f"norm_{sigma}_{tau}"] = (nlo, nhi)
            d[f"nabla_{sigma}_{tau}"] = (lo, hi)
        per_chart[cid] = d
        shells[cid] = chart.shell
    return UniformEstimatesReport(model.name, N, per_chart, shells)
