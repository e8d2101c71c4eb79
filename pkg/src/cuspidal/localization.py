"""Localization systems and the weighted localization/assembly operators.

The raw bump of every chart is the tensor-product plateau ``pi~`` equal to
1 on the shrunken cube ``|x|_inf <= 1/2`` and vanishing for
``|x|_inf >= 3/4``.  The normalized bumps ``pi = pi~ / sqrt(sum pi~^2)``
are evaluated in closed form: the normalizer at a chart point is the sum of
the raw bumps of all overlapping charts, reached through transition maps.
The cutoff ``chi`` is a second plateau equal to 1 on ``|x|_inf <= 3/4``.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from . import fd
from .geometry_core import (
    GeometryError,
    ManifoldModel,
    TensorFieldSample,
    transfer_field,
    wrap_natural,
)
from .profiles import cube_plateau, plateau_jet

__all__ = [
    "CoverGapError",
    "SupportError",
    "LocalizationSystem",
    "LocalizedFamily",
    "build_localization_system",
    "phi_op",
    "psi_op",
    "chi_variant",
    "retraction_error",
]


class CoverGapError(GeometryError):
    """Some point of the truncated manifold is not covered by any bump."""


class SupportError(GeometryError):
    """A chart member is nonzero outside the support of its cutoff."""


class LocalizationSystem:
    """Bumps ``pi_k`` with ``sum pi_k^2 = 1`` and cutoffs ``chi_k = 1`` on ``supp pi_k``."""

    def __init__(self, model: ManifoldModel, bump=(0.5, 0.75), cutoff=(0.75, 0.875)):
        if not (0 < bump[0] < bump[1] <= cutoff[0] < cutoff[1] <= 1):
            raise GeometryError("need 0 < bump plateau < bump support <= cutoff plateau < cutoff support <= 1")
        if bump[0] < model.shrink - 1e-12:
            raise GeometryError("bump plateau must contain the shrunken cube")
        self.model = model
        self.bump = tuple(float(v) for v in bump)
        self.cutoff = tuple(float(v) for v in cutoff)
        self._grids: dict[tuple, dict] = {}
        self._jets: OrderedDict = OrderedDict()
        # a one-chart model is the chart itself, so its bump is 1 everywhere
        self.single = len(model.charts) == 1

    # closed-form profiles -------------------------------------------------
    def raw_bump(self, cid: str, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = self.model.chart(cid).contains(x, tol=1e-9)
        if self.single:
            return inside.astype(float)
        return np.where(inside, cube_plateau(x, *self.bump), 0.0)

    def raw_cutoff(self, cid: str, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = self.model.chart(cid).contains(x, tol=1e-9)
        if self.single:
            return inside.astype(float)
        return np.where(inside, cube_plateau(x, *self.cutoff), 0.0)

    def normalizer(self, cid: str, x) -> np.ndarray:
        """``sum pi~^2`` over all charts, at points given in chart ``cid``."""
        total = np.zeros(np.shape(x)[:-1])
        for nb, y in self.model.locate(cid, x).items():
            total += self.raw_bump(nb, y) ** 2
        return total

    def pi(self, cid: str, x) -> np.ndarray:
        raw = self.raw_bump(cid, x)
        norm = self.normalizer(cid, x)
        out = np.zeros_like(raw)
        pos = norm > 0
        out[pos] = raw[pos] / np.sqrt(norm[pos])
        return out

    def chi(self, cid: str, x) -> np.ndarray:
        return self.raw_cutoff(cid, x)

    # lattice samples ------------------------------------------------------
    def on_grid(self, cid: str, N: int) -> dict[str, np.ndarray]:
        """``pi``, ``chi``, the normalizer and the raw bumps of every overlapping chart."""
        key = (cid, N)
        if key not in self._grids:
            x = self.model.grid(cid, N).x
            raw = {nb: self.raw_bump(nb, y) for nb, y in self.model.locate(cid, x).items()}
            norm = sum(r**2 for r in raw.values())
            inv = np.zeros_like(norm)
            pos = norm > 0
            inv[pos] = 1.0 / np.sqrt(norm[pos])
            self._grids[key] = {
                "pi": raw[cid] * inv,
                "chi": self.raw_cutoff(cid, x),
                "normalizer": norm,
                "inv_sqrt": inv,
                "raw": raw,
            }
        return self._grids[key]

    def pi_partials(self, cid: str, N: int, order: int = 2) -> dict[tuple[int, ...], np.ndarray]:
        """Exact partial derivatives of ``pi_k`` on the lattice, keyed like :func:`fd.multi_partials`."""
        if order > 2:
            raise GeometryError("closed-form bump derivatives are implemented up to order 2")
        key = (cid, N, order)
        if key in self._jets:
            self._jets.move_to_end(key)
            return self._jets[key]
        model = self.model
        m = model.dim
        x = model.grid(cid, N).x
        shape = x.shape[:-1]
        if self.single:
            out = {(): np.ones(shape)}
            for a in fd.multi_indices(order, m):
                if a:
                    out[a] = np.zeros(shape)
            self._jets[key] = out
            return out
        jets = {}
        for nb, y in model.locate(cid, x).items():
            M = np.eye(m) if nb == cid else model.transition(cid, nb).matrix
            inside = model.chart(nb).contains(y, tol=1e-9)
            P = [plateau_jet(y[..., i], *self.bump, order=order) for i in range(m)]

            def prod(ders):
                # product over axes of P[i][ders[i]]
                r = np.ones(shape)
                for i in range(m):
                    r = r * P[i][ders[i]]
                return np.where(inside, r, 0.0)

            val = prod([0] * m)
            grad_y = np.stack([prod([1 if i == j else 0 for i in range(m)]) for j in range(m)], axis=-1)
            grad = grad_y @ M
            hess = None
            if order >= 2:
                Hy = np.empty(shape + (m, m))
                for i in range(m):
                    for j in range(m):
                        d = [0] * m
                        d[i] += 1
                        d[j] += 1
                        Hy[..., i, j] = prod(d)
                hess = np.einsum("ia,...ij,jb->...ab", M, Hy, M)
            jets[nb] = (val, grad, hess)
        S = sum(v * v for v, _, _ in jets.values())
        dS = sum(2 * v[..., None] * g for v, g, _ in jets.values())
        inv = np.zeros_like(S)
        pos = S > 0
        inv[pos] = 1.0 / np.sqrt(S[pos])
        v, g, H = jets[cid]
        out = {(): v * inv}
        grad_pi = g * inv[..., None] - 0.5 * (v * inv**3)[..., None] * dS
        for a in range(m):
            out[(a,)] = grad_pi[..., a]
        if order >= 2:
            HS = sum(2 * (np.einsum("...a,...b->...ab", gj, gj) + vj[..., None, None] * Hj) for vj, gj, Hj in jets.values())
            outer_g_dS = np.einsum("...a,...b->...ab", g, dS)
            Hpi = (
                H * inv[..., None, None]
                - 0.5 * inv[..., None, None] ** 3 * (outer_g_dS + np.swapaxes(outer_g_dS, -1, -2))
                - 0.5 * (v * inv**3)[..., None, None] * HS
                + 0.75 * (v * inv**5)[..., None, None] * np.einsum("...a,...b->...ab", dS, dS)
            )
            for a in range(m):
                for b in range(a, m):
                    out[(a, b)] = Hpi[..., a, b]
        self._jets[key] = out
        if len(self._jets) > 64:
            self._jets.popitem(last=False)
        return out

    def covered(self, cid: str, N: int) -> np.ndarray:
        """Lattice nodes of ``cid`` that belong to the truncated manifold."""
        return self.on_grid(cid, N)["normalizer"] > 0

    def complete_charts(self, N: int = 16, floor: float = 1e-3) -> list[str]:
        """Charts whose whole patch sits well inside the truncated manifold."""
        return [c for c in self.model.chart_ids if self.on_grid(c, N)["normalizer"].min() > floor]

    # checks ---------------------------------------------------------------
    def partition_sum(self, q) -> np.ndarray:
        """``sum_k pi_k^2`` at points given in natural coordinates."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        periods = self.model.param.periods
        total = np.zeros(len(q))
        lo, hi = self.model._boxes
        for i, chart in enumerate(self.model.charts):
            qq = wrap_natural(q, chart.offset, periods)
            sel = np.all((qq >= lo[i] - 1e-9) & (qq <= hi[i] + 1e-9), axis=-1)
            if not np.any(sel):
                continue
            x = chart.from_natural(qq[sel])
            total[sel] += self.pi(chart.id, x) ** 2
        return total

    def check_cover(self, N: int = 8) -> None:
        """Raise :class:`CoverGapError` if a core lattice node has ``sum pi~^2 = 0``."""
        for cid in self.model.chart_ids:
            grid = self.model.grid(cid, N)
            core = self.model.core_contains(grid.natural)
            gap = core & ~self.covered(cid, N)
            if np.any(gap):
                idx = tuple(np.argwhere(gap)[0])
                raise CoverGapError(f"cover gap in chart {cid} at x={grid.x[idx].tolist()}")

    def derivative_bounds(self, k_max: int = 3, N: int = 32, charts: Iterable[str] | None = None) -> dict:
        """``||pi_k||_{k,inf} + ||chi_k||_{k,inf}`` per chart for ``k <= k_max``.

        Only charts lying inside the truncated manifold are measured by
        default: at the truncation ends the normalized bump stops abruptly.
        """
        ids = list(charts) if charts is not None else self.complete_charts()
        m = self.model.dim
        per_chart = {}
        for cid in ids:
            d = self.on_grid(cid, N)
            per_chart[cid] = [
                fd.sup_norm(d["pi"], k, 1.0 / N, m) + fd.sup_norm(d["chi"], k, 1.0 / N, m) for k in range(k_max + 1)
            ]
        per_shell: dict[int, list[float]] = {}
        for cid, vals in per_chart.items():
            s = self.model.chart(cid).shell
            cur = per_shell.setdefault(s, [0.0] * (k_max + 1))
            per_shell[s] = [max(a, b) for a, b in zip(cur, vals)]
        overall = [max((v[k] for v in per_chart.values()), default=0.0) for k in range(k_max + 1)]
        return {"per_chart": per_chart, "per_shell": dict(sorted(per_shell.items())), "max": overall}


def build_localization_system(model: ManifoldModel, check: bool = True, **kw) -> LocalizationSystem:
    system = LocalizationSystem(model, **kw)
    if check:
        system.check_cover()
    return system


# ---------------------------------------------------------------------------
# operators


@dataclass
class LocalizedFamily:
    """Chart-indexed family ``{v_k}`` produced by the localization operators."""

    system: LocalizationSystem
    valence: tuple[int, int]
    N: int
    q: float
    lam: float
    members: Mapping[str, np.ndarray]
    cutoff: str = "pi"
    batch: tuple[int, ...] = ()

    @property
    def model(self) -> ManifoldModel:
        return self.system.model

    def exponent(self) -> float:
        return weight_exponent(self.lam, self.q, self.model.dim)

    def scaled(self, c) -> "LocalizedFamily":
        return LocalizedFamily(self.system, self.valence, self.N, self.q, self.lam,
                               {k: c * v for k, v in self.members.items()}, self.cutoff, self.batch)

    def as_field(self) -> TensorFieldSample:
        return TensorFieldSample(self.model, self.valence, self.N, dict(self.members), batch=self.batch)


def weight_exponent(lam: float, q: float, m: int) -> float:
    """``lambda + m/q``, with ``m/q = 0`` for ``q = inf``."""
    return lam + (0.0 if math.isinf(q) else m / q)


def _localize(system: LocalizationSystem, u: TensorFieldSample, q, lam, which: str) -> LocalizedFamily:
    if u.model is not system.model:
        raise GeometryError("field and localization system live on different models")
    if not u.per_chart:
        raise GeometryError("field has no chart data")
    w = weight_exponent(lam, q, u.model.dim)
    trail = u.rank + len(u.batch)
    members = {}
    for cid, comp in u.per_chart.items():
        prof = system.on_grid(cid, u.N)[which]
        rk = u.model.chart(cid).center_rho
        members[cid] = rk**w * prof.reshape(prof.shape + (1,) * trail) * comp
    return LocalizedFamily(system, u.valence, u.N, float(q), float(lam), members, which, u.batch)


def phi_op(system: LocalizationSystem, u: TensorFieldSample, q: float, lam: float) -> LocalizedFamily:
    """``v_k = rho_k^(lambda + m/q) * pi_k * u`` in the coordinates of chart ``k``."""
    return _localize(system, u, q, lam, "pi")


def chi_variant(system: LocalizationSystem, u: TensorFieldSample, q: float, lam: float) -> LocalizedFamily:
    """As :func:`phi_op` with the cutoffs ``chi_k`` in place of ``pi_k``."""
    return _localize(system, u, q, lam, "chi")


def _check_support(family: LocalizedFamily, outer: float, tol: float = 1e-12) -> None:
    for cid, v in family.members.items():
        x = family.model.grid(cid, family.N).x
        outside = np.max(np.abs(x), axis=-1) >= outer
        lead = x.ndim - 1
        mag = np.abs(v).reshape(v.shape[:lead] + (-1,)).max(axis=-1) if v.ndim > lead else np.abs(v)
        scale = max(float(np.abs(v).max()), 1.0)
        if np.any(mag[outside] > tol * scale):
            raise SupportError(f"member on chart {cid} is nonzero outside its cutoff support")


def psi_op(family: LocalizedFamily, cutoff: str = "pi", charts: Iterable[str] | None = None) -> TensorFieldSample:
    """``u = sum_k rho_k^-(lambda + m/q) pi_k (k^* v_k)``, assembled on every output chart.

    Cross-chart terms are moved with :func:`transfer_field`.  With
    ``cutoff="chi"`` the cutoffs replace the bumps in the assembly.
    """
    system = family.system
    model = family.model
    if not system.single:
        _check_support(family, system.bump[1] if family.cutoff == "pi" else system.cutoff[1])
    field = family.as_field()
    w = family.exponent()
    rank = sum(family.valence)
    trail = rank + len(family.batch)
    out = {}
    for cid in charts if charts is not None else list(family.members):
        loc = system.on_grid(cid, family.N)
        x = model.grid(cid, family.N).x
        acc = np.zeros(x.shape[:-1] + (model.dim,) * rank + family.batch, dtype=np.result_type(*family.members.values()))
        for src in (cid,) + model.neighbors(cid):
            if src not in family.members:
                continue
            if cutoff == "pi":
                prof = loc["raw"][src] * loc["inv_sqrt"]
            elif cutoff == "chi":
                prof = system.raw_cutoff(src, model.transition(cid, src).forward(x)) if src != cid else loc["chi"]
            else:
                raise GeometryError("cutoff must be 'pi' or 'chi'")
            if not np.any(prof):
                continue
            moved = transfer_field(field, src, cid).values
            rk = model.chart(src).center_rho
            acc += rk ** (-w) * prof.reshape(prof.shape + (1,) * trail) * moved
        out[cid] = acc
    return TensorFieldSample(model, family.valence, family.N, out, batch=family.batch)


def retraction_error(system: LocalizationSystem, u: TensorFieldSample, q: float, lam: float, cutoff: str = "pi") -> float:
    """Max relative error of ``psi(phi(u)) - u`` over covered nodes.

    For a batched sample each field is scaled by its own maximum and the
    worst field is reported.
    """
    back = psi_op(phi_op(system, u, q, lam), cutoff=cutoff)
    nb = len(u.batch)
    nfield = int(np.prod(u.batch)) if nb else 1
    err = np.zeros(nfield)
    scale = np.zeros(nfield)
    for cid, comp in u.per_chart.items():
        mask = system.covered(cid, u.N)
        if not mask.any():
            continue
        d = np.abs(back.get(cid) - comp)[mask].reshape(-1, nfield)
        a = np.abs(comp[mask]).reshape(-1, nfield)
        err = np.maximum(err, d.max(axis=0))
        scale = np.maximum(scale, a.max(axis=0))
    rel = np.where(scale > 0, err / np.where(scale > 0, scale, 1.0), err)
    return float(rel.max())
