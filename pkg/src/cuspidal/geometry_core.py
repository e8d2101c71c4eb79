"""Charts, atlases, chart lattices and tensor-field storage.

Every built-in manifold is described by one *natural parametrization*
``q -> X(q)`` into a Euclidean space together with a family of charts.
A chart is an affine frame ``q = offset + linear @ x`` on the normalized
cube ``Q^m = (-1, 1)^m`` (or its half ``x_1 >= 0`` for boundary charts), so
transition maps between charts of one model are affine up to periodic
wrapping of angular / toroidal coordinates.  Metrics, Christoffel symbols
and volume elements come from closed-form Jacobians and Hessians of the
parametrization.

Tensor components are stored with all contravariant indices first, then
all covariant ones; new covariant slots created by differentiation are
appended last.
"""

from __future__ import annotations

import itertools
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

__all__ = [
    "GeometryError",
    "MetricError",
    "ValenceError",
    "OverlapError",
    "Parametrization",
    "FlatParametrization",
    "PolarParametrization",
    "WedgeParametrization",
    "Chart",
    "TransitionMap",
    "ManifoldModel",
    "ChartGrid",
    "MetricSample",
    "TensorFieldSample",
    "evaluate_metric",
    "lattice_axes",
    "lattice",
    "apply_to_slot",
    "change_frame",
    "sample_field",
    "sample_chart_field",
    "riesz_flat",
    "riesz_sharp",
    "inner_components",
    "tensor_inner_product",
    "tensor_norm",
    "transfer_field",
    "interpolate",
]


class GeometryError(ValueError):
    """Base class for coordinate-substrate errors."""


class MetricError(GeometryError):
    """The metric is not symmetric positive definite at some point."""


class ValenceError(GeometryError):
    """Operands carry incompatible valences or meshes."""


class OverlapError(GeometryError):
    """Charts do not overlap or a point lies outside an interpolation stencil."""


# ---------------------------------------------------------------------------
# parametrizations


class Parametrization:
    """Closed-form map from natural coordinates to an ambient Euclidean space.

    Subclasses provide ``value``, ``jacobian`` (shape ``(..., n, m)``) and
    ``hessian`` (shape ``(..., n, m, m)``).  ``periods[i]`` is the period of
    natural coordinate ``i`` or ``None``.
    """

    dim: int
    ambient_dim: int
    periods: tuple[float | None, ...]

    def value(self, q: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def jacobian(self, q: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def hessian(self, q: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def radius(self, q: np.ndarray) -> np.ndarray:
        """Distance-like coordinate to the singular set (if any)."""
        return np.ones(np.shape(q)[:-1])


class FlatParametrization(Parametrization):
    """Identity map of ``R^m``."""

    def __init__(self, m: int):
        if m < 1:
            raise GeometryError("dimension must be >= 1")
        self.dim = m
        self.ambient_dim = m
        self.periods = (None,) * m

    def value(self, q):
        return np.array(q, dtype=float, copy=True)

    def jacobian(self, q):
        q = np.asarray(q, dtype=float)
        return np.broadcast_to(np.eye(self.dim), q.shape[:-1] + (self.dim, self.dim)).copy()

    def hessian(self, q):
        q = np.asarray(q, dtype=float)
        return np.zeros(q.shape[:-1] + (self.dim,) * 3)


class PolarParametrization(Parametrization):
    """``(r, theta, z...) -> (r cos theta, r sin theta, z...)``."""

    def __init__(self, ell: int = 0):
        self.ell = ell
        self.dim = 2 + ell
        self.ambient_dim = 2 + ell
        self.periods = (None, 2 * math.pi) + (None,) * ell

    def value(self, q):
        q = np.asarray(q, dtype=float)
        r, t = q[..., 0], q[..., 1]
        out = np.empty(q.shape)
        out[..., 0] = r * np.cos(t)
        out[..., 1] = r * np.sin(t)
        out[..., 2:] = q[..., 2:]
        return out

    def jacobian(self, q):
        q = np.asarray(q, dtype=float)
        r, t = q[..., 0], q[..., 1]
        c, s = np.cos(t), np.sin(t)
        J = np.zeros(q.shape[:-1] + (self.ambient_dim, self.dim))
        J[..., 0, 0], J[..., 0, 1] = c, -r * s
        J[..., 1, 0], J[..., 1, 1] = s, r * c
        for i in range(self.ell):
            J[..., 2 + i, 2 + i] = 1.0
        return J

    def hessian(self, q):
        q = np.asarray(q, dtype=float)
        r, t = q[..., 0], q[..., 1]
        c, s = np.cos(t), np.sin(t)
        H = np.zeros(q.shape[:-1] + (self.ambient_dim, self.dim, self.dim))
        H[..., 0, 0, 1] = H[..., 0, 1, 0] = -s
        H[..., 0, 1, 1] = -r * c
        H[..., 1, 0, 1] = H[..., 1, 1, 0] = c
        H[..., 1, 1, 1] = -r * s
        return H

    def radius(self, q):
        return np.asarray(q, dtype=float)[..., 0]


class WedgeParametrization(Parametrization):
    """Natural parametrization of a model wedge ``K_alpha^d(B) x T^ell``.

    Natural coordinates are ``(u, t, z_1..z_ell)`` where ``u`` is a radial
    coordinate increasing towards the tip, ``t`` the base coordinate (absent
    for a point base) and ``z`` the flat edge directions (period 2).

    ``radial="power"`` uses ``dr/du = -r**alpha`` so that unit steps in ``u``
    have length comparable to ``r**alpha``; ``radial="log"`` uses
    ``dr/du = -r`` (dyadic annuli).
    """

    def __init__(
        self,
        alpha: float,
        base: str,
        ell: int = 0,
        radial: str = "power",
        base_point: Sequence[float] | None = None,
        z_period: float = 2.0,
    ):
        if alpha < 1:
            raise GeometryError("alpha must be ≥ 1")
        self.alpha = float(alpha)
        self.base = base
        self.ell = int(ell)
        if radial not in ("power", "log"):
            raise GeometryError(f"unknown radial coordinate {radial!r}")
        if self.alpha == 1.0:
            radial = "log"
        self.radial = radial
        self.rate = 1.0 if radial == "log" else self.alpha
        if base in ("arc", "sphere"):
            if self.alpha != 1.0:
                raise GeometryError("spherical bases require alpha = 1")
            self.b, self.d = 1, 2
            self.base_point = None
        elif base == "interval":
            if self.alpha == 1.0:
                raise GeometryError("cube bases require alpha > 1")
            self.b, self.d = 1, 2
            self.base_point = None
        elif base == "point":
            if self.alpha == 1.0:
                raise GeometryError("cube bases require alpha > 1")
            bp = np.zeros(1) if base_point is None else np.asarray(base_point, dtype=float)
            self.b, self.d = 0, 1 + bp.size
            self.base_point = bp
        else:
            raise GeometryError(f"unknown base kind {base!r}")
        self.dim = 1 + self.b + self.ell
        self.ambient_dim = self.d + self.ell
        tper = 2 * math.pi if base == "sphere" else None
        self.periods = (None,) + ((tper,) if self.b else ()) + (float(z_period),) * self.ell

    # radial profile r(u) with r(0) = 1
    def r_of_u(self, u):
        u = np.asarray(u, dtype=float)
        if self.radial == "log":
            return np.exp(-u)
        a = self.alpha - 1.0
        return (1.0 + a * u) ** (-1.0 / a)

    def u_of_r(self, r):
        r = np.asarray(r, dtype=float)
        if self.radial == "log":
            return -np.log(r)
        a = self.alpha - 1.0
        return (r ** (-a) - 1.0) / a

    def radius(self, q):
        return self.r_of_u(np.asarray(q, dtype=float)[..., 0])

    def _profile(self, r, t):
        """Ambient base part F(r, t) and its derivatives up to order two."""
        al = self.alpha
        shape = r.shape
        n = self.d
        F = np.zeros(shape + (n,))
        Fr = np.zeros_like(F)
        Ft = np.zeros_like(F)
        Frr = np.zeros_like(F)
        Frt = np.zeros_like(F)
        Ftt = np.zeros_like(F)
        if self.base in ("arc", "sphere"):
            c, s = np.cos(t), np.sin(t)
            F[..., 0], F[..., 1] = r * c, r * s
            Fr[..., 0], Fr[..., 1] = c, s
            Ft[..., 0], Ft[..., 1] = -r * s, r * c
            Frt[..., 0], Frt[..., 1] = -s, c
            Ftt[..., 0], Ftt[..., 1] = -r * c, -r * s
        elif self.base == "interval":
            ra = r**al
            F[..., 0], F[..., 1] = r, ra * t
            Fr[..., 0], Fr[..., 1] = 1.0, al * r ** (al - 1) * t
            Ft[..., 1] = ra
            Frr[..., 1] = al * (al - 1) * r ** (al - 2) * t
            Frt[..., 1] = al * r ** (al - 1)
        else:
            ra = r**al
            F[..., 0] = r
            Fr[..., 0] = 1.0
            for i, y in enumerate(self.base_point):
                F[..., 1 + i] = ra * y
                Fr[..., 1 + i] = al * r ** (al - 1) * y
                Frr[..., 1 + i] = al * (al - 1) * r ** (al - 2) * y
        return F, Fr, Ft, Frr, Frt, Ftt

    def _split(self, q):
        q = np.asarray(q, dtype=float)
        u = q[..., 0]
        t = q[..., 1] if self.b else np.zeros_like(u)
        z = q[..., 1 + self.b :]
        return u, t, z

    def value(self, q):
        u, t, z = self._split(q)
        r = self.r_of_u(u)
        F = self._profile(r, t)[0]
        return np.concatenate([F, z], axis=-1)

    def jacobian(self, q):
        u, t, z = self._split(q)
        r = self.r_of_u(u)
        _, Fr, Ft, *_ = self._profile(r, t)
        dr = -(r**self.rate)
        J = np.zeros(u.shape + (self.ambient_dim, self.dim))
        J[..., : self.d, 0] = Fr * dr[..., None]
        if self.b:
            J[..., : self.d, 1] = Ft
        for i in range(self.ell):
            J[..., self.d + i, 1 + self.b + i] = 1.0
        return J

    def hessian(self, q):
        u, t, z = self._split(q)
        r = self.r_of_u(u)
        _, Fr, Ft, Frr, Frt, Ftt = self._profile(r, t)
        dr = -(r**self.rate)
        ddr = self.rate * r ** (2 * self.rate - 1)
        H = np.zeros(u.shape + (self.ambient_dim, self.dim, self.dim))
        H[..., : self.d, 0, 0] = Frr * (dr**2)[..., None] + Fr * ddr[..., None]
        if self.b:
            H[..., : self.d, 0, 1] = Frt * dr[..., None]
            H[..., : self.d, 1, 0] = H[..., : self.d, 0, 1]
            H[..., : self.d, 1, 1] = Ftt
        return H


# ---------------------------------------------------------------------------
# charts


@dataclass(frozen=True, eq=False)
class Chart:
    """Normalized chart: affine frame on ``Q^m`` (or ``Q^m ∩ H^m``) into a parametrization."""

    id: str
    kind: str
    center_rho: float
    param: Parametrization
    offset: np.ndarray
    linear: np.ndarray
    shell: int = 0
    index: tuple = ()

    def __post_init__(self):
        if self.kind not in ("interior", "boundary"):
            raise GeometryError(f"chart kind must be interior or boundary, got {self.kind!r}")
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float))
        if self.linear.shape != (self.dim, self.dim):
            raise GeometryError("chart frame has the wrong shape")
        if not self.center_rho > 0:
            raise GeometryError("center_rho must be positive")

    @property
    def dim(self) -> int:
        return self.param.dim

    @cached_property
    def linear_inv(self) -> np.ndarray:
        return np.linalg.inv(self.linear)

    @property
    def lower(self) -> np.ndarray:
        lo = -np.ones(self.dim)
        if self.kind == "boundary":
            lo[0] = 0.0
        return lo

    @property
    def upper(self) -> np.ndarray:
        return np.ones(self.dim)

    def contains(self, x, tol: float = 1e-12, open_: bool = False) -> np.ndarray:
        """Whether chart points lie in the (closed or open) chart domain."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.lower, self.upper
        if open_:
            inside = (x > lo + tol) & (x < hi - tol)
            if self.kind == "boundary":
                inside[..., 0] = (x[..., 0] >= -tol) & (x[..., 0] < 1 - tol)
            return np.all(inside, axis=-1)
        return np.all((x >= lo - tol) & (x <= hi + tol), axis=-1)

    def to_natural(self, x):
        return self.offset + np.asarray(x, dtype=float) @ self.linear.T

    def from_natural(self, q):
        return (np.asarray(q, dtype=float) - self.offset) @ self.linear_inv.T

    def param_map(self, x):
        return self.param.value(self.to_natural(x))

    def jacobian(self, x):
        return self.param.jacobian(self.to_natural(x)) @ self.linear

    def hessian(self, x):
        Hq = self.param.hessian(self.to_natural(x))
        A = self.linear
        return np.einsum("...aps,pi,sj->...aij", Hq, A, A)

    def metric_eval(self, x):
        J = self.jacobian(x)
        return np.einsum("...ai,...aj->...ij", J, J)

    def natural_box(self) -> tuple[np.ndarray, np.ndarray]:
        corners = np.array(list(itertools.product(*zip(self.lower, self.upper))))
        q = self.to_natural(corners)
        return q.min(axis=0), q.max(axis=0)

    @property
    def orientation(self) -> float:
        return float(np.sign(np.linalg.det(self.linear)))


@dataclass(frozen=True)
class MetricSample:
    g: np.ndarray
    g_inv: np.ndarray
    det: np.ndarray
    sqrt_det: np.ndarray


def evaluate_metric(chart: Chart, x) -> MetricSample:
    """Metric, inverse metric, determinant and volume density at chart points."""
    x = np.asarray(x, dtype=float)
    g = chart.metric_eval(x)
    g = 0.5 * (g + np.swapaxes(g, -1, -2))
    ev = np.linalg.eigvalsh(g)
    bad = ~(ev[..., 0] > 0)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        pt = x[tuple(idx)] if x.ndim > 1 else x
        raise MetricError(
            f"metric not positive definite on chart {chart.id} at x={np.round(pt, 12).tolist()}"
        )
    g_inv = np.linalg.inv(g)
    g_inv = 0.5 * (g_inv + np.swapaxes(g_inv, -1, -2))
    det = np.linalg.det(g)
    return MetricSample(g=g, g_inv=g_inv, det=det, sqrt_det=np.sqrt(det))


def lattice_axes(chart: Chart, N: int) -> list[np.ndarray]:
    """Uniform lattice axes with ``h = 1/N``; boundary charts use the half axis."""
    if N < 2:
        raise GeometryError("lattice needs N >= 2")
    axes = []
    for i in range(chart.dim):
        if i == 0 and chart.kind == "boundary":
            axes.append(np.arange(N + 1) / N)
        else:
            axes.append(np.arange(-N, N + 1) / N)
    return axes


def lattice(chart: Chart, N: int) -> np.ndarray:
    axes = lattice_axes(chart, N)
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


# ---------------------------------------------------------------------------
# transitions and models


@dataclass(frozen=True, eq=False)
class TransitionMap:
    """Affine transition ``x -> x~`` between two charts of one model."""

    from_id: str
    to_id: str
    source: Chart
    target: Chart

    @cached_property
    def matrix(self) -> np.ndarray:
        return self.target.linear_inv @ self.source.linear

    def forward(self, x):
        q = self.source.to_natural(x)
        q = wrap_natural(q, self.target.offset, self.source.param.periods)
        return self.target.from_natural(q)

    def jacobian(self, x=None) -> np.ndarray:
        if x is None:
            return self.matrix
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.matrix, x.shape[:-1] + self.matrix.shape)

    def overlap_test(self, x, tol: float = 1e-12) -> np.ndarray:
        return self.source.contains(x, tol) & self.target.contains(self.forward(x), tol)


def wrap_natural(q, center, periods) -> np.ndarray:
    """Shift periodic natural coordinates to the image nearest ``center``."""
    q = np.array(q, dtype=float, copy=True)
    for i, per in enumerate(periods):
        if per:
            q[..., i] -= per * np.round((q[..., i] - center[i]) / per)
    return q


class _LRU(OrderedDict):
    def __init__(self, size: int):
        super().__init__()
        self.size = size

    def get_or(self, key, make):
        if key in self:
            self.move_to_end(key)
            return self[key]
        val = make()
        self[key] = val
        if len(self) > self.size:
            self.popitem(last=False)
        return val


class ManifoldModel:
    """Finite truncated atlas with metric, singularity function and boundary flags."""

    def __init__(
        self,
        name: str,
        param: Parametrization,
        charts: Sequence[Chart],
        rho_natural: Callable[[np.ndarray], np.ndarray],
        *,
        shrink: float = 0.5,
        core: Sequence[tuple[float, float] | None] | None = None,
        design_multiplicity: int | None = None,
        scalar_kind: str = "real",
        singular_components: Mapping[str, float] | None = None,
        metadata: Mapping | None = None,
        grid_cache: int = 512,
    ):
        if scalar_kind not in ("real", "complex"):
            raise GeometryError("scalar_kind must be real or complex")
        ids = [c.id for c in charts]
        if len(set(ids)) != len(ids):
            raise GeometryError("duplicate chart ids")
        self.name = name
        self.param = param
        self.charts: tuple[Chart, ...] = tuple(charts)
        self._by_id = {c.id: c for c in self.charts}
        self.rho_natural = rho_natural
        self.shrink = float(shrink)
        self.core = tuple(core) if core is not None else (None,) * param.dim
        self.design_multiplicity = design_multiplicity
        self.scalar_kind = scalar_kind
        self.singular_components = dict(singular_components or {})
        self.metadata = dict(metadata or {})
        self._transitions: dict[tuple[str, str], TransitionMap] = {}
        self._grids = _LRU(grid_cache)

    # basic access -----------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.param.dim

    @property
    def chart_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.charts)

    @property
    def boundary_charts(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.charts if c.kind == "boundary")

    def chart(self, cid: str) -> Chart:
        try:
            return self._by_id[cid]
        except KeyError:
            raise GeometryError(f"unknown chart {cid!r}") from None

    def shells(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {}
        for c in self.charts:
            out.setdefault(c.shell, []).append(c.id)
        return dict(sorted(out.items()))

    def rho(self, cid: str, x) -> np.ndarray:
        return self.rho_natural(self.chart(cid).to_natural(x))

    def transition(self, from_id: str, to_id: str) -> TransitionMap:
        key = (from_id, to_id)
        if key not in self._transitions:
            if from_id != to_id and to_id not in self.neighbors(from_id):
                raise OverlapError(f"charts {from_id} and {to_id} do not overlap")
            self._transitions[key] = TransitionMap(from_id, to_id, self.chart(from_id), self.chart(to_id))
        return self._transitions[key]

    def grid(self, cid: str, N: int) -> "ChartGrid":
        return self._grids.get_or((cid, N), lambda: ChartGrid(self, self.chart(cid), N))

    # overlap structure ------------------------------------------------------
    @cached_property
    def _boxes(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([c.natural_box()[0] for c in self.charts])
        hi = np.array([c.natural_box()[1] for c in self.charts])
        return lo, hi

    @cached_property
    def _neighbor_table(self) -> dict[str, tuple[str, ...]]:
        lo, hi = self._boxes
        n = len(self.charts)
        ok = np.ones((n, n), dtype=bool)
        for i, per in enumerate(self.param.periods):
            a_lo, a_hi = lo[:, None, i], hi[:, None, i]
            b_lo, b_hi = lo[None, :, i], hi[None, :, i]
            if per:
                ca, cb = 0.5 * (a_lo + a_hi), 0.5 * (b_lo + b_hi)
                shift = per * np.round((cb - ca) / per)
                b_lo, b_hi = b_lo - shift, b_hi - shift
            width = np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo)
            ok &= width > 1e-12
        np.fill_diagonal(ok, False)
        ids = self.chart_ids
        return {ids[i]: tuple(ids[j] for j in np.nonzero(ok[i])[0]) for i in range(n)}

    def neighbors(self, cid: str) -> tuple[str, ...]:
        """Charts (other than ``cid``) whose patches overlap the patch of ``cid``."""
        return self._neighbor_table[cid]

    def locate(self, cid: str, x) -> dict[str, np.ndarray]:
        """Coordinates of chart-``cid`` points in every overlapping chart (incl. itself)."""
        out = {cid: np.asarray(x, dtype=float)}
        for nb in self.neighbors(cid):
            out[nb] = self.transition(cid, nb).forward(x)
        return out

    def core_contains(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        ok = np.ones(q.shape[:-1], dtype=bool)
        for i, box in enumerate(self.core):
            if box is not None:
                ok &= (q[..., i] >= box[0] - 1e-12) & (q[..., i] <= box[1] + 1e-12)
        return ok

    def core_weight(self, q) -> np.ndarray:
        """Trapezoid factor for the core box: 1 inside, 1/2 per boundary face, 0 outside."""
        q = np.asarray(q, dtype=float)
        w = np.ones(q.shape[:-1])
        for i, box in enumerate(self.core):
            if box is not None:
                lo, hi = box
                v = q[..., i]
                on = (np.abs(v - lo) < 1e-9) | (np.abs(v - hi) < 1e-9)
                w = w * np.where(on, 0.5, ((v > lo) & (v < hi)).astype(float))
        return w

    def measure_multiplicity(self, probe: int = 4) -> int:
        """Largest number of open chart patches sharing a point.

        Candidate points are the cell midpoints of a coarse lattice of every
        chart, which meet every cell of the box arrangement for the built-in
        layouts whose patch faces sit on quarter-lattice positions.
        """
        best = 0
        for c in self.charts:
            axes = []
            for i in range(c.dim):
                lo, hi = c.lower[i], c.upper[i]
                k = 2 * probe if not (i == 0 and c.kind == "boundary") else probe
                edges = np.linspace(lo, hi, k + 1)
                axes.append(0.5 * (edges[:-1] + edges[1:]))
            x = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, c.dim)
            count = np.ones(len(x), dtype=int)
            for nb, y in self.locate(c.id, x).items():
                if nb != c.id:
                    count += self.chart(nb).contains(y, open_=True)
            best = max(best, int(count.max()))
        return best

    def __repr__(self) -> str:
        return f"ManifoldModel({self.name!r}, m={self.dim}, charts={len(self.charts)})"


class ChartGrid:
    """Lattice of one chart at mesh ``h = 1/N`` with cached geometric samples."""

    def __init__(self, model: ManifoldModel, chart: Chart, N: int):
        self.model = model
        self.chart = chart
        self.N = int(N)
        self.h = 1.0 / self.N
        self.axes = lattice_axes(chart, self.N)
        self.shape = tuple(len(a) for a in self.axes)

    @cached_property
    def x(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    @cached_property
    def natural(self) -> np.ndarray:
        return self.chart.to_natural(self.x)

    @cached_property
    def metric(self) -> MetricSample:
        return evaluate_metric(self.chart, self.x)

    @cached_property
    def rho(self) -> np.ndarray:
        return np.asarray(self.model.rho_natural(self.natural), dtype=float)

    @cached_property
    def trapezoid(self) -> np.ndarray:
        """Tensor-product trapezoid weights (Lebesgue measure in chart coordinates)."""
        w = np.ones(self.shape)
        for i, n in enumerate(self.shape):
            wi = np.full(n, self.h)
            wi[0] = wi[-1] = 0.5 * self.h
            shp = [1] * len(self.shape)
            shp[i] = n
            w = w * wi.reshape(shp)
        return w

    @cached_property
    def volume_weights(self) -> np.ndarray:
        """Trapezoid weights times ``sqrt(det g)``."""
        return self.trapezoid * self.metric.sqrt_det


# ---------------------------------------------------------------------------
# tensor fields


def _rank(valence) -> int:
    return int(valence[0]) + int(valence[1])


@dataclass(frozen=True, eq=False)
class TensorFieldSample:
    """Per-chart components of a ``(sigma, tau)`` tensor field on chart lattices.

    Charts absent from ``per_chart`` carry the zero field.  ``margin`` counts
    lattice layers next to each chart edge where one-sided stencils were
    iterated and accuracy is reduced.  ``batch`` is the shape of trailing
    axes holding independent fields side by side; only the localization
    operators accept batched samples.
    """

    model: ManifoldModel
    valence: tuple[int, int]
    N: int
    per_chart: Mapping[str, np.ndarray]
    margin: int = 0
    batch: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "valence", (int(self.valence[0]), int(self.valence[1])))
        object.__setattr__(self, "batch", tuple(int(b) for b in self.batch))
        m = self.model.dim
        rank = _rank(self.valence)
        for cid, arr in self.per_chart.items():
            shape = self.model.grid(cid, self.N).shape
            want = shape + (m,) * rank + self.batch
            if arr.shape != want:
                raise ValenceError(f"chart {cid}: components have shape {arr.shape}, expected {want}")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def rank(self) -> int:
        return _rank(self.valence)

    @property
    def dim(self) -> int:
        return self.model.dim

    def charts(self) -> list[str]:
        return [c for c in self.model.chart_ids if c in self.per_chart]

    def get(self, cid: str) -> np.ndarray:
        arr = self.per_chart.get(cid)
        if arr is None:
            shape = self.model.grid(cid, self.N).shape + (self.dim,) * self.rank + self.batch
            return np.zeros(shape)
        return arr

    def replace(self, per_chart=None, valence=None, margin=None) -> "TensorFieldSample":
        return TensorFieldSample(
            self.model,
            self.valence if valence is None else valence,
            self.N,
            self.per_chart if per_chart is None else per_chart,
            self.margin if margin is None else margin,
            self.batch,
        )

    def _check(self, other: "TensorFieldSample"):
        if other.model is not self.model or other.N != self.N:
            raise ValenceError("fields live on different models or meshes")
        if other.valence != self.valence:
            raise ValenceError(f"valence mismatch {self.valence} vs {other.valence}")
        if other.batch != self.batch:
            raise ValenceError("batch shapes differ")

    def __add__(self, other):
        self._check(other)
        keys = [c for c in self.model.chart_ids if c in self.per_chart or c in other.per_chart]
        return self.replace({c: self.get(c) + other.get(c) for c in keys}, margin=max(self.margin, other.margin))

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, c):
        return self.replace({k: c * v for k, v in self.per_chart.items()})

    __rmul__ = __mul__

    def __neg__(self):
        return (-1.0) * self

    def map(self, fn: Callable[[str, np.ndarray], np.ndarray], valence=None) -> "TensorFieldSample":
        return self.replace({k: fn(k, v) for k, v in self.per_chart.items()}, valence=valence)


def stack_fields(fields: Sequence[TensorFieldSample]) -> TensorFieldSample:
    """Batch fields of one valence along a new trailing axis."""
    first = fields[0]
    for f in fields[1:]:
        first._check(f)
    if first.batch:
        raise ValenceError("fields are already batched")
    ids = [c for c in first.model.chart_ids if any(c in f.per_chart for f in fields)]
    per = {c: np.stack([f.get(c) for f in fields], axis=-1) for c in ids}
    return TensorFieldSample(first.model, first.valence, first.N, per, max(f.margin for f in fields), (len(fields),))


def apply_to_slot(arr: np.ndarray, mat: np.ndarray, slot: int, lead: int) -> np.ndarray:
    """Contract ``mat[..., i, j]`` with component slot ``slot`` of ``arr``.

    ``arr`` has ``lead`` lattice axes followed by component axes; ``mat`` is
    either a constant ``(m, m)`` matrix or carries the same lattice axes.
    """
    ax = lead + slot
    if mat.ndim == 2:
        return np.moveaxis(np.tensordot(arr, mat, axes=([ax], [1])), -1, ax)
    moved = np.moveaxis(arr, ax, -1)
    extra = moved.ndim - lead - 1
    m = mat.reshape(mat.shape[:lead] + (1,) * extra + mat.shape[-2:])
    # explicit sum over the short axis; batched matmul of 2x2 blocks is slower
    out = m[..., 0] * moved[..., 0:1]
    for j in range(1, moved.shape[-1]):
        out = out + m[..., j] * moved[..., j : j + 1]
    return np.moveaxis(out, -1, ax)


def change_frame(comp: np.ndarray, valence, jac: np.ndarray, lead: int, jac_inv: np.ndarray | None = None) -> np.ndarray:
    """Transform components under a coordinate change with ``jac = d(new)/d(old)``."""
    sigma, tau = valence
    if jac_inv is None:
        jac_inv = np.linalg.inv(jac)
    cov = np.swapaxes(jac_inv, -1, -2)
    out = comp
    for s in range(sigma):
        out = apply_to_slot(out, jac, s, lead)
    for t in range(tau):
        out = apply_to_slot(out, cov, sigma + t, lead)
    return out


def sample_field(
    model: ManifoldModel,
    N: int,
    valence,
    fn: Callable[[np.ndarray], np.ndarray],
    *,
    support: Callable[[Chart], bool] | None = None,
    charts: Iterable[str] | None = None,
) -> TensorFieldSample:
    """Sample a field given by natural-frame components ``fn(q)``.

    ``support(chart)`` may return False to mark charts on which the field
    vanishes identically; they are omitted from the sample.
    """
    valence = (int(valence[0]), int(valence[1]))
    rank = _rank(valence)
    per = {}
    for cid in charts if charts is not None else model.chart_ids:
        chart = model.chart(cid)
        if support is not None and not support(chart):
            continue
        grid = model.grid(cid, N)
        comp = np.asarray(fn(grid.natural), dtype=float if model.scalar_kind == "real" else complex)
        if comp.shape != grid.shape + (model.dim,) * rank:
            raise ValenceError(f"field callback returned shape {comp.shape}")
        # natural frame -> chart frame: x = A^{-1}(q - b), so d(x)/d(q) = A^{-1}
        if rank:
            comp = change_frame(comp, valence, chart.linear_inv, grid.x.ndim - 1, jac_inv=chart.linear)
        per[cid] = comp
    return TensorFieldSample(model, valence, N, per)


def sample_chart_field(model: ManifoldModel, N: int, valence, fn: Callable[[Chart, np.ndarray], np.ndarray], charts=None) -> TensorFieldSample:
    """Sample a field given directly by chart components ``fn(chart, x)``."""
    per = {}
    for cid in charts if charts is not None else model.chart_ids:
        grid = model.grid(cid, N)
        per[cid] = np.asarray(fn(model.chart(cid), grid.x))
    return TensorFieldSample(model, valence, N, per)


# ---------------------------------------------------------------------------
# metric operations


def riesz_flat(field: TensorFieldSample) -> TensorFieldSample:
    """Lower the index of a vector field: ``(g_flat X)_i = g_ij conj(X^j)``."""
    if field.valence != (1, 0):
        raise ValenceError(f"riesz_flat needs valence (1, 0), got {field.valence}")

    def f(cid, X):
        g = field.model.grid(cid, field.N).metric.g
        return np.einsum("...ij,...j->...i", g, np.conj(X))

    return field.map(f, valence=(0, 1))


def riesz_sharp(field: TensorFieldSample) -> TensorFieldSample:
    """Raise the index of a 1-form: ``(g_sharp a)^i = g^ij conj(a_j)``."""
    if field.valence != (0, 1):
        raise ValenceError(f"riesz_sharp needs valence (0, 1), got {field.valence}")

    def f(cid, a):
        gi = field.model.grid(cid, field.N).metric.g_inv
        return np.einsum("...ij,...j->...i", gi, np.conj(a))

    return field.map(f, valence=(1, 0))


def inner_components(a: np.ndarray, b: np.ndarray, g: np.ndarray, g_inv: np.ndarray, valence) -> np.ndarray:
    """Pointwise bundle inner product of component arrays with lattice axes in front."""
    sigma, tau = valence
    rank = sigma + tau
    lead = a.ndim - rank
    out = a
    for s in range(sigma):
        out = apply_to_slot(out, g, s, lead)
    for t in range(tau):
        out = apply_to_slot(out, g_inv, sigma + t, lead)
    prod = out * np.conj(b)
    if rank:
        prod = prod.reshape(prod.shape[:lead] + (-1,)).sum(axis=-1)
    return prod


def tensor_inner_product(a: TensorFieldSample, b: TensorFieldSample) -> TensorFieldSample:
    """Scalar field ``(a|b)_g`` on every chart carried by either operand."""
    a._check(b)
    per = {}
    for cid in a.model.chart_ids:
        if cid in a.per_chart and cid in b.per_chart:
            m = a.model.grid(cid, a.N).metric
            per[cid] = inner_components(a.per_chart[cid], b.per_chart[cid], m.g, m.g_inv, a.valence)
    return TensorFieldSample(a.model, (0, 0), a.N, per, max(a.margin, b.margin))


def tensor_norm(a: TensorFieldSample) -> TensorFieldSample:
    ip = tensor_inner_product(a, a)
    return ip.map(lambda cid, v: np.sqrt(np.maximum(np.real(v), 0.0)))


# ---------------------------------------------------------------------------
# interpolation and transfer


def interpolate(field: TensorFieldSample, cid: str, points) -> np.ndarray:
    """Multilinear interpolation of chart components at chart points."""
    grid = field.model.grid(cid, field.N)
    pts = np.asarray(points, dtype=float)
    flat = pts.reshape(-1, pts.shape[-1])
    if not np.all(grid.chart.contains(flat, tol=1e-9)):
        raise OverlapError(f"point outside the interpolation stencil of chart {cid}")
    lo = np.array([a[0] for a in grid.axes])
    hi = np.array([a[-1] for a in grid.axes])
    flat = np.clip(flat, lo, hi)
    vals = field.get(cid)
    rgi = RegularGridInterpolator(grid.axes, vals, method="linear")
    return rgi(flat).reshape(pts.shape[:-1] + vals.shape[len(grid.shape) :])


@dataclass(frozen=True)
class TransferResult:
    values: np.ndarray
    mask: np.ndarray


def _block_plan(model: ManifoldModel, source_id: str, target_id: str, N: int):
    """Block-copy plan for a lattice-aligned transition, or None.

    Aligned transitions send target lattice indices to source lattice
    indices by a signed axis permutation plus an integer shift, and the
    overlap is a lattice box, so the transfer is a slice, transpose and flip.
    """
    plans = model.__dict__.setdefault("_block_plans", {})
    key = (source_id, target_id, N)
    if key in plans:
        return plans[key]
    plans[key] = None
    back = model.transition(target_id, source_id)
    tgt = model.grid(target_id, N)
    src = model.grid(source_id, N)
    xs = back.forward(tgt.x)
    mask = src.chart.contains(xs, tol=1e-9)
    if not np.any(mask):
        plans[key] = ("empty",)
        return plans[key]
    lo = np.array([a[0] for a in src.axes])
    t = (xs[mask] - lo) * N
    si = np.rint(t)
    if np.any(np.abs(t - si) > 1e-9):
        return None
    si = si.astype(int)
    ti = np.argwhere(mask)
    P = np.rint(back.matrix).astype(int)
    if not np.array_equal(np.abs(P), np.abs(P).astype(bool)) or np.any(np.abs(P).sum(axis=0) != 1):
        return None
    c = si[0] - P @ ti[0]
    if not np.array_equal(si, ti @ P.T + c):
        return None
    tmin, tmax = ti.min(axis=0), ti.max(axis=0)
    if int(np.prod(tmax - tmin + 1)) != len(ti):
        return None
    m = len(tmin)
    perm = [int(np.nonzero(P[:, a])[0][0]) for a in range(m)]  # source axis feeding target axis a
    sign = [int(P[perm[a], a]) for a in range(m)]
    src_sl = [None] * m
    for a in range(m):
        ends = sorted((sign[a] * tmin[a] + c[perm[a]], sign[a] * tmax[a] + c[perm[a]]))
        src_sl[perm[a]] = slice(int(ends[0]), int(ends[1]) + 1)
    tgt_sl = tuple(slice(int(tmin[a]), int(tmax[a]) + 1) for a in range(m))
    plans[key] = ("block", tuple(src_sl), perm, sign, tgt_sl, mask)
    return plans[key]


def transfer_field(field: TensorFieldSample, source_id: str, target_id: str) -> TransferResult:
    """Components of the source-chart samples expressed on the target lattice.

    Values outside the overlap are zero and flagged False in ``mask``.
    """
    model = field.model
    if source_id == target_id:
        vals = field.get(source_id)
        return TransferResult(vals, np.ones(model.grid(target_id, field.N).shape, dtype=bool))
    rank = field.rank
    tgt = model.grid(target_id, field.N)
    vals = field.get(source_id)
    out = np.zeros(tgt.shape + vals.shape[model.dim :], dtype=vals.dtype)
    plan = _block_plan(model, source_id, target_id, field.N)
    if plan is not None:
        if plan[0] == "empty":
            return TransferResult(out, np.zeros(tgt.shape, dtype=bool))
        _, src_sl, perm, sign, tgt_sl, mask = plan
        m = len(perm)
        block = vals[src_sl]
        block = np.transpose(block, perm + list(range(m, block.ndim)))
        flips = tuple(slice(None, None, -1) if sg < 0 else slice(None) for sg in sign)
        block = block[flips]
        if rank:
            fwd = model.transition(source_id, target_id).jacobian()
            block = change_frame(block, field.valence, fwd, m)
        out[tgt_sl] = block
        return TransferResult(out, mask)
    back = model.transition(target_id, source_id)
    src = model.grid(source_id, field.N)
    xs = back.forward(tgt.x)
    mask = src.chart.contains(xs, tol=1e-9)
    if np.any(mask):
        lo = np.array([a[0] for a in src.axes])
        hi = np.array([a[-1] for a in src.axes])
        pts = np.clip(xs[mask], lo, hi)
        rgi = RegularGridInterpolator(src.axes, vals, method="linear")
        comp = rgi(pts)
        if rank:
            fwd = model.transition(source_id, target_id).jacobian()
            comp = change_frame(comp, field.valence, fwd, 1)
        out[mask] = comp
    return TransferResult(out, mask)
