"""Boundary atlas, inward unit normal, traces and the trace inequality harness.

Boundary charts have the face ``x^1 = 0``.  For every built-in atlas this
face is a natural coordinate face ``q[a] = c``, so each connected face of
the model becomes its own :class:`ManifoldModel` over a
:class:`FaceParametrization`.  Face charts drop the first chart coordinate,
so their lattice is exactly the ``x^1 = 0`` layer of the parent lattice.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import fd
from .connection import christoffel_on_grid, connection_terms, nabla2_components, nabla_components
from .geometry_core import Chart, GeometryError, ManifoldModel, TensorFieldSample, inner_components
from .localization import LocalizationSystem
from .singular_structure import FaceParametrization
from .spaces import HarnessReport, QuadratureRule, _default_envelope, weighted_sobolev_norm
from .fields import TrigField

__all__ = [
    "NoBoundaryError",
    "BoundaryAtlas",
    "BoundaryTrace",
    "build_boundary_atlas",
    "inward_normal",
    "trace",
    "trace_ratio_harness",
    "boundary_lp_norm",
    "MAX_TRACE_ORDER",
]

MAX_TRACE_ORDER = 2


class NoBoundaryError(GeometryError):
    """The model has no boundary charts."""


def _face_of(chart: Chart) -> tuple[int, float]:
    """Natural axis and value of the chart face ``x^1 = 0``."""
    A = chart.linear
    col = np.nonzero(np.abs(A[:, 0]) > 1e-14)[0]
    if len(col) != 1 or np.any(np.abs(A[col[0], 1:]) > 1e-14):
        raise GeometryError(f"chart {chart.id}: boundary face is not a natural coordinate face")
    a = int(col[0])
    return a, float(chart.offset[a])


@dataclass
class BoundaryAtlas:
    """Induced atlases of the boundary faces.

    ``faces`` maps a face key ``(axis, value)`` to the face model; ``parent_of``
    maps each face chart id to the boundary chart it came from.
    """

    model: ManifoldModel
    faces: dict[tuple[int, float], ManifoldModel]
    parent_of: dict[str, str]
    face_of: dict[str, tuple[int, float]]

    def models(self) -> list[ManifoldModel]:
        return [self.faces[k] for k in sorted(self.faces)]

    def face_model(self, parent_cid: str) -> ManifoldModel:
        return self.faces[self.face_of[parent_cid]]

    def face_chart_id(self, parent_cid: str) -> str:
        return parent_cid + "|∂"


def build_boundary_atlas(model: ManifoldModel) -> BoundaryAtlas:
    cache = model.__dict__.get("_boundary_atlas")
    if cache is not None:
        return cache
    ids = model.boundary_charts
    if not ids:
        raise NoBoundaryError(f"model {model.name} has no boundary charts")
    groups: dict[tuple[int, float], list[Chart]] = {}
    face_of = {}
    for cid in ids:
        c = model.chart(cid)
        key = _face_of(c)
        groups.setdefault(key, []).append(c)
        face_of[cid] = key
    faces = {}
    parent_of = {}
    m = model.dim
    for (axis, value), charts in sorted(groups.items()):
        param = FaceParametrization(model.param, axis, value)
        others = [i for i in range(m) if i != axis]
        fcharts = []
        for c in charts:
            fid = c.id + "|∂"
            off = c.offset[others]
            lin = c.linear[np.ix_(others, range(1, m))]
            rho_c = float(model.rho_natural(c.offset))
            fcharts.append(Chart(fid, "interior", rho_c, param, off, lin, c.shell, c.index))
            parent_of[fid] = c.id
        core = [model.core[i] for i in others]

        def rho(q, _p=param):
            return model.rho_natural(_p.lift(q))

        faces[(axis, value)] = ManifoldModel(
            f"{model.name}|∂[q{axis}={value:g}]",
            param,
            fcharts,
            rho,
            shrink=model.shrink,
            core=core,
            scalar_kind=model.scalar_kind,
            metadata={"family": "face", "parent": model.name, "axis": axis, "value": value},
        )
    atlas = BoundaryAtlas(model, faces, parent_of, face_of)
    model.__dict__["_boundary_atlas"] = atlas
    return atlas


def _require_boundary_chart(model: ManifoldModel, cid: str) -> Chart:
    c = model.chart(cid)
    if c.kind != "boundary":
        raise GeometryError(f"chart {cid} is interior and has no boundary face")
    return c


def inward_normal(model: ManifoldModel, cid: str, N: int) -> np.ndarray:
    """Components ``(1/sqrt(g_11), 0, ..., 0)`` of the inward unit normal on the face lattice."""
    _require_boundary_chart(model, cid)
    g = model.grid(cid, N).metric.g[0]
    n = np.zeros(g.shape[:-1])
    n[..., 0] = 1.0 / np.sqrt(g[..., 0, 0])
    return n


@dataclass(frozen=True)
class BoundaryTrace:
    """``gamma_k u`` at the boundary nodes, one array per boundary chart.

    Components keep the ambient frame of the parent chart, so a
    ``(sigma, tau)`` field has ``m`` values per slot.
    """

    atlas: BoundaryAtlas
    valence: tuple[int, int]
    order: int
    N: int
    per_chart: Mapping[str, np.ndarray]

    def charts(self) -> list[str]:
        return sorted(self.per_chart)

    def pointwise_norm(self, cid: str) -> np.ndarray:
        """``|gamma_k u|_g`` with the parent metric at the face nodes."""
        met = self.atlas.model.grid(cid, self.N).metric
        a = self.per_chart[cid]
        return np.sqrt(np.maximum(np.real(inner_components(a, a, met.g[0], met.g_inv[0], self.valence)), 0.0))

    def as_face_field(self) -> dict[tuple[int, float], TensorFieldSample]:
        """Scalar traces as samples on the face models."""
        if sum(self.valence):
            raise GeometryError("only scalar traces live on the face models unchanged")
        out: dict[tuple[int, float], dict] = {}
        for cid, arr in self.per_chart.items():
            key = self.atlas.face_of[cid]
            out.setdefault(key, {})[self.atlas.face_chart_id(cid)] = arr
        return {k: TensorFieldSample(self.atlas.faces[k], (0, 0), self.N, v) for k, v in out.items()}


def _check_trace_args(u: TensorFieldSample, k: int) -> BoundaryAtlas:
    if not 0 <= k <= MAX_TRACE_ORDER:
        raise GeometryError(f"trace order must lie in 0..{MAX_TRACE_ORDER}")
    return build_boundary_atlas(u.model)


def _one_sided_first(a: np.ndarray, h: float) -> np.ndarray:
    return (-3 * a[0] + 4 * a[1] - a[2]) / (2 * h)


def _one_sided_second(a: np.ndarray, h: float) -> np.ndarray:
    return (2 * a[0] - 5 * a[1] + 4 * a[2] - a[3]) / h**2


def _trace_nabla(comp, valence, grid, k):
    m = grid.chart.dim
    g11 = grid.metric.g[0][..., 0, 0]
    gamma = christoffel_on_grid(grid, "analytic")
    if k == 1:
        d = nabla_components(comp, valence, gamma, grid.h)[0][..., 0]
    else:
        d = nabla2_components(comp, valence, gamma, grid.h)[0][..., 0, 0]
    scale = g11 ** (k / 2)
    return d / scale.reshape(scale.shape + (1,) * (d.ndim - (m - 1)))


def _trace_coordinate(comp, valence, grid, k):
    """Coordinate formula: normal derivatives of the components plus Christoffel corrections.

    ``g_11^(1/2) gamma_1 u = d_1 u + A_1 u`` and
    ``g_11 gamma_2 u = d_11 u + (d_1 A_1) u + A_1 d_1 u + A_1 E_1 - Gamma^l_11 E_l``
    with ``E_l = d_l u + A_l u`` and ``A_l`` the connection action along ``x^l``.
    Christoffel symbols come from finite differences of the metric so the
    two trace paths share no connection data.
    """
    m = grid.chart.dim
    h = grid.h
    gam = christoffel_on_grid(grid, "fd")
    g11 = grid.metric.g[0][..., 0, 0]
    du1 = _one_sided_first(comp, h)
    A = connection_terms(comp[0], valence, gam[0])  # A[..., l] = A_l u at the face
    E1 = du1 + A[..., 0]
    if k == 1:
        out = E1
    else:
        dgam1 = _one_sided_first(gam, h)
        d11 = _one_sided_second(comp, h)
        tang = [fd.partial(comp[0], i - 1, h) if i else du1 for i in range(m)]
        E = np.stack([tang[l] + A[..., l] for l in range(m)], axis=-1)
        G11 = gam[0][..., :, 0, 0]
        rank = sum(valence)
        out = (
            d11
            + connection_terms(comp[0], valence, dgam1)[..., 0]
            + connection_terms(du1, valence, gam[0])[..., 0]
            + connection_terms(E1, valence, gam[0])[..., 0]
            - np.sum(G11.reshape(G11.shape[:-1] + (1,) * rank + (m,)) * E, axis=-1)
        )
    scale = g11 ** (k / 2)
    return out / scale.reshape(scale.shape + (1,) * (out.ndim - (m - 1)))


def trace(u: TensorFieldSample, k: int, path: str = "nabla") -> BoundaryTrace:
    """``gamma_k u``: restriction of ``nabla^k u`` contracted with ``n^(x)k`` to the boundary.

    ``path="nabla"`` contracts the covariant derivative tower; ``path="coordinate"``
    evaluates the normal-derivative formula and serves as an independent check.
    """
    atlas = _check_trace_args(u, k)
    if path not in ("nabla", "coordinate"):
        raise GeometryError("trace path must be 'nabla' or 'coordinate'")
    per = {}
    for cid in u.model.boundary_charts:
        if cid not in u.per_chart:
            continue
        comp = u.per_chart[cid]
        if k == 0:
            per[cid] = comp[0].copy()
            continue
        grid = u.model.grid(cid, u.N)
        fn = _trace_nabla if path == "nabla" else _trace_coordinate
        per[cid] = fn(comp, u.valence, grid, k)
    return BoundaryTrace(atlas, u.valence, k, u.N, per)


def boundary_weight(lam: float, k: int, p: float, valence=(0, 0)) -> float:
    """Weight exponent of the boundary space receiving ``gamma_k``: ``lambda + k + 1/p + tau - sigma``."""
    return lam + k + 1.0 / p + valence[1] - valence[0]


def boundary_lp_norm(tr: BoundaryTrace, p: float, weight: float) -> float:
    """``(integral over the boundary of (rho^weight |gamma_k u|_g)^p)^(1/p)``.

    Each face is integrated with its own localization system and quadrature
    rule, so overlapping boundary charts are not counted twice.
    """
    total = 0.0
    for key, face in sorted(tr.atlas.faces.items()):
        system = _face_system(face)
        rule = QuadratureRule(system, tr.N)
        vals = {}
        for cid in tr.charts():
            if tr.atlas.face_of[cid] != key:
                continue
            fid = tr.atlas.face_chart_id(cid)
            rho = face.grid(fid, tr.N).rho
            vals[fid] = (rho**weight * tr.pointwise_norm(cid)) ** p
        total += rule.integrate(vals)[0]
    return total ** (1.0 / p)


def _face_system(face: ManifoldModel) -> LocalizationSystem:
    sys = face.__dict__.get("_localization")
    if sys is None:
        sys = LocalizationSystem(face)
        face.__dict__["_localization"] = sys
    return sys


def trace_ratio_harness(
    system: LocalizationSystem,
    k: int,
    p: float,
    lam: float,
    N: int,
    samples: int = 50,
    *,
    s: int | None = None,
    valence=(0, 0),
    seed: int = 0,
    envelope: Callable | None | str = "default",
) -> HarnessReport:
    """Sup over random fields of the weighted boundary norm of ``gamma_k u`` over ``||u||_{s,p;lambda}``.

    The boundary side is the weighted ``L_p`` norm with exponent
    ``lambda + k + 1/p``; ``s`` defaults to ``k + 1``.
    """
    model = system.model
    build_boundary_atlas(model)
    s = k + 1 if s is None else int(s)
    if s < k + 1:
        raise GeometryError("the interior norm needs at least k + 1 derivatives")
    env = _default_envelope(model) if envelope == "default" else envelope
    rng = np.random.default_rng(seed)
    wb = boundary_weight(lam, k, p, valence)
    ratios = []
    for _ in range(samples):
        u = TrigField(model, valence, rng, envelope=env).sample(N)
        num = boundary_lp_norm(trace(u, k), p, wb)
        den = weighted_sobolev_norm(u, s, p, lam, system).value
        ratios.append(num / den)
    params = {"k": k, "s": s, "p": p, "lambda": lam, "boundary_weight": wb}
    return HarnessReport("trace", ratios, params, 1.0 / N)
