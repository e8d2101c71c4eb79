"""Model cusps, cones and wedges, translation atlases, and singularity-datum checks.

Radial chart layout
-------------------
Charts of a model wedge are placed uniformly in a radial coordinate ``u``
with ``dr/du = -r**alpha`` ("rho" layout).  A unit step in ``u`` then has
length comparable to the singularity function, so every chart has size of
order ``rho`` in all directions, and neighbouring charts differ by a lattice
translation.  Chart centres are grouped into dyadic shells
``j = floor(log2(1/r_c))``; ``J_max`` bounds the deepest shell.  For cones
(``alpha = 1``) the layout is exactly the dyadic annuli
``r in [2^-j-1, 2^-j+1]``.  The ``"dyadic"`` layout uses those annuli for any
``alpha`` and is the non-shrinking counterexample on cusps.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import fd
from .geometry_core import (
    Chart,
    FlatParametrization,
    GeometryError,
    ManifoldModel,
    Parametrization,
    WedgeParametrization,
    wrap_natural,
)
from .profiles import smooth_step

__all__ = [
    "ModelWedgeSpec",
    "SingularityDatumReport",
    "EquivalenceReport",
    "FaceParametrization",
    "build_translation_atlas",
    "build_model_wedge",
    "build_singularity_function",
    "with_rho",
    "verify_singularity_datum",
    "verify_equivalence",
    "single_chart_model",
    "shift_atlas",
]

BASES = ("sphere", "arc", "interval", "point")


@dataclass(frozen=True)
class ModelWedgeSpec:
    """Model ``(alpha, ell)``-wedge over a base ``B`` with a truncated dyadic atlas.

    ``base``: ``"sphere"`` (full circle, alpha = 1), ``"arc"`` (closed arc of
    angle ``base_extent``, alpha = 1), ``"interval"`` (``[-b, b]`` with
    ``b = base_extent``, alpha > 1) or ``"point"`` (``B = {base_point}``,
    alpha > 1).  Edge directions are periodic with period 2.
    """

    alpha: float
    d: int = 2
    ell: int = 0
    base: str = "interval"
    base_extent: float | None = None
    base_point: tuple[float, ...] | None = None
    J_max: int = 4
    radial_width: float | None = None
    layout: str = "rho"
    blend: tuple[float, float] = (0.5, 1.0)
    shrink: float = 0.5
    transverse_charts: int | None = None

    def validate(self) -> None:
        if not self.alpha >= 1:
            raise GeometryError("alpha must be ≥ 1")
        if self.base not in BASES:
            raise GeometryError(f"unknown base {self.base!r}; expected one of {BASES}")
        if self.alpha == 1:
            if self.base not in ("sphere", "arc"):
                raise GeometryError("alpha = 1 requires a base inside the unit sphere (sphere or arc)")
            if self.d != 2:
                raise GeometryError("built-in cones have d = 2")
        else:
            if self.d < 2:
                raise GeometryError("alpha > 1 requires d ≥ 2")
            if self.base not in ("interval", "point"):
                raise GeometryError("alpha > 1 requires a base inside the cube Q^{d-1} (interval or point)")
            if self.base == "interval" and self.d != 2:
                raise GeometryError("interval bases need d = 2")
            if self.base == "point":
                bp = self.base_point or (0.0,) * (self.d - 1)
                if len(bp) != self.d - 1 or max(abs(v) for v in bp) >= 1:
                    raise GeometryError("base point must lie in Q^{d-1}")
        if self.base == "interval" and self.base_extent is not None and not 0 < self.base_extent < 1:
            raise GeometryError("interval half-length must lie in (0, 1)")
        if self.base == "arc" and self.base_extent is not None and not 0 < self.base_extent < 2 * math.pi:
            raise GeometryError("arc angle must lie in (0, 2 pi)")
        if self.ell < 0:
            raise GeometryError("ell must be ≥ 0")
        if self.J_max < 0:
            raise GeometryError("J_max must be ≥ 0")
        if self.layout not in ("rho", "dyadic"):
            raise GeometryError("layout must be rho or dyadic")
        r_in, r_out = self.blend
        if not 0 < r_in < r_out <= 1:
            raise GeometryError("blend radii must satisfy 0 < r_in < r_out ≤ 1")
        if not 0 < self.shrink < 1:
            raise GeometryError("shrink factor must lie in (0, 1)")

    @property
    def base_dim(self) -> int:
        return 0 if self.base == "point" else 1

    @property
    def dim(self) -> int:
        return self.base_dim + 1 + self.ell

    def to_dict(self) -> dict:
        out = asdict(self)
        out["blend"] = list(self.blend)
        if self.base_point is not None:
            out["base_point"] = list(self.base_point)
        return out


# ---------------------------------------------------------------------------
# singularity function


def _blended_rho(alpha: float, r_in: float, r_out: float, radius: Callable[[np.ndarray], np.ndarray]):
    def rho(q):
        r = radius(q)
        beta = smooth_step((r - r_in) / (r_out - r_in))
        rt = (1.0 - beta) * r + beta * r_out
        return rt**alpha

    return rho


def build_singularity_function(model: ManifoldModel, wedge_exponents: Mapping[str, float]) -> Callable:
    """Singularity function ``rho`` on natural coordinates.

    ``rho = r**alpha`` for ``r <= r_in`` and ``rho = r_out**alpha`` for
    ``r >= r_out`` with a smooth blend between (``r`` is the distance-like
    radial coordinate of the model).  Models without singular components
    get ``rho = 1``.
    """
    comps = model.singular_components
    if not comps:
        return lambda q: np.ones(np.shape(q)[:-1])
    missing = [c for c in comps if c not in wedge_exponents]
    if missing:
        raise GeometryError(f"missing exponent for singular component(s) {missing}")
    (name,) = comps
    alpha = float(wedge_exponents[name])
    r_in, r_out = model.metadata.get("blend", (0.5, 1.0))
    return _blended_rho(alpha, r_in, r_out, model.param.radius)


def with_rho(model: ManifoldModel, rho_natural: Callable, name: str | None = None) -> ManifoldModel:
    """Same atlas with a different singularity function."""
    charts = [
        Chart(c.id, c.kind, float(rho_natural(c.offset)), c.param, c.offset, c.linear, c.shell, c.index)
        for c in model.charts
    ]
    return ManifoldModel(
        name or model.name,
        model.param,
        charts,
        rho_natural,
        shrink=model.shrink,
        core=model.core,
        design_multiplicity=model.design_multiplicity,
        scalar_kind=model.scalar_kind,
        singular_components=model.singular_components,
        metadata=model.metadata,
    )


# ---------------------------------------------------------------------------
# builders


def build_translation_atlas(m: int, Z: int = 1, half_space: bool = False, spacing: float = 1.0) -> ManifoldModel:
    """Unit-cube translates ``x -> x - spacing * z`` of ``R^m`` (or ``H^m``), ``z in {-Z..Z}^m``.

    With ``half_space`` the first index runs over ``0..Z`` and the row
    ``z_1 = 0`` consists of boundary charts on ``Q^m ∩ H^m``.  A spacing
    other than 1 gives overlaps that are not aligned with chart lattices.
    """
    if m < 1:
        raise GeometryError("dimension must be ≥ 1")
    if not 0.25 < spacing <= 1.0:
        raise GeometryError("spacing must lie in (1/4, 1] so the shrunken cubes cover")
    if Z < 0 or (2 * Z + 1) ** m > 20000:
        raise GeometryError("translation lattice too large for desk scale")
    param = FlatParametrization(m)
    ranges = [range(0 if (half_space and i == 0) else -Z, Z + 1) for i in range(m)]
    charts = []
    for z in np.array(np.meshgrid(*ranges, indexing="ij")).reshape(m, -1).T:
        kind = "boundary" if half_space and z[0] == 0 else "interior"
        cid = "t(" + ",".join(f"{int(v):+d}" for v in z) + ")"
        charts.append(Chart(cid, kind, 1.0, param, spacing * z.astype(float), np.eye(m), 0, tuple(int(v) for v in z)))
    core = [(0.0 if (half_space and i == 0) else -spacing * Z - 0.5, spacing * Z + 0.5) for i in range(m)]
    name = f"translation-{'H' if half_space else 'R'}{m}" + (f"-s{spacing:g}" if spacing != 1.0 else "")
    return ManifoldModel(
        name,
        param,
        charts,
        lambda q: np.ones(np.shape(q)[:-1]),
        shrink=0.5,
        core=core,
        design_multiplicity=math.ceil(2 / spacing - 1e-12) ** m,
        metadata={"family": "translation", "m": m, "Z": Z, "half_space": half_space, "spacing": spacing},
    )


def _transverse_layout(spec: ModelWedgeSpec):
    """List of ``(kind, center, scale)`` for the base coordinate."""
    if spec.base == "point":
        return [None]
    if spec.base == "sphere":
        n = spec.transverse_charts or 8
        s = 2 * math.pi / n
        return [("interior", k * s, s) for k in range(n)]
    if spec.base == "arc":
        length = spec.base_extent if spec.base_extent is not None else math.pi / 2
        lo = 0.0
    else:
        b = spec.base_extent if spec.base_extent is not None else 0.5
        length, lo = 2 * b, -b
    k = spec.transverse_charts or 2
    s = length / k
    out = [("boundary", lo, s)]
    out += [("interior", lo + i * s, s) for i in range(1, k)]
    out.append(("boundary", lo + length, -s))
    return out


def build_model_wedge(spec: ModelWedgeSpec) -> ManifoldModel:
    """Truncated atlas of the model wedge described by ``spec``."""
    spec.validate()
    radial = "log" if (spec.layout == "dyadic" or spec.alpha == 1) else "power"
    param = WedgeParametrization(spec.alpha, spec.base, spec.ell, radial, spec.base_point)
    if spec.radial_width is not None:
        w = float(spec.radial_width)
    else:
        w = math.log(2.0) if radial == "log" else min(1.0, 1.0 / (spec.alpha - 1.0))
    u_off = 0.0 if radial == "log" else 0.5 * w
    if radial == "power" and u_off - w <= -1.0 / (spec.alpha - 1.0):
        raise GeometryError("radial width too large for this cusp exponent")
    r_in, r_out = spec.blend
    rho_nat = _blended_rho(spec.alpha, r_in, r_out, param.radius)

    centers = []
    n = 0
    while True:
        u_c = u_off + n * w
        r_c = float(param.r_of_u(u_c))
        shell = int(math.floor(-math.log2(r_c) + 1e-9))
        if shell > spec.J_max:
            break
        centers.append((n, u_c, r_c, shell))
        n += 1
        if n > 200000:
            raise GeometryError("atlas too large")

    if spec.ell > 1:
        raise GeometryError("built-in wedges support ell ≤ 1")
    m = param.dim
    b = param.b
    trans = _transverse_layout(spec)
    ref_sign = None
    charts = []
    for n, u_c, r_c, shell in centers:
        if spec.ell:
            n_z = max(2, int(round(2.0 / (w * r_c**param.rate))))
            s_z = 2.0 / n_z
            z_list = [(-1.0 + i * s_z, s_z, i) for i in range(n_z)]
        else:
            z_list = [None]
        for ti, tr in enumerate(trans):
            for zi in z_list:
                offset = np.zeros(m)
                A = np.zeros((m, m))
                offset[0] = u_c
                kind = "interior"
                if tr is None:
                    A[0, 0] = -w
                else:
                    kind, t_c, s_t = tr
                    offset[1] = t_c
                    if kind == "interior":
                        A[0, 0] = -w
                        A[1, 1] = s_t
                    else:
                        A[1, 0] = s_t
                        A[0, 1] = -w
                if zi is not None:
                    z_c, s_z, _ = zi
                    offset[1 + b] = z_c
                    A[1 + b, 1 + b] = s_z
                sign = np.sign(np.linalg.det(A))
                if ref_sign is None:
                    ref_sign = sign
                if sign != ref_sign:
                    A[0, 1 if (kind == "boundary") else 0] *= -1.0
                cid = f"j{shell:02d}.n{n:04d}" + (f".t{ti}" if tr is not None else "")
                if zi is not None:
                    cid += f".z{zi[2]:02d}"
                rho_c = float(rho_nat(offset))
                charts.append(Chart(cid, kind, rho_c, param, offset, A, shell, (n, ti, zi[2] if zi else 0)))
    u_first, u_last = centers[0][1], centers[-1][1]
    core = [(u_first - 0.5 * w, u_last + 0.5 * w)] + [None] * (m - 1)
    comp = "edge" if spec.ell else "tip"
    kind = "cone" if spec.alpha == 1 else f"cusp{spec.alpha:g}"
    meta = {
        "family": "wedge",
        "spec": spec.to_dict(),
        "blend": spec.blend,
        "radial_width": w,
        "radial": radial,
        "u_centers": [c[1] for c in centers],
    }
    design = 2 ** (1 + b) if spec.ell == 0 else None
    model = ManifoldModel(
        f"{kind}-{spec.base}-l{spec.ell}-J{spec.J_max}" + ("-dyadic" if spec.layout == "dyadic" and spec.alpha > 1 else ""),
        param,
        charts,
        rho_nat,
        shrink=spec.shrink,
        core=core,
        design_multiplicity=design,
        singular_components={comp: spec.alpha},
        metadata=meta,
    )
    return model


def single_chart_model(chart: Chart, rho_natural: Callable | None = None, name: str = "chart") -> ManifoldModel:
    """Wrap one chart as a model (used for closed-form coordinate checks)."""
    rho = rho_natural or (lambda q: np.ones(np.shape(q)[:-1]))
    return ManifoldModel(name, chart.param, [chart], rho, design_multiplicity=1)


def shift_atlas(model: ManifoldModel, fraction: float = 0.5) -> ManifoldModel:
    """Copy of a wedge atlas with all radial centres shifted by ``fraction`` of the radial width."""
    w = model.metadata["radial_width"]
    charts = []
    for c in model.charts:
        off = c.offset.copy()
        off[0] += fraction * w
        charts.append(Chart(c.id + "'", c.kind, float(model.rho_natural(off)), c.param, off, c.linear, c.shell, c.index))
    core = list(model.core)
    if core[0] is not None:
        core[0] = (core[0][0] + fraction * w, core[0][1] + fraction * w)
    return ManifoldModel(
        model.name + "-shifted",
        model.param,
        charts,
        model.rho_natural,
        shrink=model.shrink,
        core=core,
        design_multiplicity=model.design_multiplicity,
        singular_components=model.singular_components,
        metadata=model.metadata,
    )


class FaceParametrization(Parametrization):
    """Restriction of a parametrization to a coordinate face ``q[axis] = value``."""

    def __init__(self, parent: Parametrization, axis: int, value: float):
        self.parent = parent
        self.axis = axis
        self.value_ = float(value)
        self.dim = parent.dim - 1
        self.ambient_dim = parent.ambient_dim
        self.periods = tuple(p for i, p in enumerate(parent.periods) if i != axis)

    def lift(self, q):
        q = np.asarray(q, dtype=float)
        return np.insert(q, self.axis, self.value_, axis=-1)

    def value(self, q):
        return self.parent.value(self.lift(q))

    def jacobian(self, q):
        return np.delete(self.parent.jacobian(self.lift(q)), self.axis, axis=-1)

    def hessian(self, q):
        H = self.parent.hessian(self.lift(q))
        return np.delete(np.delete(H, self.axis, axis=-1), self.axis, axis=-2)

    def radius(self, q):
        return self.parent.radius(self.lift(q))


# ---------------------------------------------------------------------------
# verification


@dataclass
class SingularityDatumReport:
    """Measured constants for the singularity-datum conditions (all ≥ 1)."""

    model: str
    k_max: int
    N: int
    multiplicity: int
    design_multiplicity: int | None
    shrink: float
    covered: bool
    orientation_preserving: bool
    c_transition: list[float]
    c_metric_equiv: float
    c_metric: list[float]
    c_rho: list[float]
    c_patch: float
    per_shell: dict[int, dict[str, float]]
    passed: dict[str, bool]
    thresholds: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def rows(self) -> list[dict]:
        out = [
            {"condition": "i", "quantity": "multiplicity", "k": "", "value": self.multiplicity},
            {"condition": "i", "quantity": "covered", "k": "", "value": int(self.covered)},
            {"condition": "i", "quantity": "orientation", "k": "", "value": int(self.orientation_preserving)},
        ]
        out += [{"condition": "ii", "quantity": "c_transition", "k": k, "value": v} for k, v in enumerate(self.c_transition)]
        out.append({"condition": "iii", "quantity": "c_metric_equiv", "k": "", "value": self.c_metric_equiv})
        out += [{"condition": "iv", "quantity": "c_metric", "k": k, "value": v} for k, v in enumerate(self.c_metric)]
        out += [{"condition": "v", "quantity": "c_rho", "k": k, "value": v} for k, v in enumerate(self.c_rho)]
        out.append({"condition": "vi", "quantity": "c_patch", "k": "", "value": self.c_patch})
        return out


def _shell_escape(per_shell: Mapping[int, float]) -> float:
    """Relative growth of the cumulative maximum from the shallow half to all shells."""
    keys = sorted(per_shell)
    if len(keys) < 2:
        return 0.0
    half = keys[: (len(keys) + 1) // 2]
    shallow = max(per_shell[k] for k in half)
    full = max(per_shell[k] for k in keys)
    return full / shallow - 1.0


def _masked_sup(arr: np.ndarray, k: int, h: float, m: int, mask: np.ndarray) -> float:
    """``max_{|alpha| <= k}`` of ``|d^alpha arr|`` over the masked lattice nodes."""
    best = 0.0
    for d in fd.multi_partials(arr, k, h, m).values():
        best = max(best, float(np.max(np.abs(d[mask]))))
    return best


def _max_eig_constant(mat: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(0.5 * (mat + np.swapaxes(mat, -1, -2)))
    return float(max(ev[..., -1].max(), 1.0 / ev[..., 0].min()))


def verify_singularity_datum(
    model: ManifoldModel,
    k_max: int = 2,
    N: int = 8,
    *,
    drift_tol: float = 0.1,
    bound: float = 1e3,
) -> SingularityDatumReport:
    """Measure the singularity-datum constants on chart lattices.

    Conditions (iii)-(vi) are sampled at lattice nodes inside the truncated
    core; patch parts beyond the truncation are not part of the model.

    Uniformity in the chart is tested as stability over dyadic shells: a
    condition passes when its constant is finite, below ``bound``, and the
    maximum over all shells exceeds the maximum over the shallower half of
    the shells by at most ``drift_tol``.
    """
    if k_max > 3:
        raise GeometryError("k_max ≤ 3 at desk scale")
    m = model.dim
    per_shell: dict[int, dict[str, float]] = {}

    def bump(shell, key, val):
        d = per_shell.setdefault(shell, {})
        d[key] = max(d.get(key, 0.0), float(val))

    covered = True
    orientation = True
    c_trans = [0.0] * (k_max + 1)
    for c in model.charts:
        grid = model.grid(c.id, N)
        g = grid.metric.g
        rho = grid.rho
        h = grid.h
        # (iii)-(vi) are measured on the truncated manifold; stencils still use the whole lattice
        live = model.core_contains(grid.natural)
        if np.any(live):
            # (iii) pointwise equivalence of rho^-2 g with the Euclidean metric
            scaled = g / rho[..., None, None] ** 2
            bump(c.shell, "c_metric_equiv", _max_eig_constant(scaled[live]))
            # (iv) derivative bounds of rho^-2 g
            for k in range(k_max + 1):
                bump(c.shell, f"c_metric_{k}", _masked_sup(scaled, k, h, m, live))
            # (v) derivative bounds of rho relative to rho_kappa
            for k in range(k_max + 1):
                bump(c.shell, f"c_rho_{k}", _masked_sup(rho, k, h, m, live) / c.center_rho)
            # (vi) oscillation of rho on the patch
            ratio = rho[live] / c.center_rho
            bump(c.shell, "c_patch", max(ratio.max(), 1.0 / ratio.min()))
        # (ii) transition maps are affine: values and first derivatives only
        for nb in model.neighbors(c.id):
            tm = model.transition(c.id, nb)
            if np.linalg.det(tm.matrix) <= 0:
                orientation = False
            x = grid.x
            ok = tm.overlap_test(x)
            if not np.any(ok):
                continue
            y = tm.forward(x[ok])
            vals = [float(np.abs(y).max()), float(np.abs(tm.matrix).max())]
            for k in range(k_max + 1):
                v = max(vals[: min(k, 1) + 1])
                c_trans[k] = max(c_trans[k], v)
                bump(c.shell, f"c_transition_{k}", v)
        # (i) the closed shrunken patches cover the truncated core
        q = grid.natural
        inside = model.core_contains(q)
        if np.any(inside):
            hit = np.zeros(grid.shape, dtype=bool)
            for nb, y in model.locate(c.id, grid.x).items():
                ch = model.chart(nb)
                lo = np.where(ch.lower < 0, -model.shrink, 0.0)
                hit |= np.all((y >= lo - 1e-12) & (y <= model.shrink + 1e-12), axis=-1)
            if not np.all(hit[inside]):
                covered = False

    def agg(key):
        return max(d.get(key, 0.0) for d in per_shell.values())

    mult = model.measure_multiplicity()
    c_equiv = max(1.0, agg("c_metric_equiv"))
    c_metric = [max(1.0, agg(f"c_metric_{k}")) for k in range(k_max + 1)]
    c_rho = [max(1.0, agg(f"c_rho_{k}")) for k in range(k_max + 1)]
    c_patch = max(1.0, agg("c_patch"))
    c_trans = [max(1.0, v) for v in c_trans]

    def stable(key):
        vals = {s: d.get(key, 0.0) for s, d in per_shell.items()}
        return _shell_escape(vals) <= drift_tol

    fin = lambda vals: all(np.isfinite(v) and v <= bound for v in vals)  # noqa: E731
    passed = {
        "i": covered and orientation and (model.design_multiplicity is None or mult <= model.design_multiplicity),
        "ii": fin(c_trans) and all(stable(f"c_transition_{k}") for k in range(k_max + 1)),
        "iii": fin([c_equiv]) and stable("c_metric_equiv"),
        "iv": fin(c_metric) and all(stable(f"c_metric_{k}") for k in range(k_max + 1)),
        "v": fin(c_rho) and all(stable(f"c_rho_{k}") for k in range(k_max + 1)),
        "vi": fin([c_patch]) and stable("c_patch"),
    }
    return SingularityDatumReport(
        model=model.name,
        k_max=k_max,
        N=N,
        multiplicity=mult,
        design_multiplicity=model.design_multiplicity,
        shrink=model.shrink,
        covered=covered,
        orientation_preserving=orientation,
        c_transition=c_trans,
        c_metric_equiv=c_equiv,
        c_metric=c_metric,
        c_rho=c_rho,
        c_patch=c_patch,
        per_shell=dict(sorted(per_shell.items())),
        passed=passed,
        thresholds={"drift_tol": drift_tol, "bound": bound},
    )


@dataclass
class EquivalenceReport:
    rho_ratio_min: float
    rho_ratio_max: float
    c_rho: float
    max_neighbors: int
    c_cross_transition: float
    passed: bool


def verify_equivalence(
    datum_a: ManifoldModel, datum_b: ManifoldModel, N: int = 8, bound: float = 1e3
) -> EquivalenceReport:
    """Compare two singularity data on the same manifold.

    Measures ``rho_a / rho_b`` on the lattices of ``datum_a``, the largest
    number of ``datum_b`` patches meeting a ``datum_a`` patch, and the
    ``C^1`` size of the cross transitions.
    """
    if datum_a.param is not datum_b.param and type(datum_a.param) is not type(datum_b.param):
        raise GeometryError("data live on different manifolds")
    periods = datum_a.param.periods
    lo_b = np.array([c.natural_box()[0] for c in datum_b.charts])
    hi_b = np.array([c.natural_box()[1] for c in datum_b.charts])
    rmin, rmax = np.inf, 0.0
    max_nb = 0
    c_cross = 0.0
    for c in datum_a.charts:
        grid = datum_a.grid(c.id, N)
        q = grid.natural
        ratio = datum_a.rho_natural(q) / datum_b.rho_natural(q)
        rmin, rmax = min(rmin, float(ratio.min())), max(rmax, float(ratio.max()))
        lo_a, hi_a = c.natural_box()
        ok = np.ones(len(datum_b.charts), dtype=bool)
        for i, per in enumerate(periods):
            blo, bhi = lo_b[:, i].copy(), hi_b[:, i].copy()
            if per:
                shift = per * np.round((0.5 * (blo + bhi) - 0.5 * (lo_a[i] + hi_a[i])) / per)
                blo, bhi = blo - shift, bhi - shift
            ok &= (np.minimum(hi_a[i], bhi) - np.maximum(lo_a[i], blo)) > 1e-12
        idx = np.nonzero(ok)[0]
        max_nb = max(max_nb, len(idx))
        x = grid.x.reshape(-1, c.dim)
        for j in idx:
            cb = datum_b.charts[j]
            y = cb.from_natural(wrap_natural(c.to_natural(x), cb.offset, periods))
            inside = cb.contains(y)
            if np.any(inside):
                J = cb.linear_inv @ c.linear
                c_cross = max(c_cross, float(np.abs(y[inside]).max()), float(np.abs(J).max()))
    c_rho = max(rmax, 1.0 / rmin)
    passed = bool(np.isfinite(c_rho) and c_rho <= bound and c_cross <= bound)
    return EquivalenceReport(rmin, rmax, c_rho, max_nb, max(1.0, c_cross), passed)
