"""Weighted Sobolev and Hölder norms, chart-local norms and inequality harnesses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import fd
from .connection import MAX_RANK, christoffel_on_grid, nabla2_components, nabla_components
from .fields import TrigField
from .geometry_core import (
    GeometryError,
    ManifoldModel,
    TensorFieldSample,
    ValenceError,
    inner_components,
)
from .localization import LocalizationSystem, weight_exponent

__all__ = [
    "NormResult",
    "QuadratureRule",
    "HarnessReport",
    "weighted_sobolev_norm",
    "chart_local_norm",
    "weighted_holder_norm",
    "chart_local_holder_norm",
    "multiply",
    "multiplier_ratio_harness",
    "embedding_ratio_harness",
    "nabla_ratio_harness",
    "ambient_conical_norm",
    "convergence_order",
]


@dataclass
class NormResult:
    """Norm value with its per-chart ledger (``value**p == sum(per_chart)`` for finite ``p``)."""

    value: float
    per_chart: dict[str, float]
    kind: str
    params: dict
    h: float

    def __float__(self) -> float:
        return self.value


def _finish(per_chart: dict[str, float], p: float, kind: str, params: dict, h: float) -> NormResult:
    if math.isinf(p):
        value = max(per_chart.values(), default=0.0)
    else:
        value = sum(per_chart[c] for c in sorted(per_chart)) ** (1.0 / p)
    return NormResult(float(value), per_chart, kind, params, h)


def _check_p(p: float) -> None:
    if not (p > 1 or math.isinf(p)):
        raise GeometryError("p must lie in (1, inf]")


def _pointwise_abs(comp: np.ndarray, lead: int) -> np.ndarray:
    """Euclidean (Frobenius) norm of the component axes."""
    if comp.ndim == lead:
        return np.abs(comp)
    return np.sqrt(np.sum(np.abs(comp.reshape(comp.shape[:lead] + (-1,))) ** 2, axis=-1))


class QuadratureRule:
    """Trapezoid weights times ``sqrt(det g)``, split across charts by ``pi_k^2``.

    Integration is over the core of the truncated atlas; nodes on the core
    boundary carry half weight so smooth integrands keep O(h^2) accuracy.
    """

    def __init__(self, system: LocalizationSystem, N: int):
        self.system = system
        self.model = system.model
        self.N = int(N)

    def weights(self, cid: str) -> np.ndarray:
        grid = self.model.grid(cid, self.N)
        core = self.model.core_weight(grid.natural)
        return grid.volume_weights * core * self.system.on_grid(cid, self.N)["pi"] ** 2

    def integrate(self, per_chart: Mapping[str, np.ndarray]) -> tuple[float, dict[str, float]]:
        contrib = {cid: float(np.sum(self.weights(cid) * np.real(v))) for cid, v in per_chart.items()}
        return sum(contrib[c] for c in sorted(contrib)), contrib

    def chart_volume(self, cid: str) -> float:
        """Riemannian volume of one whole chart patch (no partition weighting)."""
        return float(np.sum(self.model.grid(cid, self.N).volume_weights))


def _covariant_tower(comp: np.ndarray, valence, grid, k: int) -> list[np.ndarray]:
    sigma, tau = valence
    if sigma + tau + k > MAX_RANK:
        raise ValenceError(f"sigma + tau + k must be ≤ {MAX_RANK}")
    if 2 * grid.N + 1 < 3 * (k + 1) and k:
        raise GeometryError("k exceeds the stencil budget of this mesh")
    gamma = christoffel_on_grid(grid) if k else None
    out = [comp]
    for i in range(k):
        if i == 1:
            out.append(nabla2_components(comp, valence, gamma, grid.h))
        else:
            out.append(nabla_components(out[-1], (sigma, tau + i), gamma, grid.h))
    return out


def _weighted_terms(u: TensorFieldSample, cid: str, k: int, lam: float):
    """``rho^(lambda+tau-sigma+i) |nabla^i u|_g`` for ``i = 0..k`` on one chart."""
    grid = u.model.grid(cid, u.N)
    sigma, tau = u.valence
    met = grid.metric
    terms = []
    for i, c in enumerate(_covariant_tower(u.per_chart[cid], u.valence, grid, k)):
        val = (sigma, tau + i)
        mag = np.sqrt(np.maximum(np.real(inner_components(c, c, met.g, met.g_inv, val)), 0.0))
        terms.append(grid.rho ** (lam + tau - sigma + i) * mag)
    return terms


def weighted_sobolev_norm(u: TensorFieldSample, k: int, p: float, lam: float, system: LocalizationSystem) -> NormResult:
    """``(sum_i || rho^(lambda+tau-sigma+i) |nabla^i u|_g ||_p^p)^(1/p)``.

    Integrals use :class:`QuadratureRule`; ``p = inf`` delegates to
    :func:`weighted_holder_norm`.
    """
    _check_p(p)
    if math.isinf(p):
        return weighted_holder_norm(u, k, lam, system)
    quad = QuadratureRule(system, u.N)
    dens = {}
    for cid in u.per_chart:
        dens[cid] = sum(t**p for t in _weighted_terms(u, cid, k, lam))
    _, contrib = quad.integrate(dens)
    return _finish(contrib, p, "sobolev", {"k": k, "p": p, "lambda": lam, "valence": u.valence}, u.h)


# chart-local norms integrate the closed-form bumps on at least this many nodes per unit length
CHART_QUADRATURE_MIN_N = 64


def localized_partials(system: LocalizationSystem, cid: str, comp: np.ndarray, k: int, N: int, refine: int = 1) -> dict:
    """``d^alpha (pi_k u)`` for ``|alpha| <= k`` on a lattice ``refine`` times finer than ``u``'s.

    Bump derivatives are exact; derivatives of ``u`` are finite differences
    on its own lattice, linearly interpolated to the finer one.
    """
    m = system.model.dim
    pid = system.pi_partials(cid, N * refine, order=2)
    ud = {a: fd.refine_linear(d, refine, m) for a, d in fd.multi_partials(comp, k, 1.0 / N, m).items()}
    extra = (1,) * (comp.ndim - m)
    out = {}
    for alpha in ud:
        acc = 0.0
        n = len(alpha)
        for mask in range(2**n):
            on = tuple(alpha[i] for i in range(n) if mask >> i & 1)
            off = tuple(alpha[i] for i in range(n) if not mask >> i & 1)
            dp = pid[tuple(sorted(on))]
            acc = acc + dp.reshape(dp.shape + extra) * ud[tuple(sorted(off))]
        out[alpha] = acc
    return out


def chart_local_norm(u: TensorFieldSample, k: int, p: float, lam: float, system: LocalizationSystem) -> NormResult:
    """``(sum_k (rho_k^(lambda+m/p) ||pi_k u||_{W^k_p(chart)})^p)^(1/p)``."""
    _check_p(p)
    if math.isinf(p):
        return chart_local_holder_norm(u, k, lam, system)
    m = u.model.dim
    w = weight_exponent(lam, p, m)
    contrib = {}
    for cid, comp in u.per_chart.items():
        refine = max(1, -(-CHART_QUADRATURE_MIN_N // u.N))
        trap = u.model.grid(cid, u.N * refine).trapezoid
        total = sum(float(np.sum(trap * _pointwise_abs(d, m) ** p))
                    for d in localized_partials(system, cid, comp, k, u.N, refine).values())
        contrib[cid] = u.model.chart(cid).center_rho ** (w * p) * total
    return _finish(contrib, p, "chart_local", {"k": k, "p": p, "lambda": lam, "valence": u.valence}, u.h)


def weighted_holder_norm(u: TensorFieldSample, k: int, lam: float, system: LocalizationSystem) -> NormResult:
    """``max_i sup rho^(lambda+tau-sigma+i) |nabla^i u|_g`` over nodes inside bump supports."""
    per = {}
    for cid in u.per_chart:
        inside = system.on_grid(cid, u.N)["pi"] > 0
        terms = _weighted_terms(u, cid, k, lam)
        per[cid] = max(float(t[inside].max()) if inside.any() else 0.0 for t in terms)
    return _finish(per, math.inf, "holder", {"k": k, "p": math.inf, "lambda": lam, "valence": u.valence}, u.h)


def _holder_quotient(d: np.ndarray, x: np.ndarray, exponent: float, lead: int, rng, pairs: int) -> float:
    """Largest lattice-pair Hölder quotient of ``d``, using at most ``pairs`` random pairs."""
    flat = d.reshape((-1,) + d.shape[lead:])
    pts = x.reshape(-1, x.shape[-1])
    n = len(pts)
    if n * (n - 1) // 2 <= pairs:
        i, j = np.triu_indices(n, 1)
    else:
        i = rng.integers(0, n, size=pairs)
        j = rng.integers(0, n, size=pairs)
        keep = i != j
        i, j = i[keep], j[keep]
    diff = _pointwise_abs(flat[i] - flat[j], 1)
    dist = np.max(np.abs(pts[i] - pts[j]), axis=-1)
    return float(np.max(diff / dist**exponent)) if len(i) else 0.0


def chart_local_holder_norm(
    u: TensorFieldSample, s: float, lam: float, system: LocalizationSystem, *, seed: int = 0, pairs: int = 10_000
) -> NormResult:
    """``sup_k rho_k^lambda ||pi_k u||_{BC^s(chart)}`` with a lattice-pair Hölder seminorm for fractional ``s``."""
    m = u.model.dim
    k = int(math.floor(s))
    frac = s - k
    rng = np.random.default_rng(seed)
    per = {}
    for cid in sorted(u.per_chart):
        comp = u.per_chart[cid]
        grid = u.model.grid(cid, u.N)
        pi = system.on_grid(cid, u.N)["pi"]
        v = pi.reshape(pi.shape + (1,) * u.rank) * comp
        parts = fd.multi_partials(v, k, grid.h, m)
        val = max(float(_pointwise_abs(d, m).max()) for d in parts.values())
        if frac > 0:
            top = [d for a, d in parts.items() if len(a) == k]
            val += max(_holder_quotient(d, grid.x, frac, m, rng, pairs) for d in top)
        per[cid] = u.model.chart(cid).center_rho ** lam * val
    return _finish(per, math.inf, "chart_local_holder", {"s": s, "lambda": lam, "valence": u.valence}, u.h)


# ---------------------------------------------------------------------------
# multiplications and harnesses


PAIRINGS = ("tensor", "contraction", "duality", "inner", "scalar")


def multiply(pairing: str, a: TensorFieldSample, b: TensorFieldSample) -> TensorFieldSample:
    """Bilinear pointwise multiplications ``a * b``.

    ``tensor``: ``a ⊗ b``; ``contraction``: ``a ⊗ b`` contracted over the
    first upper slot of ``a`` and the last lower slot of ``b``; ``duality``:
    the pairing of a ``(0,1)`` with a ``(1,0)`` field; ``inner``: the bundle
    inner product ``(a|b)_g``; ``scalar``: ``a`` scalar times ``b``.
    """
    if a.model is not b.model or a.N != b.N:
        raise GeometryError("factors must live on the same model and mesh")
    model = a.model
    lead = model.dim
    charts = [c for c in a.per_chart if c in b.per_chart]
    per = {}
    if pairing == "tensor":
        va, vb = a.valence, b.valence
        for c in charts:
            A, B = a.per_chart[c], b.per_chart[c]
            prod = A.reshape(A.shape + (1,) * b.rank) * B.reshape(B.shape[:lead] + (1,) * a.rank + B.shape[lead:])
            # reorder slots to (upper a, upper b, lower a, lower b)
            order = list(range(lead))
            order += [lead + i for i in range(va[0])]
            order += [lead + a.rank + i for i in range(vb[0])]
            order += [lead + va[0] + i for i in range(va[1])]
            order += [lead + a.rank + vb[0] + i for i in range(vb[1])]
            per[c] = np.transpose(prod, order)
        return TensorFieldSample(model, (va[0] + vb[0], va[1] + vb[1]), a.N, per)
    if pairing in ("contraction", "duality"):
        if pairing == "duality" and not (a.valence == (0, 1) and b.valence == (1, 0)):
            raise ValenceError("duality pairs a (0,1) field with a (1,0) field")
        if pairing == "contraction" and not (a.valence[0] >= 1 and b.valence[1] >= 1):
            raise ValenceError("contraction needs an upper slot in the first and a lower slot in the second factor")
        if pairing == "duality":
            for c in charts:
                per[c] = np.einsum("...i,...i->...", a.per_chart[c], b.per_chart[c])
            return TensorFieldSample(model, (0, 0), a.N, per)
        t = multiply("tensor", a, b)
        up, lo = t.valence
        # first upper slot of a is slot 0, last lower slot of b is the last slot
        for c in charts:
            per[c] = np.trace(t.per_chart[c], axis1=lead, axis2=lead + up + lo - 1)
        return TensorFieldSample(model, (up - 1, lo - 1), a.N, per)
    if pairing == "inner":
        if a.valence != b.valence:
            raise ValenceError("inner product needs equal valences")
        for c in charts:
            met = model.grid(c, a.N).metric
            per[c] = inner_components(a.per_chart[c], b.per_chart[c], met.g, met.g_inv, a.valence)
        return TensorFieldSample(model, (0, 0), a.N, per)
    if pairing == "scalar":
        if a.valence != (0, 0):
            raise ValenceError("scalar multiplication needs a (0,0) first factor")
        for c in charts:
            A = a.per_chart[c]
            per[c] = A.reshape(A.shape + (1,) * b.rank) * b.per_chart[c]
        return TensorFieldSample(model, b.valence, a.N, per)
    raise GeometryError(f"unknown pairing {pairing!r}; choose from {PAIRINGS}")


_DEFAULT_VALENCES = {
    "tensor": ((1, 0), (0, 1)),
    "contraction": ((1, 0), (0, 1)),
    "duality": ((0, 1), (1, 0)),
    "inner": ((1, 0), (1, 0)),
    "scalar": ((0, 0), (0, 1)),
}


@dataclass
class HarnessReport:
    """Measured ratios of an inequality harness; ``max`` is the empirical constant."""

    name: str
    ratios: list[float]
    params: dict
    h: float
    extra: dict = field(default_factory=dict)

    @property
    def max(self) -> float:
        return float(max(self.ratios))

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.ratios)))

    def row(self) -> dict:
        return {"harness": self.name, "h": self.h, "samples": len(self.ratios), "max_ratio": self.max, **self.params}


def _default_envelope(model: ManifoldModel):
    """Smooth cut-off keeping sample fields away from the truncation ends of a wedge."""
    core = model.core[0]
    if core is None or model.metadata.get("family") != "wedge":
        return None
    from .fields import radial_bump

    lo, hi = core
    w = model.metadata["radial_width"]
    return radial_bump(0.5 * (lo + hi), 0.5 * (hi - lo) - w)


def _fields(model, N, valence, rng, envelope):
    return TrigField(model, valence, rng, envelope=envelope).sample(N)


def multiplier_ratio_harness(
    system: LocalizationSystem,
    pairing: str,
    samples: int,
    t_lam1: tuple[int, float],
    s_p_lam2: tuple[int, float, float],
    N: int,
    *,
    valences: tuple | None = None,
    algebra: bool = False,
    seed: int = 0,
    envelope: Callable | None | str = "default",
) -> HarnessReport:
    """Sup over random pairs of ``||u * v|| / (||u|| ||v||)``.

    Default: ``u`` in the bounded space with ``(t, lambda1)`` and ``v`` in
    ``W^{s,lambda2}_p``.  With ``algebra`` both factors are measured in
    ``W^s_p`` and the target weight gains ``m/p``.
    """
    model = system.model
    t, lam1 = t_lam1
    s, p, lam2 = s_p_lam2
    if not algebra and t < s:
        raise GeometryError("the bounded factor needs at least as many derivatives as the target")
    va, vb = valences or _DEFAULT_VALENCES[pairing]
    env = _default_envelope(model) if envelope == "default" else envelope
    rng = np.random.default_rng(seed)
    ratios = []
    lam0 = lam1 + lam2 + (model.dim / p if algebra else 0.0)
    for _ in range(samples):
        u = _fields(model, N, va, rng, env)
        v = _fields(model, N, vb, rng, env)
        prod = multiply(pairing, u, v)
        if algebra:
            den = weighted_sobolev_norm(u, s, p, lam1, system).value
        else:
            den = weighted_holder_norm(u, t, lam1, system).value
        den *= weighted_sobolev_norm(v, s, p, lam2, system).value
        ratios.append(weighted_sobolev_norm(prod, s, p, lam0, system).value / den)
    params = {"pairing": pairing, "t": t, "s": s, "p": p, "lambda1": lam1, "lambda2": lam2, "lambda0": lam0, "algebra": algebra}
    return HarnessReport("multiplier", ratios, params, 1.0 / N)


def embedding_ratio_harness(
    system: LocalizationSystem,
    source: tuple[int, float, float],
    target: tuple[int, float],
    N: int,
    samples: int = 50,
    *,
    valence=(0, 0),
    seed: int = 0,
    envelope: Callable | None | str = "default",
) -> HarnessReport:
    """Sup of target / source norms for the Sobolev-type embeddings.

    ``source = (s1, p1, lambda)`` and ``target = (s0, p0)``.  For finite
    ``p0`` the exponents must satisfy ``s1 - m/p1 = s0 - m/p0`` and the
    target weight is ``lambda + s1 - s0``; for ``p0 = inf`` the embedding
    into bounded fields needs ``s1 - m/p1 > s0`` and uses weight
    ``lambda + m/p1``.
    """
    model = system.model
    m = model.dim
    s1, p1, lam = source
    s0, p0 = target
    if int(s1) != s1 or int(s0) != s0:
        raise GeometryError("only integer smoothness is supported")
    if math.isinf(p0):
        if not s1 - m / p1 > s0:
            raise GeometryError(f"inadmissible exponents: need s1 - m/p1 > s0, got {s1 - m / p1:g} <= {s0}")
        lam_t = lam + m / p1
    else:
        if abs((s1 - m / p1) - (s0 - m / p0)) > 1e-12 or s0 > s1:
            raise GeometryError(
                f"inadmissible exponents: need s1 - m/p1 = s0 - m/p0, got {s1 - m / p1:g} != {s0 - m / p0:g}"
            )
        lam_t = lam + s1 - s0
    env = _default_envelope(model) if envelope == "default" else envelope
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(samples):
        u = _fields(model, N, valence, rng, env)
        top = weighted_sobolev_norm(u, s0, p0, lam_t, system).value
        ratios.append(top / weighted_sobolev_norm(u, s1, p1, lam, system).value)
    params = {"s1": s1, "p1": p1, "lambda": lam, "s0": s0, "p0": p0, "target_lambda": lam_t}
    return HarnessReport("embedding", ratios, params, 1.0 / N)


def nabla_ratio_harness(
    system: LocalizationSystem, k: int, p: float, lam: float, N: int, samples: int = 50, *, valence=(0, 0), seed: int = 0,
    envelope: Callable | None | str = "default",
) -> HarnessReport:
    """Sup of ``||nabla u||_{k,p;lambda} / ||u||_{k+1,p;lambda}``."""
    model = system.model
    env = _default_envelope(model) if envelope == "default" else envelope
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(samples):
        u = _fields(model, N, valence, rng, env)
        per = {}
        for cid, comp in u.per_chart.items():
            grid = model.grid(cid, N)
            per[cid] = nabla_components(comp, u.valence, christoffel_on_grid(grid), grid.h)
        du = TensorFieldSample(model, (valence[0], valence[1] + 1), N, per, u.margin)
        ratios.append(weighted_sobolev_norm(du, k, p, lam, system).value / weighted_sobolev_norm(u, k + 1, p, lam, system).value)
    return HarnessReport("nabla", ratios, {"k": k, "p": p, "lambda": lam}, 1.0 / N)


def ambient_conical_norm(
    fn: Callable[[np.ndarray], np.ndarray], k: int, p: float, lam: float, box: Sequence[tuple[float, float]], h: float
) -> float:
    """``(sum_{|alpha| <= k} || r^(lambda+|alpha|) d^alpha f ||_p^p)^(1/p)`` on a Cartesian grid.

    ``fn`` takes ambient points ``(..., 2)``; ``r`` is the distance from
    the origin.  The box must contain the support of ``fn`` and avoid the origin.
    """
    axes = [np.arange(lo, hi + 0.5 * h, h) for lo, hi in box]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    r = np.linalg.norm(X, axis=-1)
    if r.min() <= 0:
        raise GeometryError("box must not contain the cone tip")
    f = np.asarray(fn(X), dtype=float)
    n = len(box)
    trap = np.ones(f.shape)
    for i, a in enumerate(axes):
        wi = np.full(len(a), h)
        wi[0] = wi[-1] = 0.5 * h
        shp = [1] * n
        shp[i] = len(a)
        trap = trap * wi.reshape(shp)
    total = 0.0
    for alpha, d in fd.multi_partials(f, k, h, n).items():
        total += float(np.sum(trap * (r ** (lam + len(alpha)) * np.abs(d)) ** p))
    return total ** (1.0 / p)


def convergence_order(hs: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of ``log(error)`` against ``log(h)``."""
    hs = np.asarray(hs, dtype=float)
    e = np.asarray(errors, dtype=float)
    if np.any(e <= 0):
        return math.inf
    return float(np.polyfit(np.log(hs), np.log(e), 1)[0])
