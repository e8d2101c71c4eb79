"""Differential forms on chart lattices.

A k-form is stored by its components ``alpha_I`` on strictly increasing
multi-indices ``I``.  The pointwise inner product is the one induced by the
cometric, ``(dx^I | dx^J) = det(g^{IJ})``, so the volume form
``omega = sqrt(det g) dx^1 ^ ... ^ dx^m`` has unit length.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np
from scipy.ndimage import binary_erosion

from . import fd
from .connection import christoffel_on_grid, nabla_components
from .geometry_core import (
    GeometryError,
    ManifoldModel,
    TensorFieldSample,
    ValenceError,
    riesz_flat,
    riesz_sharp,
)
from .localization import LocalizationSystem, SupportError
from .spaces import HarnessReport, QuadratureRule, _default_envelope, weighted_sobolev_norm
from .fields import TrigField

__all__ = [
    "OrientationError",
    "FormSample",
    "form_basis",
    "random_form",
    "exterior_derivative",
    "hodge_star",
    "codifferential",
    "form_inner",
    "wedge_top",
    "green_residual",
    "grad",
    "div",
    "hodge_laplacian",
    "laplace_beltrami",
    "nabla_form",
    "form_ratio_harness",
]


class OrientationError(GeometryError):
    """Some transition map reverses orientation."""


@lru_cache(maxsize=None)
def form_basis(m: int, k: int) -> tuple[tuple[int, ...], ...]:
    """Strictly increasing multi-indices of length ``k`` in ``range(m)``."""
    if not 0 <= k <= m:
        return ()
    return tuple(itertools.combinations(range(m), k))


def _perm_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@dataclass(frozen=True, eq=False)
class FormSample:
    """Components of a k-form on the increasing basis, per chart, with lattice axes first."""

    model: ManifoldModel
    degree: int
    N: int
    per_chart: Mapping[str, np.ndarray]

    def __post_init__(self):
        nb = len(self.basis)
        for cid, arr in self.per_chart.items():
            want = self.model.grid(cid, self.N).shape + (nb,)
            if arr.shape != want:
                raise ValenceError(f"chart {cid}: form components have shape {arr.shape}, expected {want}")

    @property
    def basis(self) -> tuple[tuple[int, ...], ...]:
        return form_basis(self.model.dim, self.degree)

    @property
    def h(self) -> float:
        return 1.0 / self.N

    def charts(self) -> list[str]:
        return [c for c in self.model.chart_ids if c in self.per_chart]

    def get(self, cid: str) -> np.ndarray:
        arr = self.per_chart.get(cid)
        if arr is None:
            return np.zeros(self.model.grid(cid, self.N).shape + (len(self.basis),))
        return arr

    def _same(self, other: "FormSample"):
        if other.model is not self.model or other.degree != self.degree or other.N != self.N:
            raise GeometryError("forms live on different models, degrees or meshes")

    def __add__(self, other: "FormSample") -> "FormSample":
        self._same(other)
        ids = set(self.per_chart) | set(other.per_chart)
        return FormSample(self.model, self.degree, self.N, {c: self.get(c) + other.get(c) for c in ids})

    def __sub__(self, other: "FormSample") -> "FormSample":
        return self + other * -1.0

    def __mul__(self, c: float) -> "FormSample":
        return FormSample(self.model, self.degree, self.N, {k: c * v for k, v in self.per_chart.items()})

    __rmul__ = __mul__

    def to_tensor(self) -> TensorFieldSample:
        """Full antisymmetric ``(0, k)`` tensor."""
        m, k = self.model.dim, self.degree
        per = {}
        for cid, arr in self.per_chart.items():
            full = np.zeros(arr.shape[:-1] + (m,) * k, dtype=arr.dtype)
            for b, I in enumerate(self.basis):
                for perm in itertools.permutations(range(k)):
                    full[(...,) + tuple(I[p] for p in perm)] = _perm_sign(perm) * arr[..., b]
            per[cid] = full
        return TensorFieldSample(self.model, (0, k), self.N, per)

    @classmethod
    def from_tensor(cls, t: TensorFieldSample, antisymmetrize: bool = True) -> "FormSample":
        """Increasing-basis components of the antisymmetric part of a ``(0, k)`` tensor."""
        if t.valence[0] != 0:
            raise ValenceError("forms are covariant tensors")
        k = t.valence[1]
        basis = form_basis(t.model.dim, k)
        per = {}
        for cid, arr in t.per_chart.items():
            lat = arr.shape[: arr.ndim - k]
            out = np.zeros(lat + (len(basis),), dtype=arr.dtype)
            for b, I in enumerate(basis):
                if antisymmetrize:
                    acc = 0.0
                    for perm in itertools.permutations(range(k)):
                        acc = acc + _perm_sign(perm) * arr[(...,) + tuple(I[p] for p in perm)]
                    out[..., b] = acc / math.factorial(k)
                else:
                    out[..., b] = arr[(...,) + I]
            per[cid] = out
        return cls(t.model, k, t.N, per)

    def antisymmetry_defect(self) -> float:
        """Largest ``|T - Alt T|`` of the expanded tensor (zero up to roundoff by construction)."""
        t = self.to_tensor()
        back = FormSample.from_tensor(t).to_tensor()
        return max((float(np.max(np.abs(t.per_chart[c] - back.per_chart[c]))) for c in t.per_chart), default=0.0)


def random_form(model: ManifoldModel, N: int, k: int, seed=0, envelope=None) -> FormSample:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return FormSample.from_tensor(TrigField(model, (0, k), rng, envelope=envelope).sample(N))


# ---------------------------------------------------------------------------
# exterior derivative


def _antisym_derivative(T: np.ndarray, k: int, m: int) -> np.ndarray:
    """``(d alpha)_J = sum_i (-1)^i T[J without j_i, j_i]`` for increasing ``J``."""
    basis = form_basis(m, k + 1)
    out = np.zeros(T.shape[: T.ndim - k - 1] + (len(basis),), dtype=T.dtype)
    for b, J in enumerate(basis):
        for i, j in enumerate(J):
            rest = J[:i] + J[i + 1 :]
            out[..., b] += (-1) ** i * T[(...,) + rest + (j,)]
    return out


def exterior_derivative(alpha: FormSample, mode: str = "nabla") -> FormSample:
    """``d alpha`` as the antisymmetrized covariant derivative.

    ``mode="partial"`` antisymmetrizes plain partial derivatives instead;
    the Christoffel terms cancel, so both agree up to roundoff with analytic
    Christoffel symbols.
    """
    m, k = alpha.model.dim, alpha.degree
    if k >= m:
        return FormSample(alpha.model, k + 1, alpha.N, {c: np.zeros(v.shape[:-1] + (0,)) for c, v in alpha.per_chart.items()})
    if mode not in ("nabla", "partial"):
        raise GeometryError("mode must be 'nabla' or 'partial'")
    full = alpha.to_tensor()
    per = {}
    for cid, comp in full.per_chart.items():
        grid = alpha.model.grid(cid, alpha.N)
        if mode == "nabla":
            T = nabla_components(comp, (0, k), christoffel_on_grid(grid), grid.h)
        else:
            T = fd.gradient(comp, grid.h, m)
        per[cid] = _antisym_derivative(T, k, m)
    return FormSample(alpha.model, k + 1, alpha.N, per)


# ---------------------------------------------------------------------------
# Hodge star


def _gram(g_inv: np.ndarray, basis) -> np.ndarray:
    """``det(g^{IJ})`` for all basis pairs; shape ``lattice + (nb, nb)``."""
    nb = len(basis)
    out = np.empty(g_inv.shape[:-2] + (nb, nb))
    if basis and len(basis[0]) == 0:
        out[...] = 1.0
        return out
    for a, I in enumerate(basis):
        for b, J in enumerate(basis):
            out[..., a, b] = np.linalg.det(g_inv[..., list(I), :][..., list(J)])
    return out


@lru_cache(maxsize=None)
def _wedge_matrix(m: int, k: int) -> np.ndarray:
    """``W[I, J]``: coefficient of ``alpha_I gamma_J`` in ``alpha ^ gamma`` on ``dx^1 ^ ... ^ dx^m``."""
    bk, bc = form_basis(m, k), form_basis(m, m - k)
    W = np.zeros((len(bk), len(bc)))
    for a, I in enumerate(bk):
        for b, J in enumerate(bc):
            if not set(I) & set(J):
                W[a, b] = _perm_sign(I + J)
    return W


def wedge_top(alpha: np.ndarray, gamma: np.ndarray, m: int, k: int) -> np.ndarray:
    """Coefficient of ``dx^1 ^ ... ^ dx^m`` in ``alpha ^ gamma`` (component arrays)."""
    return np.einsum("...a,ab,...b->...", alpha, _wedge_matrix(m, k), gamma)


def check_orientation(model: ManifoldModel) -> None:
    if model.__dict__.get("_oriented"):
        return
    for cid in model.chart_ids:
        for nb in model.neighbors(cid):
            if np.linalg.det(model.transition(cid, nb).jacobian()) <= 0:
                raise OrientationError(f"transition {cid} -> {nb} reverses orientation")
    model.__dict__["_oriented"] = True


def hodge_star(beta: FormSample) -> FormSample:
    """``*beta`` from ``(alpha | beta) omega = alpha ^ *beta`` for every basis form ``alpha``.

    The defining relation is solved nodewise as a linear system on the
    increasing basis (real scalars, so no conjugation appears).
    """
    model = beta.model
    check_orientation(model)
    m, k = model.dim, beta.degree
    if not 0 <= k <= m:
        raise GeometryError("form degree out of range")
    W = _wedge_matrix(m, k)
    basis = form_basis(m, k)
    per = {}
    for cid, b in beta.per_chart.items():
        met = model.grid(cid, beta.N).metric
        G = _gram(met.g_inv, basis)
        rhs = met.sqrt_det[..., None] * np.einsum("...ab,...b->...a", G, b)
        per[cid] = np.linalg.solve(np.broadcast_to(W, rhs.shape[:-1] + W.shape), rhs[..., None])[..., 0]
    return FormSample(model, m - k, beta.N, per)


def form_inner(alpha: FormSample, beta: FormSample) -> dict[str, np.ndarray]:
    """Pointwise ``(alpha | beta)_{g*}`` per chart."""
    alpha._same(beta)
    basis = alpha.basis
    out = {}
    for cid in alpha.charts():
        if cid not in beta.per_chart:
            continue
        G = _gram(alpha.model.grid(cid, alpha.N).metric.g_inv, basis)
        out[cid] = np.einsum("...a,...ab,...b->...", alpha.per_chart[cid], G, beta.per_chart[cid])
    return out


def codifferential(alpha: FormSample) -> FormSample:
    """``delta alpha = (-1)^(m(k+1)+1) * d * alpha``."""
    m, k = alpha.model.dim, alpha.degree
    if k == 0:
        return FormSample(alpha.model, -1, alpha.N, {c: np.zeros(v.shape[:-1] + (0,)) for c, v in alpha.per_chart.items()})
    sign = (-1) ** (m * (k + 1) + 1)
    return hodge_star(exterior_derivative(hodge_star(alpha))) * float(sign)


# ---------------------------------------------------------------------------
# vector calculus


def _as_form(t: TensorFieldSample) -> FormSample:
    return FormSample.from_tensor(t, antisymmetrize=False)


def grad(f: TensorFieldSample) -> TensorFieldSample:
    """``G^1 d f``: the vector field dual to ``df``."""
    if f.valence != (0, 0):
        raise ValenceError("grad needs a scalar field")
    df = exterior_derivative(_as_form(f))
    return riesz_sharp(df.to_tensor())


def div(X: TensorFieldSample) -> TensorFieldSample:
    """``-delta G_1 X``."""
    if X.valence != (1, 0):
        raise ValenceError("div needs a vector field")
    d = codifferential(_as_form(riesz_flat(X))) * -1.0
    return d.to_tensor()


def laplace_beltrami(f: TensorFieldSample) -> TensorFieldSample:
    """``div grad f``."""
    return div(grad(f))


def hodge_laplacian(alpha: FormSample) -> FormSample:
    """``d delta + delta d``; the first term is absent for functions."""
    out = codifferential(exterior_derivative(alpha))
    if alpha.degree > 0:
        out = out + exterior_derivative(codifferential(alpha))
    return out


def nabla_form(alpha: FormSample) -> list[FormSample]:
    """``nabla_{d/dx^j} alpha`` for every chart direction ``j``."""
    full = alpha.to_tensor()
    m = alpha.model.dim
    per: list[dict] = [dict() for _ in range(m)]
    for cid, comp in full.per_chart.items():
        grid = alpha.model.grid(cid, alpha.N)
        T = nabla_components(comp, (0, alpha.degree), christoffel_on_grid(grid), grid.h)
        for j in range(m):
            per[j][cid] = T[..., j]
    out = []
    for j in range(m):
        t = TensorFieldSample(alpha.model, (0, alpha.degree), alpha.N, per[j])
        out.append(FormSample.from_tensor(t, antisymmetrize=False))
    return out


# ---------------------------------------------------------------------------
# Green's formula


def _check_green_support(forms, margin: int, tol: float = 1e-12) -> None:
    """Raise unless every form vanishes within ``margin`` nodes of the core edge or the boundary face."""
    model = forms[0].model
    N = forms[0].N
    scale = max((float(np.max(np.abs(v))) for f in forms for v in f.per_chart.values()), default=0.0)
    if scale == 0.0:
        return
    for cid in model.chart_ids:
        grid = model.grid(cid, N)
        ok = model.core_contains(grid.natural)
        if margin:
            ok = binary_erosion(ok, iterations=margin, border_value=1)
        if model.chart(cid).kind == "boundary":
            ok[:margin] = False
        for f in forms:
            if cid in f.per_chart and np.any(np.abs(f.per_chart[cid][~ok]) > tol * scale):
                raise SupportError(f"form of degree {f.degree} is nonzero within {margin} nodes of the truncation or boundary on chart {cid}")


def _integrate(system: LocalizationSystem, N: int, per: Mapping[str, np.ndarray]) -> float:
    return QuadratureRule(system, N).integrate(per)[0]


def green_residual(alpha: FormSample, v: FormSample, system: LocalizationSystem, variant: str = "duad", margin: int = 3) -> float:
    """``|<d alpha, v> - <alpha, delta v>|`` for compactly supported forms.

    ``variant="duad"``: ``alpha`` has degree ``k-1`` and ``v`` degree ``k``.
    ``variant="duac"``: ``alpha`` is the ``k``-form ``beta`` and ``v`` the
    ``(k-1)``-form ``w``; the residual is ``|<delta beta, w> - <beta, d w>|``.
    Pairings are ``integral (a | b)_{g*} dvol``, i.e. the duality pairing
    after identifying ``v`` with ``G^k v``.
    """
    if alpha.model is not v.model or alpha.model is not system.model:
        raise GeometryError("forms and localization system live on different models")
    _check_green_support([alpha, v], margin)
    if variant == "duad":
        if v.degree != alpha.degree + 1:
            raise GeometryError("duad variant needs deg v = deg alpha + 1")
        lhs = form_inner(exterior_derivative(alpha), v)
        rhs = form_inner(alpha, codifferential(v))
    elif variant == "duac":
        if v.degree != alpha.degree - 1:
            raise GeometryError("duac variant needs deg w = deg beta - 1")
        lhs = form_inner(codifferential(alpha), v)
        rhs = form_inner(alpha, exterior_derivative(v))
    else:
        raise GeometryError("variant must be 'duad' or 'duac'")
    return abs(_integrate(system, alpha.N, lhs) - _integrate(system, alpha.N, rhs))


# ---------------------------------------------------------------------------
# weighted mapping harness


def form_ratio_harness(
    system: LocalizationSystem,
    op: str,
    degree: int,
    s: int,
    p: float,
    lam: float,
    N: int,
    samples: int = 50,
    *,
    seed: int = 0,
    envelope: Callable | None | str = "default",
) -> HarnessReport:
    """Sup of ``||d alpha||_{s,p;lambda}`` (or ``||delta alpha||_{s,p;lambda+2}``) over ``||alpha||_{s+1,p;lambda}``."""
    if op not in ("d", "delta"):
        raise GeometryError("op must be 'd' or 'delta'")
    model = system.model
    env = _default_envelope(model) if envelope == "default" else envelope
    rng = np.random.default_rng(seed)
    target = lam if op == "d" else lam + 2
    ratios = []
    for _ in range(samples):
        a = random_form(model, N, degree, rng, envelope=env)
        out = exterior_derivative(a) if op == "d" else codifferential(a)
        num = weighted_sobolev_norm(out.to_tensor(), s, p, target, system).value
        den = weighted_sobolev_norm(a.to_tensor(), s + 1, p, lam, system).value
        ratios.append(num / den)
    params = {"op": op, "degree": degree, "s": s, "p": p, "lambda": lam, "target_lambda": target}
    return HarnessReport(f"forms-{op}", ratios, params, 1.0 / N)
