"""Experiment suites run by the command line tool.

Each suite takes a built model and an :class:`ExperimentConfig` and returns
a :class:`SuiteResult` with table rows and tolerance checks.  Random draws
come from ``numpy.random.default_rng([seed, ...])`` with fixed keys, so a
configuration always produces the same numbers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .boundary import build_boundary_atlas, trace, trace_ratio_harness
from .connection import verify_uniform_estimates
from .fields import TrigField, conical_probe, shell_probes
from .forms import (
    codifferential,
    exterior_derivative,
    form_inner,
    form_ratio_harness,
    green_residual,
    hodge_star,
    random_form,
)
from .geometry_core import GeometryError, ManifoldModel, sample_field, stack_fields
from .localization import build_localization_system, retraction_error
from .manifolds import ManifoldConfig
from .profiles import plateau
from .singular_structure import verify_singularity_datum
from .spaces import (
    _default_envelope,
    ambient_conical_norm,
    QuadratureRule,
    chart_local_norm,
    convergence_order,
    embedding_ratio_harness,
    multiplier_ratio_harness,
    nabla_ratio_harness,
    weighted_sobolev_norm,
)

__all__ = ["ExperimentConfig", "Check", "SuiteResult", "SUITES", "run_suite", "THREADS_ENV"]

THREADS_ENV = "CUSPIDAL_THREADS"

SUITE_NAMES = ("datum", "estimates", "retraction", "norms", "multipliers", "traces", "embeddings", "forms")


@dataclass
class ExperimentConfig:
    manifold: ManifoldConfig = field(default_factory=ManifoldConfig)
    manifold_name: str | None = "cusp2"
    suite: str = "all"
    mesh: list[int] = field(default_factory=lambda: [16, 32, 64])
    lambdas: list[float] = field(default_factory=lambda: [-1.0, 0.0, 1.5])
    ps: list[float] = field(default_factory=lambda: [2.0, 3.0])
    ks: list[int] = field(default_factory=lambda: [0, 1, 2])
    samples: int = 10
    harness_samples: int = 50
    seed: int = 0
    output: str = "report"

    def validate(self) -> None:
        if self.suite != "all" and self.suite not in SUITE_NAMES:
            raise GeometryError(f"unknown suite {self.suite!r}; choose from all, {', '.join(SUITE_NAMES)}")
        if not self.mesh or any(int(n) != n or n < 4 for n in self.mesh):
            raise GeometryError("mesh ladder entries must be integers ≥ 4")
        if any(b <= a for a, b in zip(self.mesh, self.mesh[1:])):
            raise GeometryError("mesh ladder must be strictly increasing")
        for p in self.ps:
            if not (1 < p < math.inf):
                raise GeometryError(f"p must lie in (1, inf), got {p}")
        if any(k < 0 or int(k) != k for k in self.ks):
            raise GeometryError("k values must be non-negative integers")
        if self.samples < 1 or self.harness_samples < 1:
            raise GeometryError("sample counts must be positive")
        self.manifold.validate()

    def suites(self) -> list[str]:
        return list(SUITE_NAMES) if self.suite == "all" else [self.suite]


@dataclass
class Check:
    name: str
    value: float
    op: str
    tol: float
    passed: bool

    def line(self, suite: str) -> str:
        word = "PASS" if self.passed else "FAIL"
        return f"{word} suite={suite} check={self.name} value={_fmt(self.value)} op={self.op} tol={_fmt(self.tol)}"


@dataclass
class SuiteResult:
    suite: str
    rows: list[dict]
    checks: list[Check]
    skipped: str | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def status(self) -> str:
        if self.skipped:
            return "skip"
        return "pass" if self.passed else "fail"


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _le(name, value, tol) -> Check:
    value = float(value)
    return Check(name, value, "<=", float(tol), bool(value <= tol))


def _ge(name, value, tol) -> Check:
    value = float(value)
    return Check(name, value, ">=", float(tol), bool(value >= tol))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _pmap(fn: Callable, items: Sequence) -> list:
    """Order-preserving map, threaded when the thread variable asks for it."""
    n = _threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def _rng(cfg: ExperimentConfig, *key: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, *key])


def _drift(a: float, b: float) -> float:
    if a == b:
        return 0.0
    return abs(b / a - 1.0) if a else math.inf


def _vstr(v) -> str:
    return f"{v[0]},{v[1]}"


# ---------------------------------------------------------------------------
# suites


def suite_datum(model: ManifoldModel, cfg: ExperimentConfig) -> SuiteResult:
    rep = verify_singularity_datum(model)
    rows = [dict(r, passed=rep.passed[r["condition"]]) for r in rep.rows()]
    checks = [Check(f"condition_{c}", float(ok), "==", 1.0, bool(ok)) for c, ok in rep.passed.items()]
    return SuiteResult("datum", rows, checks)


def suite_estimates(model: ManifoldModel, cfg: ExperimentConfig) -> SuiteResult:
    rep = verify_uniform_estimates(model, N=min(cfg.mesh[0], 16), seed=cfg.seed)
    rows = []
    for key in rep.keys():
        for shell, (lo, hi) in rep.per_shell(key).items():
            rows.append({"key": key, "shell": shell, "lower": lo, "upper": hi})
    split = max(rep.shells.values()) // 2
    checks = [_le(f"bracket_drift[{k}]", rep.bracket_drift(k, split), 0.1) for k in ("metric", "volume", "norm_1_0", "norm_0_1")]
    return SuiteResult("estimates", rows, checks)


RETRACTION_VALENCES = ((0, 0), (1, 0), (0, 2))


# Floats per batched stack handed to the retraction at once.  The localized
# family and its transfers need roughly 13 times this much memory.
RETRACTION_BATCH_BUDGET = 16_000_000


def suite_retraction(model: ManifoldModel, cfg: ExperimentConfig) -> SuiteResult:
    system = build_localization_system(model)
    rows, checks = [], []
    errs: dict[tuple, list[float]] = {}
    for vi, val in enumerate(RETRACTION_VALENCES):
        for N in cfg.mesh:
            per_field = sum(model.grid(c, N).x[..., 0].size for c in model.chart_ids) * model.dim ** sum(val)
            chunk = max(1, RETRACTION_BATCH_BUDGET // per_field)
            worst: dict[tuple, float] = {}
            # the error is a max over fields, so chunking changes nothing
            for start in range(0, cfg.samples, chunk):
                ids = range(start, min(start + chunk, cfg.samples))
                U = stack_fields([TrigField(model, val, _rng(cfg, 1, vi, i)).sample(N) for i in ids])
                for lam in cfg.lambdas:
                    for p in cfg.ps:
                        e = retraction_error(system, U, p, lam)
                        worst[lam, p] = max(worst.get((lam, p), 0.0), e)
                del U
            for (lam, p), e in worst.items():
                errs.setdefault((val, lam, p), []).append(e)
                rows.append({"valence": _vstr(val), "lambda": lam, "p": p, "N": N, "h": 1.0 / N, "max_rel_error": e})
    hs = [1.0 / N for N in cfg.mesh]
    for (val, lam, p), e in errs.items():
        tag = f"[{_vstr(val)};lambda={lam:g};p={p:g}]"
        checks.append(_le("finest_error" + tag, e[-1], 1e-6))
        if max(e) <= 1e-12:
            # node-exact transfer: the error is roundoff and has no rate
            continue
        if len(e) > 1:
            checks.append(_ge("order" + tag, convergence_order(hs, e), 1.8))
    return SuiteResult("retraction", rows, checks)


def _norm_probes(model: ManifoldModel, cfg: ExperimentConfig):
    if model.metadata.get("family") == "wedge":
        return [(j, f, sup) for j, f, sup in shell_probes(model, seed=cfg.seed)]
    env = _default_envelope(model)
    return [(0, TrigField(model, (0, 0), _rng(cfg, 2, i), envelope=env), None) for i in range(cfg.samples)]


def suite_norms(model: ManifoldModel, cfg: ExperimentConfig) -> SuiteResult:
    """Ratio intervals of the chart-local over the intrinsic Sobolev norm per ``k`` and mesh."""
    system = build_localization_system(model)
    p, lam = cfg.ps[0], 0.5
    probes = _norm_probes(model, cfg)
    rows, checks = [], []
    for k in cfg.ks:
        ends = []
        for N in cfg.mesh:
            ratios = []
            for j, f, sup in probes:
                u = f.sample(N, support=sup)
                ratios.append(chart_local_norm(u, k, p, lam, system).value / weighted_sobolev_norm(u, k, p, lam, system).value)
            ends.append((min(ratios), max(ratios)))
            rows.append({"k": k, "p": p, "lambda": lam, "N": N, "h": 1.0 / N, "ratio_min": ends[-1][0], "ratio_max": ends[-1][1], "probes": len(ratios)})
        drift = max(max(_drift(ends[0][0], e[0]), _drift(ends[0][1], e[1])) for e in ends)
        checks.append(_le(f"interval_drift[k={k}]", drift, 0.05))
    if _is_plane_cone(model):
        rows += _conical_rows(model, system, cfg, p, lam, checks)
    reps = _pmap(lambda N: nabla_ratio_harness(system, 1, p, lam, N, cfg.harness_samples, seed=cfg.seed), cfg.mesh[-2:])
    checks.append(_harness_drift("nabla", reps, rows, {"k": "nabla", "p": p, "lambda": lam}))
    return SuiteResult("norms", rows, checks)


# annuli for the ambient comparison on a plane cone, shallow to deep
CONICAL_ANNULI = ((0.1, 0.8), (0.03, 0.25), (0.015, 0.12))


def _is_plane_cone(model: ManifoldModel) -> bool:
    spec = model.metadata.get("spec") or {}
    return spec.get("base") == "sphere" and spec.get("alpha") == 1.0 and spec.get("ell") == 0


def _conical_rows(model, system, cfg, p, lam, checks) -> list[dict]:
    """Intrinsic norm against the ambient ``r``-weighted norm on annuli of a plane cone."""
    rows = []
    for ai, (r0, r1) in enumerate(CONICAL_ANNULI):
        f = conical_probe(r0, r1, seed=cfg.seed * 100 + ai)
        pad = 0.0137 * r1  # keeps the origin off the ambient lattice
        box = [(-r1 - pad, r1 + pad)] * 2
        for k in cfg.ks:
            amb = ambient_conical_norm(f, k, p, lam, box, r1 / 600)
            ratios = []
            for N in cfg.mesh:
                u = sample_field(model, N, (0, 0), lambda q: f(model.param.value(q)))
                ratios.append(weighted_sobolev_norm(u, k, p, lam, system).value / amb)
                rows.append({"k": f"conical-{k}", "p": p, "lambda": lam, "N": N, "h": 1.0 / N, "ratio_min": ratios[-1],
                             "ratio_max": ratios[-1], "probes": 1, "annulus": f"{r0:g}-{r1:g}"})
            checks.append(_le(f"conical_drift[k={k};r={r0:g}-{r1:g}]", max(ratios) / min(ratios) - 1.0, 0.1))
    return rows


def _harness_drift(name: str, reports, rows: list, extra: dict) -> Check:
    for r in reports:
        rows.append(dict(extra, N=round(1 / r.h), h=r.h, max_ratio=r.max, samples=len(r.ratios), finite=r.finite))
    fin = all(r.finite for r in reports)
    d = _drift(reports[-2].max, reports[-1].max) if len(reports) > 1 else 0.0
    return _le(f"sup_drift[{name}]", d if fin else math.inf, 0.15)


def suite_multipliers(model: ManifoldModel, cfg: ExperimentConfig) -> SuiteResult:
    system = build_localization_system(model)
    p, lam1, lam2 = cfg.ps[0], 0.0, cfg.lambdas[0]
    rows, checks = [], []
    cases = [(pr, False) for pr in ("tensor", "contraction", "duality", "inner")] + [("scalar", True)]
    for ci, (pairing, algebra) in enumerate(cases):
        reps = _pmap(
            lambda N: multiplier_ratio_harness(
                system, pairing, cfg.harness_samples, (1, lam1), (1, p, lam2), N, algebra=algebra, seed=cfg.seed * 1000 + ci
            ),
            cfg.mesh[-2:],
        )
        tag = pairing + ("-algebra" if algebra else "")
        checks.append(_harness_drift(tag, reps, rows, {"pairing": tag, "p": p, "lambda1": lam1, "lambda2": lam2, "lambda0": reps[-1].params["lambda0"]}))
    return SuiteResult("multipliers", rows, checks)


def _embedding_cases(m: int):
    out = []
    p1 = 1.5
    if m / p1 > 1:
        out.append(((1, p1), (0, m / (m / p1 - 1))))
    if 2 - m / 2 > 0:
        out.append(((2, 2.0), (0, math.inf)))
    return out


def suite_embeddings(model: ManifoldModel, cfg: ExperimentConfig) -> SuiteResult:
    system = build_localization_system(model)
    lam = cfg.lambdas[0]
    rows, checks = [], []
    for ci, ((s1, p1), (s0, p0)) in enumerate(_embedding_cases(model.dim)):
        reps = _pmap(
            lambda N: embedding_ratio_harness(system, (s1, p1, lam), (s0, p0), N, cfg.harness_samples, seed=cfg.seed * 1000 + ci),
            cfg.mesh[-2:],
        )
        tag = f"W{s1},{p1:g}->W{s0},{p0:g}"
        checks.append(_harness_drift(tag, reps, rows, {"embedding": tag, "lambda": lam, "target_lambda": reps[-1].params["target_lambda"]}))
    return SuiteResult("embeddings", rows, checks)


def _max_abs(per) -> float:
    return max((float(np.max(np.abs(v))) for v in per.values()), default=0.0)


def suite_traces(model: ManifoldModel, cfg: ExperimentConfig) -> SuiteResult:
    if not model.boundary_charts:
        return SuiteResult("traces", [], [], skipped="model has no boundary")
    build_boundary_atlas(model)
    system = build_localization_system(model)
    rows, checks = [], []
    # restriction is exact
    u = TrigField(model, (0, 0), _rng(cfg, 3, 0)).sample(cfg.mesh[0])
    t0 = trace(u, 0)
    err0 = max(float(np.max(np.abs(t0.per_chart[c] - u.per_chart[c][0]))) for c in t0.per_chart)
    rows.append({"quantity": "gamma0_restriction_error", "N": cfg.mesh[0], "value": err0})
    checks.append(_le("gamma0_exact", err0, 0.0))
    # the two trace paths
    for k, val in ((1, (1, 0)), (2, (0, 0))):
        diffs = []
        for N in cfg.mesh:
            u = TrigField(model, val, _rng(cfg, 3, k)).sample(N)
            a, b = trace(u, k, "nabla"), trace(u, k, "coordinate")
            d = _max_abs({c: a.per_chart[c] - b.per_chart[c] for c in a.per_chart}) / _max_abs(b.per_chart)
            diffs.append(d)
            rows.append({"quantity": f"gamma{k}_path_difference", "valence": _vstr(val), "N": N, "value": d})
        if len(diffs) > 1 and max(diffs) > 1e-12:
            checks.append(_ge(f"gamma{k}_path_order", convergence_order([1.0 / N for N in cfg.mesh], diffs), 1.8))
    p, lam = cfg.ps[0], cfg.lambdas[0]
    for k in (0, 1):
        reps = _pmap(lambda N: trace_ratio_harness(system, k, p, lam, N, cfg.harness_samples, seed=cfg.seed * 1000 + k), cfg.mesh[-2:])
        checks.append(_harness_drift(f"trace_k{k}", reps, rows, {"quantity": f"trace_ratio_k{k}", "p": p, "lambda": lam, "boundary_weight": reps[-1].params["boundary_weight"]}))
    return SuiteResult("traces", rows, checks)


def _chartwise_ratio(num, den, ref_out, ref_in) -> float:
    """Max over charts of ``(|num| / |den|) / (|ref_out| / |ref_in|)`` with sup norms.

    ``ref_out`` is the operator applied to ``ref_in``; dividing by its gain
    removes the chart scale (powers of rho) and the ``1/h`` of the stencil.
    """
    out = 0.0
    for c, d in den.items():
        sd, so, si = (float(np.max(np.abs(a[c]))) for a in (den, ref_out, ref_in))
        if sd > 0 and so > 0:
            out = max(out, float(np.max(np.abs(num[c]))) / sd * si / so)
    return out


def _rel_max(a, b) -> float:
    scale = max(_max_abs(b), 1e-300)
    return _max_abs({c: a[c] - b[c] for c in b}) / scale


def suite_forms(model: ManifoldModel, cfg: ExperimentConfig) -> SuiteResult:
    m = model.dim
    N0 = cfg.mesh[0]
    rows, checks = [], []
    for k in range(m + 1):
        a = random_form(model, N0, k, _rng(cfg, 4, k))
        ss = hodge_star(hodge_star(a))
        sign = (-1) ** (k * (m - k))
        e_ss = _rel_max(ss.per_chart, {c: sign * v for c, v in a.per_chart.items()})
        sa = hodge_star(a)
        e_iso = _rel_max(form_inner(sa, sa), form_inner(a, a))
        rows.append({"quantity": "star_star_sign", "degree": k, "N": N0, "value": e_ss})
        rows.append({"quantity": "star_isometry", "degree": k, "N": N0, "value": e_iso})
        checks.append(_le(f"star_star[k={k}]", e_ss, 1e-12))
        checks.append(_le(f"star_isometry[k={k}]", e_iso, 1e-12))
    # d d = 0 and delta delta = 0.  The discrete operators commute, so what is
    # left is roundoff; it is measured against one application of the same
    # operator to a generic form of equal size.
    for N in cfg.mesh:
        w = random_form(model, N, 1, _rng(cfg, 4, 12))
        f = random_form(model, N, 0, _rng(cfg, 4, 10))
        df = exterior_derivative(f)
        dd = _chartwise_ratio(exterior_derivative(df).per_chart, df.per_chart, exterior_derivative(w).per_chart, w.per_chart)
        db = codifferential(random_form(model, N, m, _rng(cfg, 4, 11)))
        ee = _chartwise_ratio(codifferential(db).per_chart, db.per_chart, codifferential(w).per_chart, w.per_chart)
        rows.append({"quantity": "dd_relative", "N": N, "value": dd})
        rows.append({"quantity": "deltadelta_relative", "N": N, "value": ee})
        checks.append(_le(f"dd[N={N}]", dd, 1e-9))
        checks.append(_le(f"deltadelta[N={N}]", ee, 1e-9))
    if not model.boundary_charts:
        system = build_localization_system(model)
        env = _compact_envelope(model)
        res = []
        for N in cfg.mesh:
            a = random_form(model, N, 0, _rng(cfg, 4, 20), envelope=env)
            v = random_form(model, N, 1, _rng(cfg, 4, 21), envelope=env)
            scale = abs(QuadratureRule(system, N).integrate(form_inner(exterior_derivative(a), v))[0])
            res.append(green_residual(a, v, system) / scale)
            rows.append({"quantity": "green_relative_residual", "N": N, "value": res[-1]})
        if len(res) > 1 and max(res) > 1e-10:
            # local rate between the two finest meshes; coarse meshes are pre-asymptotic
            checks.append(_ge("green_order", convergence_order([1.0 / N for N in cfg.mesh[-2:]], res[-2:]), 1.8))
    system = build_localization_system(model)
    for op in ("d", "delta"):
        reps = _pmap(lambda N: form_ratio_harness(system, op, 1, 0, cfg.ps[0], cfg.lambdas[0], N, cfg.harness_samples, seed=cfg.seed), cfg.mesh[-2:])
        checks.append(_harness_drift(f"forms_{op}", reps, rows, {"quantity": f"form_ratio_{op}", "p": cfg.ps[0], "lambda": cfg.lambdas[0]}))
    return SuiteResult("forms", rows, checks)


def _compact_envelope(model: ManifoldModel):
    env = _default_envelope(model)
    if env is not None:
        return env
    lo = np.array([c[0] for c in model.core])
    hi = np.array([c[1] for c in model.core])
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    return lambda q: plateau(np.max(np.abs(np.asarray(q) - mid) / half, axis=-1), 0.3, 0.8)


SUITES: dict[str, Callable[[ManifoldModel, ExperimentConfig], SuiteResult]] = {
    "datum": suite_datum,
    "estimates": suite_estimates,
    "retraction": suite_retraction,
    "norms": suite_norms,
    "multipliers": suite_multipliers,
    "traces": suite_traces,
    "embeddings": suite_embeddings,
    "forms": suite_forms,
}


def run_suite(name: str, model: ManifoldModel, cfg: ExperimentConfig) -> SuiteResult:
    try:
        fn = SUITES[name]
    except KeyError:
        raise GeometryError(f"unknown suite {name!r}") from None
    return fn(model, cfg)
