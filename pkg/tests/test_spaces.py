import math

import numpy as np
import pytest
from scipy import integrate

from conftest import model, system

from cuspidal.fields import TrigField, conical_probe
from cuspidal.geometry_core import GeometryError, ValenceError, sample_field
from cuspidal.spaces import (
    ambient_conical_norm,
    chart_local_holder_norm,
    chart_local_norm,
    convergence_order,
    embedding_ratio_harness,
    multiplier_ratio_harness,
    multiply,
    nabla_ratio_harness,
    weighted_holder_norm,
    weighted_sobolev_norm,
)


def gauss(q):
    return np.exp(-(q[..., 0] ** 2 + 0.7 * q[..., 1] ** 2)) * np.cos(q[..., 0] - 0.4 * q[..., 1])


def test_sobolev_norm_flat_k0_k1_against_scipy():
    # on the flat translation atlas rho = 1, so the norm is the plain W^k_2 norm over the core
    sysm = system("translation")
    (a, b), (c, d) = sysm.model.core
    f = lambda x, y: gauss(np.array([x, y]))
    fx = lambda x, y: (f(x + 1e-6, y) - f(x - 1e-6, y)) / 2e-6
    fy = lambda x, y: (f(x, y + 1e-6) - f(x, y - 1e-6)) / 2e-6
    l2 = integrate.dblquad(lambda y, x: f(x, y) ** 2, a, b, c, d, epsabs=1e-12)[0]
    h1 = l2 + integrate.dblquad(lambda y, x: fx(x, y) ** 2 + fy(x, y) ** 2, a, b, c, d, epsabs=1e-10)[0]
    errs0, errs1 = [], []
    for N in (16, 32):
        u = sample_field(sysm.model, N, (0, 0), gauss)
        errs0.append(abs(weighted_sobolev_norm(u, 0, 2.0, 0.7, sysm).value ** 2 - l2) / l2)
        errs1.append(abs(weighted_sobolev_norm(u, 1, 2.0, 0.7, sysm).value ** 2 - h1) / h1)
    assert errs0[-1] < 1e-3 and errs1[-1] < 1e-3
    assert errs1[1] < errs1[0] / 3


def test_norm_ledger_sums_to_value():
    sysm = system("cone")
    u = TrigField(sysm.model, (1, 0), np.random.default_rng(0)).sample(8)
    n = weighted_sobolev_norm(u, 1, 3.0, -1.0, sysm)
    assert sum(n.per_chart.values()) ** (1 / 3) == pytest.approx(n.value)


def test_weight_shift_scales_rho():
    # on the cone rho is known in closed form, so lambda -> lambda + 1 multiplies the density by rho^p
    sysm = system("cone")
    m = sysm.model
    u = sample_field(m, 8, (0, 0), lambda q: np.ones(q.shape[:-1]))
    a = weighted_sobolev_norm(u, 0, 2.0, 1.0, sysm).value
    v = sample_field(m, 8, (0, 0), m.rho_natural)
    b = weighted_sobolev_norm(v, 0, 2.0, 0.0, sysm).value
    assert a == pytest.approx(b, rel=1e-12)


def test_holder_norm_is_sup_on_flat_atlas():
    sysm = system("translation")
    u = sample_field(sysm.model, 8, (0, 0), gauss)
    top = max(np.abs(v).max() for v in u.per_chart.values())
    assert weighted_holder_norm(u, 0, 0.0, sysm).value == pytest.approx(top)
    assert weighted_sobolev_norm(u, 0, math.inf, 0.0, sysm).value == pytest.approx(top)


def test_p_below_one_rejected():
    sysm = system("translation")
    u = sample_field(sysm.model, 4, (0, 0), gauss)
    with pytest.raises(GeometryError):
        weighted_sobolev_norm(u, 0, 1.0, 0.0, sysm)


def test_chart_local_and_intrinsic_norms_comparable():
    sysm = system("cusp2", J_max=4)
    u = TrigField(sysm.model, (0, 0), np.random.default_rng(1)).sample(16)
    for k in (0, 1):
        r = chart_local_norm(u, k, 2.0, 0.5, sysm).value / weighted_sobolev_norm(u, k, 2.0, 0.5, sysm).value
        assert 0.1 < r < 10


def test_chart_local_holder_fraction_adds_seminorm():
    sysm = system("translation")
    u = sample_field(sysm.model, 8, (0, 0), gauss)
    a = chart_local_holder_norm(u, 1.0, 0.0, sysm).value
    b = chart_local_holder_norm(u, 1.5, 0.0, sysm).value
    assert b > a


def test_multiply_pairings():
    m = model("cone")
    rng = np.random.default_rng(3)
    X = TrigField(m, (1, 0), rng).sample(4)
    w = TrigField(m, (0, 1), rng).sample(4)
    f = TrigField(m, (0, 0), rng).sample(4)
    cid = m.chart_ids[2]
    t = multiply("tensor", X, w)
    assert t.valence == (1, 1)
    np.testing.assert_allclose(t.per_chart[cid], np.einsum("...i,...j->...ij", X.per_chart[cid], w.per_chart[cid]))
    c = multiply("contraction", X, w)
    np.testing.assert_allclose(c.per_chart[cid], np.einsum("...i,...i->...", X.per_chart[cid], w.per_chart[cid]))
    d = multiply("duality", w, X)
    np.testing.assert_allclose(d.per_chart[cid], c.per_chart[cid])
    g = m.grid(cid, 4).metric.g
    i = multiply("inner", X, X)
    np.testing.assert_allclose(i.per_chart[cid], np.einsum("...i,...ij,...j->...", X.per_chart[cid], g, X.per_chart[cid]))
    s = multiply("scalar", f, w)
    np.testing.assert_allclose(s.per_chart[cid], f.per_chart[cid][..., None] * w.per_chart[cid])
    with pytest.raises(ValenceError):
        multiply("duality", X, w)
    with pytest.raises(GeometryError):
        multiply("wedge", X, w)


def test_harness_reports_are_finite():
    sysm = system("translation")
    rep = multiplier_ratio_harness(sysm, "tensor", 3, (1, 0.0), (1, 2.0, 0.0), 8)
    assert rep.finite and len(rep.ratios) == 3
    assert rep.params["lambda0"] == 0.0
    alg = multiplier_ratio_harness(sysm, "scalar", 2, (1, 0.5), (1, 2.0, 0.5), 8, algebra=True)
    assert alg.params["lambda0"] == pytest.approx(0.5 + 0.5 + 1.0)
    assert nabla_ratio_harness(sysm, 0, 2.0, 0.0, 8, samples=2).finite


def test_embedding_exponent_rules():
    sysm = system("translation")
    rep = embedding_ratio_harness(sysm, (1, 1.5, 0.0), (0, 6.0), 8, samples=2)
    assert rep.params["target_lambda"] == 1.0
    rep = embedding_ratio_harness(sysm, (2, 2.0, 0.0), (0, math.inf), 8, samples=2)
    assert rep.params["target_lambda"] == 1.0
    with pytest.raises(GeometryError, match="inadmissible"):
        embedding_ratio_harness(sysm, (1, 2.0, 0.0), (0, 3.0), 8, samples=1)
    with pytest.raises(GeometryError, match="inadmissible"):
        embedding_ratio_harness(sysm, (1, 2.0, 0.0), (0, math.inf), 8, samples=1)


def test_ambient_conical_norm_k0_against_scipy():
    f = conical_probe(0.1, 0.5, seed=2)
    ref = integrate.dblquad(lambda y, x: (math.hypot(x, y) ** 0.5 * f(np.array([x, y]))) ** 2, -0.5, 0.5, -0.5, 0.5,
                            epsabs=1e-12)[0] ** 0.5
    got = ambient_conical_norm(f, 0, 2.0, 0.5, [(-0.5071, 0.5)] * 2, 1 / 800)
    assert got == pytest.approx(ref, rel=1e-4)


def test_ambient_norm_rejects_tip():
    with pytest.raises(GeometryError):
        ambient_conical_norm(lambda X: X[..., 0], 0, 2.0, 0.0, [(-1, 1), (-1, 1)], 0.5)


def test_convergence_order():
    hs = [1 / 16, 1 / 32, 1 / 64]
    assert convergence_order(hs, [h**2 for h in hs]) == pytest.approx(2.0)
    assert convergence_order(hs, [0.0, 1e-3, 1e-4]) == math.inf
