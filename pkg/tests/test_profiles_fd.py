import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from cuspidal import fd
from cuspidal.profiles import cube_plateau, plateau, plateau_jet, smooth_step, smooth_step_jet


def test_smooth_step_limits():
    s = np.array([-1.0, 0.0, 1.0, 2.0, 0.5])
    assert smooth_step(s).tolist() == [0.0, 0.0, 1.0, 1.0, 0.5]


@given(st.floats(-2, 3))
def test_smooth_step_symmetry(s):
    assert smooth_step(s) + smooth_step(1 - s) == pytest.approx(1.0, abs=1e-15)


def test_plateau_levels():
    t = np.array([0.0, 0.29, -0.3, 1.0, -1.2])
    np.testing.assert_array_equal(plateau(t, 0.3, 1.0), [1, 1, 1, 0, 0])
    assert cube_plateau(np.array([[0.1, 0.2], [0.1, 1.5]]), 0.3, 1.0).tolist() == [1.0, 0.0]


def test_smooth_step_jet_matches_sympy():
    s = sp.symbols("s", positive=True)
    e = lambda x: sp.exp(-1 / x)
    f = e(s) / (e(s) + e(1 - s))
    pts = np.array([0.13, 0.4, 0.77, 0.95])
    jet = smooth_step_jet(pts, 3)
    for k in range(4):
        fk = sp.lambdify(s, sp.diff(f, s, k), "numpy")
        np.testing.assert_allclose(jet[k], fk(pts), rtol=1e-10, atol=1e-12)


def test_plateau_jet_by_differences():
    t = np.linspace(-1.1, 1.1, 2001)
    h = t[1] - t[0]
    jet = plateau_jet(t, 0.4, 1.0, 2)
    np.testing.assert_allclose(jet[0], plateau(t, 0.4, 1.0), atol=1e-15)
    d1 = np.gradient(jet[0], h)
    assert np.max(np.abs(d1 - jet[1])[2:-2]) < 1e-3


@pytest.mark.parametrize("fn,dfn,d2fn", [(np.sin, np.cos, lambda x: -np.sin(x)), (np.exp, np.exp, np.exp)])
def test_first_and_second_differences_are_second_order(fn, dfn, d2fn):
    errs1, errs2 = [], []
    for N in (16, 32, 64):
        x = np.linspace(-1, 1, 2 * N + 1)
        h = 1.0 / N
        errs1.append(np.max(np.abs(fd.partial(fn(x), 0, h) - dfn(x))))
        errs2.append(np.max(np.abs(fd.second(fn(x), 0, h) - d2fn(x))))
    for e in (errs1, errs2):
        assert np.log2(e[0] / e[1]) > 1.8 and np.log2(e[1] / e[2]) > 1.8


def test_second_needs_four_nodes():
    with pytest.raises(ValueError):
        fd.second(np.zeros(3), 0, 0.1)


def test_multi_partials_keys_and_mixed_derivative():
    N = 32
    ax = np.linspace(-1, 1, 2 * N + 1)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    f = np.sin(X) * np.exp(Y)
    d = fd.multi_partials(f, 2, 1.0 / N, 2)
    assert sorted(d) == [(), (0,), (0, 0), (0, 1), (1,), (1, 1)]
    np.testing.assert_allclose(d[(0, 1)], np.cos(X) * np.exp(Y), atol=5e-3)
    np.testing.assert_allclose(d[(1, 1)], f, atol=5e-3)


def test_refine_linear_keeps_nodes():
    a = np.random.default_rng(0).normal(size=(5, 4))
    r = fd.refine_linear(a, 3, 2)
    assert r.shape == (13, 10)
    np.testing.assert_array_equal(r[::3, ::3], a)


@pytest.mark.parametrize("name", ["translation", "misaligned"])
def test_chart_quadrature_matches_scipy(name):
    from conftest import model, system

    from cuspidal.spaces import QuadratureRule

    m = model(name)
    (a, b), (c, d) = m.core
    f = lambda q0, q1: np.exp(-(q0**2 + 0.5 * q1**2)) * np.cos(q0 - 0.3 * q1)
    ref = integrate.dblquad(lambda y, x: f(x, y), a, b, c, d, epsabs=1e-12)[0]
    errs = []
    for N in (8, 16, 32):
        per = {cid: f(*np.moveaxis(m.grid(cid, N).natural, -1, 0)) for cid in m.chart_ids}
        errs.append(abs(QuadratureRule(system(name), N).integrate(per)[0] - ref))
    assert errs[-1] < 2e-3 * abs(ref)
    assert errs[-1] < errs[0]
