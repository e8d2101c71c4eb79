import math

import numpy as np
import pytest

from conftest import model

from cuspidal.geometry_core import (
    Chart,
    FlatParametrization,
    GeometryError,
    PolarParametrization,
    TensorFieldSample,
    ValenceError,
    WedgeParametrization,
    change_frame,
    evaluate_metric,
    riesz_flat,
    riesz_sharp,
    sample_field,
    stack_fields,
    tensor_inner_product,
    transfer_field,
)
from cuspidal.fields import TrigField

PARAMS = [
    PolarParametrization(),
    PolarParametrization(ell=1),
    WedgeParametrization(2.0, "interval"),
    WedgeParametrization(2.5, "interval", ell=1),
    WedgeParametrization(1.0, "sphere"),
    WedgeParametrization(3.0, "point", base_point=[0.2, -0.4]),
]


def _points(param, rng, n=7):
    q = rng.uniform(0.2, 1.5, size=(n, param.dim))
    return q


@pytest.mark.parametrize("param", PARAMS, ids=lambda p: type(p).__name__ + str(p.dim))
def test_jacobian_and_hessian_by_central_differences(param, rng):
    q = _points(param, rng)
    eps = 1e-6
    J = param.jacobian(q)
    H = param.hessian(q)
    for i in range(param.dim):
        e = np.zeros(param.dim)
        e[i] = eps
        dv = (param.value(q + e) - param.value(q - e)) / (2 * eps)
        np.testing.assert_allclose(J[..., i], dv, atol=1e-8)
        dJ = (param.jacobian(q + e) - param.jacobian(q - e)) / (2 * eps)
        np.testing.assert_allclose(H[..., :, :, i], dJ, atol=1e-7)


def test_polar_metric_is_diag_one_r_squared():
    chart = Chart("p", "interior", 1.0, PolarParametrization(), np.array([2.0, 0.0]), np.eye(2))
    x = np.array([[0.3, -0.2], [-0.9, 0.7]])
    met = evaluate_metric(chart, x)
    r = 2.0 + x[:, 0]
    np.testing.assert_allclose(met.g[:, 0, 0], 1.0)
    np.testing.assert_allclose(met.g[:, 1, 1], r**2)
    np.testing.assert_allclose(met.g[:, 0, 1], 0.0, atol=1e-15)
    np.testing.assert_allclose(met.sqrt_det, r)


def test_wedge_rejects_small_alpha():
    with pytest.raises(GeometryError, match="alpha must be ≥ 1"):
        WedgeParametrization(0.5, "interval")


def test_wedge_radial_profile_inverse():
    p = WedgeParametrization(2.5, "interval")
    u = np.linspace(0, 50, 11)
    np.testing.assert_allclose(p.u_of_r(p.r_of_u(u)), u, atol=1e-10)
    # dr/du = -r^alpha
    du = 1e-6
    dr = (p.r_of_u(u + du) - p.r_of_u(u - du)) / (2 * du)
    np.testing.assert_allclose(dr, -p.r_of_u(u) ** 2.5, rtol=1e-6)


def test_chart_natural_round_trip(rng):
    m = model("cusp2", J_max=4)
    for cid in m.chart_ids[::10]:
        c = m.chart(cid)
        x = rng.uniform(-1, 1, size=(5, 2))
        np.testing.assert_allclose(c.from_natural(c.to_natural(x)), x, atol=1e-12)


def test_transitions_invert(rng):
    m = model("cone")
    cid = m.chart_ids[5]
    for nb in m.neighbors(cid):
        fwd, back = m.transition(cid, nb), m.transition(nb, cid)
        x = rng.uniform(-0.5, 0.5, size=(4, 2))
        np.testing.assert_allclose(back.forward(fwd.forward(x)), x, atol=1e-12)
        np.testing.assert_allclose(fwd.jacobian() @ back.jacobian(), np.eye(2), atol=1e-12)


def test_translation_multiplicity_and_counts():
    m = model("translation")
    assert len(m.charts) == 9
    assert m.measure_multiplicity() == 4
    h = model("halfspace")
    assert set(h.boundary_charts) == {c.id for c in h.charts if c.index[0] == 0}


def test_field_shape_is_checked():
    m = model("translation")
    cid = m.chart_ids[0]
    with pytest.raises(ValenceError):
        TensorFieldSample(m, (1, 0), 4, {cid: np.zeros((9, 9))})


def test_change_frame_round_trip(rng):
    A = rng.normal(size=(2, 2)) + 2 * np.eye(2)
    comp = rng.normal(size=(3, 3, 2, 2))
    there = change_frame(comp, (1, 1), A, 2)
    back = change_frame(there, (1, 1), np.linalg.inv(A), 2)
    np.testing.assert_allclose(back, comp, atol=1e-12)


def test_vector_sample_is_frame_independent():
    # the natural-frame vector d/dq0 has the same length in every chart
    m = model("cusp2", J_max=3)
    N = 4
    X = sample_field(m, N, (1, 0), lambda q: np.stack([np.ones(q.shape[:-1]), np.zeros(q.shape[:-1])], -1))
    n2 = tensor_inner_product(X, X)
    for cid in m.chart_ids:
        d0 = m.param.jacobian(m.grid(cid, N).natural)[..., :, 0]
        ref = np.sum(d0**2, axis=-1)  # natural g_00
        np.testing.assert_allclose(n2.per_chart[cid], ref, rtol=1e-10)


def test_riesz_maps_invert(rng):
    m = model("cone")
    X = TrigField(m, (1, 0), rng).sample(6)
    back = riesz_sharp(riesz_flat(X))
    for cid in m.chart_ids:
        np.testing.assert_allclose(back.per_chart[cid], X.per_chart[cid], atol=1e-9 * np.abs(X.per_chart[cid]).max())


@pytest.mark.parametrize("name,valence", [("cusp2", (0, 0)), ("cusp2", (1, 1)), ("cone", (0, 2)), ("wedge", (1, 0))])
def test_block_plan_agrees_with_interpolation(name, valence):
    m = model(name, J_max=3) if name == "cusp2" else model(name)
    N = 6
    u = TrigField(m, valence, np.random.default_rng(3)).sample(N)
    plans = m.__dict__.setdefault("_block_plans", {})
    checked = 0
    for cid in m.chart_ids[:12]:
        for nb in m.neighbors(cid):
            fast = transfer_field(u, nb, cid)
            saved = plans.get((nb, cid, N), "missing")
            plans[(nb, cid, N)] = None  # forces the interpolation path
            slow = transfer_field(u, nb, cid)
            if saved == "missing":
                del plans[(nb, cid, N)]
            else:
                plans[(nb, cid, N)] = saved
            np.testing.assert_array_equal(fast.mask, slow.mask)
            scale = max(np.abs(slow.values).max(), 1.0)
            # the wedge has an edge direction that is off the lattice between shells
            tol = 0.2 if name == "wedge" else 1e-12
            assert np.abs(fast.values - slow.values).max() <= tol * scale
            checked += 1
    assert checked > 0


def test_batched_transfer_matches_single(rng):
    m = model("misaligned")
    N = 8
    fs = [TrigField(m, (1, 0), np.random.default_rng(i)).sample(N) for i in range(3)]
    U = stack_fields(fs)
    assert U.batch == (3,)
    a, b = m.chart_ids[0], m.neighbors(m.chart_ids[0])[0]
    tb = transfer_field(U, b, a).values
    for i, f in enumerate(fs):
        np.testing.assert_allclose(tb[..., i], transfer_field(f, b, a).values, atol=1e-14)
    with pytest.raises(ValenceError):
        stack_fields([U, U])


def test_flat_parametrization_rejects_dim_zero():
    with pytest.raises(GeometryError):
        FlatParametrization(0)


def test_polar_period():
    assert PolarParametrization().periods[1] == pytest.approx(2 * math.pi)
