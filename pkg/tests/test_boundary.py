import numpy as np
import pytest

from conftest import model, system

from cuspidal.boundary import (
    NoBoundaryError,
    boundary_lp_norm,
    build_boundary_atlas,
    inward_normal,
    trace,
    trace_ratio_harness,
)
from cuspidal.fields import TrigField
from cuspidal.geometry_core import GeometryError, sample_field
from cuspidal.singular_structure import verify_singularity_datum
from cuspidal.spaces import convergence_order


def test_gamma0_is_restriction():
    m = model("halfspace")
    u = TrigField(m, (0, 0), np.random.default_rng(0)).sample(8)
    t = trace(u, 0)
    assert t.charts() == sorted(m.boundary_charts)
    for c in t.charts():
        np.testing.assert_array_equal(t.per_chart[c], u.per_chart[c][0])


def test_halfspace_quadratic_normal_derivatives():
    m = model("halfspace")
    u = sample_field(m, 8, (0, 0), lambda q: q[..., 0] ** 2 + np.sin(q[..., 1]))
    g1, g2 = trace(u, 1), trace(u, 2)
    for c in g1.charts():
        assert np.max(np.abs(g1.per_chart[c])) < 1e-12
        np.testing.assert_allclose(g2.per_chart[c], 2.0, atol=1e-10)


def test_normal_is_unit():
    m = model("sector")
    cid = m.boundary_charts[0]
    n = inward_normal(m, cid, 8)
    g = m.grid(cid, 8).metric.g[0]
    np.testing.assert_allclose(np.einsum("...i,...ij,...j->...", n, g, n), 1.0, atol=1e-13)


@pytest.mark.parametrize("k,valence", [(1, (1, 0)), (2, (0, 0)), (2, (0, 1))])
def test_trace_paths_agree_at_second_order(k, valence):
    m = model("sector")
    diffs = []
    for N in (16, 32, 64):
        u = TrigField(m, valence, np.random.default_rng(7)).sample(N)
        a, b = trace(u, k, "nabla"), trace(u, k, "coordinate")
        top = max(np.max(np.abs(v)) for v in b.per_chart.values())
        diffs.append(max(np.max(np.abs(a.per_chart[c] - b.per_chart[c])) for c in a.per_chart) / top)
    assert diffs[-1] < 1e-3
    assert convergence_order([1 / 16, 1 / 32, 1 / 64], diffs) > 1.8


def test_face_atlas_is_a_valid_datum():
    atlas = build_boundary_atlas(model("sector"))
    for face in atlas.models():
        assert face.dim == 1
        assert verify_singularity_datum(face, N=8).passed


def test_face_rho_matches_parent():
    m = model("sector")
    atlas = build_boundary_atlas(m)
    for cid in m.boundary_charts[:5]:
        face = atlas.face_model(cid)
        fg = face.grid(atlas.face_chart_id(cid), 8)
        pg = m.grid(cid, 8)
        np.testing.assert_allclose(fg.rho, pg.rho[0], rtol=1e-12)


def test_no_boundary_raises():
    with pytest.raises(NoBoundaryError):
        build_boundary_atlas(model("translation"))


def test_trace_order_capped():
    u = sample_field(model("halfspace"), 4, (0, 0), lambda q: q[..., 0])
    with pytest.raises(GeometryError):
        trace(u, 3)
    with pytest.raises(GeometryError):
        trace(u, 1, path="spectral")


def test_boundary_norm_of_constant_is_face_length():
    # on the half plane atlas the face is the segment of the core at q0 = 0
    m = model("halfspace")
    (_, _), (c, d) = m.core
    u = sample_field(m, 8, (0, 0), lambda q: np.ones(q.shape[:-1]))
    assert boundary_lp_norm(trace(u, 0), 2.0, 0.0) ** 2 == pytest.approx(d - c, rel=1e-12)


def test_trace_harness_stable_under_refinement():
    sysm = system("sector")
    for k in (0, 1):
        a, b = (trace_ratio_harness(sysm, k, 2.0, 0.0, N, samples=8, seed=k) for N in (16, 32))
        assert a.finite and b.finite
        assert abs(b.max / a.max - 1) < 0.15
