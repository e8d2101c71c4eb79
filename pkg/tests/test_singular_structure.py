import numpy as np
import pytest

from conftest import model

from cuspidal.geometry_core import GeometryError
from cuspidal.singular_structure import (
    ModelWedgeSpec,
    build_model_wedge,
    build_singularity_function,
    build_translation_atlas,
    shift_atlas,
    verify_equivalence,
    verify_singularity_datum,
    with_rho,
)


def test_translation_datum_constants_are_one():
    rep = verify_singularity_datum(model("translation"))
    assert rep.ok
    assert rep.multiplicity == 4
    assert rep.c_metric_equiv == 1.0
    assert rep.c_metric == [1.0, 1.0, 1.0]
    assert rep.c_rho == [1.0, 1.0, 1.0]
    assert rep.c_patch == 1.0


def test_halfspace_boundary_rows():
    m = build_translation_atlas(2, Z=1, half_space=True)
    assert len(m.charts) == 6
    flagged = {c.id for c in m.charts if c.kind == "boundary"}
    assert flagged == {c.id for c in m.charts if c.index[0] == 0}
    assert len(flagged) == 3
    assert verify_singularity_datum(m).ok


def test_misaligned_translation_passes():
    assert verify_singularity_datum(model("misaligned")).ok


@pytest.mark.parametrize("name", ["cusp2", "cusp2.5", "cone", "sector", "wedge"])
def test_wedges_pass_datum(name):
    rep = verify_singularity_datum(model(name))
    assert rep.ok, rep.passed
    assert sorted(rep.per_shell) == list(range(model(name).metadata["spec"]["J_max"] + 1))


@pytest.mark.parametrize("name", ["cusp2", "cone"])
def test_datum_constants_independent_of_depth(name):
    a = verify_singularity_datum(model(name, J_max=4))
    b = verify_singularity_datum(model(name, J_max=6))
    pairs = [(a.c_metric_equiv, b.c_metric_equiv), (a.c_patch, b.c_patch)] + list(zip(a.c_metric, b.c_metric)) + list(zip(a.c_rho, b.c_rho))
    for x, y in pairs:
        assert abs(y / x - 1) < 0.1


def test_broken_atlas_fails_metric_equivalence_with_growing_constant():
    rep = verify_singularity_datum(model("broken"))
    assert not rep.passed["iii"]
    per = [d["c_metric_equiv"] for _, d in sorted(rep.per_shell.items())]
    assert all(b >= a for a, b in zip(per, per[1:]))
    assert per[-1] > 100 * per[0]


def test_cusp_shell_count_is_J_plus_one():
    for J in (2, 4, 6):
        assert len(model("cusp2", J_max=J).shells()) == J + 1


def test_singularity_function_profile():
    m = model("cusp2")
    rho = build_singularity_function(m, {"tip": 2.0})
    u = np.array([[10.0, 0.0], [0.0, 0.0], [-2.0, 0.1]])
    r = m.param.radius(u)
    out = rho(u)
    assert out[0] == pytest.approx(r[0] ** 2)  # r <= r_in
    assert out[2] == pytest.approx(1.0)  # r >= r_out
    with pytest.raises(GeometryError):
        build_singularity_function(m, {})


def test_rho_comparable_to_radius_on_cone():
    m = model("cone")
    for cid in m.chart_ids:
        q = m.grid(cid, 4).natural
        ratio = m.rho_natural(q) / m.param.radius(q)
        # rho = r below the blend, frozen at 1 beyond it
        assert 0.4 < ratio.min() and ratio.max() < 1.2


def test_shifted_atlas_is_equivalent():
    m = model("cusp2", J_max=4)
    rep = verify_equivalence(m, shift_atlas(m))
    assert rep.passed
    assert rep.c_rho < 2.0


def test_scaled_rho_is_equivalent_but_flagged_by_bound():
    m = model("cusp2", J_max=4)
    other = with_rho(m, lambda q: 3.0 * m.rho_natural(q))
    rep = verify_equivalence(m, other)
    assert rep.rho_ratio_min == pytest.approx(1 / 3) and rep.rho_ratio_max == pytest.approx(1 / 3)
    assert not verify_equivalence(m, other, bound=2.0).passed


@pytest.mark.parametrize(
    "kw,msg",
    [
        ({"alpha": 0.5}, "alpha must be ≥ 1"),
        ({"alpha": 1.0, "base": "interval"}, "alpha = 1"),
        ({"alpha": 2.0, "base": "sphere"}, "alpha > 1"),
        ({"alpha": 2.0, "blend": (1.0, 0.5)}, "blend"),
        ({"alpha": 2.0, "layout": "spiral"}, "layout"),
    ],
)
def test_wedge_spec_validation(kw, msg):
    with pytest.raises(GeometryError, match=msg):
        build_model_wedge(ModelWedgeSpec(**kw))


def test_translation_spacing_limits():
    with pytest.raises(GeometryError):
        build_translation_atlas(2, spacing=0.2)
