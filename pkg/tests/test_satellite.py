import numpy as np
import pytest

from confsat import satellite
from confsat.metrics import build_box_manifold

from conftest import bump_slab_spec, flat_spec


@pytest.mark.parametrize("s", [0, 1])
def test_flat_slab_satellite_is_exact(flat_slab, s):
    S = satellite.make_satellite(flat_slab, s)
    rep = satellite.verify_identities(S)
    assert rep.worst < 1e-9
    assert abs(S.eigenvalue) < 1e-10


def test_closed_identity_and_sign_law():
    res = []
    for n in (12, 24):
        spec = flat_spec((n, n, n), length=2 * np.pi)
        spec.formula = "anisotropic-warp"
        spec.params = {"amplitude": 0.2}
        S = satellite.make_satellite(build_box_manifold(spec))
        assert S.eigenvalue < 0
        assert satellite.sign_law_violations(S, 1e-8) == 0
        res.append(satellite.verify_identities(S).scalar_residual)
    # R~ = lam u^(-4/(n-2)); residual must at least halve under refinement
    assert res[0] / res[1] > 2.0
    assert res[1] < 2e-3


def test_satellite_metric_is_conformal(bump_slab):
    S = satellite.make_satellite(bump_slab, 1)
    # u^(4/(n-2)) g with n = 3
    assert np.allclose(S.manifold.metric, (S.u ** 4)[..., None, None] * bump_slab.metric)
    assert S.manifold.basepoint == bump_slab.basepoint


def test_expected_fields_signs(bump_slab):
    S = satellite.make_satellite(bump_slab, 0)
    R, h = satellite.expected_fields(S)
    assert np.all(R == 0)
    # h~ = -lam u^(-2) / 4 in three dimensions
    assert np.allclose(h, -S.eigenvalue / 4.0 * S.u ** -2.0)


def test_identity_convergence_on_bump_slab():
    rep = satellite.identity_convergence(lambda n: build_box_manifold(bump_slab_spec(n)), 1,
                                         [12, 24])
    assert rep.passed("scalar") and rep.passed("mean")
    assert rep.order("scalar") > 1.5


def test_bounded_geometry_flat_torus_passes(flat_torus):
    rep = satellite.bounded_geometry_report(flat_torus, 4.0, 2)
    assert rep.passed, rep.table()


def test_bounded_geometry_fails_when_c_too_small(flat_torus):
    rep = satellite.bounded_geometry_report(flat_torus, 1.0, 2)
    items = {v.item for v in rep.failures()}
    assert "(iii) interior loop/2" in items


def test_bounded_geometry_slab_reports_boundary_items(flat_slab):
    rep = satellite.bounded_geometry_report(flat_slab, 4.0, 1)
    items = [v.item for v in rep.verdicts]
    assert "(i) collar injective" in items and "basepoint d(x, bdry)" in items
    assert rep.passed, rep.table()
    assert "verdict" in rep.table().splitlines()[0]


def test_collar_collisions_when_depth_exceeds_slab(flat_slab):
    assert satellite.normal_flow_collisions(flat_slab, 0.25) == 0
    # normal geodesics from both faces meet beyond half the thickness
    assert satellite.normal_flow_collisions(flat_slab, 0.9) > 0
