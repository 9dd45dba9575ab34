import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from confsat import geometry
from confsat.grid import Chart

from conftest import sphere_chart_metric


def test_matched_end_stencil_is_second_order():
    # second derivative of a cubic: composite end error must shrink ~4x
    errs = []
    for N in (17, 33):
        c = Chart((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (N, 5, 5), (False, True, True))
        x = c.coordinates()[..., 0]
        f = np.exp(x)
        d2 = geometry.partial(geometry.partial(f, c, 0), c, 0)
        errs.append(np.abs(d2 - np.exp(x)).max())
    assert errs[0] / errs[1] > 3.5


def test_cylinder_christoffels(cylinder):
    gam = geometry.christoffel(cylinder)
    r = cylinder.coordinates()[..., 0]
    inner = (slice(2, -2),)
    assert np.allclose(gam[..., 0, 1, 1][inner], -r[inner], atol=1e-12)
    assert np.allclose(gam[..., 1, 0, 1][inner], 1 / r[inner], atol=2e-3)
    assert np.allclose(gam[..., 1, 0, 1], gam[..., 1, 1, 0])


def test_cylinder_is_flat(cylinder):
    b = geometry.riemann(cylinder)
    assert np.abs(b.scalar).max() < 1e-2


def test_stereographic_sphere_curvature_converges():
    errs = []
    for N in (17, 33):
        c, g = sphere_chart_metric(N)
        b = geometry.riemann(c, g)
        errs.append(np.abs(b.scalar - 6.0).max())
        mid = (N // 2,) * 3
        # Riem_0101 = K g00 g11 with K = 1 and g = 4 delta at the centre
        assert b.riem[mid + (0, 1, 0, 1)] == pytest.approx(16.0, rel=2e-2)
        assert b.ric[mid + (0, 0)] == pytest.approx(2 * 4.0, rel=2e-2)
    assert errs[1] < 0.07
    assert errs[0] / errs[1] > 3.0


def test_riemann_symmetries_and_bianchi():
    c, g = sphere_chart_metric(33)
    b = geometry.riemann(c, g)
    assert b.residuals["antisym_12"] < 1e-12
    assert b.residuals["first_bianchi"] / b.residuals["scale"] < 1e-3
    assert geometry.contracted_bianchi_residual(c, g, bundle=b) < 2e-2


@given(st.lists(st.floats(-0.5, 0.5), min_size=6, max_size=6))
@settings(max_examples=20, deadline=None)
def test_constant_metric_is_flat_and_stiffness_kills_constants(entries):
    L = np.array([[1 + entries[0], 0, 0], [entries[1], 1 + entries[2], 0],
                  [entries[3], entries[4], 1 + entries[5]]])
    G = L @ L.T + 0.1 * np.eye(3)
    c = Chart((0.0,) * 3, (1.0,) * 3, (6, 6, 6), (True, True, False))
    g = np.broadcast_to(G, (6, 6, 6, 3, 3)).copy()
    b = geometry.riemann(c, g)
    assert np.abs(b.riem).max() < 1e-12
    S = geometry.stiffness_matrix(c, g)
    assert abs(S - S.T).max() < 1e-12
    assert np.abs(S @ np.ones(c.size)).max() < 1e-10


def test_laplacian_eigenfunction_on_flat_torus(flat_torus):
    x = flat_torus.coordinates()[..., 0]
    f = np.sin(2 * np.pi * x)
    lap = geometry.laplace_beltrami(flat_torus, f)
    assert np.abs(lap + 4 * np.pi ** 2 * f).max() < 0.05 * 4 * np.pi ** 2


def test_laplacian_of_radial_functions_on_cylinder(cylinder):
    r = cylinder.coordinates()[..., 0]
    harmonic = geometry.laplace_beltrami(cylinder, np.log(r))
    quad = geometry.laplace_beltrami(cylinder, r ** 2)
    h = cylinder.spacing[0]
    # interior rows: exact for r^2, O(h^2) for log r; the lumped boundary
    # rows of the strong form are first order
    assert np.abs(harmonic[1:-1]).max() < 2e-3
    assert np.abs(quad[1:-1] - 4.0).max() < 1e-10
    assert np.abs(quad[[0, -1]] - 4.0).max() <= 1.01 * h


def test_cylinder_boundary_mean_curvature(cylinder):
    bd = geometry.boundary_geometry(cylinder)
    h = bd.mean_curvature
    assert np.allclose(h[bd.face(0)], 0.5, atol=1e-12)
    assert np.allclose(h[bd.face(1)], -0.25, atol=1e-12)
    unit, ortho = geometry.normal_consistency(bd, cylinder.metric)
    assert unit < 1e-12 and ortho < 1e-12


def test_closed_chart_has_no_boundary(flat_torus):
    assert geometry.boundary_geometry(flat_torus) is None


def test_boundary_weights_give_face_area(cylinder):
    bd = geometry.boundary_geometry(cylinder)
    # inner face r = 1: area 2 pi * 2 pi; outer r = 2: twice that
    assert bd.weights[bd.face(0)].sum() == pytest.approx(4 * np.pi ** 2)
    assert bd.weights[bd.face(1)].sum() == pytest.approx(8 * np.pi ** 2)


def test_hessian_matches_discrete_symbol(flat_torus):
    # two central differences act on cos(kx) as -(sin(kh)/h)^2
    x = flat_torus.coordinates()[..., 0]
    k, h = 2 * np.pi, flat_torus.spacing[0]
    f = np.cos(k * x)
    H = geometry.hessian(flat_torus, f)
    assert np.abs(H[..., 0, 1]).max() < 1e-12
    assert np.allclose(H[..., 0, 0], -(np.sin(k * h) / h) ** 2 * f, atol=1e-10)


def test_tensor_norm_scales_with_metric(flat_torus):
    T = np.broadcast_to(np.eye(3), flat_torus.shape + (3, 3))
    n1 = geometry.tensor_norm(flat_torus.chart, T, metric=flat_torus.metric)
    n4 = geometry.tensor_norm(flat_torus.chart, T, metric=4 * flat_torus.metric)
    assert np.allclose(n1, np.sqrt(3))
    assert np.allclose(n4, np.sqrt(3) / 4)


def test_curvature_derivative_norms_flat_zero(flat_torus):
    assert geometry.curvature_derivative_norms(flat_torus.chart, flat_torus.metric, 2) == [0.0] * 3
