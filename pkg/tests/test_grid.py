import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from confsat.errors import DimensionError, MetricError
from confsat.grid import (Chart, DiscreteManifold, distance_to_boundary, export_field_csv,
                          graph_distance, interpolator, metric_ball, systole)
from confsat.metrics import build_box_manifold

from conftest import flat_spec


def test_chart_spacing_periodic_and_interval():
    c = Chart((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (10, 10, 11), (True, True, False))
    assert c.spacing == (0.1, 0.1, 0.1)
    assert c.axis_coords(2)[-1] == pytest.approx(1.0)
    assert c.axis_coords(0)[-1] == pytest.approx(0.9)


def test_chart_rejects_too_few_nodes():
    with pytest.raises(ValueError, match="at least 5"):
        Chart((0.0,) * 3, (1.0,) * 3, (4, 8, 8), (True,) * 3)


@given(st.lists(st.integers(5, 9), min_size=3, max_size=3),
       st.lists(st.booleans(), min_size=3, max_size=3))
@settings(max_examples=30, deadline=None)
def test_cell_weights_integrate_volume(shape, periodic):
    c = Chart((0.0,) * 3, (1.0, 2.0, 3.0), tuple(shape), tuple(periodic))
    assert c.cell_weights().sum() == pytest.approx(6.0)


def test_two_dimensional_manifold_rejected():
    c = Chart((0.0, 0.0), (1.0, 1.0), (8, 8), (True, True))
    with pytest.raises(DimensionError):
        DiscreteManifold(c, np.broadcast_to(np.eye(2), (8, 8, 2, 2)).copy(), (4, 4))


def test_indefinite_metric_reports_node():
    c = Chart((0.0,) * 3, (1.0,) * 3, (6, 6, 6), (True,) * 3)
    g = np.broadcast_to(np.eye(3), (6, 6, 6, 3, 3)).copy()
    g[2, 3, 4] = -np.eye(3)
    with pytest.raises(MetricError) as exc:
        DiscreteManifold(c, g, (0, 0, 0))
    assert exc.value.node == (2, 3, 4)


def test_two_interval_axes_rejected():
    c = Chart((0.0,) * 3, (1.0,) * 3, (6, 6, 6), (True, False, False))
    g = np.broadcast_to(np.eye(3), (6, 6, 6, 3, 3)).copy()
    with pytest.raises(ValueError):
        DiscreteManifold(c, g, (3, 3, 3))


def test_boundary_mask_on_slab(flat_slab):
    mask = flat_slab.boundary_mask
    assert mask[:, :, 0].all() and mask[:, :, -1].all()
    assert mask.sum() == 2 * 12 * 12
    assert flat_slab.normal_axis == 2


def test_graph_distance_axis_aligned_is_exact(flat_torus):
    # 3 steps of h = 1/12 along an axis
    assert graph_distance(flat_torus, (0, 0, 0), (3, 0, 0)) == pytest.approx(0.25)
    # wraps around the periodic axis
    assert graph_distance(flat_torus, (0, 0, 0), (11, 0, 0)) == pytest.approx(1 / 12)


def test_graph_distance_diagonal_uses_cell_diagonals(flat_torus):
    assert graph_distance(flat_torus, (0, 0, 0), (2, 2, 2)) == pytest.approx(2 * np.sqrt(3) / 12)


def test_metric_ball_and_boundary_distance(flat_slab):
    ball = metric_ball(flat_slab, flat_slab.basepoint, 1e-9)
    assert list(ball) == [flat_slab.basepoint_flat]
    d = distance_to_boundary(flat_slab)
    assert d[:, :, 6].min() == pytest.approx(0.5)


def test_systole_of_flat_torus(flat_torus):
    assert systole(flat_torus.chart, flat_torus.metric, [(0, 0, 0)]) == pytest.approx(1.0)


def test_interpolator_periodic_wrap(flat_torus):
    x = flat_torus.coordinates()[..., 0]
    f = np.sin(2 * np.pi * x)
    it = interpolator(flat_torus.chart, f)
    # querying one period away returns the same value
    a = it(np.array([[0.3, 0.2, 0.1]]))[0]
    b = it(np.array([[1.3, 0.2, 0.1]]))[0]
    assert a == pytest.approx(b)
    assert a == pytest.approx(np.sin(2 * np.pi * 0.3), abs=0.05)


def test_export_field_csv_roundtrip(tmp_path):
    M = build_box_manifold(flat_spec((5, 5, 5)))
    vals = np.arange(M.size, dtype=float).reshape(M.shape) / 7.0
    p = tmp_path / "f.csv"
    export_field_csv(M, vals, p, header=["value"])
    rows = p.read_text().splitlines()
    assert rows[0] == "node,x0,x1,x2,value"
    assert float(rows[9].split(",")[-1]) == vals.ravel()[8]
