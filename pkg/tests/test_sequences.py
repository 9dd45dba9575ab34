import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from confsat import sequences
from confsat.metrics import build_box_manifold

from conftest import bump_slab_spec, flat_spec


def _slab_limit(n=8):
    spec = bump_slab_spec(n, amplitude=0.0)
    spec.formula = "flat"
    spec.params = {}
    return spec


def test_members_share_chart_and_decay():
    spec = sequences.SequenceSpec(_slab_limit(), amplitude=0.2, count=4,
                                  wavenumbers=(1, 1, 1), phases=(0, 0, 0.7))
    members = sequences.generate_sequence(spec)
    assert len(members) == 4
    assert all(m.chart == members[0].chart for m in members)
    limit = sequences.build_limit(spec)
    gaps = [np.abs(m.metric - limit.metric).max() for m in members]
    assert gaps == pytest.approx([gaps[0] / i for i in range(1, 5)])


def test_sequence_needs_two_members():
    with pytest.raises(ValueError):
        sequences.generate_sequence(sequences.SequenceSpec(_slab_limit(), count=1))


@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4))
@settings(max_examples=30, deadline=None)
def test_conformal_metrics_have_zero_distortion(u):
    g = np.broadcast_to(np.diag([1.0, 2.0, 3.0]), (4, 3, 3)).copy()
    g2 = np.exp(2 * np.array(u))[:, None, None] * g
    assert sequences.conformal_distortion(g, g2) < 1e-12


def test_relative_eigenvalues_diagonal():
    g1 = np.diag([1.0, 2.0, 4.0])[None]
    g2 = np.diag([2.0, 2.0, 2.0])[None]
    assert np.allclose(sequences.relative_eigenvalues(g1, g2)[0], [0.5, 1.0, 2.0])
    assert sequences.conformal_distortion(g1, g2) == pytest.approx(1.5)


def test_ck_distance_zero_and_constant():
    M = build_box_manifold(flat_spec((8, 8, 8)))
    assert sequences.ck_distance(M.chart, M.metric, M.metric, 2) == 0.0
    # constant offset: C^0 norm only, derivatives vanish
    d = sequences.ck_distance(M.chart, M.metric, M.metric + 0.1 * np.eye(3), 2)
    assert d == pytest.approx(0.1 * np.sqrt(3))


def test_epsilon_isometry_identity_and_scaling():
    M = build_box_manifold(flat_spec((8, 8, 8)))
    assert sequences.epsilon_isometry_check(M, M).epsilon == 0.0
    big = M.with_metric(1.21 * M.metric)
    iso = sequences.epsilon_isometry_check(M, big, samples=4)
    # distances scale by 1.1; the largest is the graph diameter
    assert iso.distortion == pytest.approx(0.1 * iso_diameter(M), rel=1e-9)


def iso_diameter(M):
    from scipy.sparse import csgraph
    return float(csgraph.dijkstra(M.graph, directed=False).max())


def test_trend_helpers():
    assert sequences.cauchy_trend([1.0, 0.5, 0.3, 0.2])[0]
    assert not sequences.cauchy_trend([1.0, 0.9, 0.5])[0]
    assert sequences.monotone_decreasing([5, 4, 4.5, 3], allowed_violations=1)
    assert not sequences.monotone_decreasing([5, 6, 4, 4.5], allowed_violations=1)


def test_small_diagnostics_table(tmp_path):
    spec = sequences.SequenceSpec(_slab_limit(8), amplitude=0.2, count=4, s=1,
                                  wavenumbers=(1, 1, 1), phases=(0, 0, 0.7), ball_radius=1.5)
    diag = sequences.satellite_sequence_diagnostics(spec)
    assert [r["index"] for r in diag.rows] == [1, 2, 3, 4]
    assert diag.verdicts["complete"] and diag.verdicts["envelopes"]
    assert diag.verdicts["ck_decreasing"]
    p = tmp_path / "seq.csv"
    diag.write_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0].split(",") == list(sequences.SequenceDiagnostics.COLUMNS)
    assert len(lines) == 5
