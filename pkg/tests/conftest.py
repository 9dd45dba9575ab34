import numpy as np
import pytest

from confsat.grid import Chart, DiscreteManifold
from confsat.metrics import ManifoldSpec, build_box_manifold

TWO_PI = 2 * np.pi


def flat_spec(shape=(12, 12, 12), periodic=(True, True, True), length=1.0):
    return ManifoldSpec((0.0,) * 3, (length,) * 3, shape, periodic, "flat")


def bump_slab_spec(n=16, amplitude=0.1):
    return ManifoldSpec((0.0, 0.0, 0.0), (TWO_PI, TWO_PI, np.pi), (n, n, n),
                        (True, True, False), "conformal-bump",
                        {"amplitude": amplitude, "wavenumbers": [1, 1, 1],
                         "phases": [0.0, 0.0, 0.7]})


def cylinder_spec(shape=(17, 24, 16)):
    return ManifoldSpec((1.0, 0.0, 0.0), (2.0, TWO_PI, TWO_PI), shape,
                        (False, True, True), "diag-cylinder")


def sphere_chart_metric(N=33, half=0.5):
    """Stereographic unit-sphere metric ``4/(1+|x|^2)^2 delta`` on a box."""
    chart = Chart((-half,) * 3, (half,) * 3, (N,) * 3, (False, False, False))
    x = chart.coordinates()
    conf = 4.0 / (1.0 + np.sum(x ** 2, axis=-1)) ** 2
    return chart, conf[..., None, None] * np.eye(3)


@pytest.fixture(scope="session")
def flat_torus():
    return build_box_manifold(flat_spec())


@pytest.fixture(scope="session")
def flat_slab():
    return build_box_manifold(flat_spec((12, 12, 13), (True, True, False)))


@pytest.fixture(scope="session")
def bump_slab():
    return build_box_manifold(bump_slab_spec(12))


@pytest.fixture(scope="session")
def cylinder():
    return build_box_manifold(cylinder_spec())


def manifold_from(chart, metric, basepoint=None):
    bp = basepoint or tuple(N // 2 for N in chart.shape)
    return DiscreteManifold(chart, metric, bp)
