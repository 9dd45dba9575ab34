import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from confsat import spectral
from confsat.errors import SolverError
from confsat.grid import metric_ball
from confsat.metrics import build_box_manifold

from conftest import bump_slab_spec, cylinder_spec, flat_spec


@given(st.integers(3, 12))
def test_conformal_constants_product(n):
    a, b = spectral.conformal_constants(n)
    assert a * b == pytest.approx(2 * (n - 1))


def test_conformal_constants_three_dimensions():
    assert spectral.conformal_constants(3) == (8.0, 0.5)


def test_normalize_mode():
    assert spectral.normalize_mode("closed") == spectral.CLOSED
    assert spectral.normalize_mode("1") == 1
    with pytest.raises(ValueError):
        spectral.normalize_mode(2)


def test_flat_torus_closed_is_zero_with_constant_mode(flat_torus):
    sol = spectral.solve_principal(flat_torus)
    assert abs(sol.eigenvalue) < 1e-10
    assert np.allclose(sol.u, 1.0, atol=1e-8)
    assert sol.u[flat_torus.basepoint] == 1.0


@given(st.floats(-3.0, 3.0))
@settings(max_examples=8, deadline=None)
def test_constant_scalar_override_gives_that_eigenvalue(R):
    M = build_box_manifold(flat_spec((6, 6, 6)))
    sol = spectral.solve_principal(M, scalar_override=R)
    assert sol.eigenvalue == pytest.approx(R, abs=1e-9)
    assert spectral.dense_principal(M, scalar_override=R) == pytest.approx(R, abs=1e-9)


def test_mode_with_boundary_required(flat_torus):
    with pytest.raises(ValueError):
        spectral.solve_principal(flat_torus, 1)


def _robin_oracle():
    """Radial problem -8(u'' + u'/r) = lam u, u'(1) = -u/4, u'(2) = -u/8."""
    def miss(lam):
        s = solve_ivp(lambda r, y: [y[1], -y[1] / r - lam / 8 * y[0]], (1, 2), [1.0, -0.25],
                      rtol=1e-12, atol=1e-12)
        u, du = s.y[:, -1]
        return du + 0.125 * u
    grid = np.linspace(-2, 3, 51)
    v = [miss(x) for x in grid]
    i = next(k for k in range(50) if v[k] * v[k + 1] < 0)
    return brentq(miss, grid[i], grid[i + 1], xtol=1e-14)


def _steklov_oracle():
    """Harmonic u = A + B ln r with boundary rows d_nu u + h u/2 = -(lam/8) u."""
    l2 = np.log(2.0)
    K = np.array([[-0.25, -1.0], [0.125, 0.5 + 0.125 * l2]])
    Mm = np.array([[1.0, 0.0], [1.0, l2]])
    return 8 * float(np.min(scipy.linalg.eigvals(K, Mm).real))


@pytest.mark.parametrize("s,oracle", [(1, _robin_oracle), (0, _steklov_oracle)])
def test_cylinder_shell_against_radial_oracle(s, oracle):
    exact = oracle()
    errs = []
    for N in (9, 17):
        M = build_box_manifold(cylinder_spec((N, 16, 8)))
        errs.append(abs(spectral.solve_principal(M, s).eigenvalue - exact))
    assert errs[1] < 1.5e-3
    assert errs[0] / errs[1] > 3.0


@pytest.mark.parametrize("s", [spectral.CLOSED, 0, 1])
def test_iterative_matches_dense(s):
    spec = bump_slab_spec(8)
    if s == spectral.CLOSED:
        spec.periodic = (True, True, True)
        spec.upper = (2 * np.pi,) * 3
    M = build_box_manifold(spec)
    sol = spectral.solve_principal(M, s)
    assert sol.eigenvalue == pytest.approx(spectral.dense_principal(M, s), abs=1e-8)
    assert np.all(sol.u > 0)


def test_rayleigh_minimality_random_positive(bump_slab):
    ops = spectral.assemble(bump_slab)
    rng = np.random.default_rng(7)
    for s in (0, 1):
        lam = spectral.solve_principal(bump_slab, s, ops=ops).eigenvalue
        for _ in range(10):
            f = rng.uniform(0.1, 2.0, size=bump_slab.shape)
            assert spectral.rayleigh_quotient(ops, f, s) >= lam - 1e-8


@given(st.floats(0.1, 10.0))
@settings(max_examples=10, deadline=None)
def test_rayleigh_quotient_scale_invariant(c):
    M = build_box_manifold(bump_slab_spec(6))
    ops = spectral.assemble(M)
    f = 1.0 + 0.1 * np.sin(M.coordinates()[..., 0])
    assert spectral.rayleigh_quotient(ops, c * f, 1) == pytest.approx(
        spectral.rayleigh_quotient(ops, f, 1), rel=1e-12)


def test_boundary_residual_small_for_s1(bump_slab):
    sol = spectral.solve_principal(bump_slab, 1)
    assert sol.residual < 1e-10
    assert sol.boundary_residual < 1e-8


def test_envelope_bounds(bump_slab, flat_slab):
    for M in (bump_slab, flat_slab):
        for s in (0, 1):
            sol = spectral.solve_principal(M, s)
            assert spectral.eigen_bounds_check(M, sol).passed


def test_solver_failure_carries_history(bump_slab):
    with pytest.raises(SolverError) as exc:
        spectral.solve_principal(bump_slab, 1, tol=1e-30, max_iter=3)
    assert len(exc.value.history) == 3


def test_harnack_ratio_and_stability(bump_slab):
    ball = metric_ball(bump_slab, bump_slab.basepoint, 1.0)
    sol = spectral.solve_principal(bump_slab, 1)
    r = spectral.harnack_ratio(sol.u, ball)
    assert 0 < r <= 1
    pert = np.zeros_like(bump_slab.metric)
    pert[..., 2, 2] = 0.01
    r0, r1, drift = spectral.harnack_stability(bump_slab, 1, ball, pert)
    assert r0 == pytest.approx(r)
    assert drift < 0.1


def test_solver_is_deterministic_above_direct_threshold():
    # 24^3 > 6000 nodes exercises the multigrid path
    M = build_box_manifold(bump_slab_spec(24))
    a = spectral.solve_principal(M, 1)
    b = spectral.solve_principal(M, 1)
    assert a.eigenvalue == b.eigenvalue
    assert np.array_equal(a.u, b.u)
