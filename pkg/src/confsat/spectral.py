"""
Conformal Laplacian, boundary operator and principal eigenpairs.

Discrete model. With ``S`` the Q1 stiffness matrix, ``W`` the lumped
volume weights and ``W_b`` the lumped boundary weights, the quadratic form

    E(f) = a_n f'Sf + sum R w f^2 - 2(n-1) sum_boundary h w_b f^2

is the energy of ``L = -a_n Delta + R`` with the boundary condition
``B = d_nu + b_n h`` (``nu`` inward). Eigenproblems are ``K u = lam M u``:

* closed and ``s = 1``: ``M = W``
* ``s = 0``: ``M = W_b`` (zero on interior rows, so the interior equations
  are ``L u = 0`` and the boundary rows carry ``B u = -(lam / a_n) u``)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import linalg as spla

from . import geometry
from .errors import NonPrincipalModeError, SolverError
from .grid import DiscreteManifold

CLOSED = "closed"
MODES = (CLOSED, 0, 1)


def conformal_constants(n):
    """``(a_n, b_n)``; their product is ``2(n-1)``."""
    a = 4.0 * (n - 1) / (n - 2)
    b = (n - 2) / 2.0
    if abs(a * b - 2.0 * (n - 1)) > 1e-12 * n:
        raise AssertionError("a_n * b_n != 2(n-1)")
    return a, b


def normalize_mode(s):
    if s in ("closed", None):
        return CLOSED
    if s in (0, "0"):
        return 0
    if s in (1, "1"):
        return 1
    raise ValueError(f"unknown eigenproblem mode {s!r}; expected closed, 0 or 1")


@dataclass
class OperatorPair:
    """Assembled discrete ``L_g`` and ``B_g`` with their quadratures."""

    n: int
    a_n: float
    b_n: float
    stiffness: sparse.csr_matrix
    scalar_curvature: np.ndarray
    mean_curvature: np.ndarray
    volume_weights: np.ndarray
    boundary_weights: np.ndarray
    boundary_mask: np.ndarray
    shape: tuple
    boundary: object = None

    @property
    def energy_matrix(self):
        """Symmetric matrix of the quadratic form ``E``."""
        K = self.a_n * self.stiffness + sparse.diags(self.scalar_curvature * self.volume_weights)
        if self.boundary_weights.any():
            K = K - sparse.diags(2.0 * (self.n - 1) * self.mean_curvature * self.boundary_weights)
        return K.tocsr()

    def mass(self, s):
        s = normalize_mode(s)
        if s == 0:
            return sparse.diags(self.boundary_weights).tocsr()
        return sparse.diags(self.volume_weights).tocsr()

    @property
    def volume(self):
        return float(self.volume_weights.sum())

    @property
    def boundary_volume(self):
        return float(self.boundary_weights.sum())


def assemble(M: DiscreteManifold, scalar_override=None) -> OperatorPair:
    """Assemble ``L_g``/``B_g`` data for ``M``.

    ``scalar_override`` replaces the computed scalar curvature; it serves
    test problems that prescribe ``R`` directly (a constant on a flat torus).
    """
    n = M.dim
    a_n, b_n = conformal_constants(n)
    bundle = geometry.riemann(M)
    R = bundle.scalar if scalar_override is None else np.broadcast_to(
        np.asarray(scalar_override, float), M.shape)
    S = geometry.stiffness_matrix(M)
    w = geometry.mass_weights(M)
    bd = geometry.boundary_geometry(M, gamma=bundle.christoffel)
    if bd is None:
        h = np.zeros(M.shape)
        wb = np.zeros(M.shape)
        mask = np.zeros(M.shape, bool)
    else:
        h, wb, mask = bd.mean_curvature, bd.weights, bd.mask
    return OperatorPair(n, a_n, b_n, S, np.array(R, float).ravel(), h.ravel(), w.ravel(),
                        wb.ravel(), mask.ravel(), M.shape, bd)


def rayleigh_quotient(M_or_ops, f, s=CLOSED):
    """``E(f) / |f|^2`` with the volume (closed, ``s=1``) or boundary (``s=0``) norm."""
    ops = M_or_ops if isinstance(M_or_ops, OperatorPair) else assemble(M_or_ops)
    s = normalize_mode(s)
    if s != CLOSED and not ops.boundary_mask.any():
        raise ValueError(f"mode s={s} needs a boundary")
    f = np.asarray(f, float).ravel()
    den = f @ (ops.mass(s) @ f)
    if den == 0.0:
        raise ZeroDivisionError("Rayleigh quotient denominator vanishes")
    return float(f @ (ops.energy_matrix @ f) / den)


# ---------------------------------------------------------------- solver

@dataclass
class EigenSolution:
    """Principal eigenpair with its diagnostics."""

    s: object
    eigenvalue: float
    u: np.ndarray
    residual: float
    boundary_residual: float
    iterations: int
    history: list = field(default_factory=list)
    shift: float = 0.0

    @property
    def mode_label(self):
        return "closed" if self.s == CLOSED else f"s{self.s}"


def _envelope(ops, s):
    """Curvature envelope bounding ``|lambda_1|``; also places the initial shift."""
    Rmax = float(np.max(np.abs(ops.scalar_curvature)))
    hmax = float(np.max(np.abs(ops.mean_curvature))) if ops.boundary_mask.any() else 0.0
    c = 2.0 * (ops.n - 1)
    if s == CLOSED:
        return Rmax
    if s == 0:
        return Rmax * ops.volume / ops.boundary_volume + c * hmax
    return Rmax + c * hmax * ops.boundary_volume / ops.volume


class _ShiftedSolver:
    """Repeated solves with ``K - sigma M``; direct for small systems, AMG-CG otherwise."""

    DIRECT_LIMIT = 6000

    def __init__(self, K, Mm, sigma, tol):
        self.A = (K - sigma * Mm).tocsr()
        self.tol = tol
        if self.A.shape[0] <= self.DIRECT_LIMIT:
            self.lu = spla.splu(self.A.tocsc())
            self.ml = None
        else:
            import pyamg

            self.lu = None
            # pyamg draws spectral-radius probes from the global generator
            state = np.random.get_state()
            np.random.seed(0)
            try:
                self.ml = pyamg.smoothed_aggregation_solver(self.A, symmetry="symmetric")
            finally:
                np.random.set_state(state)

    def solve(self, b, x0=None):
        if self.lu is not None:
            return self.lu.solve(b)
        x = self.ml.solve(b, x0=x0, tol=self.tol, accel="cg", maxiter=400)
        return x


def solve_principal(M: DiscreteManifold, s=CLOSED, tol=1e-10, max_iter=200, ops=None,
                    scalar_override=None) -> EigenSolution:
    """Principal eigenpair by deterministic shifted inverse iteration.

    Starts from the all-ones vector with a shift below the envelope bound,
    then moves the shift towards the running estimate once it settles.
    Convergence is measured by ``|K x - lam M x| / (|K|_inf |x|)``.
    """
    s = normalize_mode(s)
    if ops is None:
        ops = assemble(M, scalar_override)
    if s != CLOSED and not ops.boundary_mask.any():
        raise ValueError(f"mode s={s} needs a nonempty boundary")
    K = ops.energy_matrix
    Mm = ops.mass(s)
    kscale = float(abs(K).sum(axis=1).max())
    sigma0 = -(_envelope(ops, s) + 1.0)
    solver = _ShiftedSolver(K, Mm, sigma0, 1e-13)
    x = np.ones(K.shape[0])
    lam_prev = None
    history = []
    sigma = sigma0
    shifted = False
    for it in range(1, max_iter + 1):
        y = solver.solve(Mm @ x, x0=x)
        nrm = np.sqrt(y @ (Mm @ y))
        if not np.isfinite(nrm) or nrm == 0.0:
            raise SolverError("inverse iteration produced a null vector", history)
        x = y / nrm
        lam = float(x @ (K @ x))
        res = float(np.linalg.norm(K @ x - lam * (Mm @ x)) / (kscale * np.linalg.norm(x)))
        history.append(res)
        if res < tol:
            break
        if not shifted and lam_prev is not None and abs(lam - lam_prev) <= 1e-3 * max(abs(lam), 1.0):
            sigma = lam - 0.1 * (lam - sigma0)
            solver = _ShiftedSolver(K, Mm, sigma, 1e-13)
            shifted = True
        lam_prev = lam
    else:
        raise SolverError(f"no convergence in {max_iter} iterations (residual {history[-1]:.3e})",
                          history)
    # sign fix, positivity, then normalisation at the basepoint
    if x.sum() < 0:
        x = -x
    if np.any(x <= 0):
        bad = int(np.argmin(x))
        raise NonPrincipalModeError(
            f"eigenvector changes sign (min {x[bad]:.3e} at node {bad}); grid too coarse",
            history)
    u = x / x[M.basepoint_flat]
    u = u.reshape(M.shape)
    bres = 0.0
    if s != CLOSED:
        bres = float(np.max(np.abs((K @ u.ravel() - lam * (Mm @ u.ravel()))[ops.boundary_mask])))
    return EigenSolution(s, lam, u, res, bres, it, history, sigma)


def dense_principal(M, s=CLOSED, ops=None, scalar_override=None):
    """Smallest eigenvalue from a dense full-spectrum solve (small grids only)."""
    s = normalize_mode(s)
    if ops is None:
        ops = assemble(M, scalar_override)
    K = ops.energy_matrix.toarray()
    if s == 0:
        b = ops.boundary_mask
        i = ~b
        schur = K[np.ix_(b, b)] - K[np.ix_(b, i)] @ np.linalg.solve(K[np.ix_(i, i)], K[np.ix_(i, b)])
        wb = ops.boundary_weights[b]
        vals = scipy.linalg.eigh(schur, np.diag(wb), eigvals_only=True)
    else:
        vals = scipy.linalg.eigh(K, np.diag(ops.volume_weights), eigvals_only=True)
    return float(vals[0])


# ---------------------------------------------------------------- checks

@dataclass
class BoundReport:
    s: object
    eigenvalue: float
    bound: float
    margin: float
    passed: bool


def eigen_bounds_check(M, sol, ops=None, slack=0.05, zero_tol=1e-10):
    """Compare ``|lambda_1|`` with the curvature envelope of its mode.

    Closed: ``|lam| <= max|R|``. ``s = 0``:
    ``|lam| <= max|R| vol/vol_b + 2(n-1) max|h|``. ``s = 1``:
    ``|lam| <= max|R| + 2(n-1) max|h| vol_b/vol``.
    """
    if ops is None:
        ops = assemble(M)
    bound = _envelope(ops, sol.s)
    lam = abs(sol.eigenvalue)
    margin = bound * (1 + slack) - lam
    passed = lam <= bound * (1 + slack) or lam <= zero_tol
    return BoundReport(sol.s, sol.eigenvalue, bound, margin, bool(passed))


def harnack_ratio(u, region):
    """``inf u / sup u`` over a set of flat node indices."""
    vals = np.asarray(u).ravel()[np.asarray(region)]
    if vals.size == 0:
        raise ValueError("Harnack region is empty")
    if np.any(vals <= 0):
        raise ValueError("Harnack ratio needs a positive function")
    return float(vals.min() / vals.max())


def harnack_stability(M, s, region, perturbation, tol=1e-10):
    """Harnack ratio before and after adding ``perturbation`` to the metric.

    Returns ``(ratio, perturbed_ratio, relative_drift)``.
    """
    base = solve_principal(M, s, tol=tol)
    pert = solve_principal(M.with_metric(M.metric + perturbation), s, tol=tol)
    r0 = harnack_ratio(base.u, region)
    r1 = harnack_ratio(pert.u, region)
    return r0, r1, abs(r1 - r0) / r0
