"""
Conformal change of metric and flatzoomer functionals.

Throughout ``g[u] = exp(2u) g``. A positive eigenfunction ``w`` corresponds
to ``u = (2/(n-2)) ln w`` so that ``g[u] = w^{4/(n-2)} g``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csgraph

from . import geometry
from .errors import SchemeError
from .grid import DiscreteManifold, distances_from

MAX_FLATZOOMER_DEGREE = 2


@dataclass(frozen=True, eq=False)
class ConformalFactor:
    """Log-factor ``u`` of ``g[u] = exp(2u) g``."""

    log_factor: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.log_factor, dtype=float)
        if not np.all(np.isfinite(u)):
            raise ValueError("conformal factor has non-finite values")
        object.__setattr__(self, "log_factor", u)

    @classmethod
    def from_positive(cls, w, n):
        """Factor with ``exp(2u) = w^{4/(n-2)}``."""
        w = np.asarray(w, dtype=float)
        if np.any(w <= 0):
            raise ValueError("positive function required")
        return cls(2.0 / (n - 2) * np.log(w))

    def to_positive(self, n):
        return np.exp(0.5 * (n - 2) * self.log_factor)

    def shifted(self, c):
        return ConformalFactor(self.log_factor + c)


def _as_log(u):
    return u.log_factor if isinstance(u, ConformalFactor) else np.asarray(u, dtype=float)


def conformal_metric_array(g, u):
    return np.exp(2.0 * _as_log(u))[..., None, None] * g


def conformal_metric(M: DiscreteManifold, factor, name=None) -> DiscreteManifold:
    """Same chart and basepoint with metric ``exp(2u) g``."""
    u = _as_log(factor)
    if not np.all(np.isfinite(u)):
        raise ValueError("conformal factor has non-finite values")
    return M.with_metric(conformal_metric_array(M.metric, u), name=name)


def kulkarni_nomizu(h, k):
    """``(h . k)_abcd = h_ac k_bd + h_bd k_ac - h_ad k_bc - h_bc k_ad``."""
    e = np.einsum
    return (e("...ac,...bd->...abcd", h, k) + e("...bd,...ac->...abcd", h, k)
            - e("...ad,...bc->...abcd", h, k) - e("...bc,...ad->...abcd", h, k))


def conformal_riemann(obj, u, metric=None, bundle=None):
    """Riemann tensor of ``g[u]`` from the closed-form transformation law.

    ``Riem_{g[u]} = e^{2u} (Riem_g - g . (Hess u - du du + |du|^2 g / 2))``
    with ``.`` the Kulkarni-Nomizu product.
    """
    chart, g = geometry._unpack(obj, metric)
    u = _as_log(u)
    if bundle is None:
        bundle = geometry.riemann(chart, g)
    du = geometry.gradient(u, chart)
    hess = geometry.covariant_derivative(chart, du, 1, metric=g, gamma=bundle.christoffel)
    ginv = np.linalg.inv(g)
    du2 = np.einsum("...ij,...i,...j->...", ginv, du, du)
    T = hess - np.einsum("...i,...j->...ij", du, du) + 0.5 * du2[..., None, None] * g
    return np.exp(2.0 * u)[..., None, None, None, None] * (bundle.riem - kulkarni_nomizu(g, T))


def conformal_christoffel(obj, u, metric=None, gamma=None):
    """Christoffel symbols of ``g[u]`` from those of ``g``."""
    chart, g = geometry._unpack(obj, metric)
    u = _as_log(u)
    if gamma is None:
        gamma = geometry.christoffel(chart, g)
    n = chart.ndim
    du = geometry.gradient(u, chart)
    grad = np.einsum("...cm,...m->...c", np.linalg.inv(g), du)
    eye = np.eye(n)
    return (gamma + np.einsum("ca,...b->...cab", eye, du) + np.einsum("cb,...a->...cab", eye, du)
            - np.einsum("...ab,...c->...cab", g, grad))


def conformal_connection(obj, u, v, X, metric=None, gamma=None):
    """``nabla^{g[u]}_v X = nabla^g_v X + du(X) v + du(v) X - g(v, X) grad u``."""
    chart, g = geometry._unpack(obj, metric)
    u = _as_log(u)
    if gamma is None:
        gamma = geometry.christoffel(chart, g)
    v = np.broadcast_to(np.asarray(v, float), chart.shape + (chart.ndim,))
    X = np.broadcast_to(np.asarray(X, float), chart.shape + (chart.ndim,))
    dX = geometry.gradient(X, chart)  # [..., a, c] = d_a X^c
    base = np.einsum("...a,...ac->...c", v, dX) + np.einsum("...cab,...a,...b->...c", gamma, v, X)
    du = geometry.gradient(u, chart)
    grad = np.einsum("...cm,...m->...c", np.linalg.inv(g), du)
    duX = np.einsum("...i,...i->...", du, X)
    duv = np.einsum("...i,...i->...", du, v)
    gvX = np.einsum("...ij,...i,...j->...", g, v, X)
    return base + duX[..., None] * v + duv[..., None] * X - gvX[..., None] * grad


def connection_from_christoffel(chart, gamma, v, X):
    """``nabla_v X`` for an arbitrary set of Christoffel symbols (oracle path)."""
    v = np.broadcast_to(np.asarray(v, float), chart.shape + (chart.ndim,))
    X = np.broadcast_to(np.asarray(X, float), chart.shape + (chart.ndim,))
    dX = geometry.gradient(X, chart)
    return np.einsum("...a,...ac->...c", v, dX) + np.einsum("...cab,...a,...b->...c", gamma, v, X)


def relative_discrepancy(a, b):
    """Global Frobenius ``|a - b| / |b|``."""
    den = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / den) if den > 0 else float(np.linalg.norm(a - b))


# ---------------------------------------------------------------- flatzoomers

@dataclass
class FlatzoomerReport:
    """``Phi = |nabla^k Riem_{g[u]}|_{g[u]}`` and its decay under constant shifts."""

    degree: int
    phi: np.ndarray
    shifts: list = field(default_factory=list)
    sup_values: list = field(default_factory=list)
    exponent: float = float("nan")
    expected_exponent: float = float("nan")

    @property
    def sup(self):
        return float(np.max(self.phi))


def flatzoomer_phi(obj, u, k, metric=None) -> FlatzoomerReport:
    """``Phi`` field for degree ``k`` via the direct pipeline on ``g[u]``."""
    if k < 0:
        raise ValueError("degree must be nonnegative")
    if k > MAX_FLATZOOMER_DEGREE:
        raise SchemeError(
            f"degree {k} needs {k + 2} derivative layers; max supported degree is "
            f"{MAX_FLATZOOMER_DEGREE}")
    chart, g = geometry._unpack(obj, metric)
    gu = conformal_metric_array(g, u)
    bundle = geometry.riemann(chart, gu)
    T = bundle.riem
    if k:
        T = geometry.covariant_derivative(chart, T, k, metric=gu, gamma=bundle.christoffel)
    phi = geometry.tensor_norm(chart, T, metric=gu)
    return FlatzoomerReport(k, phi, expected_exponent=-(k + 2.0))


def flatzoomer_sweep(obj, u, k, shifts, metric=None) -> FlatzoomerReport:
    """Evaluate ``sup Phi(u + c)`` for each shift and fit ``log sup Phi`` against ``c``."""
    shifts = [float(c) for c in shifts]
    sups = []
    first = None
    for c in shifts:
        rep = flatzoomer_phi(obj, _as_log(u) + c, k, metric=metric)
        first = first or rep
        sups.append(rep.sup)
    if min(sups) > 0 and len(shifts) >= 2:
        slope = float(np.polyfit(shifts, np.log(sups), 1)[0])
    else:
        slope = float("nan")
    return FlatzoomerReport(k, first.phi, shifts, sups, slope, -(k + 2.0))


def composition_check(sweeps):
    """Composition closure on constant shifts.

    For sweeps of degrees ``k_i`` over the same shifts ``c >= 0``:
    ``sum_i Phi_i(c) <= e^{-2c} sum_i Phi_i(0)`` and
    ``sqrt(Phi_i(c)) <= e^{-(k_i+2)c/2} sqrt(Phi_i(0))`` (both with 1e-9
    relative slack). Returns a dict of verdicts and the composed values.
    """
    shifts = np.array(sweeps[0].shifts)
    tot = np.sum([np.array(s.sup_values) for s in sweeps], axis=0)
    sum_ok = np.all(tot <= np.exp(-2.0 * shifts) * tot[0] * (1 + 1e-9) + 1e-300)
    sqrt_ok = True
    for s in sweeps:
        vals = np.sqrt(np.array(s.sup_values))
        bound = np.exp(-(s.degree + 2) * shifts / 2.0) * vals[0]
        sqrt_ok &= bool(np.all(vals <= bound * (1 + 1e-9) + 1e-300))
    finite = bool(np.all(np.isfinite(tot)))
    return {"sum": bool(sum_ok), "sqrt": bool(sqrt_ok), "finite": finite, "composed": tot.tolist()}


# ---------------------------------------------------------------- quasi-flatzoomer

@dataclass
class QuasiFlatzoomerData:
    phi0: float
    phi1: float
    phi2: float
    chart_constant: float
    connection_constant: float
    H: float
    u1: float
    conv_est: float = float("nan")
    bound_checked: bool = False
    bound_holds: bool = False
    notes: list = field(default_factory=list)

    @property
    def psi(self):
        return self.phi0 + self.phi1 + self.phi2


def chart_constants(chart, g, gamma=None):
    """``(C, A)``: metric comparison constant and connection constant.

    ``C |v|_eucl >= |v|_g >= |v|_eucl / C`` at all nodes, and ``A`` bounds
    the Christoffel components of every ``g[u]`` by ``A (1 + |du|_g)``.
    """
    n = chart.ndim
    lam = np.linalg.eigvalsh(g)
    C = float(max(np.sqrt(lam[..., -1].max()), 1.0 / np.sqrt(lam[..., 0].min())))
    if gamma is None:
        gamma = geometry.christoffel(chart, g)
    gmax = float(np.max(np.abs(g)))
    ginvmax = float(np.max(np.abs(np.linalg.inv(g))))
    A = float(max(np.max(np.abs(gamma)), 2.0 * C + n * gmax * ginvmax * C))
    return C, A


def quasi_flatzoomer_psi(M: DiscreteManifold, u, with_conv=True, conv_centers=None,
                         slack=0.0) -> QuasiFlatzoomerData:
    """``Psi = Phi0 + Phi1 + Phi2`` and, optionally, the bound ``1/conv_est <= Psi``."""
    chart, g = M.chart, M.metric
    n = chart.ndim
    u = _as_log(u)
    gamma = geometry.christoffel(chart, g)
    C, A = chart_constants(chart, g, gamma)
    H = 4.0 * n * n * A * C ** 3
    riem_u = geometry.riemann(chart, conformal_metric_array(g, u)).riem
    gu = conformal_metric_array(g, u)
    phi0 = 2.0 / np.pi * float(np.sqrt(np.max(geometry.tensor_norm(chart, riem_u, metric=gu))))
    du = geometry.gradient(u, chart)
    du_norm = np.sqrt(np.einsum("...ij,...i,...j->...", np.linalg.inv(g), du, du))
    phi1 = float(np.max(np.exp(-u) * H * (1.0 + du_norm)))
    extent = min(chart.lengths)
    u1 = -float(np.log(0.5 * extent / C))
    phi2 = 4.0 * float(np.max(np.exp(-u) * np.exp(u1)))
    data = QuasiFlatzoomerData(phi0, phi1, phi2, C, A, H, u1)
    if with_conv:
        Mu = conformal_metric(M, u)
        ce = conv_est(Mu, centers=conv_centers)
        data.conv_est = ce
        if np.isfinite(ce) and ce > 0:
            data.bound_checked = True
            data.bound_holds = bool(1.0 / ce <= data.psi * (1.0 + slack))
        else:
            data.notes.append("convexity proxy unavailable; bound not checked")
    return data


def _direction_pairs(n):
    out = []
    for off in itertools.product((-1, 0, 1), repeat=n):
        nz = [o for o in off if o]
        if nz and nz[0] > 0:
            out.append(np.array(off))
    return out


def _ray_end(M, center, direction, dist, r):
    """Furthest lattice node ``center + j*direction`` with distance ``< r`` (no wrap past half)."""
    best = None
    j = 1
    limit = max(M.shape)
    while j < limit:
        node = np.array(center) + j * direction
        ok = True
        for a in range(M.dim):
            if M.chart.periodic[a]:
                node[a] %= M.shape[a]
            elif not 0 <= node[a] < M.shape[a]:
                ok = False
        if not ok:
            break
        f = M.flat(tuple(node))
        if not dist[f] < r:
            break
        best = f
        j += 1
    return best


def _path_midpoint(pred, dist_from_p, p, q):
    path = [q]
    while path[-1] != p:
        nxt = pred[path[-1]]
        if nxt < 0:
            return None
        path.append(nxt)
    half = 0.5 * dist_from_p[q]
    return min(path, key=lambda z: abs(dist_from_p[z] - half))


def conv_est(M: DiscreteManifold, centers=None, radii=None):
    """Largest sampled radius for which all tested balls are convex on the graph.

    For each centre and radius, the endpoints of lattice rays in opposite
    directions are joined by a shortest path; the ball passes if the path
    midpoint stays within ``r + h_max`` of the centre. The scan stops at the
    first failing radius.
    """
    hmin = min(M.spacing) * float(np.sqrt(np.linalg.eigvalsh(M.metric)[..., 0].min()))
    hmax = max(M.spacing) * float(np.sqrt(np.linalg.eigvalsh(M.metric)[..., -1].max()))
    if centers is None:
        centers = [M.basepoint]
    graph = M.graph
    dists = {c: distances_from(M, c)[0] for c in centers}
    if radii is None:
        reach = min(float(np.max(d[np.isfinite(d)])) for d in dists.values())
        radii = np.arange(2.0 * hmin, reach, hmin)
    pairs = _direction_pairs(M.dim)
    best = float("nan")
    for r in radii:
        for c in centers:
            d = dists[c]
            for e in pairs:
                p = _ray_end(M, c, e, d, r)
                q = _ray_end(M, c, -e, d, r)
                if p is None or q is None or p == q:
                    continue
                dp, pred = csgraph.dijkstra(graph, directed=False, indices=p,
                                            return_predecessors=True, limit=4 * r + hmax)
                if not np.isfinite(dp[q]):
                    return best
                mid = _path_midpoint(pred, dp, p, q)
                if mid is None or d[mid] > r + hmax:
                    return best
        best = float(r)
    return best
