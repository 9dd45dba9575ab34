"""
Finite-difference Riemannian geometry on box charts.

Index conventions (all arrays carry the node axes first):

* ``christoffel[..., c, a, b] = Gamma^c_ab``
* ``riem[..., a, b, c, d]`` is the (4,0) tensor in the Besse sign
  convention, so round spheres have ``riem(X, Y, X, Y) > 0``
* covariant derivatives put the new derivative slot first:
  ``(nabla T)[..., a, i1, ..., ir] = nabla_a T_{i1...ir}``

Periodic axes use central differences; interval axes add second-order
one-sided stencils at the ends (see :func:`partial`). Second derivatives
are the first-derivative operator applied twice.

Low-level functions take ``(chart, metric)``; wrappers accept a
:class:`~confsat.grid.DiscreteManifold`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import MetricError
from .grid import Chart, DiscreteManifold


def _unpack(obj, metric=None):
    if isinstance(obj, DiscreteManifold):
        return obj.chart, obj.metric
    return obj, metric


def _invert(metric):
    try:
        inv = np.linalg.inv(metric)
    except np.linalg.LinAlgError:
        det = np.linalg.det(metric)
        bad = tuple(int(i) for i in np.unravel_index(np.argmin(np.abs(det)), det.shape))
        raise MetricError(f"singular metric at node {bad}", bad) from None
    return inv


# ---------------------------------------------------------------- derivatives

def partial(field, chart, axis):
    """Coordinate derivative of a node field along one chart axis.

    Central differences inside. The end stencil on interval axes,
    ``(-4 f0 + 7 f1 - 4 f2 + f3) / 2h``, has the same leading error
    ``h^2 f'''/6`` as the central one, so the error field stays smooth and
    composing the operator twice remains second order up to the ends.
    """
    h = chart.spacing[axis]
    if chart.periodic[axis]:
        return (np.roll(field, -1, axis=axis) - np.roll(field, 1, axis=axis)) / (2.0 * h)
    f = np.moveaxis(np.asarray(field, dtype=float), axis, 0)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2.0 * h)
    out[0] = (-4.0 * f[0] + 7.0 * f[1] - 4.0 * f[2] + f[3]) / (2.0 * h)
    out[-1] = (4.0 * f[-1] - 7.0 * f[-2] + 4.0 * f[-3] - f[-4]) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def gradient(field, chart):
    """All coordinate partials; the derivative index is inserted after the node axes."""
    n = chart.ndim
    return np.stack([partial(field, chart, a) for a in range(n)], axis=n)


# ---------------------------------------------------------------- connection

def christoffel(obj, metric=None):
    """Christoffel symbols ``Gamma^c_ab`` of the Levi-Civita connection."""
    chart, g = _unpack(obj, metric)
    ginv = _invert(g)
    dg = gradient(g, chart)  # [..., a, i, j] = d_a g_ij
    # lowered symbols Gamma_{m,ab} = 1/2 (d_a g_bm + d_b g_am - d_m g_ab)
    # low[..., a, b, m]: dg itself gives d_a g_bm, the swap d_b g_am, the move d_m g_ab
    low = 0.5 * (dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1))
    return np.einsum("...cm,...abm->...cab", ginv, low)


def _lowered_christoffel_check(dg):
    """Direct loop version used by tests as an oracle."""
    n = dg.shape[-1]
    out = np.zeros(dg.shape[:-3] + (n, n, n))
    for a in range(n):
        for b in range(n):
            for m in range(n):
                out[..., a, b, m] = 0.5 * (dg[..., a, b, m] + dg[..., b, a, m] - dg[..., m, a, b])
    return out


# ---------------------------------------------------------------- curvature

@dataclass
class CurvatureBundle:
    """Connection and curvature fields of one metric, with symmetry residuals."""

    christoffel: np.ndarray
    riem: np.ndarray
    ric: np.ndarray
    scalar: np.ndarray
    residuals: dict = field(default_factory=dict)


def riemann_from_connection(chart, g, gamma):
    """(4,0) Riemann tensor from Gamma and its partials (Besse sign)."""
    dgam = gradient(gamma, chart)  # [..., e, c, a, b] = d_e Gamma^c_ab
    # R^e_{c a b} = d_a G^e_bc - d_b G^e_ac + G^e_af G^f_bc - G^e_bf G^f_ac
    t1 = np.einsum("...aebc->...ecab", dgam)
    t2 = np.einsum("...beac->...ecab", dgam)
    t3 = np.einsum("...eaf,...fbc->...ecab", gamma, gamma)
    t4 = np.einsum("...ebf,...fac->...ecab", gamma, gamma)
    upper = t1 - t2 + t3 - t4
    # Riem_abcd = -g_de R^e_cab
    return -np.einsum("...de,...ecab->...abcd", g, upper)


def ricci(g_inv, riem):
    return np.einsum("...ac,...abcd->...bd", g_inv, riem)


def symmetry_residuals(riem):
    scale = max(float(np.max(np.abs(riem))), 1e-300)
    anti12 = riem + np.swapaxes(riem, -4, -3)
    anti34 = riem + np.swapaxes(riem, -2, -1)
    pair = riem - np.einsum("...abcd->...cdab", riem)
    bianchi1 = (riem + np.einsum("...abcd->...acdb", riem)
                + np.einsum("...abcd->...adbc", riem))
    return {
        "antisym_12": float(np.max(np.abs(anti12))),
        "antisym_34": float(np.max(np.abs(anti34))),
        "pair_swap": float(np.max(np.abs(pair))),
        "first_bianchi": float(np.max(np.abs(bianchi1))),
        "scale": scale if scale > 1e-300 else 0.0,
    }


def riemann(obj, metric=None):
    """Curvature bundle (Gamma, Riem, Ric, R) of a metric field."""
    chart, g = _unpack(obj, metric)
    ginv = _invert(g)
    gamma = christoffel(chart, g)
    riem = riemann_from_connection(chart, g, gamma)
    ric = ricci(ginv, riem)
    scal = np.einsum("...bd,...bd->...", ginv, ric)
    return CurvatureBundle(gamma, riem, ric, scal, symmetry_residuals(riem))


def scalar_curvature(obj, metric=None):
    return riemann(obj, metric).scalar


# ---------------------------------------------------------------- tensors

def covariant_derivative(obj, tensor, order=1, metric=None, gamma=None):
    """``nabla^order`` of a covariant tensor field of any rank.

    ``tensor`` has shape ``(*shape, n, ..., n)``; each application adds one
    leading tensor slot. Interval ends use one-sided stencils.
    """
    if order < 1:
        raise ValueError("order must be at least 1")
    chart, g = _unpack(obj, metric)
    if gamma is None:
        gamma = christoffel(chart, g)
    nd = chart.ndim
    T = np.asarray(tensor, dtype=float)
    for _ in range(order):
        rank = T.ndim - nd
        dT = gradient(T, chart)  # derivative slot first
        for k in range(rank):
            # subtract Gamma^m_{a i_k} T_{... m ...}
            Tm = np.moveaxis(T, nd + k, -1)  # [..., rest..., m]
            corr = _contract_gamma(gamma, Tm, nd)
            # corr shape [..., a, rest..., i]; put i back at slot k (+1 for the derivative slot)
            corr = np.moveaxis(corr, -1, nd + 1 + k)
            dT = dT - corr
        T = dT
    return T


def _contract_gamma(gamma, Tm, nd):
    """``sum_m Gamma^m_{a i} Tm[..., rest, m]`` with shape ``[..., a, rest, i]``."""
    rest = Tm.ndim - nd - 1
    letters = "pqrstuvw"[:rest]
    return np.einsum(f"...mai,...{letters}m->...a{letters}i", gamma, Tm)


def raise_all(g_inv, tensor, nd):
    """Raise every slot of a covariant tensor with the inverse metric."""
    T = tensor
    rank = T.ndim - nd
    for k in range(rank):
        T = _raise_slot(g_inv, T, nd, k)
    return T


def _raise_slot(g_inv, T, nd, k):
    Tm = np.moveaxis(T, nd + k, -1)
    rest = Tm.ndim - nd - 1
    letters = "pqrstuvw"[:rest]
    out = np.einsum(f"...ij,...{letters}j->...{letters}i", g_inv, Tm)
    return np.moveaxis(out, -1, nd + k)


def tensor_norm(obj, tensor, metric=None):
    """Pointwise ``|T|_g`` of a covariant tensor field (scalars: absolute value)."""
    chart, g = _unpack(obj, metric)
    nd = chart.ndim
    T = np.asarray(tensor, dtype=float)
    if T.ndim == nd:
        return np.abs(T)
    up = raise_all(_invert(g), T, nd)
    axes = tuple(range(nd, T.ndim))
    return np.sqrt(np.maximum(np.sum(T * up, axis=axes), 0.0))


def hessian(obj, f, metric=None, gamma=None):
    """``Hess_g f = nabla df`` as an ``(n, n)`` field."""
    chart, g = _unpack(obj, metric)
    df = gradient(f, chart)
    return covariant_derivative(chart, df, 1, metric=g, gamma=gamma)


def contracted_bianchi_residual(obj, metric=None, bundle=None):
    """Sup of ``|dR - 2 div Ric|`` (vanishes for smooth metrics)."""
    chart, g = _unpack(obj, metric)
    if bundle is None:
        bundle = riemann(chart, g)
    ginv = _invert(g)
    dR = gradient(bundle.scalar, chart)
    nric = covariant_derivative(chart, bundle.ric, 1, metric=g, gamma=bundle.christoffel)
    div = np.einsum("...ca,...cab->...b", ginv, nric)
    return float(np.max(np.abs(dR - 2.0 * div)))


# ---------------------------------------------------------------- FEM Laplacian

def _cells(chart):
    """Corner node indices of every cell, shape ``(cells, 2^n)``."""
    n = chart.ndim
    counts = [N if p else N - 1 for N, p in zip(chart.shape, chart.periodic)]
    starts = np.stack(np.meshgrid(*[np.arange(c) for c in counts], indexing="ij"), -1)
    starts = starts.reshape(-1, n)
    corners = np.array(list(itertools.product((0, 1), repeat=n)))
    idx = starts[:, None, :] + corners[None, :, :]
    shape = np.array(chart.shape)
    idx = idx % shape
    flat = np.ravel_multi_index(tuple(idx[..., a] for a in range(n)), chart.shape)
    return flat, corners


def diffusion_coefficient(chart, g):
    """``sqrt(det g) g^{ij}`` at the nodes."""
    return np.sqrt(np.linalg.det(g))[..., None, None] * _invert(g)


def stiffness_matrix(obj, metric=None):
    """Q1 stiffness matrix of ``int sqrt(g) g^{ij} d_i f d_j f``.

    Multilinear elements on the coordinate cells, the coefficient interpolated
    multilinearly from the nodes and integrated with the tensor Gauss rule.
    Symmetric by construction and annihilates constants.
    """
    chart, g = _unpack(obj, metric)
    n = chart.ndim
    h = np.array(chart.spacing)
    coef = diffusion_coefficient(chart, g).reshape(-1, n, n)
    cells, corners = _cells(chart)
    gpts = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))
    cell_coef = coef[cells]  # (cells, 2^n, n, n)
    Ke = np.zeros((cells.shape[0], len(corners), len(corners)))
    gweight = np.prod(h) / 2 ** n
    for gp in itertools.product(gpts, repeat=n):
        t = np.array(gp)
        fac = np.where(corners == 1, t, 1.0 - t)  # (2^n, n)
        phi = np.prod(fac, axis=1)
        dphi = np.empty((len(corners), n))
        for a in range(n):
            others = np.prod(np.delete(fac, a, axis=1), axis=1)
            dphi[:, a] = np.where(corners[:, a] == 1, 1.0, -1.0) * others / h[a]
        C = np.einsum("p,cpij->cij", phi, cell_coef)
        Ke += gweight * np.einsum("pi,cij,qj->cpq", dphi, C, dphi)
    rows = np.repeat(cells, len(corners), axis=1).ravel()
    cols = np.tile(cells, (1, len(corners))).ravel()
    S = sparse.coo_matrix((Ke.ravel(), (rows, cols)), shape=(chart.size, chart.size)).tocsr()
    return ((S + S.T) * 0.5).tocsr()


def mass_weights(obj, metric=None):
    """Lumped volume weights ``sqrt(det g) * trapezoid weights``."""
    chart, g = _unpack(obj, metric)
    return np.sqrt(np.linalg.det(g)) * chart.cell_weights()


def laplacian_matrix(obj, metric=None):
    """Sparse ``Delta_g = -W^{-1} S``; self-adjoint for the weighted inner product."""
    chart, g = _unpack(obj, metric)
    w = mass_weights(chart, g).ravel()
    return -(sparse.diags(1.0 / w) @ stiffness_matrix(chart, g)).tocsr()


def laplace_beltrami(obj, f, metric=None):
    """Discrete ``Delta_g f`` at every node.

    Interior nodes use the weak-form operator ``-S f / w``. At boundary nodes
    the natural flux term is added back with a one-sided normal derivative,
    so the result approximates the strong Laplacian there as well.
    """
    chart, g = _unpack(obj, metric)
    f = np.asarray(f, dtype=float)
    S = stiffness_matrix(chart, g)
    w = mass_weights(chart, g)
    out = -(S @ f.ravel()).reshape(chart.shape)
    bd = boundary_geometry(chart, g)
    if bd is not None:
        dnu = normal_derivative(chart, g, f, bd)
        out = out - np.where(bd.mask, bd.weights * dnu, 0.0)
    return out / w


# ---------------------------------------------------------------- boundary

@dataclass
class BoundaryData:
    """Geometry of the boundary faces ``x_a = lower`` and ``x_a = upper``.

    ``normal``, ``second_fundamental`` and ``mean_curvature`` are full node
    arrays, meaningful only where ``mask`` is set. ``second_fundamental`` is
    expressed on the full coordinate frame with the normal row/column zeroed.
    """

    axis: int
    mask: np.ndarray
    normal: np.ndarray
    second_fundamental: np.ndarray
    mean_curvature: np.ndarray
    induced_metric: np.ndarray
    weights: np.ndarray
    face_sign: np.ndarray

    @property
    def tangent_axes(self):
        n = self.normal.shape[-1]
        return [b for b in range(n) if b != self.axis]

    def face(self, which):
        """Slice selecting the low (``0``) or high (``1``) face."""
        idx = [slice(None)] * self.mask.ndim
        idx[self.axis] = 0 if which == 0 else -1
        return tuple(idx)


def boundary_geometry(obj, metric=None, gamma=None):
    """Inward normal, second fundamental form and normalised mean curvature.

    Conventions: ``nu`` is the inward g-unit normal,
    ``A(X, Y) = g(nabla_X nu, Y)`` and ``h = tr A / (n - 1)``. Returns
    ``None`` for a closed chart.
    """
    chart, g = _unpack(obj, metric)
    axis = next((a for a, p in enumerate(chart.periodic) if not p), None)
    if axis is None:
        return None
    n = chart.ndim
    ginv = _invert(g)
    if gamma is None:
        gamma = christoffel(chart, g)
    mask = np.zeros(chart.shape, dtype=bool)
    sign = np.zeros(chart.shape)
    lo = [slice(None)] * n
    hi = [slice(None)] * n
    lo[axis], hi[axis] = 0, -1
    mask[tuple(lo)] = mask[tuple(hi)] = True
    sign[tuple(lo)] = 1.0
    sign[tuple(hi)] = -1.0
    gaa = ginv[..., axis, axis]
    normal = sign[..., None] * ginv[..., :, axis] / np.sqrt(gaa)[..., None]
    tang = [b for b in range(n) if b != axis]
    A = np.zeros(chart.shape + (n, n))
    A_t = -sign[..., None, None] * gamma[..., axis, :, :] / np.sqrt(gaa)[..., None, None]
    for j in tang:
        for k in tang:
            A[..., j, k] = A_t[..., j, k]
    dg = g[..., tang, :][..., :, tang]
    dg_inv = _invert(dg)
    H = np.einsum("...jk,...jk->...", dg_inv, A[..., tang, :][..., :, tang])
    hmean = np.where(mask, H / (n - 1), 0.0)
    tw = np.ones(chart.shape)
    for b in tang:
        s = [1] * n
        s[b] = -1
        tw = tw * chart.axis_weights(b).reshape(s)
    weights = np.where(mask, np.sqrt(np.linalg.det(dg)) * tw, 0.0)
    return BoundaryData(axis, mask, np.where(mask[..., None], normal, 0.0), A, hmean,
                        dg, weights, sign)


def normal_derivative(obj, g_or_f, f=None, bd=None):
    """``d_nu f`` at boundary nodes (zero elsewhere)."""
    if isinstance(obj, DiscreteManifold):
        chart, g, f = obj.chart, obj.metric, g_or_f
    else:
        chart, g = obj, g_or_f
    if bd is None:
        bd = boundary_geometry(chart, g)
    df = gradient(np.asarray(f, float), chart)
    return np.where(bd.mask, np.einsum("...i,...i->...", bd.normal, df), 0.0)


def normal_consistency(bd, g):
    """Sup over boundary nodes of ``|g(nu,nu) - 1|`` and ``|g(nu, d_t)|``."""
    unit = np.einsum("...i,...ij,...j->...", bd.normal, g, bd.normal)
    ortho = np.einsum("...i,...ij->...j", bd.normal, g)[..., bd.tangent_axes]
    return (float(np.max(np.abs(unit[bd.mask] - 1.0))),
            float(np.max(np.abs(ortho[bd.mask]))))


def face_chart_and_metric(chart, bd, which):
    """Boundary face as an (n-1)-dimensional periodic chart with its induced metric."""
    tang = bd.tangent_axes
    fchart = Chart(tuple(chart.lower[b] for b in tang), tuple(chart.upper[b] for b in tang),
                   tuple(chart.shape[b] for b in tang), tuple(chart.periodic[b] for b in tang))
    return fchart, bd.induced_metric[bd.face(which)]


def curvature_derivative_norms(chart, g, max_order, bundle=None):
    """``sup |nabla^l Riem|_g`` for ``l = 0..max_order``."""
    if bundle is None:
        bundle = riemann(chart, g)
    out = []
    T = bundle.riem
    for l in range(max_order + 1):
        if l > 0:
            T = covariant_derivative(chart, T, 1, metric=g, gamma=bundle.christoffel)
        out.append(float(np.max(tensor_norm(chart, T, metric=g))))
    return out
