"""
Extension across the boundary and cutting back.

* Finite-order Seeley reflection ``(Ef)(-t) = sum_k a_k f(b_k t)`` with
  ``b_k = 2^k``; the coefficients solve ``sum_k a_k (-b_k)^j = 1``.
  Integer ``b_k`` keep every reflected sample on the lattice.
* Positive extension ``F(u) = exp(E ln u)``.
* Metric extension through the matrix logarithm, one collar per face.
* Height functions and cutting a manifold out of its extension along a
  level set, plus the gradient flow onto a level.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import geometry
from .errors import SchemeError
from .grid import DiscreteManifold, interpolator


# ---------------------------------------------------------------- Seeley

@dataclass(frozen=True, eq=False)
class SeeleyScheme:
    order: int
    nodes: tuple
    coefficients: np.ndarray
    residual: float

    @property
    def amplification(self):
        """``sum |a_k|``, the sup-norm gain of the reflection."""
        return float(np.sum(np.abs(self.coefficients)))


def seeley_scheme(order, nodes=None) -> SeeleyScheme:
    """Solve the reflection coefficients for ``order`` and nodes ``b_k`` (default ``2^k``)."""
    if order < 0:
        raise SchemeError("order must be nonnegative")
    b = np.array(nodes if nodes is not None else [2.0 ** k for k in range(order + 1)], float)
    if b.size != order + 1:
        raise SchemeError(f"order {order} needs {order + 1} nodes, got {b.size}")
    if np.any(b <= 0):
        raise SchemeError("reflection nodes must be positive")
    if np.unique(b).size != b.size:
        raise SchemeError(f"duplicate reflection nodes {tuple(b)}")
    V = np.vander(-b, order + 1, increasing=True).T  # V[j, k] = (-b_k)^j
    a = np.linalg.solve(V, np.ones(order + 1))
    res = float(np.max(np.abs(V @ a - 1.0)))
    if res > 1e-10:
        raise SchemeError(f"Vandermonde residual {res:.3e} exceeds 1e-10")
    return SeeleyScheme(order, tuple(float(x) for x in b), a, res)


class Extended(NamedTuple):
    values: np.ndarray
    clamped: bool


def seeley_extend(scheme: SeeleyScheme, values, depth, axis=0) -> Extended:
    """Prepend ``depth`` reflected layers to samples at ``t = 0, h, 2h, ...``.

    ``values`` is sampled along ``axis`` starting at the interface. Layer
    ``-j`` reads samples ``b_k * j``; reads past the last sample are clamped
    to it and reported through ``clamped``.
    """
    f = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    N = f.shape[0]
    idx_nodes = [int(round(b)) for b in scheme.nodes]
    if any(abs(b - i) > 0 for b, i in zip(scheme.nodes, idx_nodes)):
        raise SchemeError("lattice extension needs integer reflection nodes")
    out = np.zeros((depth,) + f.shape[1:])
    clamped = False
    for j in range(1, depth + 1):
        acc = np.zeros(f.shape[1:])
        for a_k, b_k in zip(scheme.coefficients, idx_nodes):
            src = b_k * j
            if src > N - 1:
                src = N - 1
                clamped = True
            acc = acc + a_k * f[src]
        out[depth - j] = acc
    full = np.concatenate([out, f], axis=0)
    return Extended(np.moveaxis(full, 0, axis), clamped)


def beta_floor(scheme: SeeleyScheme, lower, upper=None):
    """Guaranteed lower bound of ``F(u)`` for ``lower <= u <= upper`` (default ``upper = 1/lower``)."""
    if lower <= 0:
        raise ValueError("lower bound must be positive")
    if upper is None:
        upper = 1.0 / lower
    span = max(abs(np.log(lower)), abs(np.log(upper)))
    return float(np.exp(-scheme.amplification * span))


def positive_extend(scheme: SeeleyScheme, u, depth, axis=0) -> Extended:
    """``exp(E ln u)``: positive, and equal to ``u`` on the original samples."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ValueError("positive extension needs u > 0 everywhere")
    ext = seeley_extend(scheme, np.log(u), depth, axis)
    vals = np.exp(ext.values)
    # keep original samples bit-identical
    sl = [slice(None)] * vals.ndim
    sl[axis] = slice(depth, None)
    vals[tuple(sl)] = u
    return Extended(vals, ext.clamped)


# ---------------------------------------------------------------- SPD matrix functions

def spd_log(g):
    lam, V = np.linalg.eigh(g)
    if np.any(lam <= 0):
        raise ValueError("matrix logarithm needs positive-definite input")
    return np.einsum("...ik,...k,...jk->...ij", V, np.log(lam), V)


def spd_exp(a):
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    lam, V = np.linalg.eigh(a)
    out = np.einsum("...ik,...k,...jk->...ij", V, np.exp(lam), V)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


# ---------------------------------------------------------------- metric extension

@dataclass(eq=False)
class ExtendedManifold:
    """Outward collar extension of a manifold with boundary."""

    manifold: DiscreteManifold
    original: DiscreteManifold
    axis: int
    layers: int
    scheme: SeeleyScheme
    clamped: bool = False
    spd_floor: float = 0.0
    multiplicity: int = 1

    def original_slice(self):
        sl = [slice(None)] * self.original.dim
        sl[self.axis] = slice(self.layers, self.layers + self.original.shape[self.axis])
        return tuple(sl)

    def restriction_error(self):
        """``max |g^ - g|`` on the original nodes (zero by construction)."""
        return float(np.max(np.abs(self.manifold.metric[self.original_slice()]
                                   - self.original.metric)))


def _extend_axis(values, scheme, layers, axis):
    """Reflect across both ends of ``axis`` (low end first, then high end)."""
    low = seeley_extend(scheme, values, layers, axis)
    flipped = np.flip(low.values, axis=axis)
    high = seeley_extend(scheme, flipped, layers, axis)
    return np.flip(high.values, axis=axis), low.clamped or high.clamped


def extend_metric(M: DiscreteManifold, scheme: SeeleyScheme, depth) -> ExtendedManifold:
    """Extend ``g`` by ``depth`` (coordinate length) past each boundary face.

    Each entry of ``ln g`` is Seeley-reflected, the result exponentiated and
    the original nodes restored verbatim.
    """
    if not M.has_boundary:
        raise ValueError("metric extension needs a boundary")
    a = M.normal_axis
    h = M.spacing[a]
    layers = int(np.ceil(depth / h - 1e-9))
    log_g = spd_log(M.metric)
    ext_log, clamped = _extend_axis(log_g, scheme, layers, a)
    g_hat = spd_exp(ext_log)
    chart = M.chart
    lo = chart.lower[a] - layers * h
    hi = chart.upper[a] + layers * h
    xchart = chart.with_axis(a, lo, hi, chart.shape[a] + 2 * layers)
    sl = [slice(None)] * M.dim
    sl[a] = slice(layers, layers + chart.shape[a])
    g_hat[tuple(sl)] = M.metric
    bp = list(M.basepoint)
    bp[a] += layers
    X = DiscreteManifold(xchart, g_hat, tuple(bp), f"{M.name}-extended", dict(M.meta))
    floor = float(np.linalg.eigvalsh(g_hat)[..., 0].min())
    return ExtendedManifold(X, M, a, layers, scheme, clamped, floor, 1)


# ---------------------------------------------------------------- collar atlas

@dataclass
class CollarAtlas:
    """Overlapping collar charts with a partition of unity on the extension."""

    weights: list
    metrics: list
    multiplicity: int
    c0: float
    partition_error: float

    def blend(self):
        return sum(w[..., None, None] * g for w, g in zip(self.weights, self.metrics))

    def floor_check(self):
        """``(min eig of blend, m0^{-1} * min_l min eig of chart metrics)``."""
        blended = float(np.linalg.eigvalsh(self.blend())[..., 0].min())
        per = min(float(np.linalg.eigvalsh(g)[..., 0].min()) for g in self.metrics)
        return blended, per / self.multiplicity


def partition_derivative_bound(chart, weights, k=2):
    """``max_l ||psi_l||_{C^k}`` by repeated coordinate differences."""
    best = 0.0
    for w in weights:
        layer = [w]
        best = max(best, float(np.max(np.abs(w))))
        for _ in range(k):
            layer = [geometry.partial(f, chart, a) for f in layer for a in range(chart.ndim)]
            best = max(best, max(float(np.max(np.abs(f))) for f in layer))
    return best


def collar_atlas(chart, weights, metrics, k=2):
    weights = [np.asarray(w, float) for w in weights]
    total = np.sum(weights, axis=0)
    mult = int(np.max(np.sum([w > 0 for w in weights], axis=0)))
    return CollarAtlas(weights, list(metrics), mult, partition_derivative_bound(chart, weights, k),
                       float(np.max(np.abs(total - 1.0))))


# ---------------------------------------------------------------- height function

def taper(t, r2):
    """``t`` up to ``r2/4``, quintic blend to the plateau ``r2/2`` from ``r2/2`` on."""
    t = np.asarray(t, dtype=float)
    q = r2 / 4.0
    s = np.clip((t - q) / q, 0.0, 1.0)
    blend = q + q * (s + 4 * s ** 3 - 7 * s ** 4 + 3 * s ** 5)
    return np.where(t <= q, t, np.where(t >= 2 * q, 2 * q, blend))


@dataclass
class HeightField:
    values: np.ndarray
    band: float
    slope: float
    r2: float
    basepoint_value: float

    def zero_nodes(self, h):
        return np.abs(self.values) <= 0.5 * h * (1 + 1e-9)


def build_height_function(X: ExtendedManifold, r2, band=None, threshold=None) -> HeightField:
    """``f = sum_faces taper(t_face) - (faces - 1) r2/2`` on the extension.

    ``t_face`` is the inward chart coordinate distance to each original
    face, so ``f`` vanishes on the original boundary and equals ``r2/2``
    deep inside.
    """
    M = X.manifold
    a = X.axis
    h = M.spacing[a]
    q = r2 / 4.0
    taper_nodes = int(np.floor(q / h + 1e-9))
    if taper_nodes < 3:
        raise SchemeError(f"taper window r2/4 = {q:g} spans {taper_nodes} nodes; need at least 3")
    if X.layers * h < q * (1 - 1e-9):
        raise SchemeError(f"extension depth {X.layers * h:g} is shallower than r2/4 = {q:g}")
    orig = X.original.chart
    if orig.lengths[a] < r2:
        raise SchemeError("slab thinner than r2: the two collars would overlap")
    x = M.coordinates()[..., a]
    t_lo = x - orig.lower[a]
    t_hi = orig.upper[a] - x
    f = taper(t_lo, r2) + taper(t_hi, r2) - r2 / 2.0
    # exact zeros on the original faces
    sl = [slice(None)] * M.dim
    sl[a] = X.layers
    f[tuple(sl)] = 0.0
    sl[a] = X.layers + orig.shape[a] - 1
    f[tuple(sl)] = 0.0
    if band is None:
        band = q / 2.0
    df = geometry.gradient(f, M.chart)
    norm = np.sqrt(np.einsum("...ij,...i,...j->...", M.metric_inverse, df, df))
    sel = np.abs(f) <= band
    slope = float(norm[sel].min())
    fx = float(f[M.basepoint])
    if fx <= 0:
        raise SchemeError("height function must be positive at the basepoint")
    if threshold is not None and slope < threshold:
        raise SchemeError(f"boundary slope {slope:.3g} below threshold {threshold:.3g}")
    return HeightField(f, band, slope, r2, fx)


def cut_manifold(X: ExtendedManifold, hf: HeightField, shift=0.0) -> DiscreteManifold:
    """Sub-box ``{f + shift >= -h/2}``; its boundary layers are the level-zero nodes."""
    M = X.manifold
    a = X.axis
    h = M.spacing[a]
    f = hf.values + shift
    if not np.any(np.abs(f) <= 0.5 * h * (1 + 1e-9)):
        raise SchemeError("empty zero level set")
    keep = f >= -0.5 * h * (1 + 1e-9)
    layers = np.moveaxis(keep, a, 0).reshape(M.shape[a], -1)
    full = layers.all(axis=1)
    if not np.array_equal(full, layers.any(axis=1)):
        raise SchemeError("cut is not a union of whole layers; only product height functions supported")
    idx = np.flatnonzero(full)
    if idx.size == 0 or not np.array_equal(idx, np.arange(idx[0], idx[-1] + 1)):
        raise SchemeError("cut region is empty or disconnected")
    i0, i1 = int(idx[0]), int(idx[-1])
    if i0 == X.layers and i1 == X.layers + X.original.shape[a] - 1:
        chart = X.original.chart
    else:
        x = M.chart.axis_coords(a)
        chart = M.chart.with_axis(a, float(x[i0]), float(x[i1]), i1 - i0 + 1)
    sl = [slice(None)] * M.dim
    sl[a] = slice(i0, i1 + 1)
    bp = list(M.basepoint)
    bp[a] -= i0
    return DiscreteManifold(chart, M.metric[tuple(sl)], tuple(bp), X.original.name, dict(M.meta))


# ---------------------------------------------------------------- gradient flow

@dataclass
class FlowResult:
    point: np.ndarray
    level: float
    time: float
    level_error: float
    bound: float
    unit_speed_bound: float

    @property
    def within_bound(self):
        return self.time <= self.bound * (1 + 1e-6) + 1e-12


def flow_to_level(X: ExtendedManifold, hf: HeightField, start, target, step=None,
                  min_slope=None, tol=1e-6):
    """Flow along ``grad f`` from ``start`` until ``f = target``.

    ``start`` is a node multi-index (tuple) or a coordinate array.

    The flow is integrated in the level variable (``dx/df = grad f/|grad f|^2``,
    midpoint rule) with multilinear interpolation, then Newton-corrected onto
    the level. The elapsed flow time ``int df / |grad f|^2`` is compared with
    ``|delta f| / slope^2``; ``|delta f| / slope`` is reported too.
    """
    M = X.manifold
    chart = M.chart
    n = M.dim
    if min_slope is None:
        min_slope = 0.5 * hf.slope
    f_i = interpolator(chart, hf.values)
    df = geometry.gradient(hf.values, chart)
    df_i = interpolator(chart, df)
    ginv_i = interpolator(chart, M.metric_inverse.reshape(chart.shape + (n * n,)))
    if isinstance(start, tuple):
        x = chart.coordinates()[tuple(int(s) for s in start)].astype(float)
    else:
        x = np.asarray(start, dtype=float).copy()

    def velocity(xx):
        d = df_i(xx)[0]
        gi = ginv_i(xx)[0].reshape(n, n)
        grad = gi @ d
        nrm2 = float(d @ grad)
        if np.sqrt(nrm2) < min_slope:
            raise SchemeError(f"flow left the regular band (|grad f| = {np.sqrt(nrm2):.3g})")
        return grad, nrm2

    f0 = float(f_i(x)[0])
    total = target - f0
    if step is None:
        step = 0.25 * min(M.spacing)
    nsteps = int(np.ceil(abs(total) / step)) if total else 0
    time = 0.0
    for j in range(nsteps):
        dl = total / nsteps
        g1, n1 = velocity(x)
        xm = x + 0.5 * dl * g1 / n1
        g2, n2 = velocity(xm)
        x = x + dl * g2 / n2
        time += abs(dl) / n2
    for _ in range(50):
        err = target - float(f_i(x)[0])
        if abs(err) <= tol * 1e-3:
            break
        g1, n1 = velocity(x)
        x = x + err * g1 / n1
        time += abs(err) / n1
    err = abs(target - float(f_i(x)[0]))
    if err > tol:
        raise SchemeError(f"level correction stalled at error {err:.3e}")
    slope = hf.slope
    return FlowResult(x, float(f_i(x)[0]), time, err, abs(total) / slope ** 2,
                      abs(total) / slope)
