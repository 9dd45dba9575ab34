"""
Structured-chart representation of pointed compact Riemannian manifolds.

A manifold is a single coordinate box. Every axis is either periodic or a
closed interval; the two ends of an interval axis are boundary faces. The
metric is stored as an ``(*shape, n, n)`` array of coordinate components.

Distances are shortest paths on the node graph whose edges join every pair
of nodes in a common cell (axis neighbours and all cell diagonals), with
weights equal to the metric length of the coordinate displacement.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse import csgraph

from .errors import DimensionError, MetricError

INF_DISTANCE = np.inf


@dataclass(frozen=True)
class Chart:
    """Coordinate box with per-axis periodicity.

    Periodic axes carry ``N`` nodes at ``lower + i*h`` with ``h = L/N``;
    interval axes carry ``N`` nodes including both ends, ``h = L/(N-1)``.
    """

    lower: tuple
    upper: tuple
    shape: tuple
    periodic: tuple

    def __post_init__(self):
        n = len(self.shape)
        if not (len(self.lower) == len(self.upper) == len(self.periodic) == n):
            raise ValueError("chart ranges, shape and periodicity must have equal length")
        for a in range(n):
            if self.upper[a] <= self.lower[a]:
                raise ValueError(f"empty coordinate range on axis {a}")
            if self.shape[a] < 5:
                raise ValueError(f"axis {a} has {self.shape[a]} nodes; at least 5 required")

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def lengths(self):
        return tuple(u - l for l, u in zip(self.lower, self.upper))

    @property
    def spacing(self):
        return tuple(
            L / N if p else L / (N - 1)
            for L, N, p in zip(self.lengths, self.shape, self.periodic)
        )

    @property
    def size(self):
        return int(np.prod(self.shape))

    def axis_coords(self, a):
        return self.lower[a] + self.spacing[a] * np.arange(self.shape[a])

    def coordinates(self):
        """Node coordinates, shape ``(*shape, n)``."""
        axes = [self.axis_coords(a) for a in range(self.ndim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def axis_weights(self, a):
        """Trapezoid weights along one axis (half weight at interval ends)."""
        w = np.full(self.shape[a], self.spacing[a])
        if not self.periodic[a]:
            w[0] *= 0.5
            w[-1] *= 0.5
        return w

    def cell_weights(self):
        """Tensor-product trapezoid weights, shape ``shape``."""
        w = np.ones(self.shape)
        for a in range(self.ndim):
            s = [1] * self.ndim
            s[a] = -1
            w = w * self.axis_weights(a).reshape(s)
        return w

    def with_axis(self, a, lower, upper, count):
        lo, up, sh = list(self.lower), list(self.upper), list(self.shape)
        lo[a], up[a], sh[a] = lower, upper, count
        return Chart(tuple(lo), tuple(up), tuple(sh), self.periodic)


def check_metric(metric, chart=None):
    """Raise :class:`MetricError` unless ``metric`` is symmetric and SPD everywhere."""
    metric = np.asarray(metric, dtype=float)
    if not np.all(np.isfinite(metric)):
        bad = np.argwhere(~np.isfinite(metric).all(axis=(-1, -2)))[0]
        raise MetricError(f"non-finite metric at node {tuple(int(i) for i in bad)}", tuple(bad))
    if not np.array_equal(metric, np.swapaxes(metric, -1, -2)):
        bad = np.argwhere((metric != np.swapaxes(metric, -1, -2)).any(axis=(-1, -2)))[0]
        raise MetricError(f"metric not symmetric at node {tuple(int(i) for i in bad)}", tuple(bad))
    lam = np.linalg.eigvalsh(metric)[..., 0]
    if np.any(lam <= 0):
        bad = tuple(int(i) for i in np.unravel_index(np.argmin(lam), lam.shape))
        raise MetricError(
            f"metric not positive-definite at node {bad} (smallest eigenvalue {lam[bad]:.3e})", bad
        )
    return lam


@dataclass(frozen=True, eq=False)
class DiscreteManifold:
    """Pointed Riemannian manifold sampled on one box chart.

    ``basepoint`` is a node multi-index. The manifold is immutable; derived
    quantities (node graph, boundary masks) are cached on first use.
    """

    chart: Chart
    metric: np.ndarray
    basepoint: tuple
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.chart.ndim < 3:
            raise DimensionError(
                f"dimension {self.chart.ndim} < 3: the conformal exponent 4/(n-2) is undefined"
            )
        metric = np.asarray(self.metric, dtype=float)
        if metric.shape != self.chart.shape + (self.dim, self.dim):
            raise ValueError(f"metric shape {metric.shape} does not match chart {self.chart.shape}")
        metric = metric.copy()
        metric.setflags(write=False)
        object.__setattr__(self, "metric", metric)
        object.__setattr__(self, "basepoint", tuple(int(i) for i in self.basepoint))
        if sum(not p for p in self.chart.periodic) > 1:
            raise ValueError(
                "at most one interval axis is supported: boundary faces must not intersect"
            )
        check_metric(metric)
        if self.is_boundary_node(self.basepoint):
            raise ValueError(f"basepoint {self.basepoint} lies on the boundary")

    @property
    def dim(self):
        return self.chart.ndim

    @property
    def shape(self):
        return self.chart.shape

    @property
    def spacing(self):
        return self.chart.spacing

    @property
    def size(self):
        return self.chart.size

    @cached_property
    def normal_axis(self):
        """Index of the interval axis, or ``None`` for a closed manifold."""
        for a, p in enumerate(self.chart.periodic):
            if not p:
                return a
        return None

    @property
    def has_boundary(self):
        return self.normal_axis is not None

    @cached_property
    def boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        a = self.normal_axis
        if a is not None:
            idx = [slice(None)] * self.dim
            idx[a] = 0
            mask[tuple(idx)] = True
            idx[a] = -1
            mask[tuple(idx)] = True
        return mask

    def is_boundary_node(self, node):
        a = self.normal_axis
        return a is not None and node[a] in (0, self.shape[a] - 1)

    @property
    def basepoint_flat(self):
        return int(np.ravel_multi_index(self.basepoint, self.shape))

    def flat(self, node):
        if np.isscalar(node):
            return int(node)
        return int(np.ravel_multi_index(tuple(node), self.shape))

    def coordinates(self):
        return self.chart.coordinates()

    @cached_property
    def metric_inverse(self):
        return np.linalg.inv(self.metric)

    @cached_property
    def volume_density(self):
        return np.sqrt(np.linalg.det(self.metric))

    def with_metric(self, metric, name=None):
        return DiscreteManifold(self.chart, metric, self.basepoint, name or self.name, dict(self.meta))

    @cached_property
    def graph(self):
        return node_graph(self.chart, self.metric)


def _cell_offsets(n):
    """Half of the nonzero offsets in {-1,0,1}^n (one of each +/- pair)."""
    out = []
    for off in itertools.product((-1, 0, 1), repeat=n):
        nz = [o for o in off if o != 0]
        if nz and nz[0] > 0:
            out.append(np.array(off))
    return out


def node_graph(chart, metric):
    """Sparse symmetric adjacency matrix of the node graph."""
    n = chart.ndim
    h = np.array(chart.spacing)
    idx = np.arange(chart.size).reshape(chart.shape)
    rows, cols, vals = [], [], []
    for off in _cell_offsets(n):
        src = [slice(None)] * n
        dst_idx = idx
        g_dst = metric
        for a in range(n):
            if off[a] == 0:
                continue
            if chart.periodic[a]:
                dst_idx = np.roll(dst_idx, -off[a], axis=a)
                g_dst = np.roll(g_dst, -off[a], axis=a)
            else:
                src[a] = slice(0, -1) if off[a] > 0 else slice(1, None)
        if any(s != slice(None) for s in src):
            # shift along interval axes by slicing
            sl_src = tuple(src)
            sl_dst = tuple(
                slice(1, None) if (s == slice(0, -1)) else slice(0, -1) if s == slice(1, None) else slice(None)
                for s in src
            )
            a_idx, b_idx = idx[sl_src], dst_idx[sl_dst]
            ga, gb = metric[sl_src], g_dst[sl_dst]
        else:
            a_idx, b_idx = idx, dst_idx
            ga, gb = metric, g_dst
        d = off * h
        gbar = 0.5 * (ga + gb)
        w = np.sqrt(np.einsum("...ij,i,j->...", gbar, d, d))
        rows.append(a_idx.ravel())
        cols.append(b_idx.ravel())
        vals.append(w.ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    A = sparse.coo_matrix((vals, (rows, cols)), shape=(chart.size, chart.size)).tocsr()
    return (A + A.T).tocsr()


def distances_from(M, sources, limit=np.inf, predecessors=False):
    """Graph distances from one or several source nodes (flat indices or tuples)."""
    if np.isscalar(sources) or isinstance(sources, tuple):
        sources = [sources]
    src = [M.flat(s) for s in sources]
    return csgraph.dijkstra(M.graph, directed=False, indices=src, limit=limit,
                            return_predecessors=predecessors)


def graph_distance(M, a, b):
    """Shortest-path distance between nodes ``a`` and ``b``; ``inf`` if disconnected."""
    if M.flat(a) == M.flat(b):
        return 0.0
    return float(distances_from(M, a)[0, M.flat(b)])


def distance_to_boundary(M):
    """Graph distance of every node to the boundary node set (``inf`` if closed)."""
    if not M.has_boundary:
        return np.full(M.shape, INF_DISTANCE)
    src = np.flatnonzero(M.boundary_mask.ravel())
    d = csgraph.dijkstra(M.graph, directed=False, indices=src, min_only=True)
    return d.reshape(M.shape)


def metric_ball(M, center, r):
    """Flat indices of nodes at graph distance ``< r`` from ``center``."""
    if r <= 0:
        raise ValueError("ball radius must be positive")
    d = distances_from(M, center, limit=r)[0]
    return np.flatnonzero(d < r)


def _double_cover(chart, metric, a):
    sh = list(chart.shape)
    sh[a] *= 2
    up = list(chart.upper)
    up[a] = chart.lower[a] + 2 * chart.lengths[a]
    cover = Chart(chart.lower, tuple(up), tuple(sh), chart.periodic)
    return cover, np.concatenate([metric, metric], axis=a)


def systole(chart, metric, centers):
    """Length of the shortest loop winding once around a periodic axis.

    Computed on the two-fold cover along each periodic axis as the distance
    between the two lifts of each centre; ``inf`` if no axis is periodic.
    """
    best = np.inf
    for a in range(chart.ndim):
        if not chart.periodic[a]:
            continue
        cover, g2 = _double_cover(chart, metric, a)
        G = node_graph(cover, g2)
        for c in centers:
            c = tuple(int(i) for i in c)
            lift = list(c)
            lift[a] += chart.shape[a]
            s = int(np.ravel_multi_index(c, cover.shape))
            t = int(np.ravel_multi_index(tuple(lift), cover.shape))
            d = csgraph.dijkstra(G, directed=False, indices=s)[t]
            best = min(best, float(d))
    return best


def export_field_csv(M, values, path, header=None):
    """Write node index, coordinates and field components as CSV."""
    values = np.asarray(values)
    flat = values.reshape(M.size, -1)
    coords = M.coordinates().reshape(M.size, M.dim)
    cols = header or [f"v{k}" for k in range(flat.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node"] + [f"x{a}" for a in range(M.dim)] + list(cols))
        for i in range(M.size):
            w.writerow([i] + [repr(float(x)) for x in coords[i]] + [repr(float(v)) for v in flat[i]])


def interpolator(chart, values):
    """Multilinear interpolant of a node field at off-lattice coordinates.

    Periodic axes are padded with one wrapped layer and queries are reduced
    modulo the period; interval axes reject points outside the box.
    """
    values = np.asarray(values, dtype=float)
    axes = []
    for a in range(chart.ndim):
        x = chart.axis_coords(a)
        if chart.periodic[a]:
            x = np.append(x, chart.upper[a])
            values = np.concatenate([values, np.take(values, [0], axis=a)], axis=a)
        axes.append(x)
    rgi = RegularGridInterpolator(axes, values, method="linear", bounds_error=True)
    lower = np.array(chart.lower)
    lengths = np.array(chart.lengths)
    periodic = np.array(chart.periodic)

    def evaluate(points):
        p = np.array(points, dtype=float, ndmin=2)
        p[:, periodic] = lower[periodic] + np.mod(p[:, periodic] - lower[periodic],
                                                  lengths[periodic])
        return rgi(p)

    return evaluate
