"""
Closed-form metric families addressed by formula id.

Each formula maps node coordinates ``(*shape, n)`` and a parameter dict to
a metric array ``(*shape, n, n)``. The registry is what scenario files and
:func:`build_box_manifold` refer to.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .grid import Chart, DiscreteManifold


def bump_profile(coords, wavenumbers=None, phases=None):
    """Product of sines ``prod_a sin(k_a x_a + p_a)``; axes with ``k_a = 0`` are skipped."""
    n = coords.shape[-1]
    k = np.ones(n) if wavenumbers is None else np.asarray(wavenumbers, float)
    p = np.zeros(n) if phases is None else np.asarray(phases, float)
    out = np.ones(coords.shape[:-1])
    for a in range(n):
        if k[a] != 0:
            out = out * np.sin(k[a] * coords[..., a] + p[a])
    return out


def _identity(coords):
    n = coords.shape[-1]
    return np.broadcast_to(np.eye(n), coords.shape[:-1] + (n, n)).copy()


def flat_metric(coords, params):
    """Euclidean metric, optionally scaled by ``exp(2*log_scale)``."""
    return np.exp(2.0 * params.get("log_scale", 0.0)) * _identity(coords)


def cylinder_metric(coords, params):
    """``diag(1, r^2, 1, ...)`` with ``r`` the coordinate on axis 0."""
    g = _identity(coords)
    g[..., 1, 1] = coords[..., 0] ** 2
    return g


def conformal_bump_metric(coords, params):
    """``exp(2 eps * bump) * delta`` with a product-of-sines bump."""
    u = params.get("amplitude", 0.1) * bump_profile(
        coords, params.get("wavenumbers"), params.get("phases")
    )
    return np.exp(2.0 * u)[..., None, None] * _identity(coords)


def anisotropic_warp_metric(coords, params):
    """``diag(exp(2 eps cos z), exp(-2 eps cos z), 1, ...)`` along ``axis``.

    Volume-preserving warp whose scalar curvature is ``-2 eps^2 sin^2 z``
    (nonpositive, with mean ``-eps^2`` over a period).
    """
    eps = params.get("amplitude", 0.2)
    z = coords[..., params.get("axis", 2)]
    g = _identity(coords)
    g[..., 0, 0] = np.exp(2 * eps * np.cos(z))
    g[..., 1, 1] = np.exp(-2 * eps * np.cos(z))
    return g


def sequence_direction(n):
    """Fixed symmetric perturbation direction ``e0 e1 + e1 e0 + e_{n-1} e_{n-1}``."""
    E = np.zeros((n, n))
    E[0, 1] = E[1, 0] = 1.0
    E[n - 1, n - 1] = 1.0
    return E


def perturbed_sequence_metric(coords, params):
    """Member ``i`` of ``g_inf + (A / i^p) * bump * E``.

    ``base`` names the limit formula (default ``flat``) and ``base_params``
    its parameters.
    """
    base = params.get("base", "flat")
    if base == "perturbed-sequence":
        raise ConfigError("perturbed-sequence cannot be its own base", field="base")
    g = evaluate_formula(base, coords, params.get("base_params", {}))
    i = params.get("index", 1)
    amp = params.get("amplitude", 0.2) / float(i) ** params.get("exponent", 1.0)
    phi = bump_profile(coords, params.get("wavenumbers"), params.get("phases"))
    E = sequence_direction(coords.shape[-1])
    return g + amp * phi[..., None, None] * E


FORMULAS = {
    "flat": flat_metric,
    "diag-cylinder": cylinder_metric,
    "conformal-bump": conformal_bump_metric,
    "anisotropic-warp": anisotropic_warp_metric,
    "perturbed-sequence": perturbed_sequence_metric,
}


def evaluate_formula(formula, coords, params):
    try:
        fn = FORMULAS[formula]
    except KeyError:
        raise ConfigError(
            f"unknown metric formula {formula!r}; known: {', '.join(sorted(FORMULAS))}",
            field="formula",
        ) from None
    g = np.asarray(fn(coords, dict(params)), dtype=float)
    # exact symmetry; formulas may produce rounding-level asymmetry
    return 0.5 * (g + np.swapaxes(g, -1, -2))


@dataclass
class ManifoldSpec:
    """Parsed manifold description (one box chart)."""

    lower: tuple
    upper: tuple
    shape: tuple
    periodic: tuple
    formula: str = "flat"
    params: dict = field(default_factory=dict)
    basepoint: tuple = None
    name: str = ""

    @property
    def dim(self):
        return len(self.shape)

    def chart(self):
        return Chart(tuple(map(float, self.lower)), tuple(map(float, self.upper)),
                     tuple(map(int, self.shape)), tuple(map(bool, self.periodic)))

    def with_shape(self, shape):
        out = ManifoldSpec(**{**self.__dict__})
        out.shape = tuple(shape)
        if self.basepoint is not None:
            # keep the basepoint at the same relative position
            out.basepoint = None
        return out

    def with_params(self, **updates):
        out = ManifoldSpec(**{**self.__dict__})
        out.params = {**self.params, **updates}
        return out


def default_basepoint(chart):
    """Central node (rounded down)."""
    return tuple(N // 2 for N in chart.shape)


def build_box_manifold(spec: ManifoldSpec) -> DiscreteManifold:
    """Sample the metric formula of ``spec`` on its chart and validate the result."""
    if spec.dim < 3:
        raise DimensionError(
            f"dimension {spec.dim} < 3: the conformal exponent 4/(n-2) is undefined"
        )
    chart = spec.chart()
    g = evaluate_formula(spec.formula, chart.coordinates(), spec.params)
    bp = spec.basepoint if spec.basepoint is not None else default_basepoint(chart)
    return DiscreteManifold(chart, g, tuple(bp), spec.name or spec.formula,
                            {"formula": spec.formula, "params": dict(spec.params)})
