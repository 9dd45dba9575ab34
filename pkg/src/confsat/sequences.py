"""
Finite prefixes of converging manifold sequences and their satellite
diagnostics: conformal distortion, C^k distances, epsilon-isometries.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csgraph

from . import geometry, satellite, spectral
from .errors import MetricError, SolverError
from .grid import DiscreteManifold, metric_ball
from .metrics import ManifoldSpec, build_box_manifold


@dataclass
class SequenceSpec:
    """``g_i = g_inf + (amplitude / i^exponent) * bump * E`` for ``i = 1..count``."""

    limit: ManifoldSpec
    amplitude: float = 0.2
    exponent: float = 1.0
    count: int = 8
    s: object = 1
    seed: int = 0
    wavenumbers: tuple = None
    phases: tuple = None
    ball_radius: float = 1.0
    samples: int = 8

    def amplitudes(self):
        return [self.amplitude / float(i) ** self.exponent for i in range(1, self.count + 1)]

    def member_spec(self, i):
        params = {
            "base": self.limit.formula,
            "base_params": dict(self.limit.params),
            "amplitude": self.amplitude,
            "exponent": self.exponent,
            "index": i,
        }
        if self.wavenumbers is not None:
            params["wavenumbers"] = list(self.wavenumbers)
        if self.phases is not None:
            params["phases"] = list(self.phases)
        return ManifoldSpec(self.limit.lower, self.limit.upper, self.limit.shape,
                            self.limit.periodic, "perturbed-sequence", params,
                            self.limit.basepoint, f"{self.limit.name or 'seq'}-{i}")


def generate_sequence(spec: SequenceSpec):
    """Members ``1..count`` (shared chart and basepoint)."""
    if spec.count < 2:
        raise ValueError("a sequence needs at least two members")
    amps = spec.amplitudes()
    if spec.amplitude != 0 and not all(b < a for a, b in zip(amps, amps[1:])):
        raise ValueError("perturbation amplitude must be strictly decreasing")
    out = []
    for i in range(1, spec.count + 1):
        try:
            out.append(build_box_manifold(spec.member_spec(i)))
        except MetricError as exc:
            raise MetricError(f"sequence member {i}: {exc}", exc.node) from exc
    return out


def build_limit(spec: SequenceSpec) -> DiscreteManifold:
    return build_box_manifold(spec.limit)


# ---------------------------------------------------------------- metric comparisons

def relative_eigenvalues(g1, g2):
    """Eigenvalues of ``g2`` relative to ``g1`` (ascending) at every node."""
    L = np.linalg.cholesky(g1)
    Linv = np.linalg.inv(L)
    C = np.einsum("...ij,...jk,...lk->...il", Linv, g2, Linv)
    return np.linalg.eigvalsh(0.5 * (C + np.swapaxes(C, -1, -2)))


def conformal_distortion(g1, g2, region=None):
    """``sup_region (lam_max - lam_min)`` of ``g2`` relative to ``g1``.

    ``region`` is a set of flat node indices (all nodes if ``None``).
    """
    lam = relative_eigenvalues(np.asarray(g1, float), np.asarray(g2, float))
    spread = lam[..., -1] - lam[..., 0]
    spread = spread.reshape(-1) if region is None else spread.reshape(-1)[np.asarray(region)]
    return float(np.max(spread))


def ck_distance(chart, g1, g2, k, region=None):
    """``max_{l <= k} sup |nabla^l_{g1} (g2 - g1)|_{g1}`` over ``region``."""
    if k > 2:
        raise ValueError("derivative order above 2 is not supported")
    g1 = np.asarray(g1, float)
    diff = np.asarray(g2, float) - g1
    gamma = geometry.christoffel(chart, g1)
    best = 0.0
    T = diff
    for l in range(k + 1):
        if l:
            T = geometry.covariant_derivative(chart, T, 1, metric=g1, gamma=gamma)
        norm = geometry.tensor_norm(chart, T, metric=g1).reshape(-1)
        if region is not None:
            norm = norm[np.asarray(region)]
        best = max(best, float(np.max(norm)))
    return best


@dataclass
class IsometryResult:
    epsilon: float
    distortion: float
    coverage: float
    sources: list


def epsilon_isometry_check(M1, M2, correspondence=None, samples=8, seed=0, ball=None):
    """Achieved ``epsilon`` of a node map ``M1 -> M2``.

    ``distortion`` is ``max |d2(phi a, phi b) - d1(a, b)|`` over seeded
    source nodes ``a`` and all targets ``b``; ``coverage`` is the largest
    distance from a node of ``ball`` (flat indices in ``M2``, default all)
    to the image of ``phi``. ``epsilon`` is the larger of the two.
    """
    n1 = M1.size
    phi = np.arange(n1) if correspondence is None else np.asarray(correspondence)
    rng = np.random.default_rng(seed)
    sources = np.sort(rng.choice(n1, size=min(samples, n1), replace=False))
    d1 = csgraph.dijkstra(M1.graph, directed=False, indices=sources)
    d2 = csgraph.dijkstra(M2.graph, directed=False, indices=phi[sources])
    distortion = float(np.max(np.abs(d2[:, phi] - d1)))
    image = np.unique(phi)
    if image.size == M2.size:
        coverage = 0.0
    else:
        dimg = csgraph.dijkstra(M2.graph, directed=False, indices=image, min_only=True)
        targets = np.arange(M2.size) if ball is None else np.asarray(ball)
        coverage = float(np.max(dimg[targets]))
    return IsometryResult(max(distortion, coverage), distortion, coverage,
                          [int(s) for s in sources])


# ---------------------------------------------------------------- diagnostics

@dataclass
class SequenceDiagnostics:
    s: object
    rows: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    limit_eigenvalue: float = float("nan")

    @property
    def partial(self):
        return bool(self.failures)

    def column(self, name):
        return [r[name] for r in self.rows]

    COLUMNS = ("index", "amplitude", "eigenvalue", "bound", "bound_ok", "ck_distance",
               "distortion_to_last", "distortion_to_limit", "epsilon", "harnack", "diameter")

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in self.COLUMNS])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def cauchy_trend(values):
    """Successive gaps ``|v_{i+1} - v_i|`` are nonincreasing."""
    gaps = np.abs(np.diff(values))
    return bool(np.all(gaps[1:] <= gaps[:-1] * (1 + 1e-9) + 1e-15)), gaps.tolist()


def monotone_decreasing(values, allowed_violations=1):
    v = np.asarray(values)
    return int(np.sum(v[1:] > v[:-1])) <= allowed_violations


def satellite_sequence_diagnostics(spec: SequenceSpec, tol=1e-10):
    """Solve each member, build satellites and tabulate the traces and verdicts."""
    s = spectral.normalize_mode(spec.s)
    members = generate_sequence(spec)
    limit = build_limit(spec)
    diag = SequenceDiagnostics(s)
    try:
        limit_sat = satellite.make_satellite(limit, s, tol=tol)
        diag.limit_eigenvalue = limit_sat.eigenvalue
    except SolverError as exc:
        diag.failures.append(("limit", str(exc)))
        limit_sat = None
    ball = metric_ball(limit, limit.basepoint, spec.ball_radius)
    sats = []
    for i, M in enumerate(members, start=1):
        try:
            sats.append(satellite.make_satellite(M, s, tol=tol))
        except SolverError as exc:
            diag.failures.append((i, str(exc)))
            sats.append(None)
    last = sats[-1]
    for i, (M, S) in enumerate(zip(members, sats), start=1):
        row = {"index": i, "amplitude": spec.amplitudes()[i - 1]}
        row["ck_distance"] = ck_distance(limit.chart, limit.metric, M.metric, 2)
        if S is None:
            row.update(eigenvalue=float("nan"), bound=float("nan"), bound_ok=False,
                       distortion_to_last=float("nan"), distortion_to_limit=float("nan"),
                       epsilon=float("nan"), harnack=float("nan"), diameter=float("nan"))
            diag.rows.append(row)
            continue
        b = spectral.eigen_bounds_check(M, S.solution)
        row["eigenvalue"] = S.eigenvalue
        row["bound"] = b.bound
        row["bound_ok"] = b.passed
        row["distortion_to_last"] = (conformal_distortion(last.manifold.metric, S.manifold.metric, ball)
                                     if last is not None else float("nan"))
        row["distortion_to_limit"] = (conformal_distortion(limit_sat.manifold.metric,
                                                           S.manifold.metric, ball)
                                      if limit_sat is not None else float("nan"))
        if limit_sat is not None:
            iso = epsilon_isometry_check(limit_sat.manifold, S.manifold, samples=spec.samples,
                                         seed=spec.seed)
            row["epsilon"] = iso.epsilon
        else:
            row["epsilon"] = float("nan")
        row["harnack"] = spectral.harnack_ratio(S.u, ball)
        dx = csgraph.dijkstra(S.manifold.graph, directed=False, indices=S.manifold.basepoint_flat)
        row["diameter"] = float(2 * np.max(dx))
        diag.rows.append(row)
    lam = diag.column("eigenvalue")
    dist = diag.column("distortion_to_last")
    eps = diag.column("epsilon")
    trend, gaps = cauchy_trend(lam)
    diag.verdicts["envelopes"] = all(diag.column("bound_ok"))
    diag.verdicts["cauchy_trend"] = trend
    diag.verdicts["distortion_decay"] = bool(len(dist) >= 3 and dist[-2] < 0.1 * dist[0])
    diag.verdicts["epsilon_monotone"] = bool(all(e > 0 for e in eps) and monotone_decreasing(eps))
    ck = diag.column("ck_distance")
    diag.verdicts["ck_decreasing"] = bool(all(b < a for a, b in zip(ck, ck[1:])))
    if s == spectral.CLOSED and last is not None:
        diag.verdicts["sign_law"] = satellite.sign_law_violations(last, 1e-8) == 0
    diag.verdicts["complete"] = not diag.failures
    return diag
