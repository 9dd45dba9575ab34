"""
Command-line scenario runner.

    confsat list
    confsat describe NAME
    confsat run FILE_OR_NAME [--out-dir DIR] [--seed N] [--resolution-override N]

Exit codes: 0 all verdicts pass, 1 some verdict failed, 2 configuration or
name error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import difflib
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import conformal, extension, satellite, sequences, spectral
from .config import (KNOWN_CHECKS, ConfigError, bundled_scenarios, load_bundled,
                     load_scenario)
from .errors import SolverError
from .metrics import bump_profile, build_box_manifold, sequence_direction
from .grid import metric_ball

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


@dataclass
class CheckResult:
    name: str
    columns: tuple
    rows: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)  # (label, passed, detail)

    def verdict(self, label, passed, detail=""):
        self.verdicts.append((label, bool(passed), detail))

    @property
    def passed(self):
        return all(v[1] for v in self.verdicts)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _modes(scn, opts):
    return [spectral.normalize_mode(m) for m in opts.get("modes", [scn.s])]


# ---------------------------------------------------------------- checks

def check_identity(scn, M, ctx):
    opts = scn.check_options("identity")
    res = CheckResult("identity", ("mode", "resolution", "spacing", "eigenvalue",
                                   "scalar_residual", "mean_residual"))
    sizes = opts.get("resolutions", [None])
    abs_tol = float(opts.get("abs_tol", 1e-8))
    max_res = float(opts.get("max_residual", 1e-2))
    for mode in _modes(scn, opts):
        vals = []
        for size in sizes:
            Mr = M if size is None else build_box_manifold(
                scn.manifold.with_shape((int(size),) * scn.manifold.dim))
            S = satellite.make_satellite(Mr, mode, tol=scn.solver.tol, max_iter=scn.solver.max_iter)
            rep = satellite.verify_identities(S)
            vals.append(rep.worst)
            res.rows.append({"mode": mode, "resolution": Mr.shape[0], "spacing": max(Mr.spacing),
                             "eigenvalue": rep.eigenvalue, "scalar_residual": rep.scalar_residual,
                             "mean_residual": rep.mean_residual})
            if mode == spectral.CLOSED:
                bad = satellite.sign_law_violations(S, 1e-8)
                res.verdict(f"sign law ({Mr.shape[0]})", bad == 0, f"{bad} nodes")
        if max(vals) <= abs_tol:
            res.verdict(f"identities s={mode}", True, f"max residual {max(vals):.3e}")
        elif len(vals) >= 2:
            ratio = vals[-2] / vals[-1]
            res.verdict(f"identity convergence s={mode}", ratio >= 2.0 and vals[-1] <= max_res,
                        f"ratio {ratio:.3f}, final {vals[-1]:.3e}")
        else:
            res.verdict(f"identities s={mode}", vals[0] <= max_res, f"residual {vals[0]:.3e}")
    return res


def _solution(ctx, M, mode, scn):
    key = (id(M), mode)
    if key not in ctx["solutions"]:
        ctx["solutions"][key] = spectral.solve_principal(M, mode, tol=scn.solver.tol,
                                                         max_iter=scn.solver.max_iter)
    return ctx["solutions"][key]


def check_bounds(scn, M, ctx):
    opts = scn.check_options("bounds")
    res = CheckResult("bounds", ("mode", "eigenvalue", "bound", "margin", "passed"))
    for mode in _modes(scn, opts):
        sol = _solution(ctx, M, mode, scn)
        b = spectral.eigen_bounds_check(M, sol)
        res.rows.append({"mode": mode, "eigenvalue": sol.eigenvalue, "bound": b.bound,
                         "margin": b.margin, "passed": b.passed})
        res.verdict(f"envelope s={mode}", b.passed, f"|lam|={abs(sol.eigenvalue):.3e} "
                                                    f"bound={b.bound:.3e}")
    return res


def random_positive_fields(shape, count, seed):
    """Seeded positive test functions: half pointwise noise, half smooth."""
    rng = np.random.default_rng(seed)
    grids = np.meshgrid(*[np.linspace(0, 2 * np.pi, N, endpoint=False) for N in shape],
                        indexing="ij")
    out = []
    for i in range(count):
        if i % 2 == 0:
            out.append(rng.uniform(0.1, 2.0, size=shape))
        else:
            f = np.ones(shape)
            for _ in range(3):
                k = rng.integers(0, 3, size=len(shape))
                ph = rng.uniform(0, 2 * np.pi, size=len(shape))
                term = np.ones(shape)
                for a, x in enumerate(grids):
                    term = term * np.cos(k[a] * x + ph[a])
                f = f + rng.uniform(-0.3, 0.3) * term
            out.append(np.maximum(f, 0.05))
    return out


def check_rayleigh(scn, M, ctx):
    opts = scn.check_options("rayleigh")
    count = int(opts.get("count", 50))
    tol = float(opts.get("tol", 1e-8))
    res = CheckResult("rayleigh", ("mode", "sample", "quotient", "eigenvalue", "excess"))
    ops = spectral.assemble(M)
    for mode in _modes(scn, opts):
        sol = _solution(ctx, M, mode, scn)
        worst = np.inf
        for j, f in enumerate(random_positive_fields(M.shape, count, scn.seed)):
            q = spectral.rayleigh_quotient(ops, f, mode)
            res.rows.append({"mode": mode, "sample": j, "quotient": q,
                             "eigenvalue": sol.eigenvalue, "excess": q - sol.eigenvalue})
            worst = min(worst, q - sol.eigenvalue)
        qu = spectral.rayleigh_quotient(ops, sol.u, mode)
        res.verdict(f"minimality s={mode}", worst >= -tol, f"min excess {worst:.3e}")
        res.verdict(f"consistency s={mode}", abs(qu - sol.eigenvalue) <= 1e-8 * max(1, abs(qu)),
                    f"Q(u)-lam={qu - sol.eigenvalue:.3e}")
    return res


def check_harnack(scn, M, ctx):
    opts = scn.check_options("harnack")
    radius = float(opts.get("radius", 1.0))
    size = float(opts.get("perturbation", 0.01))
    max_drift = float(opts.get("max_drift", 0.1))
    res = CheckResult("harnack", ("mode", "radius", "ratio", "perturbed_ratio", "drift"))
    ball = metric_ball(M, M.basepoint, radius)
    phi = bump_profile(M.coordinates(), opts.get("wavenumbers"), opts.get("phases"))
    pert = size * phi[..., None, None] * sequence_direction(M.dim)
    for mode in _modes(scn, opts):
        r0, r1, drift = spectral.harnack_stability(M, mode, ball, pert, tol=scn.solver.tol)
        res.rows.append({"mode": mode, "radius": radius, "ratio": r0, "perturbed_ratio": r1,
                         "drift": drift})
        res.verdict(f"harnack s={mode}", 0 < r0 <= 1 and drift <= max_drift,
                    f"ratio {r0:.6f}, drift {drift:.3e}")
    return res


def check_dense(scn, M, ctx):
    opts = scn.check_options("dense-oracle")
    tol = float(opts.get("tol", 1e-8))
    res = CheckResult("dense-oracle", ("mode", "iterative", "dense", "difference"))
    for mode in _modes(scn, opts):
        sol = _solution(ctx, M, mode, scn)
        dense = spectral.dense_principal(M, mode)
        diff = abs(sol.eigenvalue - dense)
        res.rows.append({"mode": mode, "iterative": sol.eigenvalue, "dense": dense,
                         "difference": diff})
        res.verdict(f"dense oracle s={mode}", diff <= tol, f"diff {diff:.3e}")
    return res


def check_flatzoomer(scn, M, ctx):
    opts = scn.check_options("flatzoomer-sweep")
    shifts = opts.get("shifts", [0.0, 0.5, 1.0, 1.5, 2.0])
    degrees = opts.get("degrees", [0, 1])
    zero_tol = float(opts.get("zero_tol", 1e-10))
    res = CheckResult("flatzoomer-sweep", ("degree", "shift", "sup_phi", "fitted_exponent",
                                           "expected_exponent"))
    sweeps = []
    u0 = np.zeros(M.shape)
    for k in degrees:
        rep = conformal.flatzoomer_sweep(M, u0, int(k), shifts)
        sweeps.append(rep)
        for c, v in zip(rep.shifts, rep.sup_values):
            res.rows.append({"degree": k, "shift": c, "sup_phi": v, "fitted_exponent": rep.exponent,
                             "expected_exponent": rep.expected_exponent})
        if max(rep.sup_values) <= zero_tol:
            res.verdict(f"degree {k}", True, f"flat: sup Phi = {max(rep.sup_values):.1e}")
        else:
            err = abs(rep.exponent - rep.expected_exponent)
            res.verdict(f"degree {k}", err <= 1e-6, f"exponent {rep.exponent:.9f}")
    if all(min(s.sup_values) > zero_tol for s in sweeps):
        comp = conformal.composition_check(sweeps)
        res.verdict("composition", comp["sum"] and comp["sqrt"] and comp["finite"])
    return res


def check_quasi(scn, M, ctx):
    opts = scn.check_options("quasi-flatzoomer")
    shifts = opts.get("shifts", [0.0, 0.5, 1.0])
    res = CheckResult("quasi-flatzoomer", ("shift", "phi0", "phi1", "phi2", "psi", "conv_est",
                                           "inverse_conv_est"))
    psis = []
    for c in shifts:
        u = np.full(M.shape, float(c))
        q = conformal.quasi_flatzoomer_psi(M, u, with_conv=(c == shifts[0]))
        psis.append(q.psi)
        inv = 1.0 / q.conv_est if q.bound_checked else float("nan")
        res.rows.append({"shift": c, "phi0": q.phi0, "phi1": q.phi1, "phi2": q.phi2, "psi": q.psi,
                         "conv_est": q.conv_est, "inverse_conv_est": inv})
        if c == shifts[0]:
            ctx["psi"] = q
            res.verdict("1/conv_est <= Psi", q.bound_checked and q.bound_holds,
                        f"1/conv={inv:.4g} Psi={q.psi:.4g}")
    res.verdict("Psi nonincreasing in shift",
                all(b <= a * (1 + 1e-12) for a, b in zip(psis, psis[1:])))
    return res


def check_bounded(scn, M, ctx):
    opts = scn.check_options("bounded-geometry")
    c = float(opts.get("c", 4.0))
    k = int(opts.get("k", 2))
    rep = satellite.bounded_geometry_report(M, c, k, psi_data=ctx.get("psi"))
    res = CheckResult("bounded-geometry", ("item", "measured", "threshold", "passed"))
    for v in rep.verdicts:
        res.rows.append({"item": v.item, "measured": v.measured, "threshold": v.threshold,
                         "passed": v.passed})
        res.verdict(v.item, v.passed, f"{v.measured:.4g} vs {v.threshold:.4g}")
    return res


def check_extension(scn, M, ctx):
    opts = scn.check_options("extension-roundtrip")
    res = CheckResult("extension-roundtrip", ("item", "value", "threshold", "passed"))

    def row(item, value, threshold, ok):
        res.rows.append({"item": item, "value": value, "threshold": threshold, "passed": ok})
        res.verdict(item, ok, f"{value:.4g} vs {threshold:.4g}")

    t = np.arange(400) * 0.01
    worst = 0.0
    for m in range(5):
        sch = extension.seeley_scheme(m)
        for j in range(m + 1):
            ext = extension.seeley_extend(sch, t ** j, 20).values
            tt = np.arange(-20, 400) * 0.01
            worst = max(worst, float(np.max(np.abs(ext - tt ** j))))
    row("polynomial reproduction m<=4", worst, 1e-10, worst <= 1e-10)
    scheme = extension.seeley_scheme(int(opts.get("order", 2)))
    rng = np.random.default_rng(scn.seed)
    b = float(opts.get("floor", 0.5))
    beta = extension.beta_floor(scheme, b)
    lowest = np.inf
    for _ in range(int(opts.get("fields", 100))):
        u = rng.uniform(b, 1.0 / b, size=64)
        u[rng.integers(64)] = b
        F = extension.positive_extend(scheme, u, 8).values
        lowest = min(lowest, float(F.min()))
    row("positivity floor", lowest, beta, lowest >= beta)
    if not M.has_boundary:
        return res
    depth = float(opts.get("depth", 0.3))
    X = extension.extend_metric(M, scheme, depth)
    row("restriction error", X.restriction_error(), 0.0, X.restriction_error() == 0.0)
    row("SPD floor on extension", X.spd_floor, 0.0, X.spd_floor > 0)
    r2 = float(opts.get("r2", 4 * X.layers * M.spacing[M.normal_axis]))
    hf = extension.build_height_function(X, r2)
    cut = extension.cut_manifold(X, hf)
    same = (cut.chart == M.chart and np.array_equal(cut.metric, M.metric)
            and cut.basepoint == M.basepoint)
    row("extend-then-cut identity", float(not same), 0.0, same)
    h = M.spacing[M.normal_axis]
    moved = extension.cut_manifold(X, hf, shift=0.5 * h)
    grow = moved.shape[M.normal_axis] - M.shape[M.normal_axis]
    row("shifted cut adds layers", float(grow), 2.0, grow == 2)
    start = list(M.basepoint)
    start[M.normal_axis] = X.layers
    fr = extension.flow_to_level(X, hf, tuple(start), r2 / 8.0)
    row("flow level error", fr.level_error, 1e-6, fr.level_error <= 1e-6)
    row("flow time vs |df|/slope^2", fr.time, fr.bound, fr.within_bound)
    return res


def check_sequence(scn, M, ctx):
    spec = scn.sequence
    diag = sequences.satellite_sequence_diagnostics(spec, tol=scn.solver.tol)
    res = CheckResult("sequence-diagnostics", sequences.SequenceDiagnostics.COLUMNS)
    res.rows = diag.rows
    for k, v in diag.verdicts.items():
        res.verdict(k, v)
    return res


CHECKS = {
    "identity": check_identity,
    "bounds": check_bounds,
    "rayleigh": check_rayleigh,
    "harnack": check_harnack,
    "dense-oracle": check_dense,
    "flatzoomer-sweep": check_flatzoomer,
    "quasi-flatzoomer": check_quasi,
    "bounded-geometry": check_bounded,
    "extension-roundtrip": check_extension,
    "sequence-diagnostics": check_sequence,
}
assert set(CHECKS) == set(KNOWN_CHECKS)


# ---------------------------------------------------------------- commands

def resolve_scenario(target):
    """Scenario from a file path or a bundled name."""
    p = Path(target)
    if p.suffix in (".yaml", ".yml") or p.exists():
        return load_scenario(p)
    try:
        return load_bundled(target)
    except KeyError:
        raise LookupError(unknown_name_message(target)) from None


def unknown_name_message(name):
    close = difflib.get_close_matches(name, bundled_scenarios(), n=1, cutoff=0.0)
    hint = f"; did you mean '{close[0]}'?" if close else ""
    return f"unknown scenario '{name}'{hint}"


def apply_overrides(scn, seed=None, resolution=None):
    if seed is not None:
        scn.seed = seed
        if scn.sequence is not None:
            scn.sequence.seed = seed
    if resolution is not None:
        scn.manifold = scn.manifold.with_shape((resolution,) * scn.manifold.dim)
        if scn.sequence is not None:
            scn.sequence = replace(scn.sequence, limit=scn.manifold)
    return scn


def run_scenario(scn, out_dir):
    """Execute every requested check; returns ``(exit_code, results)``."""
    out = Path(out_dir) / scn.name
    out.mkdir(parents=True, exist_ok=True)
    M = build_box_manifold(scn.manifold)
    ctx = {"solutions": {}}
    results = []
    order = sorted(scn.checks, key=lambda c: (c == "bounded-geometry", KNOWN_CHECKS.index(c)))
    for name in order:
        try:
            r = CHECKS[name](scn, M, ctx)
        except SolverError as exc:
            hist = out / "residual_history.csv"
            with open(hist, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["iteration", "residual"])
                for i, v in enumerate(exc.history, start=1):
                    w.writerow([i, repr(float(v))])
            print(f"solver failure in check '{name}': {exc}", file=sys.stderr)
            print(f"residual history: {hist}", file=sys.stderr)
            return EXIT_SOLVER, results
        write_csv(out / f"{name}.csv", r.columns, r.rows)
        results.append(r)
    lines = [f"scenario {scn.name}"]
    failures = []
    for r in results:
        for label, ok, detail in r.verdicts:
            lines.append(f"{r.name}\t{label}\t{'PASS' if ok else 'FAIL'}\t{detail}")
            if not ok:
                failures.append(f"{r.name}: {label} ({detail})")
    lines.append(f"overall\t{'PASS' if not failures else 'FAIL'}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    if failures:
        print("failed verdicts:", file=sys.stderr)
        for f in failures:
            print(f"  {f}", file=sys.stderr)
        return EXIT_FAIL, results
    return EXIT_OK, results


def describe(name):
    if name not in bundled_scenarios():
        raise LookupError(unknown_name_message(name))
    scn = load_bundled(name)
    m = scn.manifold
    lines = [f"{scn.name}: {scn.description}",
             f"  manifold: formula={m.formula} shape={m.shape} periodic={m.periodic}",
             f"  mode: {scn.s}",
             f"  checks: {', '.join(scn.checks)}"]
    return "\n".join(lines)


def build_parser():
    p = argparse.ArgumentParser(prog="confsat", description="Conformal satellite scenario runner")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file or bundled scenario")
    r.add_argument("scenario")
    r.add_argument("--out-dir", default="confsat-out")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--resolution-override", type=int, default=None)
    sub.add_parser("list", help="list bundled scenarios")
    d = sub.add_parser("describe", help="describe a bundled scenario")
    d.add_argument("name")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "list":
        print("\n".join(bundled_scenarios()))
        return EXIT_OK
    if args.command == "describe":
        try:
            print(describe(args.name))
        except LookupError as exc:
            print(str(exc).strip("'\""), file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    try:
        scn = resolve_scenario(args.scenario)
        scn = apply_overrides(scn, args.seed, args.resolution_override)
    except ConfigError as exc:
        where = []
        if exc.field:
            where.append(f"field '{exc.field}'")
        if exc.line:
            where.append(f"line {exc.line}")
        print(f"configuration error{' (' + ', '.join(where) + ')' if where else ''}: {exc}",
              file=sys.stderr)
        return EXIT_CONFIG
    except LookupError as exc:
        print(str(exc).strip("'\""), file=sys.stderr)
        return EXIT_CONFIG
    try:
        code, _ = run_scenario(scn, args.out_dir)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return code


if __name__ == "__main__":
    sys.exit(main())
