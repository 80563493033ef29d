"""Command-line front end: ``quasidyn {spectrum,scaling,dynamics,jl,report}``.

Each command reads one YAML config, writes CSV tables plus a JSON manifest to
the output directory and exits with 0 (success), 2 (config error),
3 (numerical non-convergence) or 4 (missing prerequisite output).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .borel import ConvergenceError, capital_I, jl_inequality_suite, jl_profile, spectral_measure
from .bounds import bound_report, outside_bound_curve, theorem4_constants
from .config import ConfigError
from .dynamics import (BoxTooSmallError, InsufficientDataError, a_eigen, a_parseval, beta_estimate, moments,
                       outside_lower_check, p_monotone, route_difference)
from .numbertheory import density_estimate
from .operator import HALF_LINE, assemble
from .quadrature import QuadratureError
from .scaling import (GORDON_FACTOR, NonMonotoneNormError, ScalingConstants, gordon_check, retest_failures,
                      scaling_constants)
from .store import Cache, Manifest, read_csv, write_csv
from .transfer import default_grid, spectrum_approx, spectrum_samples, traces

log = logging.getLogger("quasidyn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PREREQ = 0, 2, 3, 4


class MissingPrerequisite(RuntimeError):
    def __init__(self, path, command):
        super().__init__(f"missing {path}; run `quasidyn {command}` with the same --out first")
        self.command = command


class Context:
    def __init__(self, cfg, out, threads, cache, command):
        self.cfg, self.out, self.threads, self.cache = cfg, Path(out), threads, cache
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = Manifest(command, cfgmod.run_id(cfg, __version__), __version__, cfg)

    def csv(self, name, header, rows):
        path = write_csv(self.out / name, header, rows)
        self.manifest.add_file(path)
        return path

    def stage(self, name):
        return _Stage(self.manifest, name)

    def pmap(self, fn, items):
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]


class _Stage:
    def __init__(self, manifest, name):
        self.m, self.name = manifest, name

    def __enter__(self):
        self.t = time.perf_counter()

    def __exit__(self, *exc):
        self.m.time(self.name, time.perf_counter() - self.t)


# --------------------------------------------------------------------------
# commands


def cmd_spectrum(ctx):
    """Approximate the spectrum by the trace condition."""
    cfg = ctx.cfg
    spec = cfgmod.potential(cfg, HALF_LINE)
    level = int(cfg["analysis"]["level"])
    with ctx.stage("spectrum_approx"):
        grid = default_grid(spec.lam, float(cfg["analysis"]["grid_step"]))
        approx = spectrum_approx(spec, level + 1, grid)
    ctx.csv("spectrum_intervals.csv",
            [("level", "1", "trace level"), ("E_low", "energy", "band lower edge"),
             ("E_high", "energy", "band upper edge")],
            [(level, lo, hi) for lo, hi in approx.intervals])
    with ctx.stage("trace_profile"):
        prof = traces(spec, approx.points, level + 1)
    ctx.csv("trace_profile.csv",
            [("E", "energy", "retained grid energy")]
            + [(f"x_{m}", "1", f"trace over the period q_{m}") for m in range(1, level + 2)],
            [(e, *prof.traces[1:, i]) for i, e in enumerate(approx.points)])
    ctx.manifest.note(f"{len(approx.intervals)} intervals, total length {approx.total_length:.6g}")


def _scaling_spec(cfg):
    return cfgmod.potential(cfg, HALF_LINE)


def cmd_scaling(ctx):
    """Fit the solution-growth constants and run the 17/16 growth check."""
    cfg, an = ctx.cfg, ctx.cfg["analysis"]
    spec = _scaling_spec(cfg)
    level, nmax = int(an["sample_level"]), int(an["gordon_nmax"])
    with ctx.stage("samples"):
        E = spectrum_samples(spec, level, int(an["n_energies"]))
    with ctx.stage("gordon"):
        rep = gordon_check(spec, E, nmax, tuple(an["thetas"]))
        repl, retest = retest_failures(spec, rep, level, int(an["retest_extra"]))
    rows = []
    for ti, th in enumerate(rep.thetas):
        for ei, e in enumerate(rep.energies):
            for ni, n in enumerate(rep.levels):
                r = rep.ratios[ti, ei, ni]
                rows.append((e, th, int(n), r, bool(r >= GORDON_FACTOR)))
    ctx.csv("gordon.csv", [("E", "energy", "spectrum sample"), ("theta", "rad", "boundary phase"),
                           ("n", "1", "level"), ("ratio", "1", "U-norm ratio between q_{n+5} and q_n"),
                           ("pass", "bool", "ratio >= 17/16")], rows)
    retest_rows = []
    if retest is not None:
        for (old, new), j in zip(repl.items(), range(len(repl))):
            ok = bool(retest.passed[:, j, :].all())
            retest_rows.append((old, new, ok))
    ctx.csv("gordon_retest.csv", [("E_failed", "energy", "flagged energy"),
                                  ("E_retest", "energy", "nearest deeper sample"),
                                  ("pass", "bool", "all ratios >= 17/16 after retest")], retest_rows)

    with ctx.stage("fits"):
        Efit = spectrum_samples(spec, level, int(an["fit_energies"]))
        Lmax = float(spec.cf.extend(max(spec.cf.depth, int(an["fit_level"]))).q(int(an["fit_level"])))
        consts, afit, kfit, bres = scaling_constants(spec, Efit, Lmax, an["k"], an["L0"], int(an["fit_points"]))
    ctx.csv("condition_b.csv", [("E", "energy", "spectrum sample"),
                                ("gamma", "1", "min ratio of squared norms at L and kL minus 1")],
            list(zip(bres.energies, bres.gamma_per_energy)))
    ctx.csv("fit_per_energy.csv", [("E", "energy", "spectrum sample"),
                                   ("alpha_E", "1", "upper growth exponent"),
                                   ("kappa_E", "1", "lower growth exponent")],
            list(zip(afit.energies, afit.per_energy, kfit.per_energy)))
    vals = {"alpha": afit.alpha, "bigC": afit.bigC, "kappa": kfit.kappa, "bigD": kfit.bigD, "k": bres.k,
            "gamma": bres.gamma, "L0": float(bres.lengths.min()), "kappa_theory": kfit.theory,
            "gordon_pass_fraction": rep.pass_fraction, "Lmax": Lmax}
    ctx.csv("scaling_constants.csv", [("name", "-", "constant"), ("value", "-", "fitted value")],
            [(k, v) for k, v in vals.items()])
    payload = {k: float(v) for k, v in vals.items()}
    payload["valid"] = consts is not None
    (ctx.out / "scaling.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    ctx.manifest.add_file(ctx.out / "scaling.json")
    ctx.manifest.note("log base: natural")


def _dyn_spec(cfg):
    g = cfg["dynamics"]["geometry"] or cfg["model"]["geometry"]
    return cfgmod.potential(cfg, g)


def cmd_dynamics(ctx):
    """Time-averaged transport, moments and growth exponents."""
    cfg, dy = ctx.cfg, ctx.cfg["dynamics"]
    spec = _dyn_spec(cfg)
    T = cfgmod.T_values(cfg)
    with ctx.stage("a_eigen"):
        run = a_eigen(spec, int(dy["N"]), T, threads=ctx.threads, cache=ctx.cache)
    ctx.csv("a_nT.csv", [("T", "time", "averaging time"), ("n", "site", "lattice site"),
                         ("a", "probability", "time-averaged occupation")],
            [(t, int(n), run.a[i, k]) for i, t in enumerate(run.T) for k, n in enumerate(run.sites)])
    ctx.csv("sum_rule.csv", [("T", "time", "averaging time"), ("total", "probability", "sum over sites"),
                             ("leakage", "probability", "mass on the outer tenth of the box"),
                             ("usable", "bool", "leakage below the guard")],
            list(zip(run.T, run.total, run.leakage(), run.usable)))
    p = sorted(float(x) for x in set(dy["p"]) | set(cfg["bounds"]["p"]))
    curves = moments(run, p)
    mono = [p_monotone(curves, i) for i in range(T.size)]
    ctx.csv("moments.csv", [("p", "1", "moment order"), ("T", "time", "averaging time"),
                            ("moment", "site^p", "time-averaged p-th moment"), ("usable", "bool", "leakage guard"),
                            ("p_monotone", "bool", "p-th root nondecreasing in p at this T")],
            [(c.p, t, c.values[i], bool(c.usable[i]), mono[i]) for c in curves for i, t in enumerate(c.T)])
    with ctx.stage("beta"):
        est = beta_estimate(curves)
    ctx.csv("beta.csv", [("p", "1", "moment order"), ("betaMinus", "1", "lower growth exponent estimate"),
                         ("band_low", "1", "window spread low"), ("band_high", "1", "window spread high")],
            [(c.p, c.betaMinus, c.band[0], c.band[1]) for c in est])
    out_rows = []
    for c in curves:
        lhs, rhs, ok = outside_lower_check(run, c.p, cfg["bounds"]["delta"], cfg["bounds"]["outside_c"])
        out_rows += [(c.p, t, lhs[i], rhs[i], bool(ok[i])) for i, t in enumerate(run.T)]
    ctx.csv("outside.csv", [("p", "1", "moment order"), ("T", "time", "averaging time"),
                            ("P_outside", "probability", "mass beyond half the p-th moment radius"),
                            ("lower", "probability", "c T^(-p(1+delta)) times the moment"),
                            ("pass", "bool", "P_outside >= lower or T unusable")], out_rows)
    if "parseval" in dy["routes"]:
        rows = []
        with ctx.stage("routes"):
            for sp in (spec.with_(lam=0.0), spec):
                e = a_eigen(sp, int(dy["parseval_N"]), dy["parseval_T"], cache=ctx.cache)
                q = a_parseval(sp, int(dy["parseval_N"]), dy["parseval_T"])
                rows += [(sp.lam, t, d, tb) for t, d, tb in zip(e.T, route_difference(e, q), q.tail_bound)]
        ctx.csv("route_agreement.csv", [("lambda", "energy", "coupling"), ("T", "time", "averaging time"),
                                        ("l1_diff", "probability", "sum over sites of the route difference"),
                                        ("tail_mass", "probability", "mass beyond the padded core interval")],
                rows)
    (ctx.out / "dynamics.json").write_text(json.dumps({"T_max_usable": float(run.T[run.usable].max()),
                                                       "geometry": spec.geometry, "N": int(dy["N"])},
                                                      indent=2, sort_keys=True) + "\n")
    ctx.manifest.add_file(ctx.out / "dynamics.json")


def cmd_jl(ctx):
    """Resolvent and length-scale inequality suite."""
    cfg, jl = ctx.cfg, ctx.cfg["jl"]
    spec = cfgmod.potential(cfg, HALF_LINE)
    E = spectrum_samples(spec, int(cfg["analysis"]["sample_level"]), int(jl["n_energies"]))
    tasks = [(float(e), float(eps)) for e in E for eps in jl["eps"]]

    def one(task):
        e, eps = task
        return jl_inequality_suite(spec, e, e + float(jl["offset"]) * eps, eps)

    with ctx.stage("suite"):
        reps = ctx.pmap(one, tasks)
    rows = []
    for r in reps:
        c = r.chain
        margin = float(np.min((c[:-1] - c[1:]) / c[0]))
        rows.append((r.E, r.Eprime, r.eps, *r.scales, r.prop_a2[1], r.prop_a2[0], r.prop_a2[2], r.prop_a2_ok,
                     r.prop_a3[0], r.prop_a3[1], bool(r.prop_a3_ok), r.chain_ok, margin, r.ratio_L1))
    ctx.csv("jl_suite.csv", [("E", "energy", "profile energy"), ("Eprime", "energy", "real part of z"),
                             ("eps", "energy", "imaginary part of z"), ("L1", "site", "scale with ab=1/(4eps^2)"),
                             ("L2", "site", "scale with w=1/eps"), ("L3", "site", "scale with sqrt2 eps w=1"),
                             ("imF", "1/energy", "Im F(E+i eps)"), ("a2_low", "1/energy", "w/(4b) at L2"),
                             ("a2_high", "1/energy", "4w/b at L2"), ("a2_pass", "bool", "two-sided bound"),
                             ("a3_lhs", "1/energy", "eps times squared resolvent norm at L3"),
                             ("a3_rhs", "1/energy", "sqrt2/4 Im F(z)"), ("a3_pass", "bool", "lhs >= rhs"),
                             ("chain_pass", "bool", "lower-bound chain ordered"),
                             ("chain_margin", "1", "smallest relative gap in the chain"),
                             ("ratio_L1", "1", "|F|^2 over a/b at L1 (descriptive)")], rows)
    prof_rows = []
    for e in E[: int(jl["profile_energies"])]:
        p = jl_profile(spec, e, 4096)
        prof_rows += [(e, L, a, b, d, w) for L, a, b, d, w in zip(p.lengths, p.a, p.b, p.d, p.w)]
    ctx.csv("jl_profile.csv", [("E", "energy", "energy"), ("L", "site", "length"),
                               ("a", "1", "squared norm of u_pi/2"), ("b", "1", "squared norm of u_0"),
                               ("d", "1", "inner product"), ("w", "1", "kernel Hilbert-Schmidt norm")], prof_rows)


def _need(path, command):
    if not path.exists():
        raise MissingPrerequisite(path, command)
    return path


def cmd_report(ctx):
    """Compare measured exponents against the closed-form bounds."""
    cfg, bd = ctx.cfg, ctx.cfg["bounds"]
    sc = json.loads(_need(ctx.out / "scaling.json", "scaling").read_text())
    dyn = json.loads(_need(ctx.out / "dynamics.json", "dynamics").read_text())
    _, brows = read_csv(_need(ctx.out / "beta.csv", "dynamics"))
    _, mrows = read_csv(_need(ctx.out / "moments.csv", "dynamics"))
    if not sc["valid"]:
        raise NonMonotoneNormError("scaling constants invalid (gamma <= 0); condition (b) failed")
    consts = ScalingConstants(sc["alpha"], sc["bigC"], sc["kappa"], sc["bigD"], sc["k"],
                              min(sc["gamma"], 1 - 1e-12), sc["L0"])
    beta = {float(r[0]): float(r[1]) for r in brows}
    Tmax = dyn["T_max_usable"]
    mom = {}
    for r in mrows:
        if float(r[1]) == Tmax:
            mom[float(r[0])] = float(r[2])
    measured = {p: (beta[p], mom[p]) for p in bd["p"] if p in beta}
    if len(measured) != len(bd["p"]):
        raise MissingPrerequisite(ctx.out / "beta.csv", "dynamics (p grid lacks bounds.p)")

    spec = _dyn_spec(cfg)
    eps = 1.0 / Tmax
    with ctx.stage("I"):
        A = spectrum_approx(spec.with_(geometry=HALF_LINE), int(cfg["analysis"]["level"]) + 1,
                            default_grid(spec.lam, float(cfg["analysis"]["grid_step"])))
        op = assemble(spec, int(bd["I_size"]))
        I = capital_I(op, A.neighbourhood(2 * eps), eps).value
        muA = min(max(spectral_measure(op).mass(A.neighbourhood(eps)), 1e-300), 1.0)
    cf = spec.cf
    golden = cf.surd is not None and all(a == 1 for a in cf.coefficients)
    thm4 = theorem4_constants(spec.lam, max(cf.coefficients), density_estimate(cf), bd["D_universal"], golden) \
        if spec.lam > 0 else None
    rep = bound_report(consts, measured, Tmax, I, muA, thm4, bd["kappa_lambda"])
    head, rows = rep.table()
    ctx.csv("bound_report.csv", [(h, "1", "") for h in head], rows)
    curve = outside_bound_curve(consts.alpha, min(consts.kappa, 0.5), np.geomspace(1e-3, 2 * consts.alpha + 1, 25),
                                bd["delta"])
    ctx.csv("outside_curve.csv", [("p", "1", "moment order"), ("gamma", "1", "radius exponent b(p)/p"),
                                  ("g", "1", "probability decay exponent p(1+delta)-b(p)")],
            list(zip(curve.p, curve.gamma, curve.g)))
    lines = [f"run {ctx.manifest.data['run_id']}",
             f"alpha={consts.alpha:.6g} kappa={consts.kappa:.6g} C={consts.bigC:.6g} D={consts.bigD:.6g} "
             f"k={consts.k:.6g} gamma={consts.gamma:.6g}",
             f"T={Tmax:.6g} I={I:.6g} mu(A)={muA:.6g} log base natural",
             f"theorem-4 kappa={thm4.kappa:.6g} footnote kappa={thm4.footnote_kappa} D_universal={thm4.D_universal}"
             if thm4 else "free case: no theorem-4 constants"]
    for r in rep.rows:
        flags = " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in sorted(r.verdicts.items()))
        lines.append(f"p={r.p:g} measured={r.measured_betaMinus:.6g} ourbound={r.thm3_ourbound:.6g} "
                     f"jlt={r.jlt:.6g} dst={r.dst:.6g} thm4={r.fib_theorem4:.6g} {flags}")
    lines.append("all verdicts true" if rep.all_pass else "some verdicts false")
    (ctx.out / "summary.txt").write_text("\n".join(lines) + "\n")
    ctx.manifest.add_file(ctx.out / "summary.txt")


COMMANDS = {"spectrum": cmd_spectrum, "scaling": cmd_scaling, "dynamics": cmd_dynamics, "jl": cmd_jl,
            "report": cmd_report}


def build_parser():
    ap = argparse.ArgumentParser(prog="quasidyn", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or name).strip().splitlines()[0] if fn.__doc__ else name)
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--out", help="output directory (overrides output.directory)")
        sp.add_argument("--threads", type=int, help="worker threads (default: runtime.threads or all cores)")
        sp.add_argument("--cache", help="cache directory (default: $QUASIDYN_CACHE, else no cache)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    threads = args.threads or cfg["runtime"]["threads"] or os.cpu_count() or 1
    if threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or cfg["output"]["directory"]
    ctx = Context(cfg, out, threads, Cache(args.cache), args.command)
    try:
        COMMANDS[args.command](ctx)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingPrerequisite as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    except (ConvergenceError, QuadratureError, NonMonotoneNormError, BoxTooSmallError,
            InsufficientDataError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    ctx.manifest.write(ctx.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
