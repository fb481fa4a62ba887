"""Command-line entry point ``gfurn``.

Exit codes: 0 success, 2 validation error, 3 comparison FAIL, 4 numeric failure.
"""

import argparse
import json
import sys

import numpy as np

from . import config as cfgmod
from .covariance import noise_for_rule, rpw_closed_forms, theoretical_gamma
from .exceptions import GFUError, NumericalError
from .harness import compare, mc_experiment
from .limit import (
    EQU1,
    EQU2,
    composite_ensemble,
    ensemble_stats,
    first_panel_width,
    geometric_grid,
    hybrid_grid,
)
from .spectral import SUBCRITICAL, spectral_analyze
from .urn import simulate

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_FAIL = 3
EXIT_NUMERIC = 4


def _emit(text, out):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _analysis_kw(flat):
    return {"eig_tol": float(flat.get("analysis.eig_tol", 1e-9)),
            "nu_override": flat.get("analysis.nu")}


def cmd_analyze(args):
    H = np.loadtxt(args.matrix, delimiter=",", ndmin=2)
    S = spectral_analyze(H, eig_tol=args.eig_tol, nu_override=args.nu)
    _emit(_dumps(S.to_dict()), args.out)
    return EXIT_OK


def cmd_gamma(args):
    flat = cfgmod.load_config(args.config)
    rule = cfgmod.rule_from_config(flat)
    S = spectral_analyze(rule.H, **_analysis_kw(flat))
    noise = noise_for_rule(S, rule)
    report = theoretical_gamma(S, noise, quad_tol=float(flat.get("analysis.quad_tol", 1e-10)))
    _emit(_dumps(report.to_dict(S, noise)), args.out or flat.get("output.json"))
    return EXIT_OK


def cmd_simulate(args):
    flat = cfgmod.load_config(args.config)
    rule = cfgmod.rule_from_config(flat)
    Y0 = cfgmod.initial_composition(flat, rule.dim)
    seed = args.seed if args.seed is not None else int(flat.get("simulate.seed", 0))
    n = int(flat.get("simulate.n", 1000))
    traj = simulate(rule, Y0, n, seed)
    _emit(traj.to_csv(), args.out or flat.get("output.trajectory"))
    return EXIT_OK


def cmd_limit(args):
    flat = cfgmod.load_config(args.config)
    rule = cfgmod.rule_from_config(flat)
    S = spectral_analyze(rule.H, **_analysis_kw(flat))
    noise = noise_for_rule(S, rule)
    seed = args.seed if args.seed is not None else int(flat.get("limit.seed", 0))
    paths = int(flat.get("limit.paths", 10000))
    steps = int(flat.get("limit.grid_points", 4096)) - 1
    threads = args.threads if args.threads is not None else int(flat.get("run.threads", 1))
    out = {"regime": S.regime, "paths": paths, "seed": seed}
    if S.regime == SUBCRITICAL:
        t = float(flat.get("limit.t", 1.0))
        grid = hybrid_grid(steps, t, first_panel_width(S.rho) * t)
        equation = EQU1
    else:
        t = float(flat.get("limit.t", float(np.exp(4.0))))
        grid = geometric_grid(steps, t)
        equation = EQU2
    X = composite_ensemble(S, noise, grid, paths, seed, [t], equation, threads)[0]
    st = ensemble_stats(X)
    out.update(equation=equation, t=t, mean=st.mean.tolist(), covariance=st.cov.tolist())
    code = EXIT_OK
    if S.regime == SUBCRITICAL:
        gamma = theoretical_gamma(S, noise).gamma * t
        verdict = compare(st.cov, gamma, float(flat.get("experiment.tolerance", 0.03)))
        out.update(theoretical=gamma.tolist(), comparison=verdict.to_dict())
        code = EXIT_OK if verdict.passed else EXIT_FAIL
    _emit(_dumps(out), args.out or flat.get("output.json"))
    return code


def cmd_mc(args):
    flat = cfgmod.load_config(args.config)
    cfg = cfgmod.experiment_config(flat, seed=args.seed, threads=args.threads,
                                   deterministic=True if args.deterministic else None)
    report = mc_experiment(cfg)
    _emit(report.to_json() + "\n", args.out or cfg.out_json)
    if cfg.out_csv:
        with open(cfg.out_csv, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_rpw(args):
    res = rpw_closed_forms(args.p1, args.p2, args.a1, args.a2)
    _emit(_dumps(res.to_dict()), args.out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="gfurn", description="Generalized Friedman's urn toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--deterministic", action="store_true")
        sp.add_argument("--out")
        return sp

    a = common(sub.add_parser("analyze", help="spectral report for a generating matrix CSV"))
    a.add_argument("matrix")
    a.add_argument("--eig-tol", type=float, default=1e-9)
    a.add_argument("--nu", type=int)
    a.set_defaults(func=cmd_analyze)

    for name, func, text in (
        ("gamma", cmd_gamma, "theoretical covariance report"),
        ("simulate", cmd_simulate, "one trajectory as CSV"),
        ("limit", cmd_limit, "limit-process ensemble statistics"),
        ("mc", cmd_mc, "Monte Carlo experiment report"),
    ):
        sp = common(sub.add_parser(name, help=text))
        sp.add_argument("config")
        sp.set_defaults(func=func)

    r = common(sub.add_parser("rpw", help="two-arm closed forms"))
    r.add_argument("--p1", type=float, required=True)
    r.add_argument("--p2", type=float, required=True)
    r.add_argument("--a1", type=float)
    r.add_argument("--a2", type=float)
    r.set_defaults(func=cmd_rpw)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"gfurn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GFUError, ValueError, OSError) as exc:
        print(f"gfurn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
