"""Command-line entry point: ``asyflexa {generate,solve,bench,bound}``."""

from __future__ import annotations

import argparse
import ast
import csv
import json
import logging
import math
import sys

import numpy as np


def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _params(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise SystemExit(f"expected key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip().replace("-", "_")] = _literal(v.strip())
    return out


def _csv_list(cast):
    return lambda s: tuple(cast(v) for v in s.split(",") if v)


def cmd_generate(args) -> int:
    from .generators import GENERATORS
    from .instance_io import save_instance

    name = args.generator or args.family
    if name is None:
        raise ValueError("name a generator (positional or --family)")
    params = _params(args.param)
    for key in ("m", "n"):
        if getattr(args, key) is not None:
            params[key] = getattr(args, key)
    inst = GENERATORS[name](seed=args.seed, **params)
    if args.fstar:
        from .bench import ensure_fstar
        inst = ensure_fstar(inst)
    save_instance(args.out, inst, args.format)
    p = inst.problem
    print(f"wrote {args.out}: {name} m={p.m} n={p.n} lambda={p.reg.lam:.6g} "
          f"family={p.reg.family.name.lower()} fstar={p.fstar}")
    return 0


def cmd_solve(args) -> int:
    from .bench import ensure_fstar
    from .engine import SolverConfig, parse_key_values, read_config_mapping
    from .instance_io import load_instance
    from .model import lipschitz_constant

    inst = load_instance(args.instance)
    if args.reference:
        inst = ensure_fstar(inst)
    cfg = read_config_mapping(args.config) if args.config else {}
    if args.set:
        cfg.update(parse_key_values("\n".join(args.set)))
    if cfg.get("rule") == "arock" and cfg.get("lipschitz") is None:
        cfg["lipschitz"] = lipschitz_constant(inst.problem)
    config = SolverConfig.from_mapping(cfg)
    from .engine import run_async
    x, trace = run_async(inst.problem, config)
    if args.trace:
        trace.to_csv(args.trace)
    if args.x_out:
        np.savetxt(args.x_out, x, fmt="%.17g")
    last = trace.rows[-1]
    summary = {"reason": trace.reason, "k": trace.k_final, "wall_time_s": trace.meta["wall_time_s"],
               "objective": last[2], "rel_err": last[3], "merit": last[4],
               "max_delay": trace.max_delay, "threads": config.threads, "rule": config.rule}
    print(json.dumps(summary, indent=2, default=float))
    return 0


def _plan(args, **extra):
    from .bench import ExperimentPlan
    kw = dict(generator=args.generator, params=_params(args.param), rules=args.rules,
              threads=args.threads, realizations=args.realizations, seed0=args.seed0,
              rel_err=args.rel_err, merit=args.merit, time_budget_s=args.time_budget,
              max_iter=args.max_iter, order=args.order, output_dir=args.out)
    kw.update(extra)
    return ExperimentPlan(**kw)


def cmd_bench(args) -> int:
    from . import bench

    if args.experiment == "error-curve":
        res = bench.run_error_curve(_plan(args))
        for (rule, c), trs in res.traces.items():
            print(f"{rule} P={c}: " + ", ".join(f"{t.reason}@{t.meta['wall_time_s']:.3g}s"
                                                 for t in trs))
    elif args.experiment == "speedup":
        rep = bench.run_speedup(_plan(args))
        print(rep.format())
    elif args.experiment == "lambda-sweep":
        lambdas = args.lambdas if args.lambdas else None
        plan = _plan(args, rel_err=None)
        res = bench.run_lambda_sweep(plan, lambdas, args.families, args.theta)
        for b in res.best:
            print(f"realization {b['realization']} {b['family']:>4}: best lambda {b['lam']:.4g} "
                  f"NMSE {b['nmse']:.4g} nnz {b['nnz_percent']:.2f}%")
    elif args.experiment == "kepsilon":
        from .generators import GENERATORS
        from .instance_io import load_instance
        if args.instance:
            problem = load_instance(args.instance).problem
        else:
            problem = GENERATORS[args.generator](seed=args.seed0, **_params(args.param)).problem
        res = bench.run_kepsilon(problem, args.epsilons, gamma=args.gamma,
                                 gamma_fraction=args.gamma_fraction, tau=args.tau,
                                 realizations=args.realizations, seed0=args.seed0,
                                 rho=args.rho, output_dir=args.out)
        print(f"gamma {res.gamma:.6g} (gamma_max {res.gamma_max:.6g})")
        for e, km, kb in zip(res.epsilons, res.measured, res.bound):
            flag = "" if math.isfinite(km) else "  unreached"
            print(f"eps {e:.3g}: measured {km:.6g}  bound {kb:.6g}{flag}")
    return 0


_BOUND_KEYS = ("rho", "N", "L_f", "c_tilde_f", "L_xhat", "L_B", "L_E", "F0", "Fstar",
               "delta", "p_min", "Delta")


def cmd_bound(args) -> int:
    from . import theory
    from .engine import parse_key_values

    vals = {"rho": 2.0, "Fstar": 0.0, "delta": 0}
    if args.constants:
        with open(args.constants) as fh:
            text = fh.read()
        for k, v in parse_key_values(text).items():
            if k not in _BOUND_KEYS:
                raise ValueError(f"unknown constant {k!r}")
            vals[k] = float(v)
    for k in _BOUND_KEYS:
        if getattr(args, k) is not None:
            vals[k] = getattr(args, k)
    missing = [k for k in ("N", "L_f", "c_tilde_f", "L_xhat", "L_B", "L_E", "F0") if k not in vals]
    if missing:
        raise ValueError("missing constants: " + ", ".join(missing))
    N = int(vals["N"])
    deltas = args.deltas if args.deltas else (int(vals["delta"]),)
    rows = []
    for delta in deltas:
        c = theory.ComplexityConstants(
            rho=vals["rho"], delta=int(delta), N=N, L_f=vals["L_f"], c_tilde_f=vals["c_tilde_f"],
            L_xhat=vals["L_xhat"], L_B=vals["L_B"], L_E=vals["L_E"],
            p_min=vals.get("p_min", 1.0 / N), Delta=vals.get("Delta", 1.0 / N),
            F0=vals["F0"], Fstar=vals["Fstar"])
        gmax = theory.fixed_step_bound(c)
        # the bound is infinite at gamma_max itself, so default strictly inside
        gamma = args.gamma if args.gamma is not None else args.gamma_fraction * gmax
        for eps in args.epsilons:
            rows.append([int(delta), repr(eps), repr(gamma), repr(gmax),
                         repr(theory.k_epsilon_bound(c, gamma, eps)),
                         repr(theory.psi(c.rho, c.delta)), repr(theory.psi_prime(c.rho, c.delta))])
    header = ["delta", "epsilon", "gamma", "gamma_max", "k_epsilon_bound", "psi", "psi_prime"]
    if args.out is None:
        csv.writer(sys.stdout).writerows([header] + rows)
    else:
        with open(args.out, "w", newline="") as fh:
            csv.writer(fh).writerows([header] + rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="asyflexa", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic instance file")
    gens = ["liu-wright", "nesterov", "gondzio", "nonconvex"]
    g.add_argument("generator", nargs="?", choices=gens)
    g.add_argument("--family", choices=gens, help="same as the positional generator name")
    g.add_argument("--m", type=int, default=None)
    g.add_argument("--n", type=int, default=None)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="generator keyword, e.g. n=800 or family=exp")
    g.add_argument("--format", choices=["dense", "mm"], default=None)
    g.add_argument("--fstar", action="store_true",
                   help="attach F* from a reference run when no certificate exists")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="run the asynchronous solver on an instance file")
    s.add_argument("instance")
    s.add_argument("--config", help="JSON or key=value file")
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override, e.g. threads=4 or termination.merit=1e-4")
    s.add_argument("--trace", help="trace CSV output")
    s.add_argument("--x-out", help="solution vector output (text)")
    s.add_argument("--reference", action="store_true",
                   help="compute F* by a reference run if the file carries none")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="experiments")
    b.add_argument("experiment", choices=["error-curve", "speedup", "lambda-sweep", "kepsilon"])
    b.add_argument("--generator", default=None)
    b.add_argument("--instance", help="instance file (kepsilon only)")
    b.add_argument("--param", action="append", metavar="KEY=VALUE")
    b.add_argument("--rules", type=_csv_list(str), default=("asyflexa",))
    b.add_argument("--threads", type=_csv_list(int), default=(1,))
    b.add_argument("--realizations", type=int, default=5)
    b.add_argument("--seed0", type=int, default=0)
    b.add_argument("--rel-err", type=float, default=1e-4)
    b.add_argument("--merit", type=float, default=None)
    b.add_argument("--time-budget", type=float, default=60.0)
    b.add_argument("--max-iter", type=int, default=None)
    b.add_argument("--order", choices=["cyclic", "random"], default="cyclic")
    b.add_argument("--out", default=None, help="output directory for CSV and metadata")
    b.add_argument("--lambdas", type=_csv_list(float), default=None)
    b.add_argument("--families", type=_csv_list(str), default=("l1", "exp", "log"))
    b.add_argument("--theta", type=float, default=20.0)
    b.add_argument("--epsilons", type=_csv_list(float), default=(1e-1, 1e-2, 1e-3))
    b.add_argument("--gamma", type=float, default=None)
    b.add_argument("--gamma-fraction", type=float, default=0.9)
    b.add_argument("--tau", type=float, default=0.0)
    b.add_argument("--rho", type=float, default=2.0)
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("bound", help="evaluate the fixed-stepsize complexity bound (CSV)")
    t.add_argument("--constants", help="key=value file with rho, N, L_f, c_tilde_f, L_xhat, "
                                       "L_B, L_E, F0, Fstar, delta, p_min, Delta")
    for name in ("L_f", "c_tilde_f", "L_xhat", "L_B", "L_E", "F0", "Fstar", "rho", "p_min"):
        t.add_argument("--" + name.replace("_", "-"), dest=name, type=float, default=None)
    t.add_argument("--N", type=int, default=None)
    t.add_argument("--Delta", type=float, default=None)
    t.add_argument("--delta", type=int, default=None)
    t.add_argument("--deltas", type=_csv_list(int), default=None, help="grid of delays")
    t.add_argument("--epsilons", type=_csv_list(float), default=(1e-1, 1e-2, 1e-3))
    t.add_argument("--gamma", type=float, default=None,
                   help="fixed stepsize; defaults to gamma_fraction * gamma_max")
    t.add_argument("--gamma-fraction", type=float, default=0.9)
    t.add_argument("--out", default=None, help="CSV path (stdout when omitted)")
    t.set_defaults(func=cmd_bound)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "bench" and args.generator is None:
        args.generator = "nonconvex" if args.experiment == "lambda-sweep" else "liu-wright"
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"asyflexa: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
