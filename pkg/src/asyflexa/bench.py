"""
Experiment drivers: error curves, speedup tables, regularizer sweeps and
measured ``K_eps`` against the fixed-stepsize bound.

Each driver returns plain Python/numpy results and, when an output directory
is given, writes CSV files plus a ``metadata.json`` sidecar describing the
run (plan, seeds, host parallelism, metric definitions).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import platform
import time
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernels as K
from . import theory
from .engine import (SolverConfig, StepSchedule, TauHeuristic, Trace, _available_parallelism,
                     run_async, run_serial, run_sync_reference)
from .generators import GENERATORS, GeneratedInstance
from .model import CompositeProblem, Family, LossMode, Regularizer, lipschitz_constant, objective

log = logging.getLogger(__name__)

NNZ_THRESHOLD_REL = 1e-6


@dataclass(frozen=True)
class ExperimentPlan:
    """
    What to run. ``threads`` must start at 1 for speedup experiments; the
    instance for realization ``r`` is drawn with seed ``seed0 + r``.
    """

    generator: str = "liu-wright"
    params: dict = field(default_factory=dict)
    rules: tuple = ("asyflexa",)
    threads: tuple = (1,)
    realizations: int = 5
    seed0: int = 0
    rel_err: float | None = 1e-4
    merit: float | None = None
    time_budget_s: float | None = 60.0
    max_iter: int | None = None
    order: str = "cyclic"
    sample_interval_s: float = 0.005
    output_dir: str | None = None

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if not self.threads or any(int(c) < 1 for c in self.threads):
            raise ValueError("thread counts must be positive")
        if list(self.threads) != sorted(set(self.threads)):
            raise ValueError("thread counts must be strictly increasing")


def make_instance(plan: ExperimentPlan, r: int) -> GeneratedInstance:
    """Realization ``r`` of the plan, with ``F*`` attached (certificate or reference run)."""
    inst = GENERATORS[plan.generator](seed=plan.seed0 + r, **plan.params)
    return ensure_fstar(inst)


def ensure_fstar(inst: GeneratedInstance) -> GeneratedInstance:
    if inst.problem.fstar is not None:
        return inst
    ref = run_sync_reference(inst.problem)
    if not ref.converged:
        log.warning("reference run did not settle; F* may be loose")
    return replace(inst, problem=ref.problem, xstar=ref.x)


def rule_config(rule: str, problem: CompositeProblem, plan: ExperimentPlan, threads: int,
                seed: int = 0, **overrides) -> SolverConfig:
    """Default settings per rule (diminishing steps; ARock floors them at 0.1)."""
    kw = dict(rule=rule, threads=threads, order=plan.order, seed=seed, rel_err=plan.rel_err,
              merit=plan.merit, max_iter=plan.max_iter, time_budget_s=plan.time_budget_s,
              sample_interval_s=plan.sample_interval_s)
    if rule == "asyflexa":
        kw["schedule"] = StepSchedule.diminishing(1.0, 1e-6)
    elif rule == "arock":
        kw["schedule"] = StepSchedule.diminishing(1.0, 1e-6, floor=0.1)
        kw["lipschitz"] = lipschitz_constant(problem)
    elif rule == "aspcd":
        kw["schedule"] = StepSchedule.fixed(1.0)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    kw.update(overrides)
    return SolverConfig(**kw)


def warm_up() -> None:
    """Trigger compilation outside any timed region."""
    from .generators import gen_liu_wright
    p = gen_liu_wright(m=8, n=16, s=2, seed=0).problem
    lip = lipschitz_constant(p)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for rule in ("asyflexa", "arock", "aspcd"):
            run_async(p, SolverConfig(rule=rule, max_iter=32, lipschitz=lip, rel_err=None))
            run_async(p, SolverConfig(rule=rule, max_iter=32, lipschitz=lip, rel_err=None,
                                      order="random"))


def host_info() -> dict:
    return {"available_parallelism": _available_parallelism(), "cpu_count": os.cpu_count(),
            "platform": platform.platform(), "python": platform.python_version(),
            "numpy": np.__version__}


# ---------------------------------------------------------------------------
# output


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_meta(outdir, plan, extra) -> None:
    meta = {"plan": _plan_dict(plan), "host": host_info(),
            "rel_err_definition": K.RELATIVE_ERROR_DEFINITION,
            "nnz_rule": f"|x_i| > {NNZ_THRESHOLD_REL:g} * ||x||_inf",
            "created": time.strftime("%Y-%m-%dT%H:%M:%S"), **extra}
    with open(os.path.join(outdir, "metadata.json"), "w") as fh:
        json.dump(meta, fh, indent=2, default=_json_default)


def _plan_dict(plan):
    d = asdict(plan)
    d["seeds"] = [plan.seed0 + r for r in range(plan.realizations)]
    return d


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def _outdir(plan, sub):
    if plan.output_dir is None:
        return None
    d = os.path.join(plan.output_dir, sub)
    os.makedirs(d, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# error curves


def align_last_value(times, values, grid) -> np.ndarray:
    """Sample a step trace at ``grid``: the last value recorded at or before each time."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    idx = np.searchsorted(times, grid, side="right") - 1
    return values[np.clip(idx, 0, None)]


@dataclass
class AveragedCurve:
    time_s: np.ndarray
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


def average_curves(traces: list[Trace], column: str = "rel_err") -> AveragedCurve:
    """
    Pointwise mean, min and max over realizations on the union of their
    sample times, each trace held at its last value.
    """
    grid = np.unique(np.concatenate([t.column("time_s") for t in traces]))
    stack = np.vstack([align_last_value(t.column("time_s"), t.column(column), grid)
                       for t in traces])
    return AveragedCurve(grid, stack.mean(axis=0), stack.min(axis=0), stack.max(axis=0))


@dataclass
class ErrorCurveResult:
    traces: dict  # (rule, threads) -> list[Trace]
    curves: dict  # (rule, threads) -> AveragedCurve


def run_error_curve(plan: ExperimentPlan, column: str = "rel_err") -> ErrorCurveResult:
    """Relative error (or ``column``) against wall-clock time for every rule and thread count."""
    warm_up()
    traces = {(rule, c): [] for rule in plan.rules for c in plan.threads}
    for r in range(plan.realizations):
        inst = make_instance(plan, r)
        for rule in plan.rules:
            for c in plan.threads:
                cfg = rule_config(rule, inst.problem, plan, c, seed=plan.seed0 + r)
                _, tr = run_async(inst.problem, cfg)
                tr.meta["realization"] = r
                traces[(rule, c)].append(tr)
    curves = {key: average_curves(trs, column) for key, trs in traces.items()}
    out = _outdir(plan, "error-curve")
    if out:
        for (rule, c), trs in traces.items():
            for r, tr in enumerate(trs):
                tr.to_csv(os.path.join(out, f"trace_{rule}_P{c}_r{r}.csv"), cpu_column=True)
            cv = curves[(rule, c)]
            _write_csv(os.path.join(out, f"curve_{rule}_P{c}.csv"),
                       ["time_s", f"{column}_mean", f"{column}_min", f"{column}_max"],
                       zip(cv.time_s, cv.mean, cv.lo, cv.hi))
        _write_meta(out, plan, {"experiment": "error-curve", "column": column,
                                "averaging": "mean over realizations, last-value hold "
                                             "on the union of sample times",
                                "reasons": {f"{k[0]}_P{k[1]}": [t.reason for t in v]
                                            for k, v in traces.items()}})
    return ErrorCurveResult(traces, curves)


# ---------------------------------------------------------------------------
# speedup


def time_to_target(trace: Trace, target: float) -> float | None:
    """Wall time of the first sample with relative error strictly below ``target``."""
    t = trace.column("time_s")
    e = trace.column("rel_err")
    hit = np.nonzero(e < target)[0]
    return float(t[hit[0]]) if hit.size else None


@dataclass
class SpeedupRow:
    rule: str
    threads: int
    times: list
    median_time: float
    speedup: float
    reached: int
    flag: str


@dataclass
class SpeedupReport:
    rows: list
    target: float
    meta: dict

    def table(self, rule: str) -> dict:
        return {row.threads: row.speedup for row in self.rows if row.rule == rule}

    @property
    def valid(self) -> bool:
        """False when some rule's single-thread baseline missed the target."""
        return all("unreached" not in row.flag for row in self.rows if row.threads == 1)

    def format(self) -> str:
        lines = [] if self.valid else ["INVALID: single-thread baseline did not reach the target"]
        lines += [f"{'rule':>9} {'threads':>7} {'median_s':>10} {'speedup':>8} {'reached':>7}  flag"]
        for row in self.rows:
            lines.append(f"{row.rule:>9} {row.threads:>7d} {row.median_time:>10.4g} "
                         f"{row.speedup:>8.3f} {row.reached:>7d}  {row.flag}")
        return "\n".join(lines)


def run_speedup(plan: ExperimentPlan) -> SpeedupReport:
    """
    Median time to reach ``rel_err < plan.rel_err`` per thread count and the
    ratio to the single-thread median. The median damps the occasional run
    that is descheduled by the OS.
    """
    if plan.threads[0] != 1:
        raise ValueError("speedup needs a 1-thread baseline as first entry")
    if plan.rel_err is None:
        raise ValueError("speedup needs a relative-error target")
    warm_up()
    avail = _available_parallelism()
    times = {(rule, c): [] for rule in plan.rules for c in plan.threads}
    for r in range(plan.realizations):
        inst = make_instance(plan, r)
        for rule in plan.rules:
            for c in plan.threads:
                cfg = rule_config(rule, inst.problem, plan, c, seed=plan.seed0 + r,
                                  sample_merit=False)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    _, tr = run_async(inst.problem, cfg)
                times[(rule, c)].append(time_to_target(tr, plan.rel_err))
    rows = []
    for rule in plan.rules:
        base = _median(times[(rule, 1)])
        for c in plan.threads:
            ts = times[(rule, c)]
            med = _median(ts)
            sp = base / med if math.isfinite(base) and math.isfinite(med) and med > 0 else math.nan
            flags = []
            if any(t is None for t in ts):
                flags.append("unreached")
            if c > avail:
                flags.append("oversubscribed")
            if math.isfinite(sp) and sp > 1.1 * c:
                flags.append("superlinear: check clock")
            rows.append(SpeedupRow(rule, c, ts, med, sp, sum(t is not None for t in ts),
                                   ",".join(flags)))
    meta = {"available_parallelism": avail, "statistic": "median over realizations",
            "clock": "time.perf_counter (wall)"}
    report = SpeedupReport(rows, plan.rel_err, meta)
    meta["valid"] = report.valid
    out = _outdir(plan, "speedup")
    if out:
        _write_csv(os.path.join(out, "speedup.csv"),
                   ["rule", "threads", "median_time_s", "speedup", "reached", "flag", "times_s"],
                   ([row.rule, row.threads, row.median_time, row.speedup, row.reached, row.flag,
                     ";".join("" if t is None else repr(t) for t in row.times)]
                    for row in rows))
        _write_meta(out, plan, {"experiment": "speedup", **meta})
    return report


def _median(ts) -> float:
    """Median time, infinite when any realization missed the target."""
    if not ts or any(t is None for t in ts):
        return math.inf
    return float(np.median(ts))


# ---------------------------------------------------------------------------
# regularizer sweep


def nnz_percent(x) -> float:
    x = np.asarray(x)
    scale = np.abs(x).max(initial=0.0)
    if scale == 0:
        return 0.0
    return 100.0 * np.count_nonzero(np.abs(x) > NNZ_THRESHOLD_REL * scale) / x.size


@dataclass
class LambdaSweepResult:
    rows: list  # dicts: realization, family, lam, nmse, nnz_percent, merit, k, reason
    best: list  # dicts: realization, family, lam, nmse, nnz_percent

    def best_for(self, family: str) -> list:
        return [b for b in self.best if b["family"] == family]


def run_lambda_sweep(plan: ExperimentPlan, lambdas=None, families=("l1", "exp", "log"),
                     theta: float = 20.0) -> LambdaSweepResult:
    """
    Solve each realization over a grid of weights for every family and
    report NMSE to the planted signal and solution density.

    Each solve stops once the merit is at or below ``plan.merit`` (default
    ``1e-4``) or after ``plan.max_iter`` updates (default ``100 n``). The merit
    is checked every ``n`` updates of a single-threaded run, so the output is
    reproducible; the sweep measures solution quality, not speed.
    """
    lambdas = np.logspace(-3, 1, 10) if lambdas is None else np.asarray(lambdas, dtype=float)
    target = plan.merit if plan.merit is not None else 1e-4
    rows, best = [], []
    for r in range(plan.realizations):
        inst = GENERATORS[plan.generator](seed=plan.seed0 + r, **plan.params)
        if inst.xbar is None:
            raise ValueError("the sweep needs a planted signal")
        for fam_name in families:
            fam = Family.parse(fam_name)
            fam_rows = []
            for lam in lambdas:
                reg = Regularizer(fam, float(lam), theta if fam is not Family.L1 else 0.0)
                problem = inst.problem.with_reg(reg)
                cfg = rule_config("asyflexa", problem, plan, 1, seed=plan.seed0 + r,
                                  rel_err=None, merit=None)
                seen = {}

                def check(k, x, problem=problem, seen=seen):
                    seen["merit"] = K.merit_infinity(problem, x)
                    return seen["merit"] <= target

                x, k = run_serial(problem, cfg, callback=check)
                row = dict(realization=r, family=fam.name.lower(), lam=float(lam),
                           nmse=K.nmse(x, inst.xbar), nnz_percent=nnz_percent(x),
                           merit=seen["merit"], k=k,
                           reason="merit" if seen["merit"] <= target else "max_iter")
                fam_rows.append(row)
            rows.extend(fam_rows)
            b = min(fam_rows, key=lambda d: d["nmse"])
            best.append({key: b[key] for key in ("realization", "family", "lam", "nmse",
                                                 "nnz_percent")})
    res = LambdaSweepResult(rows, best)
    out = _outdir(plan, "lambda-sweep")
    if out:
        keys = ["realization", "family", "lam", "nmse", "nnz_percent", "merit", "k", "reason"]
        _write_csv(os.path.join(out, "sweep.csv"), keys, ([d[k] for k in keys] for d in rows))
        keys = ["realization", "family", "lam", "nmse", "nnz_percent"]
        _write_csv(os.path.join(out, "best.csv"), keys, ([d[k] for k in keys] for d in best))
        _write_meta(out, plan, {"experiment": "lambda-sweep", "lambdas": lambdas,
                                "families": list(families), "theta": theta,
                                "nmse_definition": "||x - xbar||^2 / ||xbar||^2"})
    return res


# ---------------------------------------------------------------------------
# measured K_eps against the bound


def lasso_constants(problem: CompositeProblem, tau: float, x0=None, rho: float = 2.0,
                    Fstar: float | None = None) -> theory.ComplexityConstants:
    """
    Constants of the synchronous analysis for an L1 problem with scalar
    blocks and surrogate ``f(x^k) + g_i d + (q_i + tau) d^2 / 2``:

    * ``c_tilde_f = min_i q_i + tau`` (surrogate curvature),
    * ``L_E = max_i q_i + tau`` (surrogate gradient in the block variable),
    * ``L_B = max_i (||H_i|| + q_i + tau)`` (same in the reference point),
    * ``L_f = ||H||_2``,
    * ``L_xhat = ||I - D^-1 H||_2`` with ``D = diag(q + tau)``, a Lipschitz
      bound for the best-response map since soft-thresholding is 1-Lipschitz.
    """
    if problem.reg.family is not Family.L1:
        raise ValueError("closed-form constants are derived for the L1 family only")
    loss = problem.loss
    G = loss.gram if loss.gram is not None else loss.with_mode(LossMode.GRAM).gram
    H = loss.curvature * G
    q = np.diag(H).copy()
    d = q + tau
    L_f = float(np.linalg.eigvalsh(H)[-1])
    row_norms = np.linalg.norm(H, axis=1)
    M = np.eye(H.shape[0]) - H / d[:, None]
    L_xhat = float(np.linalg.norm(M, 2))
    x0 = np.zeros(problem.n) if x0 is None else x0
    F0 = objective(problem, x0)
    Fs = problem.fstar if Fstar is None else Fstar
    return theory.ComplexityConstants.synchronous(
        rho=rho, N=problem.n, L_f=L_f, c_tilde_f=float(d.min()), L_xhat=L_xhat,
        L_B=float((row_norms + d).max()), L_E=float(d.max()), F0=F0, Fstar=min(Fs, F0))


@dataclass
class KEpsilonResult:
    epsilons: np.ndarray
    measured: np.ndarray  # first checkpoint with mean ||M_F||^2 <= eps (nan if not reached)
    bound: np.ndarray
    gamma: float
    gamma_max: float
    constants: theory.ComplexityConstants
    history: np.ndarray  # rows: k, mean ||M_F||^2
    slope: float

    @property
    def within_bound(self) -> bool:
        ok = np.isfinite(self.measured)
        return bool(ok.all() and (self.measured <= self.bound).all())


def run_kepsilon(problem: CompositeProblem, epsilons, gamma: float | None = None,
                 gamma_fraction: float = 0.9, tau: float = 0.0, realizations: int = 5,
                 seed0: int = 0, rho: float = 2.0, max_iter: int = 10_000_000,
                 output_dir: str | None = None) -> KEpsilonResult:
    """
    Run the fixed-step scheme with uniformly random blocks on an L1 problem
    and record, every ``n`` updates, the merit ``||M_F(x^k)||^2`` averaged
    over realizations (standing in for the expectation). ``K_eps`` is the
    first such checkpoint at or below ``eps``; ``nan`` marks a target the
    budget did not reach.
    """
    if problem.fstar is None:
        problem = run_sync_reference(problem).problem
    eps = np.sort(np.asarray(epsilons, dtype=float))[::-1]
    c = lasso_constants(problem, tau, rho=rho)
    gmax = theory.fixed_step_bound(c)
    if gamma is None:
        gamma = gamma_fraction * gmax
    bound = np.array([theory.k_epsilon_bound(c, gamma, e) for e in eps])
    n = problem.n
    msq = lambda x: float(np.sum(K.prox_gradient_residual(problem, x) ** 2))
    cfg = SolverConfig(rule="asyflexa", threads=1, order="random",
                       schedule=StepSchedule.fixed(gamma),
                       tau=TauHeuristic(fixed=tau), rel_err=None, max_iter=n)
    from .engine import SharedIterate
    states = [SharedIterate(problem) for _ in range(realizations)]
    hist = [(0, float(np.mean([msq(s.x) for s in states])))]
    step = 0
    while hist[-1][1] > eps[-1] and step * n < max_iter:
        vals = []
        for r, s in enumerate(states):
            run_serial(problem, replace(cfg, seed=seed0 + 7907 * r + 15485863 * step),
                       shared=s)
            vals.append(msq(s.x))
        step += 1
        hist.append((step * n, float(np.mean(vals))))
    hist = np.array(hist)
    measured = np.array([_first_below(hist, e) for e in eps])
    ok = np.isfinite(measured) & (measured > 0)
    slope = theory.loglog_slope(1.0 / eps[ok], measured[ok]) if ok.sum() >= 2 else math.nan
    res = KEpsilonResult(eps, measured, bound, float(gamma), gmax, c, hist, slope)
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
        _write_csv(os.path.join(output_dir, "kepsilon.csv"), ["epsilon", "K_measured", "K_bound"],
                   zip(eps, measured, bound))
        _write_csv(os.path.join(output_dir, "merit_history.csv"), ["k", "mean_merit_sq"], hist)
        with open(os.path.join(output_dir, "metadata.json"), "w") as fh:
            json.dump({"experiment": "kepsilon", "gamma": gamma, "gamma_max": gmax,
                       "tau": tau, "realizations": realizations, "seed0": seed0,
                       "constants": asdict(c), "slope_K_vs_inv_eps": slope,
                       "merit": "||M_F(x)||_2^2, unit-step prox-gradient residual",
                       "host": host_info()}, fh, indent=2, default=_json_default)
    return res


def _first_below(hist, e) -> float:
    hit = np.nonzero(hist[:, 1] <= e)[0]
    return float(hist[hit[0], 0]) if hit.size else math.nan
