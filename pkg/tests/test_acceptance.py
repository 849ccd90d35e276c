"""
Acceptance suite: one test per criterion, each run at its stated tolerance.

Every test records a line in ``RESULTS``; the conftest hook prints them after
the run. A criterion that does not hold fails its test.
"""

import math
import time

import numpy as np
import pytest

from asyflexa import bench as B
from asyflexa import kernels as K
from asyflexa import theory as T
from asyflexa.engine import (SharedIterate, SolverConfig, StepSchedule, TauHeuristic,
                             partition_blocks, run_async, run_serial, run_sync_reference)
from asyflexa.generators import (gen_gondzio, gen_liu_wright, gen_nesterov,
                                 gen_nonconvex_sparse, lasso_kkt_residual)
from asyflexa.model import Family, LossMode, Regularizer, hminus_gradient, objective

from conftest import cyclic_cd_oracle, fista, random_lasso

RESULTS = {}


def _record(n, ok, detail):
    RESULTS[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


# ---------------------------------------------------------------------------


def test_c01_oracle_equivalence():
    t0 = time.perf_counter()
    worst_write, worst_x = 0.0, 0.0
    tau, sweeps = 0.25, 30
    for seed in range(20):
        r = np.random.default_rng(1000 + seed)
        n = int(r.integers(5, 21))
        m = int(r.integers(n + 5, 3 * n + 1))
        p = random_lasso(r, m, n)
        cfg = SolverConfig(threads=1, order="cyclic", schedule=StepSchedule.fixed(1.0),
                           tau=TauHeuristic(fixed=tau), max_iter=sweeps * n, log_writes=True,
                           log_capacity=sweeps * n, rel_err=None)
        _, tr = run_async(p, cfg)
        _, writes = cyclic_cd_oracle(p.loss.A, p.loss.b, p.reg.lam, p.loss.scale, tau, sweeps)
        worst_write = max(worst_write, float(np.max(np.abs(tr.update_log[0][:, 4] - writes))))
        # run on to convergence and compare with an accelerated prox-gradient solution
        long = SolverConfig(schedule=StepSchedule.fixed(1.0), tau=TauHeuristic(fixed=tau),
                            max_iter=20000 * n)
        x, _ = run_serial(p, long,
                          callback=lambda k, x, p=p: np.max(np.abs(K.prox_gradient_residual(p, x))) < 1e-13)
        worst_x = max(worst_x, float(np.max(np.abs(x - fista(p)))))
    dt = time.perf_counter() - t0
    _record(1, worst_write <= 1e-10 and worst_x <= 1e-8 and dt < 10,
            f"max write gap {worst_write:.1e} (<=1e-10), max |x - x_ref| {worst_x:.1e} (<=1e-8), "
            f"{dt:.1f}s (<10s)")


def test_c02_liu_wright_single_thread():
    B.warm_up()
    out = []
    for seed in range(5):
        inst = B.ensure_fstar(gen_liu_wright(seed=seed))
        cfg = SolverConfig(threads=1, schedule=StepSchedule.diminishing(1.0, 1e-6),
                           rel_err=1e-4, time_budget_s=60.0, max_iter=10**10,
                           sample_interval_s=1e-3)
        _, tr = run_async(inst.problem, cfg)
        t = tr.time_to("rel_err", 1e-4)
        out.append((tr.reason, t))
    ok = all(reason == "rel_err" and t is not None and t <= 60 for reason, t in out)
    _record(2, ok, "times to 1e-4: " + ", ".join(
        f"{t:.3f}s" if t is not None else f"unreached({r})" for r, t in out))


@pytest.mark.threaded
def test_c03_speedup():
    plan = B.ExperimentPlan(generator="liu-wright", threads=(1, 2, 4), realizations=5,
                            rel_err=1e-4, time_budget_s=60.0, sample_interval_s=1e-3)
    rep = B.run_speedup(plan)
    sp = rep.table("asyflexa")
    med = {row.threads: row.median_time for row in rep.rows}
    ok = (rep.valid and med[4] <= 0.7 * med[1] and sp[1] < sp[2] < sp[4])
    _record(3, ok, f"median T(1)={med[1]:.3f}s T(2)={med[2]:.3f}s T(4)={med[4]:.3f}s, "
                   f"speedup 2:{sp[2]:.2f} 4:{sp[4]:.2f} (need T(4)<=0.7 T(1), monotone); "
                   f"host parallelism {rep.meta['available_parallelism']}")


def test_c04_nesterov_certificate():
    worst_kkt, worst_gap = 0.0, 0.0
    for seed in range(20):
        inst = gen_nesterov(seed=seed)
        worst_kkt = max(worst_kkt, lasso_kkt_residual(inst.problem, inst.xstar))
        res = run_sync_reference(inst.problem)
        fs = inst.problem.fstar
        worst_gap = max(worst_gap, abs(res.fstar - fs) / abs(fs))
    _record(4, worst_kkt <= 1e-8 and worst_gap <= 1e-8,
            f"max KKT residual {worst_kkt:.1e}, max relative F* gap {worst_gap:.1e} (both <=1e-8)")


def test_c05_gondzio_conditioning():
    conds = []
    for seed in range(5):
        A = gen_gondzio(n=512, seed=seed).problem.loss.A
        ev = np.linalg.eigvalsh(A.T @ A)
        conds.append(ev[-1] / ev[0])
    worst = max(abs(c / 1e4 - 1) for c in conds)
    _record(5, worst <= 0.05, f"cond(A^T A) in [{min(conds):.4g}, {max(conds):.4g}], "
                              f"max deviation {100 * worst:.2g}% (<=5%)")


@pytest.mark.threaded
def test_c06_nonconvex_convergence():
    lines, ok = [], True
    for fam in ("log", "exp"):
        for seed in range(5):
            inst = gen_nonconvex_sparse(seed=seed, family=fam)
            p = inst.problem
            res = {}
            for P in (1, 4):
                cfg = SolverConfig(threads=P, merit=1e-4, rel_err=None, max_iter=100 * p.n,
                                   time_budget_s=120, sample_interval_s=1e-3)
                x, tr = run_async(p, cfg)
                res[P] = (K.merit_infinity(p, x), objective(p, x), tr.k_final)
            merits_ok = all(res[P][0] <= 1e-4 and res[P][2] <= 100 * p.n + P for P in (1, 4))
            gap = abs(res[4][1] - res[1][1]) / abs(res[1][1])
            ok &= merits_ok and gap <= 1e-4
            if not (merits_ok and gap <= 1e-4):
                lines.append(f"{fam} seed {seed}: merit P1 {res[1][0]:.1e} P4 {res[4][0]:.1e}, "
                             f"objective gap {gap:.1e}")
    _record(6, ok, "all merits <=1e-4 within 100n and objectives within 1e-4"
            if ok else "; ".join(lines))


def test_c07_lambda_sweep_ordering():
    plan = B.ExperimentPlan(generator="nonconvex", realizations=5, rel_err=None)
    res = B.run_lambda_sweep(plan)
    wins = 0
    detail = []
    for r in range(5):
        best = {b["family"]: b["nnz_percent"] for b in res.best if b["realization"] == r}
        d = {f: abs(best[f] - 5.0) for f in best}
        win = d["log"] < d["l1"] and d["exp"] < d["l1"]
        wins += win
        detail.append(f"r{r} nnz% l1 {best['l1']:.1f} exp {best['exp']:.1f} log {best['log']:.1f}")
    _record(7, wins >= 4, f"{wins}/5 realizations ordered (need >=4): " + "; ".join(detail))


def test_c08_theory_reductions():
    worst_red, worst_inv = 0.0, 0.0
    r = np.random.default_rng(8)
    for _ in range(200):
        N = int(r.integers(1, 500))
        kw = dict(rho=float(r.uniform(1.05, 6)), N=N, L_f=float(r.uniform(0.01, 20)),
                  c_tilde_f=float(r.uniform(0.01, 20)), L_xhat=float(r.uniform(0, 5)),
                  L_B=float(r.uniform(0, 20)), L_E=float(r.uniform(0, 20)),
                  F0=float(r.uniform(1, 1e3)), Fstar=0.0)
        c = T.ComplexityConstants.synchronous(**kw)
        g = T.fixed_step_bound(c)
        g_hand = min((1 - 1 / kw["rho"]) / (2 * (1 + 3 * kw["L_xhat"] * N)),
                     kw["c_tilde_f"] / kw["L_f"])
        gamma = g * float(r.uniform(0.05, 1.0))
        eps = 10 ** float(r.uniform(-8, 1))
        k = T.k_epsilon_bound(c, gamma, eps)
        k_hand = (2 * N * N * (2 + kw["L_B"] + kw["L_E"]) * kw["F0"]
                  / (eps * gamma * (kw["c_tilde_f"] - gamma * kw["L_f"])))
        worst_red = max(worst_red, abs(g - g_hand) / g_hand, abs(k - k_hand) / k_hand)
        cd = T.ComplexityConstants(**{**kw, "delta": int(r.integers(0, 6)), "p_min": 0.5 / N,
                                      "Delta": 0.2 / N})
        gd = 0.5 * T.fixed_step_bound(cd)
        base = T.k_epsilon_bound(cd, gd, 1.0)
        for e in (1e-6, 1e-3, 0.37, 42.0):
            worst_inv = max(worst_inv, abs(T.k_epsilon_bound(cd, gd, e) * e - base) / base)
    Ns = [2, 4, 8, 16]
    base = dict(rho=2.0, L_f=1.0, c_tilde_f=1.0, L_xhat=1.0, L_B=1.0, L_E=1.0, F0=1.0, Fstar=0.0)
    g2 = T.fixed_step_bound(T.ComplexityConstants.synchronous(N=2, **base))
    ks = [T.k_epsilon_bound(T.ComplexityConstants.synchronous(N=N, **base), g2 * 2 / N, 1e-3)
          for N in Ns]
    slope = T.loglog_slope(Ns, ks)
    _record(8, worst_red <= 1e-14 and worst_inv <= 1e-14 and abs(slope - 3) <= 0.05,
            f"reduction gap {worst_red:.1e}, eps-invariance gap {worst_inv:.1e} (both <=1e-14), "
            f"N^3 slope {slope:.4f} (3 +/- 0.05)")


def _sampled_lxhat(problem, tau, trials=5000, seed=0):
    r = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = r.standard_normal(problem.n) * r.uniform(0.01, 3)
        y = x + r.standard_normal(problem.n) * r.uniform(1e-4, 1)
        num = np.linalg.norm(K.best_response_map(problem, x, tau)
                             - K.best_response_map(problem, y, tau))
        worst = max(worst, num / np.linalg.norm(x - y))
    return worst


def test_c09_kepsilon_below_bound():
    p = random_lasso(np.random.default_rng(9), 30, 10, lam_frac=0.1)
    res = B.run_kepsilon(p, [1e-1, 1e-2, 1e-3], gamma_fraction=0.9, realizations=5)
    lx_grid = _sampled_lxhat(p, 0.0)
    ok = (res.within_bound and bool(np.all(np.diff(res.measured) >= 0))
          and lx_grid <= res.constants.L_xhat * (1 + 1e-9))
    rows = ", ".join(f"eps {e:g}: {km:.0f} <= {kb:.3g}"
                     for e, km, kb in zip(res.epsilons, res.measured, res.bound))
    _record(9, ok, f"{rows}; gamma {res.gamma:.3g}; L_xhat {res.constants.L_xhat:.3g} "
                   f">= sampled {lx_grid:.3g}")


@pytest.mark.threaded
def test_c10_numerical_invariants():
    checks = {}
    x = np.random.default_rng(10).standard_normal(100_000) * 3
    worst = 0.0
    for fam in (Family.L1, Family.EXP, Family.LOG):
        reg = Regularizer(fam, 1.0, 20.0)
        worst = max(worst, float(np.max(np.abs(reg.h_plus(x) - reg.h_minus(x) - reg.h(x)))))
    checks["DC identity"] = (worst <= 1e-12, f"{worst:.1e}")

    xs = np.random.default_rng(11).uniform(-2, 2, 2000)
    xs = xs[np.abs(xs) > 1e-3]
    h = 1e-7
    worst = 0.0
    for reg in (Regularizer.exp(1.0, 20.0), Regularizer.log(1.0, 20.0)):
        fd = (reg.h_minus(xs + h) - reg.h_minus(xs - h)) / (2 * h)
        g = hminus_gradient(reg, xs)
        worst = max(worst, float(np.max(np.abs(fd - g) / np.maximum(1.0, np.abs(g)))))
    checks["grad h- FD"] = (worst <= 1e-6, f"{worst:.1e}")

    r = np.random.default_rng(12)
    a, b = r.standard_normal((2, 100_000)) * 5
    t = r.uniform(0, 3, 100_000)
    gap = np.abs(K.soft_threshold(a, t) - K.soft_threshold(b, t)) - np.abs(a - b)
    ok = bool(np.all(gap <= 4e-16 * (np.abs(a) + np.abs(b) + t)))
    checks["nonexpansive"] = (ok, f"max excess {gap.max():.1e} on 1e5 pairs")

    p = random_lasso(np.random.default_rng(13), 200, 256, mode=LossMode.MATRIX_FREE)
    sh = SharedIterate(p)
    xq, _ = run_async(p, SolverConfig(threads=4, max_iter=400_000, rel_err=None), shared=sh)
    err = float(np.max(np.abs(sh.residual - p.loss.residual(xq))))
    tol = 1e-8 * (1 + np.max(np.abs(p.loss.b)))
    checks["residual integrity"] = (err <= tol, f"{err:.1e}")

    q = random_lasso(np.random.default_rng(14), 100, 400, lam_frac=0.05)
    part = partition_blocks(q.n, 4)
    _, tr = run_async(q, SolverConfig(threads=4, max_iter=1_000_000, rel_err=None,
                                      log_writes=True, log_capacity=1))
    cross = 0
    for w, rg in enumerate(part.ranges()):
        cross += int(tr.write_counts[w, :rg.start].sum() + tr.write_counts[w, rg.stop:].sum())
    total = int(tr.write_counts.sum())
    checks["ownership"] = (cross == 0 and total >= 1_000_000,
                           f"{cross} cross-worker writes in {total} updates")
    ok = all(v[0] for v in checks.values())
    _record(10, ok, "; ".join(f"{k} {'ok' if v[0] else 'FAILED'} ({v[1]})"
                              for k, v in checks.items()))
