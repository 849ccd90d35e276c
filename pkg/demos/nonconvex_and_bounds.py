"""
Two smaller experiments.

1. Regularizer sweep: L1 against the exp and log DC penalties on the same
   sparse-recovery data; the concave penalties pick sparser supports.
2. Iteration complexity: measured K_eps for a tiny LASSO against the
   fixed-stepsize bound evaluated from its constants.

    python3 demos/nonconvex_and_bounds.py
"""

from dataclasses import replace

import numpy as np

from asyflexa import bench as B
from asyflexa import theory
from asyflexa.generators import GeneratedInstance
from asyflexa.model import CompositeProblem, QuadraticLoss, Regularizer

plan = B.ExperimentPlan(generator="nonconvex", params=dict(m=100, n=200), realizations=1,
                        rel_err=None)
res = B.run_lambda_sweep(plan, lambdas=np.logspace(-3, 0, 7))
for row in res.best:
    print(f"{row['family']:>4s}: best lambda {row['lam']:.3g}  nmse {row['nmse']:.3e}  "
          f"nnz {row['nnz_percent']:.1f}%")

rng = np.random.default_rng(9)
A = rng.standard_normal((30, 10))
b = rng.standard_normal(30)
lam = 0.1 * np.max(np.abs(A.T @ b))
p = B.ensure_fstar(GeneratedInstance(CompositeProblem(QuadraticLoss(A, b), Regularizer.l1(lam))))
ke = B.run_kepsilon(p.problem, [1e-1, 1e-2, 1e-3], realizations=3)
print(f"\ngamma = 0.9 * gamma_max = {ke.gamma:.3e}")
for e, k, bd in zip(ke.epsilons, ke.measured, ke.bound):
    print(f"eps {e:.0e}: measured {k:8.0f}  bound {bd:.3e}")

# the admissible stepsize shrinks as the tolerated delay grows
for d in (0, 2, 8):
    print(f"delay {d}: gamma_max {theory.fixed_step_bound(replace(ke.constants, delta=d)):.3e}")
