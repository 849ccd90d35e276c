"""Shared fixtures and independent oracles.

The oracles deliberately avoid the package's kernels: they recompute
gradients from ``A`` and ``b`` directly and solve scalar problems by case
analysis or brute force.
"""

import math
import warnings

import numpy as np
import pytest

from asyflexa.model import CompositeProblem, LossMode, QuadraticLoss, Regularizer


def random_lasso(rng, m, n, lam=None, scale=0.5, mode=None, lam_frac=0.1):
    A = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    if lam is None:
        lam = lam_frac * np.abs(2 * scale * A.T @ b).max()
    return CompositeProblem(QuadraticLoss(A, b, scale, mode), Regularizer.l1(lam))


def cd_scalar_l1(q, g, xt, tau, lam):
    """argmin_x 0.5 (q+tau) (x-xt)^2 + g (x-xt) + lam |x|, by sign cases."""
    c = q + tau
    pos = xt - (g + lam) / c  # stationary point on x > 0
    if pos > 0:
        return pos
    neg = xt - (g - lam) / c  # stationary point on x < 0
    if neg < 0:
        return neg
    return 0.0


def cyclic_cd_oracle(A, b, lam, scale, tau, sweeps, x0=None):
    """Plain-Python cyclic coordinate minimization; returns every coordinate write."""
    m, n = A.shape
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    writes = []
    cm = 2.0 * scale
    for _ in range(sweeps):
        for i in range(n):
            r = A @ x - b
            g = cm * float(A[:, i] @ r)
            q = cm * float(A[:, i] @ A[:, i])
            x[i] = cd_scalar_l1(q, g, x[i], tau, lam)
            writes.append(x[i])
    return x, np.array(writes)


def fista(problem, iters=20000, tol=1e-15):
    """Accelerated prox-gradient on an L1 problem, computed from A and b directly."""
    A, b = problem.loss.A, problem.loss.b
    cm = problem.loss.curvature
    lam = problem.reg.lam
    L = cm * np.linalg.norm(A, 2) ** 2
    x = np.zeros(A.shape[1])
    y, t = x.copy(), 1.0
    for _ in range(iters):
        g = cm * (A.T @ (A @ y - b))
        v = y - g / L
        xn = np.sign(v) * np.maximum(np.abs(v) - lam / L, 0.0)
        tn = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        y = xn + (t - 1) / tn * (xn - x)
        if np.max(np.abs(xn - x)) < tol:
            x = xn
            break
        x, t = xn, tn
    return x


def grid_argmin(fun, lo, hi, step):
    xs = np.arange(lo, hi + step / 2, step)
    return float(xs[np.argmin(fun(xs))])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_oversubscription():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*available cores.*", category=RuntimeWarning)
        yield


@pytest.fixture
def gram_and_free():
    return (LossMode.GRAM, LossMode.MATRIX_FREE)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
