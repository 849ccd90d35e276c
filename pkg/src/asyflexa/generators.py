"""
Synthetic sparse-regression instances.

Every generator is a pure function of its arguments (the seed included) and
returns a :class:`GeneratedInstance`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import CompositeProblem, Family, LossMode, QuadraticLoss, Regularizer, objective, smooth_gradient

MAX_SPECTRAL_N = 2000


@dataclass(frozen=True, eq=False)
class GeneratedInstance:
    problem: CompositeProblem
    xbar: np.ndarray | None = None
    xstar: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def _sparse_signal(rng, n, nnz):
    x = np.zeros(n)
    support = np.sort(rng.choice(n, size=nnz, replace=False))
    x[support] = rng.standard_normal(nnz)
    return x


def liu_wright_lambda(m: int, n: int, sigma: float) -> float:
    """``20 sqrt(m ln n) sigma`` (natural logarithm)."""
    return 20.0 * math.sqrt(m * math.log(n)) * sigma


def gen_liu_wright(m: int = 400, n: int = 800, s: int = 20, sigma: float = 0.01,
                   seed: int = 0, mode: LossMode | None = None) -> GeneratedInstance:
    """
    Gaussian LASSO: ``A`` i.i.d. N(0,1), ``xbar`` with ``s`` N(0,1) entries at
    random positions, ``b = A xbar + e`` with ``e ~ N(0, sigma^2)``.
    """
    if m < 1 or n < 1 or not 0 <= s <= n or sigma < 0:
        raise ValueError("invalid dimensions or noise level")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    xbar = _sparse_signal(rng, n, s)
    b = A @ xbar + sigma * rng.standard_normal(m)
    lam = liu_wright_lambda(m, n, sigma)
    meta = dict(generator="liu-wright", m=m, n=n, s=s, sigma=sigma, lam=lam, seed=seed,
                lambda_rule="20*sqrt(m*ln(n))*sigma", log_base="e", loss_scale=0.5)
    problem = CompositeProblem(QuadraticLoss(A, b, 0.5, mode), Regularizer.l1(lam), meta=meta)
    return GeneratedInstance(problem, xbar=xbar, meta=meta)


def gen_nesterov(m: int = 400, n: int = 800, nnz_percent: float = 1.0, seed: int = 0,
                 lam: float = 1.0, magnitude: float = 1.0,
                 mode: LossMode | None = None) -> GeneratedInstance:
    """
    LASSO with a known minimizer, built from a dual certificate.

    A random residual ``v`` is drawn and the columns of a Gaussian matrix are
    rescaled so that ``|a_i^T v| = lam`` on the support (with ``x*_i`` of the
    opposite sign) and ``|a_i^T v| <= lam`` off it. Setting ``b = A x* - v``
    makes ``A^T (A x* - b) = A^T v`` satisfy the optimality conditions at ``x*``.
    """
    if not 0 < nnz_percent <= 100:
        raise ValueError("nnz_percent must lie in (0, 100]")
    nnz = max(1, int(round(n * nnz_percent / 100.0)))
    if nnz > m:
        raise ValueError(f"{nnz} nonzeros cannot be certified with only {m} rows")
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((m, n))
    v = rng.standard_normal(m)
    support = np.sort(rng.choice(n, size=nnz, replace=False))
    on = np.zeros(n, dtype=bool)
    on[support] = True

    c = B.T @ v
    scale = np.ones(n)
    scale[on] = lam / np.abs(c[on])
    xi = rng.uniform(0.0, 1.0, size=n)
    big = (~on) & (np.abs(c) > lam)
    scale[big] = xi[big] * lam / np.abs(c[big])
    A = B * scale

    av = A.T @ v
    xstar = np.zeros(n)
    xstar[on] = -np.sign(av[on]) * magnitude * rng.uniform(0.1, 1.0, size=nnz)
    b = A @ xstar - v

    meta = dict(generator="nesterov", m=m, n=n, nnz_percent=nnz_percent, nnz=nnz, lam=lam,
                seed=seed, loss_scale=0.5,
                construction="dual certificate: |a_i^T v|=lam on support, <=lam off")
    problem = CompositeProblem(QuadraticLoss(A, b, 0.5, mode), Regularizer.l1(lam), meta=meta)
    fstar = objective(problem, xstar)
    problem = problem.with_fstar(fstar, fstar_source="certificate")
    meta["kkt_residual"] = lasso_kkt_residual(problem, xstar)
    meta["fstar"] = fstar
    return GeneratedInstance(problem, xbar=xstar.copy(), xstar=xstar, meta=meta)


def lasso_kkt_residual(problem: CompositeProblem, x) -> float:
    """
    Violation of the L1 optimality conditions: ``|g_i + lam sign(x_i)|`` on the
    support and ``max(0, |g_i| - lam)`` off it.
    """
    g = smooth_gradient(problem, x)
    lam = problem.reg.lam
    nz = x != 0
    r_on = np.abs(g[nz] + lam * np.sign(x[nz]))
    r_off = np.maximum(np.abs(g[~nz]) - lam, 0.0)
    return float(max(r_on.max(initial=0.0), r_off.max(initial=0.0)))


def gondzio_singular_values(n: int, cond_target: float, top: float = 1.0) -> np.ndarray:
    """Log-spaced singular values, largest first, with ``(s_max/s_min)^2 = cond_target``."""
    return top * np.logspace(0.0, -0.5 * math.log10(cond_target), n)


def gen_gondzio(m: int | None = None, n: int = 512, cond_target: float = 1e4,
                nnz_percent: float = 0.1, seed: int = 0, lam: float = 1.0,
                sigma: float = 1e-3, mode: LossMode | None = None) -> GeneratedInstance:
    """
    LASSO with a prescribed condition number of ``A^T A``.

    ``A = U diag(s) V^T`` with Haar-random orthonormal factors and singular
    values log-spaced from ``sqrt(m)`` down to ``sqrt(m / cond_target)``. The
    row count defaults to ``ceil(1.01 n)``.
    """
    if m is None:
        m = math.ceil(1.01 * n)
    if n > MAX_SPECTRAL_N:
        raise ValueError(f"spectrum control is limited to n <= {MAX_SPECTRAL_N}")
    if m < n:
        raise ValueError("need m >= n for a finite condition number of A^T A")
    if not cond_target >= 1:
        raise ValueError("cond_target must be >= 1")
    rng = np.random.default_rng(seed)
    U = _haar(rng, m, n)
    V = _haar(rng, n, n)
    s = gondzio_singular_values(n, cond_target, math.sqrt(m))
    A = (U * s) @ V.T
    nnz = max(1, int(round(n * nnz_percent / 100.0)))
    xbar = _sparse_signal(rng, n, nnz)
    b = A @ xbar + sigma * rng.standard_normal(m)
    meta = dict(generator="gondzio", m=m, n=n, cond_target=cond_target,
                nnz_percent=nnz_percent, nnz=nnz, lam=lam, sigma=sigma, seed=seed,
                loss_scale=0.5, spectrum="log-spaced singular values, top sqrt(m)")
    problem = CompositeProblem(QuadraticLoss(A, b, 0.5, mode), Regularizer.l1(lam), meta=meta)
    return GeneratedInstance(problem, xbar=xbar, meta=meta)


def _haar(rng, rows, cols):
    Q, R = np.linalg.qr(rng.standard_normal((rows, cols)))
    return Q * np.sign(np.diag(R))


def gen_nonconvex_sparse(m: int = 400, n: int = 800, sparsity_percent: float = 95.0,
                         seed: int = 0, family="log", theta: float = 20.0,
                         lam: float | None = None, sigma_noise: float = 0.1,
                         lam_ratio: float = 0.5,
                         mode: LossMode | None = None) -> GeneratedInstance:
    """
    Sparse recovery with unit-norm columns and ``||A x - b||^2`` loss.

    ``sparsity_percent`` is the share of zeros in ``xbar``; the nonzero count is
    ``ceil((1 - sparsity_percent/100) n)``. The data depend on the seed only,
    not on the regularizer family. Without an explicit ``lam`` the weight is
    ``lam_ratio`` times :func:`zero_stationary_lambda`.
    """
    fam = Family.parse(family)
    if fam is not Family.L1 and not theta > 0:
        raise ValueError("theta must be positive")
    if not 0 <= sparsity_percent < 100:
        raise ValueError("sparsity_percent must lie in [0, 100)")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    A /= np.linalg.norm(A, axis=0)
    nnz = math.ceil(round((1.0 - sparsity_percent / 100.0) * n, 9))
    xbar = _sparse_signal(rng, n, nnz)
    b = A @ xbar + sigma_noise * rng.standard_normal(m)
    theta = theta if fam is not Family.L1 else 0.0
    rule = "explicit"
    if lam is None:
        lam = lam_ratio * zero_stationary_lambda(A, b, Regularizer(fam, 1.0, theta), 1.0)
        rule = f"{lam_ratio:g} * lambda_max"
    reg = Regularizer(fam, lam, theta)
    meta = dict(generator="nonconvex", m=m, n=n, sparsity_percent=sparsity_percent, nnz=nnz,
                seed=seed, family=fam.name, theta=reg.theta, lam=lam, lambda_rule=rule,
                sigma_noise=sigma_noise, loss_scale=1.0,
                normalization="unit 2-norm columns (interpretation)")
    problem = CompositeProblem(QuadraticLoss(A, b, 1.0, mode), reg, meta=meta)
    return GeneratedInstance(problem, xbar=xbar, meta=meta)


def zero_stationary_lambda(A, b, reg: Regularizer, scale: float) -> float:
    """
    Smallest weight for which ``x = 0`` is stationary: ``||2 scale A^T b||_inf / eta``
    (``eta = 1`` for L1). The concave part has zero slope at the origin, so
    the test reduces to the L1 one with weight ``lam * eta``.
    """
    eta = reg.eta if reg.family is not Family.L1 else 1.0
    return float(np.abs(2.0 * scale * (A.T @ b)).max() / eta)


GENERATORS = {
    "liu-wright": gen_liu_wright,
    "nesterov": gen_nesterov,
    "gondzio": gen_gondzio,
    "nonconvex": gen_nonconvex_sparse,
}
