"""
Scalar best responses and optimality measures.

The ``nb_*`` functions are the compiled scalar kernels shared with the
asynchronous engine; the public functions wrap them with argument checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import (
    CompositeProblem,
    Family,
    Regularizer,
    _check_dim,
    hminus_gradient,
    smooth_gradient,
)

FAM_L1 = int(Family.L1)
FAM_EXP = int(Family.EXP)
FAM_LOG = int(Family.LOG)


@njit(nogil=True, cache=True, inline="always", error_model="numpy")
def nb_soft_threshold(v, t):
    if v > t:
        return v - t
    if v < -t:
        return v + t
    return 0.0


@njit(nogil=True, cache=True, error_model="numpy")
def nb_h(fam, theta, x):
    ax = abs(x)
    if fam == FAM_L1:
        return ax
    if fam == FAM_EXP:
        return -math.expm1(-theta * ax)
    return math.log1p(theta * ax) / math.log1p(theta)


@njit(nogil=True, cache=True, error_model="numpy")
def nb_hminus_grad(fam, theta, eta, x):
    if fam == FAM_L1 or x == 0.0:
        return 0.0
    s = 1.0 if x > 0.0 else -1.0
    ax = abs(x)
    if fam == FAM_EXP:
        return eta * s * -math.expm1(-theta * ax)
    return s * (eta - theta / ((1.0 + theta * ax) * math.log1p(theta)))


@njit(nogil=True, cache=True, error_model="numpy")
def nb_best_response(q, grad, xt, tau, fam, lam, theta, eta):
    d = q + tau
    if fam == FAM_L1:
        return nb_soft_threshold(xt - grad / d, lam / d)
    g = grad - lam * nb_hminus_grad(fam, theta, eta, xt)
    return nb_soft_threshold(xt - g / d, lam * eta / d)


def soft_threshold(v, t):
    """``sign(v) * max(|v| - t, 0)``; exactly zero on ``|v| <= t``."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v, dtype=np.float64)
    out = np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BestResponseInputs:
    """Data of the scalar surrogate ``0.5 q (x-xt)^2 + grad (x-xt) + 0.5 tau (x-xt)^2``."""

    q: float
    grad: float
    xtilde: float
    tau: float
    reg: Regularizer

    def __post_init__(self):
        if not self.q + self.tau > 0:
            raise ValueError("q + tau must be positive")


def best_response_l1(inp: BestResponseInputs) -> float:
    if inp.reg.family is not Family.L1:
        raise ValueError("best_response_l1 needs the L1 family")
    d = inp.q + inp.tau
    return soft_threshold(inp.xtilde - inp.grad / d, inp.reg.lam / d)


def best_response_dc(inp: BestResponseInputs) -> float:
    """Best response with ``h_minus`` linearized at ``xtilde`` and ``lam*eta|x|`` kept exact."""
    reg = inp.reg
    if reg.family is Family.L1:
        raise ValueError("best_response_dc needs a nonconvex family")
    d = inp.q + inp.tau
    g = inp.grad - reg.lam * hminus_gradient(reg, inp.xtilde)
    return soft_threshold(inp.xtilde - g / d, reg.lam * reg.eta / d)


def best_response(inp: BestResponseInputs) -> float:
    if inp.reg.family is Family.L1:
        return best_response_l1(inp)
    return best_response_dc(inp)


def _shifted_gradient(problem: CompositeProblem, x: np.ndarray) -> np.ndarray:
    g = smooth_gradient(problem, x)
    reg = problem.reg
    if reg.family is not Family.L1:
        g = g - reg.lam * hminus_gradient(reg, x)
    return g


def best_response_map(problem: CompositeProblem, x, tau) -> np.ndarray:
    """All scalar best responses at a consistent point ``x``."""
    x = _check_dim(problem, x)
    reg = problem.reg
    d = problem.loss.curvature * problem.loss.gram_diag + tau
    g = _shifted_gradient(problem, x)
    return soft_threshold(x - g / d, reg.lam * reg.threshold_weight / d)


def prox_gradient_residual(problem: CompositeProblem, x) -> np.ndarray:
    """
    Unit-step prox-gradient residual ``x - prox_g(x - grad f(x))``.

    For DC families ``f`` is the loss minus ``lam h_minus`` and ``g`` is
    ``lam eta |.|``, the same split the solver uses.
    """
    x = _check_dim(problem, x)
    reg = problem.reg
    y = soft_threshold(x - _shifted_gradient(problem, x), reg.lam * reg.threshold_weight)
    return x - y


def merit_tau(problem: CompositeProblem) -> float:
    """Frozen proximal weight for the merit: median of the coordinate curvatures."""
    t = float(np.median(problem.loss.curvature * problem.loss.gram_diag))
    return t if t > 0 else 1.0


def merit_infinity(problem: CompositeProblem, x, tau=None) -> float:
    """``max_i |xhat_i(x) - x_i|`` with zero delay."""
    if tau is None:
        tau = merit_tau(problem)
    if not tau > 0:
        raise ValueError("tau must be positive")
    x = _check_dim(problem, x)
    return float(np.max(np.abs(best_response_map(problem, x, tau) - x)))


def nmse(x, xbar) -> float:
    xbar = np.asarray(xbar, dtype=np.float64)
    den = float(xbar @ xbar)
    if den == 0.0:
        raise ValueError("reference signal is zero")
    d = np.asarray(x, dtype=np.float64) - xbar
    return float(d @ d) / den


def relative_error(Fx: float, Fstar: float) -> float:
    """``(Fx - Fstar) / max(1, |Fstar|)``."""
    return (Fx - Fstar) / max(1.0, abs(Fstar))


RELATIVE_ERROR_DEFINITION = "(F(x) - F*) / max(1, |F*|)"
