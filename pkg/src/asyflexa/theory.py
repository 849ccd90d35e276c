"""
Fixed-stepsize complexity calculator.

Pure formula evaluation over user-supplied constants: the largest admissible
constant stepsize, the iteration bound ``K_eps`` for reaching
``E ||M_F(x^k)||^2 <= eps``, and their synchronous specialisation
(``delta = 0``, uniform selection ``p_min = Delta = 1/N``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class ComplexityConstants:
    """
    Parameters
    ----------
    rho : float
        Free parameter ``> 1`` of the analysis.
    delta : int
        Maximum delay.
    N : int
        Number of blocks.
    L_f : float
        Lipschitz constant of the smooth gradient.
    c_tilde_f : float
        Strong convexity constant of the surrogates.
    L_xhat : float
        Lipschitz constant of the best-response map.
    L_B, L_E : float
        Lipschitz constants of the surrogate gradient in the reference point
        and in the block variable.
    p_min : float
        Lower bound on the probability of selecting any block.
    Delta : float
        Lower bound on the probability of any admissible (block, delay) pair.
    F0, Fstar : float
        Objective at the starting point and optimal value.
    """

    rho: float
    delta: int
    N: int
    L_f: float
    c_tilde_f: float
    L_xhat: float
    L_B: float
    L_E: float
    p_min: float
    Delta: float
    F0: float
    Fstar: float

    def __post_init__(self):
        if not self.rho > 1:
            raise ValueError("rho must be > 1")
        if self.delta < 0 or int(self.delta) != self.delta:
            raise ValueError("delta must be a nonnegative integer")
        if self.N < 1:
            raise ValueError("N must be positive")
        for name in ("L_f", "L_xhat", "L_B", "L_E"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not self.c_tilde_f > 0:
            raise ValueError("c_tilde_f must be positive")
        if not 0 < self.p_min <= 1 or not 0 < self.Delta <= 1:
            raise ValueError("p_min and Delta must lie in (0, 1]")
        if self.F0 < self.Fstar:
            raise ValueError("F0 must be >= Fstar")

    @classmethod
    def synchronous(cls, **kw) -> "ComplexityConstants":
        """No delays and uniform block selection."""
        N = kw["N"]
        kw.update(delta=0, p_min=1.0 / N, Delta=1.0 / N)
        return cls(**kw)


def _check_rho(rho: float, delta: int) -> None:
    if not rho > 1:
        raise ValueError("rho must be > 1")
    if delta < 0:
        raise ValueError("delta must be nonnegative")


def psi(rho: float, delta: int) -> float:
    """``sum_{t=1}^{delta} rho^(t/2)``."""
    _check_rho(rho, delta)
    return math.fsum(rho ** (t / 2.0) for t in range(1, int(delta) + 1))


def psi_prime(rho: float, delta: int) -> float:
    """``sum_{t=1}^{delta} rho^t``."""
    _check_rho(rho, delta)
    return math.fsum(rho ** t for t in range(1, int(delta) + 1))


def fixed_step_bound(c: ComplexityConstants) -> float:
    """Largest constant stepsize for which the iteration bound holds."""
    ps, pp = psi(c.rho, c.delta), psi_prime(c.rho, c.delta)
    first = (1.0 - 1.0 / c.rho) / (2.0 * (1.0 + c.L_xhat * c.N * (3.0 + 2.0 * ps)))
    if c.L_f == 0:
        return first
    second = c.c_tilde_f / (c.L_f + c.delta * pp * c.L_f / (2.0 * c.Delta))
    return min(first, second)


def k_epsilon_bound(c: ComplexityConstants, gamma: float, epsilon: float) -> float:
    """
    Upper bound on the first iteration with ``E||M_F||^2 <= epsilon``.

    Returns ``inf`` when the denominator is not positive, i.e. when ``gamma``
    is outside the admissible range.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    pp = psi_prime(c.rho, c.delta)
    num = 4.0 * (1.0 + (1.0 + c.L_B + c.L_E) * (1.0 + c.L_E * c.L_B * c.delta * pp * gamma ** 2))
    den = c.p_min * gamma * (2.0 * c.Delta * (c.c_tilde_f - gamma * c.L_f)
                             - gamma * c.delta * pp * c.L_f)
    if not den > 0:
        return math.inf
    return num / den * (c.F0 - c.Fstar) / epsilon


def corollary_step_bound(rho: float, L_xhat: float, N: int, c_tilde_f: float,
                         L_f: float) -> float:
    """Stepsize bound of the synchronous scheme, written out directly."""
    first = (1.0 - 1.0 / rho) / (2.0 * (1.0 + 3.0 * L_xhat * N))
    return first if L_f == 0 else min(first, c_tilde_f / L_f)


def corollary_k_bound(N: int, L_B: float, L_E: float, c_tilde_f: float, L_f: float,
                      gamma: float, epsilon: float, F0: float, Fstar: float) -> float:
    """``2 N^2 (2 + L_B + L_E) (F0 - F*) / (eps gamma (c - gamma L_f))``."""
    den = gamma * (c_tilde_f - gamma * L_f)
    if not den > 0:
        return math.inf
    return 2.0 * N * N * (2.0 + L_B + L_E) * (F0 - Fstar) / (epsilon * den)


def speedup_regime_note(c: ComplexityConstants, gamma: float, grid, epsilon: float = 1.0,
                        negligible: float = 0.01) -> list[dict]:
    """
    Check, over ``(N_r, delta)`` pairs (cores, delay), whether ``gamma`` stays
    admissible and whether the delay-driven ``gamma^2`` terms of the iteration
    bound are below ``negligible`` times their additive partners. When both
    hold, ``K_eps * gamma`` is roughly constant and the speedup is linear.
    """
    rows = []
    for N_r, delta in grid:
        cc = replace(c, delta=int(delta))
        pp = psi_prime(cc.rho, cc.delta)
        gmax = fixed_step_bound(cc)
        num_ratio = cc.L_E * cc.L_B * cc.delta * pp * gamma ** 2
        base = 2.0 * cc.Delta * (cc.c_tilde_f - gamma * cc.L_f)
        den_ratio = gamma * cc.delta * pp * cc.L_f / base if base > 0 else math.inf
        rows.append({
            "N_r": int(N_r),
            "delta": int(delta),
            "gamma": float(gamma),
            "gamma_max": gmax,
            "valid": bool(gamma <= gmax),
            "k_bound": k_epsilon_bound(cc, gamma, epsilon),
            "k_bound_times_gamma": k_epsilon_bound(cc, gamma, epsilon) * gamma,
            "gamma2_negligible": bool(num_ratio < negligible and den_ratio < negligible),
        })
    return rows


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])
