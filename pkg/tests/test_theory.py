import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from asyflexa import theory as T


def _consts(**kw):
    base = dict(rho=2.0, delta=0, N=10, L_f=3.0, c_tilde_f=1.5, L_xhat=0.8, L_B=4.0, L_E=2.0,
                p_min=0.1, Delta=0.1, F0=10.0, Fstar=1.0)
    base.update(kw)
    return T.ComplexityConstants(**base)


# hand-written synchronous evaluators, typed out from the closed forms
def _sync_gamma(rho, L_xhat, N, c, L_f):
    return min((1 - 1 / rho) / (2 * (1 + 3 * L_xhat * N)), c / L_f)


def _sync_k(N, L_B, L_E, c, L_f, gamma, eps, F0, Fstar):
    return 2 * N ** 2 * (2 + L_B + L_E) * (F0 - Fstar) / (eps * gamma * (c - gamma * L_f))


class TestSums:
    def test_empty(self):
        for rho in (1.01, 2.0, 50.0):
            assert T.psi(rho, 0) == 0.0 and T.psi_prime(rho, 0) == 0.0

    def test_examples(self):
        assert T.psi(2.0, 2) == pytest.approx(math.sqrt(2) + 2, rel=1e-15)
        assert T.psi_prime(2.0, 2) == 6.0
        assert T.psi(4.0, 1) == 2.0 and T.psi_prime(4.0, 1) == 4.0

    def test_geometric_closed_form(self):
        for rho, d in [(1.5, 7), (3.0, 12), (1.1, 40)]:
            s = math.sqrt(rho)
            assert T.psi(rho, d) == pytest.approx(s * (s ** d - 1) / (s - 1), rel=1e-13)
            assert T.psi_prime(rho, d) == pytest.approx(rho * (rho ** d - 1) / (rho - 1), rel=1e-13)

    @given(rho=st.floats(1.0001, 10), d=st.integers(1, 30))
    @settings(max_examples=200, deadline=None)
    def test_psi_below_psi_prime(self, rho, d):
        assert T.psi(rho, d) < T.psi_prime(rho, d)

    def test_invalid(self):
        with pytest.raises(ValueError):
            T.psi(1.0, 2)
        with pytest.raises(ValueError):
            T.psi_prime(0.5, 2)
        with pytest.raises(ValueError):
            T.psi(2.0, -1)


class TestConstants:
    @pytest.mark.parametrize("kw", [dict(rho=1.0), dict(delta=-1), dict(delta=1.5), dict(N=0),
                                    dict(L_f=-1.0), dict(c_tilde_f=0.0), dict(p_min=0.0),
                                    dict(Delta=1.5), dict(F0=0.0)])
    def test_invariants(self, kw):
        with pytest.raises(ValueError):
            _consts(**kw)

    def test_synchronous(self):
        c = T.ComplexityConstants.synchronous(rho=2.0, N=8, L_f=1.0, c_tilde_f=1.0, L_xhat=1.0,
                                              L_B=1.0, L_E=1.0, F0=1.0, Fstar=0.0)
        assert c.delta == 0 and c.p_min == c.Delta == 1 / 8


class TestStepBound:
    def test_hand_example(self):
        c = _consts(rho=2.0, L_xhat=1.0, N=1, delta=0, c_tilde_f=1.0, L_f=1.0, p_min=1.0,
                    Delta=1.0)
        assert T.fixed_step_bound(c) == 0.0625

    def test_zero_lipschitz_uses_first_term(self):
        c = _consts(L_f=0.0, delta=3)
        assert T.fixed_step_bound(c) == (0.5) / (2 * (1 + 0.8 * 10 * (3 + 2 * T.psi(2.0, 3))))

    def test_delay_strictly_decreases(self):
        vals = [T.fixed_step_bound(_consts(delta=d)) for d in range(12)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    @given(field=st.sampled_from(["L_xhat", "N", "delta", "L_f", "c_tilde_f", "Delta"]),
           lo=st.floats(0.01, 5), hi_mult=st.floats(1.0, 4.0), rho=st.floats(1.1, 4))
    @settings(max_examples=300, deadline=None)
    def test_monotone(self, field, lo, hi_mult, rho):
        if field in ("N", "delta"):
            a, b = int(lo * 3), int(lo * 3 * hi_mult) + 1
            a = max(a, 1) if field == "N" else a
        elif field == "Delta":
            a, b = min(lo, 1.0) / 5, min(lo * hi_mult, 5.0) / 5
        else:
            a, b = lo, lo * hi_mult
        assume(b >= a)
        ga = T.fixed_step_bound(_consts(**{"rho": rho, "delta": 2, field: a}))
        gb = T.fixed_step_bound(_consts(**{"rho": rho, "delta": 2, field: b}))
        if field in ("c_tilde_f", "Delta"):
            assert gb >= ga
        else:
            assert gb <= ga


class TestComplexityBound:
    def test_scales_inversely_with_epsilon(self):
        c = _consts(delta=2)
        g = 0.5 * T.fixed_step_bound(c)
        assert T.k_epsilon_bound(c, g, 1e-3) == 2 * T.k_epsilon_bound(c, g, 2e-3)

    @given(eps=st.floats(1e-9, 1e3), delta=st.integers(0, 8), frac=st.floats(0.01, 1.0))
    @settings(max_examples=200, deadline=None)
    def test_epsilon_invariance(self, eps, delta, frac):
        c = _consts(delta=delta)
        g = frac * T.fixed_step_bound(c)
        ref = T.k_epsilon_bound(c, g, 1.0)
        assert T.k_epsilon_bound(c, g, eps) * eps == pytest.approx(ref, rel=1e-14)

    def test_already_optimal(self):
        c = _consts(F0=1.0, Fstar=1.0)
        assert T.k_epsilon_bound(c, 0.01, 1e-3) == 0.0

    def test_sentinel_beyond_denominator(self):
        c = _consts(delta=1)
        assert T.k_epsilon_bound(c, 10.0, 1e-3) == math.inf
        assert T.k_epsilon_bound(c, T.fixed_step_bound(c), 1e-3) < math.inf

    def test_never_negative(self):
        c = _consts(delta=3)
        for g in np.linspace(1e-4, 5.0, 200):
            assert T.k_epsilon_bound(c, g, 1e-2) >= 0

    def test_errors(self):
        c = _consts()
        with pytest.raises(ValueError):
            T.k_epsilon_bound(c, 0.01, 0.0)
        with pytest.raises(ValueError):
            T.k_epsilon_bound(c, 0.0, 1.0)


class TestSynchronousReduction:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_hand_evaluators(self, seed):
        r = np.random.default_rng(seed)
        N = int(r.integers(1, 200))
        kw = dict(rho=float(r.uniform(1.1, 5)), N=N, L_f=float(r.uniform(0.1, 10)),
                  c_tilde_f=float(r.uniform(0.1, 10)), L_xhat=float(r.uniform(0, 3)),
                  L_B=float(r.uniform(0, 10)), L_E=float(r.uniform(0, 10)),
                  F0=float(r.uniform(1, 100)), Fstar=0.0)
        c = T.ComplexityConstants.synchronous(**kw)
        g = T.fixed_step_bound(c)
        ref_g = _sync_gamma(kw["rho"], kw["L_xhat"], N, kw["c_tilde_f"], kw["L_f"])
        assert abs(g - ref_g) <= 1e-14 * ref_g
        assert abs(T.corollary_step_bound(kw["rho"], kw["L_xhat"], N, kw["c_tilde_f"],
                                          kw["L_f"]) - ref_g) <= 1e-14 * ref_g
        gamma = g * float(r.uniform(0.1, 1.0))
        eps = 10 ** float(r.uniform(-6, 0))
        k = T.k_epsilon_bound(c, gamma, eps)
        ref_k = _sync_k(N, kw["L_B"], kw["L_E"], kw["c_tilde_f"], kw["L_f"], gamma, eps,
                        kw["F0"], 0.0)
        assert abs(k - ref_k) <= 1e-14 * ref_k
        k2 = T.corollary_k_bound(N, kw["L_B"], kw["L_E"], kw["c_tilde_f"], kw["L_f"], gamma,
                                 eps, kw["F0"], 0.0)
        assert abs(k2 - ref_k) <= 1e-14 * ref_k

    def test_cubic_scaling(self):
        Ns = [2, 4, 8, 16]
        base = dict(rho=2.0, L_f=1.0, c_tilde_f=1.0, L_xhat=1.0, L_B=1.0, L_E=1.0, F0=1.0,
                    Fstar=0.0)
        g2 = T.fixed_step_bound(T.ComplexityConstants.synchronous(N=2, **base))
        ks = []
        for N in Ns:
            c = T.ComplexityConstants.synchronous(N=N, **base)
            gamma = g2 * 2 / N  # proportional to 1/N; N * gamma_max grows, so admissible
            assert gamma <= T.fixed_step_bound(c)
            ks.append(T.k_epsilon_bound(c, gamma, 1e-3))
        assert abs(T.loglog_slope(Ns, ks) - 3.0) <= 0.05


class TestSpeedupNote:
    def test_zero_delays(self):
        c = _consts()
        rows = T.speedup_regime_note(c, 0.5 * T.fixed_step_bound(c), [(1, 0), (2, 0), (8, 0)])
        assert len({r["gamma_max"] for r in rows}) == 1
        assert all(r["gamma2_negligible"] and r["valid"] for r in rows)

    def test_tiny_gamma_negligible(self):
        rows = T.speedup_regime_note(_consts(), 1e-6, [(1, 0), (4, 2), (10, 5)])
        assert all(r["gamma2_negligible"] for r in rows)

    def test_large_delay_flagged_invalid(self):
        c = _consts()
        g = T.fixed_step_bound(c)
        rows = T.speedup_regime_note(c, g, [(1, 0), (20, 10)])
        assert rows[0]["valid"] and not rows[1]["valid"]
        assert rows[1]["k_bound"] == math.inf or rows[1]["k_bound"] > rows[0]["k_bound"]

    def test_loglog_slope(self):
        x = np.array([1.0, 2.0, 4.0, 8.0])
        assert T.loglog_slope(x, 5 * x ** 2.5) == pytest.approx(2.5, abs=1e-12)
