import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from sghmc import errors
from sghmc.certify import (
    AssumptionInputs,
    check_avg_lipschitz,
    check_dissipativity,
    check_G_bound,
    check_unbiasedness,
    derive_constants,
    lyapunov,
    lyapunov_lower_bound,
    quantile_assumptions,
    step_warnings,
)
from sghmc.neuralnet import TLFNOracle, init_tlfn
from sghmc.oracle import QuantileProblem, TargetDistribution, quadratic_oracle, quantile_oracle

mp.mp.dps = 40


def independent_eta_max(*, L1, L2, L, a, b, gamma, beta, u0, h0, m2, m4, EK1sq, EFsq, d=1):
    """Direct evaluation of the step-size restriction in extended precision.

    Written from the published constant definitions, without reference to
    the package code. Every eta inside the second K1-tilde entry is set to 1.
    """
    L1, L2, L, a, b, g, beta, u0, h0, m2, m4, EK1sq, EFsq = map(
        mp.mpf, (L1, L2, L, a, b, gamma, beta, u0, h0, m2, m4, EK1sq, EFsq))
    a_p = a / 2
    b_p = b + EK1sq / (2 * a)
    lam = min(mp.mpf(1) / 4, a_p / (L + 2 * L * h0 + g**2 / 2))
    Ac = beta / 2 * (2 * lam * u0 + 2 * lam * L * h0 + b_p)
    Lt1 = 2 * L1**2 * m2
    Ct1 = 4 * L2**2 * m2 + 4 * EFsq
    w = 1 - 2 * lam
    K1 = max((Lt1 + g * L**2) / (g**2 / 16 * w), (L + g**2 / 2 - g**2 * lam / 2 + g / 2) / (w / 8)) / 2
    K2 = (g * h0**2 + Ct1) / 2
    K3 = g * (d + Ac) / beta
    Kt1 = max((1 + g / 2) * L1**2 * m2 / (g**2 / 16 * w), (L / 2 + g**2 / 4 - g**2 * lam / 4 + g / 4) / (w / 8))
    c3t = mp.mpf(3) / 2 * g**2 + 24 * (2 + g) ** 2 * (L**4 + L1**4 * m4)
    c3h = 8 * (1 + g / 2) ** 2 * L1**4 * m4
    c4t = 2 * (1 + lam * g - g) ** 2
    c4h = 2 * (L + g**2 / 2 - lam * g**2 / 2 + g) ** 2
    c8t = max((c3t + c3h) / (w**2 * g**4 / 128), (c4t + c4h) / (w**2 / 32))
    Kt = 2 * Kt1 + c8t
    terms = [mp.mpf(1), 2 / g, g * lam / (2 * K1), K3 / K2 if K2 != 0 else mp.inf, lam * g / (2 * Kt)]
    return dict(lam=lam, A_c=Ac, K1=K1, K2=K2, K3=K3, K_tilde=Kt, eta_max=min(terms))


def logistic_inputs_mp(q=0.95, lam_r=1e-5):
    pdf = lambda x: mp.exp(-abs(x)) / (1 + mp.exp(-abs(x))) ** 2
    # pinball loss at theta = 0: E[X (q - 1{X<0})]
    u0 = mp.quad(lambda x: x * (q - 1) * pdf(x), [-mp.inf, 0]) + mp.quad(lambda x: x * q * pdf(x), [0, mp.inf])
    mom = lambda p: 2 * mp.quad(lambda x: (1 + x) ** p * pdf(x), [0, mp.inf])
    return dict(L1=2 * lam_r, L2=0, L=2 * (lam_r + mp.mpf(1) / 4), a=2 * lam_r, b=0, u0=u0,
                h0=abs(mp.mpf(1) / 2 - q), m2=mom(2), m4=mom(4), EK1sq=4, EFsq=36)


def inputs(**kw):
    base = dict(L1=1.0, L2=0.0, rho=0.0, L=1.0, a=1.0, b=0.0, gamma=1.0, beta=1.0, u0=0.0, h0_norm=0.0,
                moment_2rho2=1.0, moment_K1_sq=0.0, moment_Fstar_sq=0.0)
    base.update(kw)
    return AssumptionInputs(**base)


class TestConstants:
    def test_pure_quadratic(self):
        c = derive_constants(inputs())
        assert c.a_prime == 0.5
        assert c.b_prime == 0.0
        assert c.lam == 0.25
        assert c.A_c == 0.0

    def test_K3(self):
        c = derive_constants(inputs(gamma=2.0, beta=4.0))
        assert c.A_c == 0.0
        assert c.K3 == pytest.approx(0.5, rel=1e-15)

    def test_quantile_benchmark_settings_cross_check(self):
        prob = QuantileProblem(TargetDistribution.parse("L(0,1)"), 0.95, 1e-5)
        ours = derive_constants(quantile_assumptions(prob, 0.5, 1e10))
        ref = independent_eta_max(gamma=0.5, beta=1e10, **logistic_inputs_mp())
        assert float(ours.eta_max) == pytest.approx(float(ref["eta_max"]), rel=1e-12)
        for name in ("lam", "K1", "K2", "K_tilde"):
            assert getattr(ours, name) == pytest.approx(float(ref[name]), rel=1e-12), name
        # these inherit the quadrature tolerance of u(0)
        assert ours.A_c == pytest.approx(float(ref["A_c"]), rel=1e-9)
        assert ours.K3 == pytest.approx(float(ref["K3"]), rel=1e-9)
        assert ours.binding_term == "lambda*gamma/(2*K_tilde)"

    @settings(max_examples=60, deadline=None)
    @given(st.floats(1e-3, 10), st.floats(0, 5), st.floats(0.1, 20), st.floats(1e-3, 5), st.floats(0, 3),
           st.floats(0.05, 5), st.floats(0.1, 1e6), st.floats(0, 5), st.floats(0, 3))
    def test_random_inputs_cross_check(self, L1, L2, L, a, b, gamma, beta, u0, h0):
        inp = inputs(L1=L1, L2=L2, L=L, a=a, b=b, gamma=gamma, beta=beta, u0=u0, h0_norm=h0,
                     moment_2rho2=3.0, moment_4rho4=20.0, moment_K1_sq=2.0, moment_Fstar_sq=5.0)
        ours = derive_constants(inp)
        ref = independent_eta_max(L1=L1, L2=L2, L=L, a=a, b=b, gamma=gamma, beta=beta, u0=u0, h0=h0,
                                  m2=3.0, m4=20.0, EK1sq=2.0, EFsq=5.0)
        assert ours.eta_max == pytest.approx(float(ref["eta_max"]), rel=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-3, 100), st.floats(1e-3, 100), st.floats(0.01, 10), st.floats(0, 10))
    def test_invariants(self, L, a, gamma, h0):
        c = derive_constants(inputs(L=L, a=a, gamma=gamma, h0_norm=h0))
        assert c.lam <= 0.25
        assert 0 < c.eta_max <= 1.0
        assert c.eta_max <= 2.0 / gamma

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-3, 50), st.floats(1e-3, 50), st.floats(1e-3, 10))
    def test_lambda_monotone_in_L(self, L, dL, a):
        lo = derive_constants(inputs(L=L, a=a)).lam
        hi = derive_constants(inputs(L=L + dL, a=a)).lam
        assert hi <= lo

    def test_both_b_prime_forms(self):
        c = derive_constants(inputs(moment_K1_sq=4.0, moment_K1=1.5))
        assert c.b_prime_second_moment == pytest.approx(2.0)
        assert c.b_prime_squared_mean == pytest.approx(1.125)
        assert c.b_prime == c.b_prime_second_moment

    def test_c7_variants(self):
        c = derive_constants(inputs(L2=1.0, moment_Fstar_sq=2.0, gamma=0.5))
        assert c.c7_tilde / c.c7_tilde_table == pytest.approx(120 / 90)

    @pytest.mark.parametrize("field_,val", [("L", 0.0), ("a", -1.0), ("gamma", 0.0), ("beta", math.inf),
                                            ("L1", -1.0), ("b", math.nan), ("d", 0)])
    def test_validation(self, field_, val):
        with pytest.raises(errors.ConfigError) as ei:
            inputs(**{field_: val})
        assert ei.value.field == field_

    def test_warning_above_bound(self):
        prob = QuantileProblem(TargetDistribution.parse("L(0,1)"), 0.95, 1e-5)
        c = derive_constants(quantile_assumptions(prob, 0.5, 1e10))
        assert step_warnings(1e-3, c)
        assert step_warnings(c.eta_max / 2, c) == []

    def test_to_dict(self):
        d = derive_constants(inputs()).to_dict()
        assert d["binding_term"] and len(d["eta_terms"]) == 5


class TestLyapunov:
    def test_origin(self):
        assert lyapunov([0.0], [0.0], 0.0, 1.0, 1.0, 0.25) == 0.0

    def test_substitution(self):
        assert lyapunov([1.0], [0.0], 0.0, 4.0, 2.0, 0.25) == pytest.approx(3.0, rel=1e-15)

    @settings(max_examples=200)
    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=2), st.floats(0, 10), st.floats(0.01, 5),
           st.floats(0.1, 100), st.floats(0, 0.25))
    def test_lower_bound(self, tv, u, gamma, beta, lam):
        t, v = tv
        val = lyapunov([t], [v], u, beta, gamma, lam)
        assert val >= lyapunov_lower_bound([t], [v], beta, gamma, lam) * (1 - 1e-12) - 1e-9


class TestChecks:
    logistic = quantile_oracle(TargetDistribution.parse("L(0,1)"), 0.95, 1e-5)

    def test_unbiasedness_example(self):
        rep = check_unbiasedness(self.logistic, [0.0], 10**6, np.random.default_rng(0))
        assert rep.passed
        assert rep.details[0]["mean"][0] == pytest.approx(-0.45, abs=4e-3)

    def test_unbiasedness_quadratic(self):
        rep = check_unbiasedness(quadratic_oracle(1.0, 0.5), [[1.0], [0.0]], 10**5, np.random.default_rng(0))
        assert rep.passed

    def test_unbiasedness_needs_exact_mean(self):
        base = init_tlfn(np.ones((2, 2)), np.ones((1, 2)), np.random.default_rng(0))
        o = TLFNOracle(base, np.zeros((4, 1)), np.zeros((4, 2)), 0.0)
        with pytest.raises(errors.UnsupportedCheck):
            check_unbiasedness(o, [o.base.flatten()], 10, np.random.default_rng(0))

    def test_unbiasedness_detects_bias(self):
        class Biased(type(self.logistic)):
            def exact_mean_grad(self, theta):
                return super().exact_mean_grad(theta) + 0.01

        o = Biased(self.logistic.problem)
        assert not check_unbiasedness(o, [0.0], 10**6, np.random.default_rng(0)).passed

    def test_lipschitz_passes(self):
        L = 2 * (1e-5 + 0.25)
        rep = check_avg_lipschitz(self.logistic, L, 10, 10**5, np.random.default_rng(1))
        assert rep.passed

    def test_lipschitz_equal_points(self):
        rep = check_avg_lipschitz(self.logistic, 1.0, 2, 1000, np.random.default_rng(1), box=(0.3, 0.3))
        assert rep.passed and rep.statistic == 0.0

    def test_lipschitz_quadratic_exact(self):
        rep = check_avg_lipschitz(quadratic_oracle(3.0, 1.0), 3.0, 5, 1000, np.random.default_rng(2))
        assert rep.passed
        assert rep.statistic == pytest.approx(1.0, rel=1e-12)

    def test_lipschitz_too_small_constant_fails(self):
        rep = check_avg_lipschitz(self.logistic, 0.05, 10, 10**5, np.random.default_rng(1), box=(-1, 1))
        assert not rep.passed

    def test_dissipativity(self):
        rng = np.random.default_rng(0)
        pts = [[t] for t in np.linspace(-10, 10, 21)]
        assert check_dissipativity(self.logistic, 2e-5, 0.0, pts, rng).passed
        assert check_dissipativity(quadratic_oracle(2.0), 2.0, 0.0, pts, rng).passed
        assert not check_dissipativity(self.logistic, 1.0, 0.0, pts, rng).passed

    def test_dissipativity_at_origin(self):
        assert check_dissipativity(self.logistic, 1.0, 0.5, [[0.0]], np.random.default_rng(0)).passed

    def test_G_bound(self):
        rep = check_G_bound(self.logistic, self.logistic.G_bound, 50, np.random.default_rng(0))
        assert rep.passed and rep.statistic <= 0.5 + 1e-12

    def test_report_dict(self):
        d = check_dissipativity(self.logistic, 2e-5, 0.0, [[1.0]], np.random.default_rng(0)).to_dict()
        assert d["pass"] is True and d["name"] == "dissipativity"


class TestQuantileInputs:
    @pytest.mark.parametrize("label", ["N(-1,1)", "L(0,1)", "G(0,1)"])
    def test_moments_positive_and_ordered(self, label):
        inp = quantile_assumptions(QuantileProblem(TargetDistribution.parse(label), 0.95, 1e-5), 0.5, 1e10)
        assert inp.moment_2rho2 >= 1.0
        assert inp.m4 >= inp.moment_2rho2**2  # Jensen
        assert inp.L == pytest.approx(2 * (1e-5 + TargetDistribution.parse(label).density_sup))

    def test_logistic_inputs_match_mp(self):
        inp = quantile_assumptions(QuantileProblem(TargetDistribution.parse("L(0,1)"), 0.95, 1e-5), 0.5, 1e10)
        ref = logistic_inputs_mp()
        assert inp.u0 == pytest.approx(float(mp.log(2)), rel=1e-10)
        assert inp.u0 == pytest.approx(float(ref["u0"]), rel=1e-10)
        assert inp.moment_2rho2 == pytest.approx(float(ref["m2"]), rel=1e-10)
        assert inp.m4 == pytest.approx(float(ref["m4"]), rel=1e-10)
