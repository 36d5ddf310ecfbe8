import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glyphdiff.schedule import (NoiseSchedule, build_linear_schedule,
                                forward_chain_step, posterior_constants,
                                q_sample)


def high_precision_alpha_bar(T: int, beta_start: float, beta_end: float):
    """Independent oracle: product of (1 - beta_t) at 50-digit precision."""
    import mpmath

    mpmath.mp.dps = 50
    start, end = mpmath.mpf(beta_start), mpmath.mpf(beta_end)
    prod = mpmath.mpf(1)
    for i in range(T):
        beta = start + (end - start) * i / (T - 1)
        prod *= 1 - beta
    return prod


class TestBuildLinearSchedule:
    def test_endpoints_and_length(self):
        s = build_linear_schedule(1000, 1e-4, 0.02)
        assert len(s.beta) == 1000
        assert s.beta[0] == pytest.approx(1e-4, abs=0)
        assert s.beta[-1] == pytest.approx(0.02, abs=0)

    def test_first_step_values(self):
        s = build_linear_schedule(1000, 1e-4, 0.02)
        assert s.alpha[0] == pytest.approx(0.9999)
        assert s.alpha_bar[0] == pytest.approx(0.9999)

    def test_alpha_bar_final_against_high_precision_product(self):
        s = build_linear_schedule(1000, 1e-4, 0.02)
        oracle = float(high_precision_alpha_bar(1000, 1e-4, 0.02))
        assert abs(s.alpha_bar[-1] - oracle) / oracle < 1e-9
        # sanity: the value itself is in the expected ballpark
        assert s.alpha_bar[-1] == pytest.approx(4.04e-5, rel=1e-2)

    def test_monotonicity(self):
        s = build_linear_schedule(1000, 1e-4, 0.02)
        assert np.all(np.diff(s.beta) > 0)
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.all((s.alpha_bar > 0) & (s.alpha_bar < 1))

    def test_recurrence(self):
        s = build_linear_schedule(50, 1e-3, 0.1)
        np.testing.assert_allclose(s.alpha_bar[1:], s.alpha_bar[:-1] * s.alpha[1:], rtol=1e-15)

    @pytest.mark.parametrize("T,lo,hi", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.02, 0.02), (10, 1e-4, 1.0)])
    def test_invalid_params(self, T, lo, hi):
        with pytest.raises(ValueError):
            build_linear_schedule(T, lo, hi)

    @given(T=st.integers(2, 200),
           lo=st.floats(1e-6, 1e-2),
           span=st.floats(1e-4, 0.5))
    @settings(max_examples=50, deadline=None)
    def test_invariants_hold_for_arbitrary_params(self, T, lo, span):
        hi = min(lo + span, 0.999)
        s = build_linear_schedule(T, lo, hi)
        assert np.all(np.diff(s.beta) > 0)
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.all(posterior_constants(s).sigma >= 0)

    def test_energy_split(self, schedule_T1000):
        abar = schedule_T1000.alpha_bar
        np.testing.assert_allclose(np.sqrt(abar) ** 2 + np.sqrt(1 - abar) ** 2, 1.0, rtol=1e-14)

    def test_serialization_round_trip_bit_exact(self, schedule_T1000):
        s2 = NoiseSchedule.from_json(schedule_T1000.to_json())
        assert np.array_equal(s2.beta, schedule_T1000.beta)
        assert np.array_equal(s2.alpha_bar, schedule_T1000.alpha_bar)
        assert np.array_equal(s2.posterior_var, schedule_T1000.posterior_var)


class TestQSample:
    def test_zero_noise_limit(self, schedule_T20, rng):
        x0 = rng.standard_normal((4, 4))
        out = q_sample(x0, 5, np.zeros_like(x0), schedule_T20)
        np.testing.assert_allclose(out, np.sqrt(schedule_T20.alpha_bar[4]) * x0)

    def test_zero_signal_limit(self, schedule_T20, rng):
        eps = rng.standard_normal((4, 4))
        out = q_sample(np.zeros((4, 4)), 5, eps, schedule_T20)
        np.testing.assert_allclose(out, np.sqrt(1 - schedule_T20.alpha_bar[4]) * eps)

    def test_final_step_coefficient(self, schedule_T1000):
        x0 = np.ones((2, 2))
        out = q_sample(x0, 1000, np.zeros_like(x0), schedule_T1000)
        assert out[0, 0] == pytest.approx(6.36e-3, rel=2e-2)

    @pytest.mark.parametrize("t", [0, 21, -1])
    def test_out_of_range(self, schedule_T20, t):
        x = np.zeros((2, 2))
        with pytest.raises(ValueError):
            q_sample(x, t, x, schedule_T20)


class TestForwardChain:
    def test_zero_noise_contraction(self, schedule_T20, rng):
        x = rng.standard_normal((3, 3))
        out = forward_chain_step(x, 4, np.zeros_like(x), schedule_T20)
        np.testing.assert_allclose(out, np.sqrt(1 - schedule_T20.beta[3]) * x)

    def test_small_beta_is_near_identity(self, rng):
        s = build_linear_schedule(10, 1e-9, 1e-8)
        x = rng.standard_normal((3, 3))
        out = forward_chain_step(x, 1, np.zeros_like(x), s)
        np.testing.assert_allclose(out, x, rtol=1e-8)

    def test_composed_chain_matches_closed_form_distribution(self, rng):
        # Monte-Carlo oracle: compose steps 1..T and compare the sample
        # mean and per-pixel variance with the closed form, 3-sigma band.
        s = build_linear_schedule(50, 1e-3, 0.05)
        n = 4000
        x0 = rng.standard_normal((4, 4))
        x = np.broadcast_to(x0, (n, 4, 4)).copy()
        for t in range(1, s.T + 1):
            x = forward_chain_step(x, t, rng.standard_normal((n, 4, 4)), s)
        abar = s.alpha_bar[-1]
        mean_expected = np.sqrt(abar) * x0
        var_expected = 1 - abar
        se_mean = np.sqrt(var_expected / n)
        assert np.all(np.abs(x.mean(axis=0) - mean_expected) < 3 * se_mean)
        se_var = var_expected * np.sqrt(2.0 / (n - 1))
        assert np.all(np.abs(x.var(axis=0, ddof=1) - var_expected) < 3 * se_var)


class TestPosteriorConstants:
    def test_final_step_noiseless(self, schedule_T1000):
        consts = posterior_constants(schedule_T1000)
        assert consts.sigma[0] == 0.0

    def test_beta_tilde_bounded_by_beta(self, schedule_T1000):
        assert np.all(schedule_T1000.posterior_var <= schedule_T1000.beta + 1e-18)

    def test_mean_coefficients_round_trip(self, schedule_T1000, rng):
        # Algebraic oracle: with perfect noise prediction, the posterior
        # mean computed from (x0, xt) equals the DDPM mean computed from eps.
        consts = posterior_constants(schedule_T1000)
        x0 = rng.standard_normal((4, 4))
        eps = rng.standard_normal((4, 4))
        for t in (1, 7, 500, 1000):
            xt = q_sample(x0, t, eps, schedule_T1000)
            mu_from_x0 = consts.coef_x0[t - 1] * x0 + consts.coef_xt[t - 1] * xt
            beta, alpha, abar = (schedule_T1000.beta[t - 1], schedule_T1000.alpha[t - 1],
                                 schedule_T1000.alpha_bar[t - 1])
            mu_from_eps = (xt - beta / np.sqrt(1 - abar) * eps) / np.sqrt(alpha)
            np.testing.assert_allclose(mu_from_x0, mu_from_eps, atol=1e-10)

    def test_coefficients_sum_to_one_at_zero_noise(self, schedule_T20):
        # with eps = 0, posterior mean of a constant image is a rescale that
        # reconstructs x0's direction: coef_x0 + coef_xt*sqrt(abar) = sqrt(abar_prev)
        consts = posterior_constants(schedule_T20)
        abar = schedule_T20.alpha_bar
        abar_prev = np.concatenate(([1.0], abar[:-1]))
        np.testing.assert_allclose(
            consts.coef_x0 + consts.coef_xt * np.sqrt(abar), np.sqrt(abar_prev), rtol=1e-10
        )
