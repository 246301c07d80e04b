import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualbermudan.european import (
    basket_moments,
    basket_put_batch,
    basket_put_moment_match,
    bs_call,
    bs_put,
    matched_moments,
    max_call_batch,
    max_call_deltas,
    max_call_price,
    moment_match_parameters,
)
from dualbermudan.quadrature import QuadratureSpec
from dualbermudan.stochastic import make_stream

R, SIGMA, K, TAU = 0.05, 0.2, 100.0, 3.0
DIV = 0.1


def terminal_lognormal(spots, r, div, sigma, tau, n, seed):
    z = make_stream(seed, 0).standard_normal((n, len(spots)))
    return np.asarray(spots) * np.exp((r - div - 0.5 * sigma**2) * tau + sigma * math.sqrt(tau) * z)


class TestBlackScholes:
    def test_deterministic_limit(self):
        q = bs_put(100.0, 100.0, R, 1e-12, TAU)
        assert q.price == pytest.approx(0.0, abs=1e-12)

    def test_expiry_is_intrinsic(self):
        assert bs_put(90.0, 100.0, R, SIGMA, 0.0).price == 10.0
        assert bs_put(90.0, 100.0, R, SIGMA, 0.0).deltas[0] == -1.0
        assert bs_put(110.0, 100.0, R, SIGMA, 0.0).deltas[0] == 0.0
        assert bs_put(100.0, 100.0, R, SIGMA, 0.0).deltas[0] == 0.0

    @pytest.mark.parametrize("spot", [80.0, 100.0, 125.0])
    def test_parity_with_single_asset_max_call(self, spot):
        call = max_call_price([spot], K, R, 0.0, SIGMA, TAU)
        put = bs_put(spot, K, R, SIGMA, TAU).price
        assert abs(call - put - (spot - K * math.exp(-R * TAU))) < 1e-8

    @pytest.mark.parametrize("spot", [70.0, 100.0, 130.0])
    def test_delta_matches_finite_difference(self, spot):
        h = 1e-4 * spot
        fd = (bs_put(spot + h, K, R, SIGMA, TAU).price - bs_put(spot - h, K, R, SIGMA, TAU).price) / (2 * h)
        assert abs(bs_put(spot, K, R, SIGMA, TAU).deltas[0] - fd) < 1e-6
        assert bs_put(spot, K, R, SIGMA, TAU).deltas[0] <= 0

    def test_call_with_dividend_matches_max_call(self):
        assert abs(bs_call(95.0, K, R, SIGMA, TAU, DIV).price - max_call_price([95.0], K, R, DIV, SIGMA, TAU)) < 1e-8

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            bs_put(-1.0, K, R, SIGMA, TAU)


class TestMomentMatching:
    def test_one_asset_is_black_scholes(self):
        g0, vol = moment_match_parameters([97.0], SIGMA, TAU)
        assert g0 == 97.0 and abs(vol - SIGMA) < 1e-14
        q = basket_put_moment_match([97.0], K, R, SIGMA, TAU)
        ref = bs_put(97.0, K, R, SIGMA, TAU)
        assert abs(q.price - ref.price) < 1e-12
        assert abs(q.deltas[0] - ref.deltas[0]) < 1e-12

    @pytest.mark.parametrize("spots", [[100.0] * 5, [90.0, 95.0, 100.0, 105.0, 120.0]])
    def test_matched_moments_equal_basket_moments(self, spots):
        g0, vol = moment_match_parameters(spots, SIGMA, TAU)
        m1, m2 = basket_moments(spots, R, SIGMA, TAU)
        p1, p2 = matched_moments(g0, vol, R, TAU)
        assert abs(p1 / m1 - 1) < 1e-10
        assert abs(p2 / m2 - 1) < 1e-10

    def test_basket_moments_by_simulation(self):
        spots = [90.0, 100.0, 110.0]
        x = terminal_lognormal(spots, R, 0.0, SIGMA, TAU, 400_000, 21)
        g = x.mean(axis=1)
        m1, m2 = basket_moments(spots, R, SIGMA, TAU)
        assert abs(g.mean() - m1) < 4 * g.std() / math.sqrt(g.size)
        assert abs((g**2).mean() - m2) < 4 * (g**2).std() / math.sqrt(g.size)

    def test_price_close_to_simulated_basket_put(self):
        # moment matching is an approximation; the gap is small but not zero
        x = terminal_lognormal([100.0] * 5, R, 0.0, SIGMA, TAU, 10**6, 22)
        payoff = math.exp(-R * TAU) * np.maximum(K - x.mean(axis=1), 0.0)
        se = payoff.std(ddof=1) / math.sqrt(payoff.size)
        price = basket_put_moment_match([100.0] * 5, K, R, SIGMA, TAU).price
        assert abs(price - payoff.mean()) < 4 * se

    def test_deltas_equal_and_exact_for_equal_spots(self):
        spots = np.full(5, 100.0)
        q = basket_put_moment_match(spots, K, R, SIGMA, TAU)
        assert np.all(q.deltas == q.deltas[0]) and q.deltas[0] < 0
        h = 1e-2
        for d in range(5):
            up, dn = spots.copy(), spots.copy()
            up[d] += h
            dn[d] -= h
            fd = (basket_put_moment_match(up, K, R, SIGMA, TAU).price - basket_put_moment_match(dn, K, R, SIGMA, TAU).price) / (2 * h)
            assert abs(fd - q.deltas[d]) < 1e-5

    def test_expiry_uses_average(self):
        q = basket_put_moment_match([90.0, 100.0], K, R, SIGMA, 0.0)
        assert q.price == 5.0

    def test_batch_broadcasts_time_to_maturity(self):
        x = np.full((4, 3, 5), 100.0)
        tau = np.array([3.0, 2.0, 1.0])
        price, deltas = basket_put_batch(x, K, R, SIGMA, tau)
        assert price.shape == (4, 3) and deltas.shape == x.shape
        for j, t in enumerate(tau):
            assert abs(price[0, j] - basket_put_moment_match([100.0] * 5, K, R, SIGMA, t).price) < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(50, 150), min_size=2, max_size=5), st.integers(0, 4), st.floats(0.5, 10))
    def test_monotone_in_each_spot(self, spots, which, bump):
        spots = np.asarray(spots)
        which = which % spots.size
        up = spots.copy()
        up[which] += bump
        assert basket_put_moment_match(up, K, R, SIGMA, TAU).price <= basket_put_moment_match(spots, K, R, SIGMA, TAU).price + 1e-12


class TestMaxCall:
    def test_two_asset_reference(self):
        price = max_call_price([100.0, 100.0], K, R, DIV, SIGMA, TAU)
        deltas = max_call_deltas([100.0, 100.0], K, R, DIV, SIGMA, TAU)
        assert abs(price - 11.19568103) < 1e-7
        np.testing.assert_allclose(deltas, 0.25836762, atol=1e-7)

    @pytest.mark.parametrize("spots", [[100.0], [100.0, 100.0], [90.0, 95.0, 100.0, 105.0, 110.0]])
    def test_against_simulation(self, spots):
        x = terminal_lognormal(spots, R, DIV, SIGMA, TAU, 10**6, 30 + len(spots))
        payoff = math.exp(-R * TAU) * np.maximum(x.max(axis=1) - K, 0.0)
        se = payoff.std(ddof=1) / math.sqrt(payoff.size)
        assert abs(max_call_price(spots, K, R, DIV, SIGMA, TAU) - payoff.mean()) < 4 * se

    def test_lower_bound_by_intrinsic_forward(self):
        spots = [150.0, 80.0]
        price = max_call_price(spots, K, R, DIV, SIGMA, TAU)
        assert price >= max(150.0 * math.exp(-DIV * TAU) - K * math.exp(-R * TAU), 0.0)

    def test_homogeneity(self):
        spots = np.array([95.0, 105.0, 100.0])
        p1 = max_call_price(spots, K, R, DIV, SIGMA, TAU)
        p2 = max_call_price(2 * spots, 2 * K, R, DIV, SIGMA, TAU)
        assert abs(p2 - 2 * p1) < 1e-8

    @pytest.mark.parametrize("x0", [90.0, 100.0, 110.0])
    @pytest.mark.parametrize("strike", [90.0, 100.0, 110.0])
    def test_euler_identity(self, x0, strike):
        spots = np.array([x0, 0.95 * x0, 1.05 * x0])
        price = max_call_price(spots, strike, R, DIV, SIGMA, TAU)
        deltas = max_call_deltas(spots, strike, R, DIV, SIGMA, TAU)
        h = 1e-4 * strike
        dk = (max_call_price(spots, strike + h, R, DIV, SIGMA, TAU) - max_call_price(spots, strike - h, R, DIV, SIGMA, TAU)) / (2 * h)
        assert abs(spots @ deltas + strike * dk - price) < 1e-5 * price

    @pytest.mark.parametrize("spots", [[100.0, 100.0], [85.0, 100.0, 120.0], [90.0, 95.0, 100.0, 105.0, 110.0]])
    def test_deltas_match_finite_differences(self, spots):
        spots = np.asarray(spots)
        deltas = max_call_deltas(spots, K, R, DIV, SIGMA, TAU)
        assert np.all(deltas >= 0) and np.all(deltas <= math.exp(-DIV * TAU))
        for d in range(spots.size):
            h = 1e-4 * spots[d]
            up, dn = spots.copy(), spots.copy()
            up[d] += h
            dn[d] -= h
            fd = (max_call_price(up, K, R, DIV, SIGMA, TAU) - max_call_price(dn, K, R, DIV, SIGMA, TAU)) / (2 * h)
            assert abs(deltas[d] - fd) < 1e-5

    def test_symmetric_spots_give_equal_deltas(self):
        deltas = max_call_deltas([100.0] * 5, K, R, DIV, SIGMA, TAU)
        assert np.ptp(deltas) < 1e-12

    def test_truncation_is_negligible(self):
        spots = [90.0, 100.0, 110.0]
        p8 = max_call_price(spots, K, R, DIV, SIGMA, TAU, QuadratureSpec(lower_truncation=-8.0))
        p10 = max_call_price(spots, K, R, DIV, SIGMA, TAU, QuadratureSpec(lower_truncation=-10.0))
        assert abs(p8 - p10) < 1e-9 * p8

    def test_expiry(self):
        assert max_call_price([90.0, 120.0], K, R, DIV, SIGMA, 0.0) == 20.0
        np.testing.assert_array_equal(max_call_deltas([90.0, 120.0], K, R, DIV, SIGMA, 0.0), [0.0, 1.0])

    def test_monotone_in_spot(self):
        grid = np.linspace(60, 160, 11)
        prices = [max_call_price([s, 100.0], K, R, DIV, SIGMA, TAU) for s in grid]
        assert np.all(np.diff(prices) > 0)

    def test_batch_agrees_with_adaptive_rule(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(60, 160, size=(40, 5))
        tau = rng.uniform(0.05, 3.0, size=40)
        price, deltas = max_call_batch(x, K, R, DIV, SIGMA, tau)
        for n in range(40):
            assert abs(price[n] - max_call_price(x[n], K, R, DIV, SIGMA, tau[n])) < 1e-3
            np.testing.assert_allclose(deltas[n], max_call_deltas(x[n], K, R, DIV, SIGMA, tau[n]), atol=1e-4)

    def test_batch_single_asset_and_expired(self):
        x = np.array([[90.0], [120.0]])
        price, deltas = max_call_batch(x, K, R, DIV, SIGMA, np.array([1.0, 0.0]))
        assert abs(price[0] - bs_call(90.0, K, R, SIGMA, 1.0, DIV).price) < 1e-10
        assert price[1] == 20.0 and deltas[1, 0] == 1.0
