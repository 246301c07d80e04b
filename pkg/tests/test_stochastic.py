import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualbermudan.stochastic import (
    EmptyBatchError,
    GbmModel,
    PathBatch,
    RngStream,
    TimeGrid,
    make_stream,
    simulate_gbm,
    simulate_gbm_blocks,
)


class TestTimeGrid:
    def test_benchmark_grid(self):
        grid = TimeGrid.from_step(3.0, 3, 0.01)
        assert grid.substeps == 100
        assert grid.total_steps == 300
        assert abs(grid.dt * grid.total_steps - 3.0) <= np.finfo(float).eps * 3

    def test_non_integer_ratio_rounds_up(self):
        grid = TimeGrid.from_step(3.0, 9, 0.01)
        assert grid.substeps == 34
        assert grid.dt <= 0.01

    @given(st.floats(0.1, 10), st.integers(1, 12), st.integers(1, 50))
    def test_invariants(self, T, J, L):
        grid = TimeGrid(T, J, L)
        assert abs(grid.times[-1] - T) <= 4 * np.finfo(float).eps * T
        idx = grid.exercise_indices
        assert np.all(np.diff(idx) > 0)
        assert idx[-1] == grid.total_steps
        np.testing.assert_allclose(grid.times[idx], grid.exercise_times, rtol=1e-13, atol=1e-14)

    @pytest.mark.parametrize("args", [(0.0, 3, 1), (1.0, 0, 1), (1.0, 3, 0), (-1.0, 1, 1)])
    def test_rejects_invalid(self, args):
        with pytest.raises(ValueError):
            TimeGrid(*args)

    def test_interval_steps(self):
        grid = TimeGrid(1.0, 4, 5)
        assert grid.interval_steps(2) == slice(10, 15)
        with pytest.raises(IndexError):
            grid.interval_steps(4)


class TestGbmModel:
    def test_scalar_spot_broadcast(self):
        m = GbmModel(3, 0.05, 0.0, 0.2, 100.0, 90.0)
        assert m.spot == (90.0, 90.0, 90.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(sigma=0.0),
            dict(strike=-1.0),
            dict(spot=(100.0, -1.0)),
            dict(payoff="digital"),
            dict(spot=(1.0, 2.0, 3.0)),
        ],
    )
    def test_rejects_invalid(self, kwargs):
        base = dict(dimension=2, rate=0.05, dividend=0.0, sigma=0.2, strike=100.0, spot=(100.0, 100.0))
        base.update(kwargs)
        with pytest.raises(ValueError):
            GbmModel(**base)

    def test_payoffs(self):
        put = GbmModel(2, 0.05, 0.0, 0.2, 100.0, 100.0, "basket_put")
        call = GbmModel(2, 0.05, 0.1, 0.2, 100.0, 100.0, "max_call")
        x = np.array([[80.0, 100.0], [120.0, 90.0]])
        np.testing.assert_allclose(put.discounted_payoff(0.0, x), [10.0, 0.0])
        np.testing.assert_allclose(call.discounted_payoff(1.0, x), [0.0, 20.0 * math.exp(-0.05)])


class TestStreams:
    def test_reproducible(self):
        a = make_stream(1, 0).standard_normal(10)
        b = make_stream(1, 0).standard_normal(10)
        assert np.array_equal(a, b)

    def test_distinct_ids_differ(self):
        a = make_stream(1, 0).standard_normal(10)
        b = make_stream(1, 1).standard_normal(10)
        assert not np.any(a == b)

    def test_blocks_differ(self):
        s = make_stream(1, 0)
        assert not np.array_equal(s.standard_normal(5), s.at_block(1).standard_normal(5))

    def test_moments(self):
        z = make_stream(1, 0).standard_normal(10**6)
        assert abs(z.mean()) < 4 / math.sqrt(10**6)
        assert abs(z.var() - 1) < 0.01

    def test_rejects_wide_seed(self):
        with pytest.raises(ValueError):
            RngStream(2**64, 0)


class TestSimulation:
    def test_empty_batch(self, basket_model, small_grid):
        with pytest.raises(EmptyBatchError):
            simulate_gbm(basket_model, small_grid, 0, make_stream(0, 0))

    def test_shapes_and_positivity(self, basket_model, small_grid):
        b = simulate_gbm(basket_model, small_grid, 50, make_stream(0, 0))
        assert b.states.shape == (50, 31, 5)
        assert b.increments.shape == (50, 30, 5)
        assert np.all(b.states > 0)
        assert np.all(b.states[:, 0] == 100.0)
        assert not b.states.flags.writeable

    def test_states_follow_increments(self, small_grid):
        m = GbmModel(2, 0.03, 0.01, 0.25, 100.0, (90.0, 110.0))
        b = simulate_gbm(m, small_grid, 20, make_stream(3, 0))
        drift = (m.rate - m.dividend - 0.5 * m.sigma**2) * small_grid.dt
        logret = np.diff(np.log(b.states), axis=1)
        np.testing.assert_allclose(logret, drift + m.sigma * b.increments, atol=1e-12)

    def test_deterministic_limit(self, small_grid):
        m = GbmModel(2, 0.05, 0.01, 1e-12, 100.0, (100.0, 50.0))
        b = simulate_gbm(m, small_grid, 10, make_stream(0, 0))
        expected = m.x0 * math.exp(0.04 * 3.0)
        assert np.max(np.abs(b.states[:, -1] / expected - 1)) < 1e-6

    def test_terminal_moments(self):
        m = GbmModel(1, 0.05, 0.0, 0.2, 100.0, 100.0)
        grid = TimeGrid(3.0, 1, 1)
        b = simulate_gbm(m, grid, 10**5, make_stream(11, 0))
        xt = b.states[:, -1, 0]
        se = xt.std(ddof=1) / math.sqrt(xt.size)
        assert abs(xt.mean() - 100 * math.exp(0.15)) < 3 * se
        assert abs(np.log(xt / 100).var(ddof=1) / (0.04 * 3) - 1) < 0.02

    def test_discounted_martingale(self):
        m = GbmModel(2, 0.05, 0.02, 0.2, 100.0, (100.0, 80.0))
        grid = TimeGrid(3.0, 3, 4)
        b = simulate_gbm(m, grid, 20000, make_stream(5, 0))
        x = b.exercise_states()
        scaled = np.exp(-(m.rate - m.dividend) * grid.exercise_times)[None, :, None] * x / m.x0
        mean = scaled.mean(axis=0)
        se = scaled.std(axis=0, ddof=1) / math.sqrt(b.n_paths)
        se[0] = 1.0
        assert np.all(np.abs(mean - 1) <= 4 * se)

    def test_bit_identical_reruns(self, basket_model, small_grid):
        a = simulate_gbm(basket_model, small_grid, 30, make_stream(9, 2))
        b = simulate_gbm(basket_model, small_grid, 30, make_stream(9, 2))
        assert a.states.tobytes() == b.states.tobytes()

    def test_blocks_are_order_independent(self, basket_model, small_grid):
        s = make_stream(4, 1)
        blocks = list(simulate_gbm_blocks(basket_model, small_grid, 25, s, block_size=10))
        assert [b.n_paths for b in blocks] == [10, 10, 5]
        again = simulate_gbm(basket_model, small_grid, 10, s.at_block(2))
        assert np.array_equal(again.states[:5], blocks[2].states)

    def test_batch_validates_shapes(self, small_grid):
        with pytest.raises(ValueError):
            PathBatch(np.ones((2, 30, 1)), np.zeros((2, 30, 1)), small_grid)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32), st.integers(1, 4))
    def test_positive_for_any_seed(self, seed, dim):
        m = GbmModel(dim, 0.05, 0.0, 0.8, 100.0, 100.0)
        b = simulate_gbm(m, TimeGrid(1.0, 2, 3), 8, make_stream(seed, 0))
        assert np.all(b.states > 0)
