"""Forward simulation: exactness anchors, moment oracles, reproducibility."""

import numpy as np
import pytest

from switchbsde.errors import NonFiniteState
from switchbsde.forward import TimeGrid, empirical_sup_moment, simulate
from switchbsde.model import ProblemSpec


def _spec(b="0", sigma="1", name="probe"):
    return ProblemSpec.from_sources(
        name=name, d=1, m=1, T=1.0, b=[b], sigma=[[sigma]], f=["0"], h=["0"],
        g=[["0"]], q_growth=1.0, p_growth=1.0,
    )


class TestTimeGrid:
    def test_nodes_hit_endpoints_exactly(self):
        grid = TimeGrid(0.25, 1.0, 3)
        nodes = grid.nodes
        assert nodes[0] == 0.25 and nodes[-1] == 1.0 and len(nodes) == 4
        assert np.all(np.diff(nodes) > 0)

    def test_rejects_bad_ranges(self):
        with pytest.raises(ValueError):
            TimeGrid(1.0, 1.0, 4)
        with pytest.raises(ValueError):
            TimeGrid(0.0, 1.0, 0)


class TestSimulate:
    def test_degenerate_sde_is_constant(self):
        bundle = simulate(_spec("0", "0"), TimeGrid(0.0, 1.0, 5), [1.5], 10, seed=1)
        np.testing.assert_array_equal(bundle.states, np.full((10, 6, 1), 1.5))

    def test_pure_drift_is_linear_ramp(self):
        bundle = simulate(_spec("1", "0"), TimeGrid(0.0, 1.0, 4), [0.0], 3, seed=1)
        np.testing.assert_array_equal(
            bundle.states[:, :, 0], np.tile([0.0, 0.25, 0.5, 0.75, 1.0], (3, 1))
        )

    def test_brownian_terminal_moments(self):
        n = 100_000
        bundle = simulate(_spec(), TimeGrid(0.0, 1.0, 20), [0.0], n, seed=7)
        x_T = bundle.states[:, -1, 0]
        assert abs(x_T.mean()) <= 3.0 / np.sqrt(n)
        var_se = np.sqrt(2.0 / (n - 1))  # variance-of-variance for a Gaussian
        assert abs(x_T.var() - 1.0) <= 3.0 * var_se

    def test_bit_reproducible(self):
        a = simulate(_spec(), TimeGrid(0.0, 1.0, 8), [0.3], 500, seed=99)
        b = simulate(_spec(), TimeGrid(0.0, 1.0, 8), [0.3], 500, seed=99)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.dW, b.dW)
        assert a.checksum() == b.checksum()

    def test_increment_gaussianity(self):
        grid = TimeGrid(0.0, 1.0, 10)
        bundle = simulate(_spec(), grid, [0.0], 10_000, seed=3)
        dt = grid.dt
        for k in (0, 4, 9):
            sample = bundle.dW[:, k, 0]
            n = sample.size
            se_mean = np.sqrt(dt / n)
            assert abs(sample.mean()) <= 4.0 * se_mean
            se_var = dt * np.sqrt(2.0 / (n - 1))
            assert abs(sample.var() - dt) <= 4.0 * se_var

    def test_one_step_markov_replay(self):
        spec = _spec("sin(x1)", "sqrt(1 + x1^2)")
        grid = TimeGrid(0.0, 1.0, 6)
        bundle = simulate(spec, grid, [0.4], 50, seed=11)
        dt = grid.dt
        for n, k in [(0, 0), (17, 3), (49, 5)]:
            x = bundle.states[n, k, 0]
            drift = np.sin(x)
            vol = np.sqrt(1 + x**2)
            replay = x + drift * dt + vol * bundle.dW[n, k, 0]
            assert replay == bundle.states[n, k + 1, 0]

    def test_seed_changes_output(self):
        a = simulate(_spec(), TimeGrid(0.0, 1.0, 4), [0.0], 50, seed=1)
        b = simulate(_spec(), TimeGrid(0.0, 1.0, 4), [0.0], 50, seed=2)
        assert not np.array_equal(a.states, b.states)

    def test_exploding_drift_raises_with_location(self):
        spec = _spec("exp(x1)*x1^2", "0")
        with pytest.raises(NonFiniteState) as err:
            simulate(spec, TimeGrid(0.0, 1.0, 50), [100.0], 4, seed=5)
        assert err.value.path >= 0 and err.value.step >= 1

    def test_wrong_start_dimension(self):
        with pytest.raises(ValueError):
            simulate(_spec(), TimeGrid(0.0, 1.0, 4), [0.0, 1.0], 10, seed=1)

    def test_two_dimensional_coupling(self):
        spec = ProblemSpec.from_sources(
            name="d2", d=2, m=1, T=1.0,
            b=["x2", "0"], sigma=[["1", "0"], ["0", "1"]],
            f=["0"], h=["x1"], g=[["0"]],
        )
        bundle = simulate(spec, TimeGrid(0.0, 1.0, 3), [1.0, 2.0], 20, seed=4)
        dt = bundle.grid.dt
        expected = bundle.states[:, 0, 0] + 2.0 * dt + bundle.dW[:, 0, 0]
        np.testing.assert_array_equal(bundle.states[:, 1, 0], expected)


class TestSupMoment:
    def test_constant_paths(self):
        bundle = simulate(_spec("0", "0"), TimeGrid(0.0, 1.0, 4), [2.0], 10, seed=1)
        assert empirical_sup_moment(bundle, 2.0) == 4.0

    def test_zero_process(self):
        bundle = simulate(_spec("0", "0"), TimeGrid(0.0, 1.0, 4), [0.0], 10, seed=1)
        assert empirical_sup_moment(bundle, 3.0) == 0.0

    def test_growth_ratio_bounded_across_starts(self):
        grid = TimeGrid(0.0, 1.0, 10)
        ratios = []
        for x in (0.0, 2.0, 5.0):
            bundle = simulate(_spec(), grid, [x], 10_000, seed=21)
            ratios.append(empirical_sup_moment(bundle, 2.0) / (1.0 + x**2))
        assert max(ratios) <= 4.0 * min(ratios)

    def test_rejects_gamma_below_one(self):
        bundle = simulate(_spec("0", "0"), TimeGrid(0.0, 1.0, 2), [1.0], 5, seed=1)
        with pytest.raises(ValueError):
            empirical_sup_moment(bundle, 0.5)
