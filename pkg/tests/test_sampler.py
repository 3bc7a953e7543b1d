import math

import numpy as np
import pytest

from helpers import random_convnet, random_image
from macrotex.core import Image, RandomStream
from macrotex.errors import InvalidArgumentError, StateError
from macrotex.features import FirstOrder, eval_features
from macrotex.gibbs import GibbsModel, potential_gradient
from macrotex.sampler import ChainState, Rate, StepSchedule, constant, power, run_chain, ula_step


def gaussian_model(shape, a):
    """Potential a ||x||^2 / 2 through the reference term alone."""
    return GibbsModel(FirstOrder(), np.zeros(shape[2]), np.zeros(shape[2]), a / 2.0, shape)


class TestSchedule:
    def test_rates(self):
        assert constant(0.3)(1) == 0.3 and constant(0.3)(1000) == 0.3
        assert power(2.0, 1.0)(4) == 0.5
        assert Rate(1.0, 0.5)(16) == 0.25

    def test_indexed_from_one(self):
        with pytest.raises(InvalidArgumentError):
            power(1.0, 1.0)(0)

    def test_inner_counts_are_positive_integers(self):
        s = StepSchedule(constant(0.1), constant(0.1), power(3.0, 0.5))
        assert [s.m_at(n) for n in (1, 4, 9, 100)] == [3, 2, 1, 1]

    def test_invalid_schedules(self):
        with pytest.raises(InvalidArgumentError):
            StepSchedule(constant(-1.0), constant(0.1))
        with pytest.raises(InvalidArgumentError):
            StepSchedule(constant(1.0), constant(0.0))
        with pytest.raises(InvalidArgumentError):
            StepSchedule(power(1.0, -1.0), constant(0.1))

    def test_power_family_is_non_increasing(self):
        s = StepSchedule.standard(5.0, 0.2)
        d = [s.delta_at(n) for n in range(1, 50)]
        g = [s.gamma_at(n) for n in range(1, 50)]
        assert all(np.diff(d) <= 0) and all(np.diff(g) <= 0)
        assert s.m_at(1) == s.m_at(49) == 1


class TestUlaStep:
    def test_pure_diffusion(self):
        shape = (3, 4, 1)
        model = GibbsModel(FirstOrder(), [0.0], [0.0], 0.0, shape)
        x = random_image(np.random.default_rng(0), 3, 4)
        gamma = 0.07
        new = ula_step(model, ChainState(x), gamma, RandomStream(1))
        z = RandomStream(1).normal(shape)
        np.testing.assert_array_equal(new.x.data, x.data + math.sqrt(2 * gamma) * z)

    def test_linear_recursion_for_gaussian_target(self):
        shape, a, gamma = (5, 5, 1), 1.3, 0.2
        x = random_image(np.random.default_rng(2), 5, 5)
        new = ula_step(gaussian_model(shape, a), ChainState(x), gamma, RandomStream(3))
        z = RandomStream(3).normal(shape)
        np.testing.assert_allclose(new.x.data, (1 - gamma * a) * x.data + math.sqrt(2 * gamma) * z, rtol=1e-13, atol=1e-15)

    def test_drift_is_potential_gradient(self):
        rng = np.random.default_rng(4)
        spec = random_convnet(rng)
        x0 = random_image(rng, 6, 6)
        model = GibbsModel.from_exemplar(spec, x0, 0.2, theta=rng.standard_normal(5))
        x = random_image(rng, 6, 6)
        gamma = 0.01
        new = ula_step(model, ChainState(x), gamma, RandomStream(5))
        z = RandomStream(5).normal(x.shape)
        expected = x.data - gamma * potential_gradient(model, x).data + math.sqrt(2 * gamma) * z
        np.testing.assert_allclose(new.x.data, expected, rtol=1e-13, atol=1e-15)

    def test_running_sum_accumulates_exact_features(self):
        rng = np.random.default_rng(6)
        spec = random_convnet(rng)
        model = GibbsModel.from_exemplar(spec, random_image(rng, 5, 5), 0.1)
        state, stream, visited = ChainState(random_image(rng, 5, 5)), RandomStream(7), []
        for _ in range(4):
            state = ula_step(model, state, 0.05, stream)
            visited.append(eval_features(spec, state.x))
        assert state.count == 4 and state.steps == 4
        np.testing.assert_allclose(state.feature_sum, np.sum(visited, axis=0), rtol=1e-14)
        state.reset_sum()
        assert state.count == 0 and state.average() is None

    def test_diverged_state_rejected(self):
        model = gaussian_model((1, 1, 1), 1.0)
        with pytest.raises(StateError):
            ula_step(model, ChainState(Image([[0.0]]), diverged=True), 0.1, RandomStream(0))

    def test_gamma_must_be_positive(self):
        model = gaussian_model((1, 1, 1), 1.0)
        with pytest.raises(InvalidArgumentError):
            ula_step(model, ChainState(Image([[0.0]])), 0.0, RandomStream(0))


class TestRunChain:
    def test_one_step_equals_ula_step(self):
        rng = np.random.default_rng(8)
        spec = random_convnet(rng)
        model = GibbsModel.from_exemplar(spec, random_image(rng, 5, 5), 0.1)
        x = random_image(rng, 5, 5)
        single = ula_step(model, ChainState(x), 0.03, RandomStream(9))
        chained, avg = run_chain(model, ChainState(x), 1, 0.03, RandomStream(9))
        assert chained.x == single.x
        np.testing.assert_array_equal(avg, eval_features(spec, single.x))

    def test_average_excludes_start_state(self):
        model = gaussian_model((2, 2, 1), 1.0)
        x = Image(np.full((2, 2), 100.0))
        stream = RandomStream(10)
        _, avg = run_chain(model, ChainState(x), 3, 0.1, stream)
        replay, states = RandomStream(10), []
        state = ChainState(x)
        for _ in range(3):
            state = ula_step(model, state, 0.1, replay)
            states.append(eval_features(model.spec, state.x))
        np.testing.assert_allclose(avg, np.mean(states, axis=0), rtol=1e-14)

    def test_standard_gaussian_target_mean(self):
        model = gaussian_model((4, 4, 1), 1.0)
        _, avg = run_chain(model, ChainState(Image.zeros((4, 4, 1))), 10**5, 0.05, RandomStream(11))
        assert abs(avg[0]) < 0.02

    def test_deterministic_replay(self):
        rng = np.random.default_rng(12)
        spec = random_convnet(rng)
        model = GibbsModel.from_exemplar(spec, random_image(rng, 5, 5), 0.1, theta=rng.standard_normal(5))
        x = random_image(rng, 5, 5)
        a = run_chain(model, ChainState(x), 50, 0.02, RandomStream(13))
        b = run_chain(model, ChainState(x), 50, 0.02, RandomStream(13))
        assert a[0].x.data.tobytes() == b[0].x.data.tobytes()
        assert a[1].tobytes() == b[1].tobytes()

    def test_steps_must_be_positive(self):
        with pytest.raises(InvalidArgumentError):
            run_chain(gaussian_model((1, 1, 1), 1.0), ChainState(Image([[0.0]])), 0, 0.1, RandomStream(0))


class TestStationaryLaw:
    def test_variance_matches_discretised_fixed_point(self):
        a, gamma, d, steps, burn = 2.0, 0.15, 64, 20000, 200
        model = gaussian_model((8, 8, 1), a)
        state, stream = ChainState(Image.zeros((8, 8, 1))), RandomStream(14)
        state, _ = run_chain(model, state, burn, gamma, stream)
        total, total_sq, n = 0.0, 0.0, 0
        for _ in range(steps // 1000):
            for _ in range(1000):
                state = ula_step(model, state, gamma, stream)
                v = state.x.data
                total_sq += float(np.sum(v * v))
                n += v.size
        var = total_sq / n
        expected = 1.0 / (a * (1.0 - gamma * a / 2.0))
        rho = 1.0 - gamma * a
        se = math.sqrt(2.0 * expected**2 / n * (1 + rho**2) / (1 - rho**2))
        assert abs(var - expected) < 3 * se

    def test_unstable_step_diverges_without_non_finite_state(self):
        a = 1.0
        model = gaussian_model((2, 2, 1), a)
        state, avg = run_chain(model, ChainState(Image(np.ones((2, 2)))), 5000, 3.0 / a, RandomStream(15))
        assert state.diverged
        assert np.all(np.isfinite(state.x.data))
        assert state.steps < 5000
        assert avg is not None and np.all(np.isfinite(avg))
        with pytest.raises(StateError):
            run_chain(model, state, 1, 0.1, RandomStream(0))

    def test_noise_increments_have_covariance_two_gamma(self):
        gamma, shape = 0.3, (2, 3, 1)
        model = GibbsModel(FirstOrder(), [0.0], [0.0], 0.0, shape)
        state, stream = ChainState(Image.zeros(shape)), RandomStream(16)
        incs = []
        for _ in range(20000):
            new = ula_step(model, state, gamma, stream)
            incs.append(new.x.flat() - state.x.flat())
            state = new
        cov = np.cov(np.array(incs).T)
        np.testing.assert_allclose(np.diag(cov), 2 * gamma, rtol=0.05)
        off = cov[~np.eye(6, dtype=bool)]
        assert np.max(np.abs(off)) < 0.05 * 2 * gamma
