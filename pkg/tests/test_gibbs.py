import numpy as np
import pytest

from helpers import fd_gradient, random_convnet, random_image, rel_err
from macrotex.core import Image
from macrotex.errors import InvalidArgumentError, NumericOverflowError
from macrotex.features import ConvLayer, ConvNet, ConvNetSpec, FilterBank, FirstOrder, builtin_filter_bank
from macrotex.gibbs import GibbsModel, check_maxent_conditions, potential, potential_gradient


def row(values):
    return Image(np.asarray(values, dtype=float).reshape(1, -1))


class TestModel:
    def test_length_validation(self):
        with pytest.raises(InvalidArgumentError):
            GibbsModel(FirstOrder(), [0.0], [0.0, 1.0], 0.0, (1, 3, 1))

    def test_negative_epsilon(self):
        with pytest.raises(InvalidArgumentError):
            GibbsModel(FirstOrder(), [0.0], [0.0], -1.0, (1, 3, 1))

    def test_from_exemplar(self):
        m = GibbsModel.from_exemplar(FirstOrder(), row([1, 2, 3]), 0.5)
        np.testing.assert_array_equal(m.target, [2.0])
        np.testing.assert_array_equal(m.theta, [0.0])
        assert m.p == 1 and m.shape == (1, 3, 1)

    def test_with_theta_returns_new_model(self):
        m = GibbsModel.from_exemplar(FirstOrder(), row([1, 2, 3]), 0.5)
        m2 = m.with_theta([4.0])
        assert m.theta[0] == 0.0 and m2.theta[0] == 4.0


class TestPotential:
    def test_zero_theta_zero_epsilon(self):
        rng = np.random.default_rng(0)
        spec = builtin_filter_bank("grad8")
        x = random_image(rng, 6, 6)
        m = GibbsModel(spec, np.ones(8), np.zeros(8), 0.0, x.shape)
        assert potential(m, x) == 0.0

    def test_mean_feature(self):
        m = GibbsModel(FirstOrder(), [0.0], [1.0], 0.0, (1, 3, 1))
        assert potential(m, row([1, 2, 3])) == 2.0

    def test_squared_norm(self):
        m = GibbsModel(FirstOrder(), [0.0], [0.0], 1.0, (1, 2, 1))
        assert potential(m, row([3, 4])) == 25.0

    def test_vanishes_at_exemplar(self):
        rng = np.random.default_rng(1)
        x0 = random_image(rng, 8, 8)
        spec = random_convnet(rng)
        m = GibbsModel.from_exemplar(spec, x0, 0.0, theta=rng.standard_normal(5))
        assert potential(m, x0) == 0.0

    def test_shape_mismatch(self):
        m = GibbsModel(FirstOrder(), [0.0], [1.0], 0.0, (1, 3, 1))
        with pytest.raises(InvalidArgumentError):
            potential(m, row([1, 2]))

    def test_overflow_is_reported(self):
        m = GibbsModel(FirstOrder(("square",)), [0.0], [1.0], 0.0, (1, 1, 1))
        with pytest.raises(NumericOverflowError):
            potential(m, row([1e200]))

    def test_coercive_along_rays_when_epsilon_positive(self):
        rng = np.random.default_rng(2)
        spec = builtin_filter_bank("grad8")
        x0 = random_image(rng, 6, 6)
        m = GibbsModel.from_exemplar(spec, x0, 0.01, theta=50 * rng.standard_normal(8))
        for _ in range(10):
            u = rng.standard_normal(x0.shape)
            u /= np.linalg.norm(u)
            vals = [potential(m, Image(r * u)) for r in (1e2, 1e3, 1e4, 1e5, 1e6)]
            assert np.all(np.diff(vals) > 0)
            assert vals[-1] > 1e9


class TestPotentialGradient:
    def test_zero_model(self):
        m = GibbsModel(FirstOrder(), [0.0], [0.0], 0.0, (2, 2, 1))
        assert np.all(potential_gradient(m, Image(np.ones((2, 2)))).data == 0.0)

    def test_half_epsilon_returns_x(self):
        x = random_image(np.random.default_rng(3), 4, 3, 2)
        m = GibbsModel(FirstOrder(), [0.0, 0.0], [0.0, 0.0], 0.5, x.shape)
        assert potential_gradient(m, x) == x

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(10 + seed)
        spec = random_convnet(rng, channels=(1, 3, 2)) if seed % 2 else builtin_filter_bank("grad8")
        x = random_image(rng, 6, 6)
        m = GibbsModel.from_exemplar(spec, random_image(rng, 6, 6), 0.3)
        m = m.with_theta(rng.standard_normal(m.p))
        g = potential_gradient(m, x).data
        assert rel_err(g, fd_gradient(lambda y: potential(m, y), x)) < 1e-4


class TestConditionReport:
    def test_softplus_convnet_full_rank_passes(self):
        rng = np.random.default_rng(4)
        spec = random_convnet(rng, channels=(1, 3, 2))
        x0 = random_image(rng, 8, 8)
        report = check_maxent_conditions(GibbsModel.from_exemplar(spec, x0, 0.01), x0)
        assert report.integrability == "PASS" and report.rank == "PASS"
        assert report.verdict == "PASS"

    def test_zero_epsilon_warns_about_divergence(self):
        rng = np.random.default_rng(5)
        spec = builtin_filter_bank("grad8")
        x0 = random_image(rng, 8, 8)
        report = check_maxent_conditions(GibbsModel.from_exemplar(spec, x0, 0.0), x0)
        assert report.verdict == "WARN"
        assert any("diverge" in msg for msg in report.messages)

    def test_constant_feature_map_fails_rank(self):
        x0 = row([0.1, 0.2, 0.3])
        report = check_maxent_conditions(GibbsModel.from_exemplar(FirstOrder(("constant",)), x0, 1.0), x0)
        assert report.rank == "FAIL" and report.jacobian_rank == 0
        assert report.verdict == "FAIL"

    def test_superlinear_nonlinearity_fails_integrability(self):
        x0 = random_image(np.random.default_rng(6), 4, 4)
        spec = FilterBank((np.array([[1.0]]),), nonlinearity="square")
        report = check_maxent_conditions(GibbsModel.from_exemplar(spec, x0, 1.0), x0)
        assert report.integrability == "FAIL" and report.verdict == "FAIL"

    def test_relu_warns(self):
        layer = ConvLayer(np.ones((1, 1, 1, 1)), np.zeros(1), phi="relu")
        x0 = random_image(np.random.default_rng(7), 4, 4)
        report = check_maxent_conditions(GibbsModel.from_exemplar(ConvNet(ConvNetSpec((layer,)), (1,)), x0, 1.0), x0)
        assert report.integrability == "WARN"

    def test_text_rendering(self):
        x0 = row([0.1, 0.2, 0.3])
        text = check_maxent_conditions(GibbsModel.from_exemplar(FirstOrder(), x0, 1.0), x0).to_text()
        assert text.startswith("verdict: PASS")
