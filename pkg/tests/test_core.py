import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from macrotex.core import Image, RandomStream, as_shape, white_noise_image, zero_pad
from macrotex.errors import InvalidArgumentError, NumericOverflowError


class TestImage:
    def test_two_dimensional_input_is_single_channel(self):
        x = Image([[1.0, 2.0], [3.0, 4.0]])
        assert x.shape == (2, 2, 1)
        assert x.size == 4

    def test_data_is_read_only(self):
        x = Image(np.zeros((2, 2, 1)))
        with pytest.raises(ValueError):
            x.data[0, 0, 0] = 1.0

    def test_constructor_copies(self):
        a = np.zeros((2, 2, 1))
        x = Image(a)
        a[0, 0, 0] = 9.0
        assert x.data[0, 0, 0] == 0.0

    def test_rejects_non_finite(self):
        with pytest.raises(NumericOverflowError):
            Image([[np.nan]])
        with pytest.raises(NumericOverflowError):
            Image([[np.inf]])

    def test_rejects_empty(self):
        with pytest.raises(InvalidArgumentError):
            Image(np.zeros((0, 3)))

    def test_flat_is_row_major_channel_interleaved(self):
        data = np.arange(12.0).reshape(2, 3, 2)
        np.testing.assert_array_equal(Image(data).flat(), np.arange(12.0))

    def test_equality_and_hash(self):
        a, b = Image([[1.0, 2.0]]), Image([[1.0, 2.0]])
        assert a == b and hash(a) == hash(b)
        assert a != Image([[1.0, 3.0]])

    def test_as_shape(self):
        assert as_shape((3, 4)) == (3, 4, 1)
        with pytest.raises(InvalidArgumentError):
            as_shape((0, 4, 1))


class TestWhiteNoise:
    def test_single_pixel_zero_std(self):
        x = white_noise_image((1, 1, 1), 0.0, 0.0, RandomStream(0))
        np.testing.assert_array_equal(x.data, [[[0.0]]])

    def test_degenerate_gaussian_is_constant(self):
        x = white_noise_image((2, 2, 1), 5.0, 0.0, RandomStream(1))
        assert np.all(x.data == 5.0)

    def test_moments(self):
        x = white_noise_image((100, 100, 1), 0.0, 1.0, RandomStream(2))
        assert abs(x.data.mean()) < 0.05
        assert abs(x.data.std() - 1.0) < 0.05

    def test_consumes_exactly_hwc_draws(self):
        s = RandomStream(3)
        white_noise_image((4, 5, 3), 0.0, 1.0, s)
        assert s.draws == 60
        # the next draw is the 61st of the sequence
        ref = RandomStream(3).normal(61)
        assert s.normal(1)[0] == ref[60]

    def test_zero_size_rejected(self):
        with pytest.raises(InvalidArgumentError):
            white_noise_image((0, 4, 1), 0.0, 1.0, RandomStream(0))

    def test_negative_std_rejected(self):
        with pytest.raises(InvalidArgumentError):
            white_noise_image((2, 2, 1), 0.0, -1.0, RandomStream(0))


class TestRandomStream:
    def test_seed_determinism_bitwise(self):
        a = white_noise_image((16, 16, 3), 0.2, 1.5, RandomStream(42))
        b = white_noise_image((16, 16, 3), 0.2, 1.5, RandomStream(42))
        assert a.data.tobytes() == b.data.tobytes()

    def test_different_seeds_differ(self):
        assert not np.array_equal(RandomStream(1).normal(10), RandomStream(2).normal(10))

    def test_block_draws_equal_sequential_draws(self):
        s = RandomStream(5)
        seq = np.array([s.normal(1)[0] for _ in range(50)])
        np.testing.assert_array_equal(seq, RandomStream(5).normal(50))

    def test_spawned_streams_are_distinct_and_reproducible(self):
        a1, a2 = RandomStream(9).spawn(2)
        b1, _ = RandomStream(9).spawn(2)
        np.testing.assert_array_equal(a1.normal(20), b1.normal(20))
        assert not np.array_equal(RandomStream(9).spawn(2)[0].normal(20), a2.normal(20))

    def test_standard_normal_moments_at_scale(self):
        z = RandomStream(11).normal(10**6)
        se = 1.0 / np.sqrt(z.size)
        assert abs(z.mean()) < 5 * se
        assert abs(z.var() - 1.0) < 5 * np.sqrt(2.0) * se
        assert abs(np.mean(z**3)) < 5 * np.sqrt(15.0) * se
        assert abs(np.mean(z**4) - 3.0) < 5 * np.sqrt(96.0) * se

    def test_seed_range(self):
        with pytest.raises(InvalidArgumentError):
            RandomStream(-1)


class TestZeroPad:
    def test_single_pixel(self):
        out = zero_pad(Image([[7.0]]), (2, 2))
        np.testing.assert_array_equal(out.data[..., 0], [[7.0, 0.0], [0.0, 0.0]])

    def test_identical_shape_is_identity(self):
        x = Image(np.random.default_rng(0).standard_normal((3, 4, 2)))
        assert zero_pad(x, (3, 4)) == x

    def test_smaller_target_rejected(self):
        with pytest.raises(InvalidArgumentError):
            zero_pad(Image(np.ones((3, 3))), (2, 4))

    @settings(max_examples=30, deadline=None)
    @given(
        h=st.integers(1, 5), w=st.integers(1, 5), ph=st.integers(0, 4), pw=st.integers(0, 4),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_sum_and_values_preserved(self, h, w, ph, pw, seed):
        x = Image(np.random.default_rng(seed).standard_normal((h, w, 1)))
        out = zero_pad(x, (h + ph, w + pw))
        assert out.data.sum() == pytest.approx(x.data.sum(), abs=1e-12)
        np.testing.assert_array_equal(out.data[:h, :w], x.data)
        mask = np.ones(out.shape, bool)
        mask[:h, :w] = False
        assert np.all(out.data[mask] == 0.0)
