"""Images, the seeded random stream, and small image constructors.

Images are real-valued ``(H, W, C)`` arrays stored row-major with channels
interleaved, which is numpy's C order for that shape.  They are immutable
once built: the wrapped buffer is flagged read-only.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError, NumericOverflowError

__all__ = ["Image", "RandomStream", "white_noise_image", "zero_pad", "as_shape"]


class Image:
    """Immutable real-valued pixel grid of shape ``(height, width, channels)``.

    Parameters
    ----------
    data : array_like
        2-D ``(H, W)`` or 3-D ``(H, W, C)`` array. A 2-D array is treated
        as a single-channel image.
    copy : bool
        Copy the buffer before freezing it. Internal callers that hand over
        a freshly allocated array pass ``False``.
    """

    __slots__ = ("_data",)

    def __init__(self, data, copy=True):
        if copy:
            arr = np.array(data, dtype=np.float64, order="C")
        else:
            arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise InvalidArgumentError(f"image must be 2-D or 3-D, got ndim={arr.ndim}")
        if arr.size == 0:
            raise InvalidArgumentError(f"image has a zero-sized shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericOverflowError("image contains non-finite values")
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(as_shape(shape)), copy=False)

    @classmethod
    def full(cls, shape, value):
        return cls(np.full(as_shape(shape), float(value)), copy=False)

    @property
    def data(self):
        """Read-only ``(H, W, C)`` float64 view."""
        return self._data

    @property
    def shape(self):
        return self._data.shape

    @property
    def height(self):
        return self._data.shape[0]

    @property
    def width(self):
        return self._data.shape[1]

    @property
    def channels(self):
        return self._data.shape[2]

    @property
    def size(self):
        """Dimension ``d = H * W * C`` of the state space."""
        return self._data.size

    def flat(self):
        return self._data.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._data, other._data)

    def __hash__(self):
        return hash((self.shape, self._data.tobytes()))

    def __repr__(self):
        h, w, c = self.shape
        return f"Image({h}x{w}x{c})"


def as_shape(shape):
    """Normalise ``(H, W)`` or ``(H, W, C)`` into a positive 3-tuple."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 2:
        shape = shape + (1,)
    if len(shape) != 3:
        raise InvalidArgumentError(f"shape must have 2 or 3 entries, got {shape}")
    if any(s <= 0 for s in shape):
        raise InvalidArgumentError(f"zero-sized or negative shape {shape}")
    return shape


class RandomStream:
    """Seeded, splittable source of random draws.

    Backed by numpy's counter-based Philox4x64 bit generator keyed through a
    ``SeedSequence``. Equal seeds give bitwise-equal draws, and draws of a
    block of normals consume the stream exactly as the same number of
    one-at-a-time draws would. :meth:`spawn` derives statistically
    independent child streams for parallel chains.

    A stream is single-owner: do not share one between concurrent consumers.
    """

    def __init__(self, seed=0, *, _seed_sequence=None):
        if _seed_sequence is None:
            seed = int(seed)
            if not 0 <= seed < 2**64:
                raise InvalidArgumentError(f"seed must be a 64-bit unsigned integer, got {seed}")
            _seed_sequence = np.random.SeedSequence(seed)
        self.seed = _seed_sequence.entropy
        self._seq = _seed_sequence
        self._gen = np.random.Generator(np.random.Philox(_seed_sequence))
        self.draws = 0

    def normal(self, size):
        """Standard normal draws of the given size (int or tuple)."""
        out = self._gen.standard_normal(size)
        self.draws += int(np.size(out))
        return out

    def spawn(self, n):
        """Return ``n`` independent child streams."""
        return [RandomStream(_seed_sequence=s) for s in self._seq.spawn(int(n))]

    @property
    def generator(self):
        """Underlying :class:`numpy.random.Generator` (for non-normal draws)."""
        return self._gen

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, draws={self.draws})"


def white_noise_image(shape, mean, std, stream):
    """I.i.d. Gaussian image; consumes exactly ``H * W * C`` normal draws."""
    shape = as_shape(shape)
    if not std >= 0:
        raise InvalidArgumentError(f"std must be nonnegative, got {std}")
    z = stream.normal(shape)
    return Image(mean + std * z, copy=False)


def zero_pad(x, target):
    """Place ``x`` at the top-left of a zero image of spatial size ``target``."""
    h, w = (int(t) for t in target[:2])
    if len(target) == 3 and target[2] != x.channels:
        raise InvalidArgumentError("zero_pad cannot change the channel count")
    if h < x.height or w < x.width:
        raise InvalidArgumentError(
            f"target {(h, w)} is smaller than source {(x.height, x.width)}"
        )
    out = np.zeros((h, w, x.channels))
    out[: x.height, : x.width] = x.data
    return Image(out, copy=False)
