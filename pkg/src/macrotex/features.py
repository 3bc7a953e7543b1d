"""Differentiable feature statistics ``f: R^d -> R^p``.

Every statistic is the spatial mean of a lifted feature map. Three families
are provided:

* :class:`FirstOrder` - pointwise transforms of the pixels,
* :class:`FilterBank` - a nonlinearity applied to linear filter responses,
* :class:`ConvNet` - channel (or layer) means of the activations of a stack
  of strided convolutions, each followed by a nonlinearity.

Gradients of ``<theta, f(x)>`` are computed by an explicit reverse pass
(adjoint convolutions), never by automatic differentiation.

Internally images travel as ``(C, H, W)`` arrays; the public functions take
and return :class:`~macrotex.core.Image` objects in ``(H, W, C)`` layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .core import Image
from .errors import InvalidArgumentError, NumericOverflowError

__all__ = [
    "Nonlinearity",
    "NONLINEARITIES",
    "get_nonlinearity",
    "FirstOrder",
    "FilterBank",
    "ConvLayer",
    "ConvNetSpec",
    "ConvNet",
    "LAYER_PRESETS",
    "resolve_layers",
    "feature_count",
    "eval_features",
    "eval_weighted_gradient",
    "jacobian_rank",
    "nonlinearities_of",
    "builtin_filter_bank",
]


# ---------------------------------------------------------------------------
# Pointwise nonlinearities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Nonlinearity:
    """A scalar map applied componentwise, with its derivative.

    ``growth`` is the constant ``C`` in ``|phi(t)| <= C (1 + |t|)``, or
    ``None`` when phi grows faster than linearly. ``smooth`` records whether
    phi is continuously differentiable.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    growth: Optional[float]
    smooth: bool = True

    @property
    def sublinear(self):
        return self.growth is not None


def _softplus(t):
    return np.logaddexp(0.0, t)


NONLINEARITIES = {
    nl.name: nl
    for nl in [
        Nonlinearity("identity", lambda t: t, np.ones_like, growth=1.0),
        Nonlinearity("softplus", _softplus, expit, growth=1.0),
        Nonlinearity("tanh", np.tanh, lambda t: 1.0 - np.tanh(t) ** 2, growth=1.0),
        Nonlinearity("softabs", lambda t: np.sqrt(1.0 + t * t), lambda t: t / np.sqrt(1.0 + t * t), growth=1.0),
        # ReLU is sub-linear but not C^1
        Nonlinearity("relu", lambda t: np.maximum(t, 0.0), lambda t: (t > 0).astype(float), growth=1.0, smooth=False),
        Nonlinearity("constant", np.ones_like, np.zeros_like, growth=1.0),
        Nonlinearity("square", lambda t: t * t, lambda t: 2.0 * t, growth=None),
    ]
}


def get_nonlinearity(name):
    if isinstance(name, Nonlinearity):
        return name
    try:
        return NONLINEARITIES[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown nonlinearity {name!r}; known: {sorted(NONLINEARITIES)}"
        ) from None


# ---------------------------------------------------------------------------
# Spatial shifts and strided correlation with their adjoints
# ---------------------------------------------------------------------------

PADDING_MODES = ("periodic", "zero")


def _shift(a, di, dj, mode):
    """``out[..., i, j] = a[..., i + di, j + dj]`` (wrapped or zero outside)."""
    if di == 0 and dj == 0:
        return a
    if mode == "periodic":
        return np.roll(a, (-di, -dj), axis=(-2, -1))
    h, w = a.shape[-2:]
    out = np.zeros_like(a)
    r0, r1 = max(0, -di), min(h, h - di)
    c0, c1 = max(0, -dj), min(w, w - dj)
    if r0 < r1 and c0 < c1:
        out[..., r0:r1, c0:c1] = a[..., r0 + di : r1 + di, c0 + dj : c1 + dj]
    return out


def _taps(kh, kw):
    ci, cj = (kh - 1) // 2, (kw - 1) // 2
    for a in range(kh):
        for b in range(kw):
            yield a, b, a - ci, b - cj


def _correlate(x, weight, stride, mode):
    """Multi-channel strided correlation ``(I, H, W) -> (O, ceil(H/s), ceil(W/s))``."""
    out_c, _, kh, kw = weight.shape
    h, w = x.shape[-2:]
    y = np.zeros((out_c, -(-h // stride), -(-w // stride)))
    for a, b, di, dj in _taps(kh, kw):
        xs = _shift(x, di, dj, mode)[:, ::stride, ::stride]
        y += np.tensordot(weight[:, :, a, b], xs, axes=(1, 0))
    return y


def _correlate_adjoint(g, weight, stride, mode, in_hw):
    """Adjoint of :func:`_correlate` (without bias) applied to ``g``."""
    _, in_c, kh, kw = weight.shape
    h, w = in_hw
    gx = np.zeros((in_c, h, w))
    for a, b, di, dj in _taps(kh, kw):
        t = np.zeros((in_c, h, w))
        t[:, ::stride, ::stride] = np.tensordot(weight[:, :, a, b].T, g, axes=(1, 0))
        gx += _shift(t, -di, -dj, mode)
    return gx


def _filter(x, kernel, mode):
    """Apply one 2-D kernel to every channel of ``x`` independently."""
    kh, kw = kernel.shape
    y = np.zeros_like(x)
    for a, b, di, dj in _taps(kh, kw):
        if kernel[a, b] != 0.0:
            y += kernel[a, b] * _shift(x, di, dj, mode)
    return y


def _filter_adjoint(g, kernel, mode):
    kh, kw = kernel.shape
    out = np.zeros_like(g)
    for a, b, di, dj in _taps(kh, kw):
        if kernel[a, b] != 0.0:
            out += kernel[a, b] * _shift(g, -di, -dj, mode)
    return out


# ---------------------------------------------------------------------------
# Feature specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FirstOrder:
    """Spatial means of pointwise transforms of the pixel values.

    With ``per_channel`` (the default) each transform yields one statistic
    per colour channel; otherwise one statistic over all channels.
    """

    transforms: tuple = ("identity",)
    per_channel: bool = True

    def __post_init__(self):
        object.__setattr__(self, "transforms", tuple(self.transforms))
        if not self.transforms:
            raise InvalidArgumentError("FirstOrder needs at least one transform")
        for t in self.transforms:
            get_nonlinearity(t)


@dataclass(frozen=True, eq=False)
class FilterBank:
    """Means of ``phi(k * x)`` for each kernel ``k`` and each channel."""

    kernels: tuple
    nonlinearity: str = "softplus"
    padding: str = "periodic"

    def __post_init__(self):
        ks = []
        for k in self.kernels:
            k = np.array(k, dtype=np.float64)
            if k.ndim != 2 or k.size == 0:
                raise InvalidArgumentError(f"filter kernels must be non-empty 2-D arrays, got shape {k.shape}")
            k.flags.writeable = False
            ks.append(k)
        if not ks:
            raise InvalidArgumentError("FilterBank needs at least one kernel")
        object.__setattr__(self, "kernels", tuple(ks))
        get_nonlinearity(self.nonlinearity)
        if self.padding not in PADDING_MODES:
            raise InvalidArgumentError(f"padding must be one of {PADDING_MODES}, got {self.padding!r}")


@dataclass(frozen=True, eq=False)
class ConvLayer:
    """One affine operator ``A_j`` (strided correlation plus bias) and its phi.

    ``weight`` has shape ``(out, in, kh, kw)``.
    """

    weight: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: str = "periodic"
    phi: str = "softplus"

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 4:
            raise InvalidArgumentError(f"conv weight must be (out, in, kh, kw), got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise InvalidArgumentError(f"bias must have length {w.shape[0]}, got {b.shape}")
        if int(self.stride) < 1:
            raise InvalidArgumentError(f"stride must be >= 1, got {self.stride}")
        if self.padding not in PADDING_MODES:
            raise InvalidArgumentError(f"padding must be one of {PADDING_MODES}, got {self.padding!r}")
        get_nonlinearity(self.phi)
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "stride", int(self.stride))

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def kernel_size(self):
        return self.weight.shape[2:]


@dataclass(frozen=True, eq=False)
class ConvNetSpec:
    """Stack of :class:`ConvLayer`; layer ``j`` (1-based) feeds layer ``j + 1``.

    ``input_offset`` is an optional per-channel value subtracted from the
    image before the first layer.
    """

    layers: tuple
    input_offset: Optional[tuple] = None

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise InvalidArgumentError("ConvNetSpec needs at least one layer")
        for j in range(1, len(layers)):
            if layers[j].in_channels != layers[j - 1].out_channels:
                raise InvalidArgumentError(
                    f"layer {j + 1} expects {layers[j].in_channels} input channels "
                    f"but layer {j} produces {layers[j - 1].out_channels}"
                )
        object.__setattr__(self, "layers", layers)
        if self.input_offset is not None:
            off = tuple(float(v) for v in self.input_offset)
            if len(off) != layers[0].in_channels:
                raise InvalidArgumentError("input_offset length must equal the input channel count")
            object.__setattr__(self, "input_offset", off)

    @property
    def depth(self):
        return len(self.layers)

    @property
    def in_channels(self):
        return self.layers[0].in_channels


LAYER_PRESETS = {
    "shallow3": (3, 4, 5),
    "mid6": (3, 4, 5, 6, 7, 11),
    "deep8": (3, 4, 5, 6, 7, 11, 12, 14),
}


def resolve_layers(preset, net):
    """Layer indices of a named preset, validated against ``net``'s depth."""
    try:
        layers = LAYER_PRESETS[preset]
    except KeyError:
        raise InvalidArgumentError(f"unknown layer preset {preset!r}; known: {sorted(LAYER_PRESETS)}") from None
    if max(layers) > net.depth:
        raise InvalidArgumentError(f"preset {preset!r} needs {max(layers)} layers, network has {net.depth}")
    return layers


@dataclass(frozen=True, eq=False)
class ConvNet:
    """Features read from selected layers of a :class:`ConvNetSpec`.

    ``layers`` are 1-based indices. With ``aggregation="channel"`` every
    channel of a selected layer contributes its spatial mean; with
    ``"layer"`` the whole layer is averaged into one statistic.
    """

    net: ConvNetSpec
    layers: tuple
    aggregation: str = "channel"

    def __post_init__(self):
        layers = tuple(int(j) for j in self.layers)
        if not layers:
            raise InvalidArgumentError("select at least one layer")
        for j in layers:
            if not 1 <= j <= self.net.depth:
                raise InvalidArgumentError(f"selected layer {j} outside 1..{self.net.depth}")
        if self.aggregation not in ("channel", "layer"):
            raise InvalidArgumentError(f"aggregation must be 'channel' or 'layer', got {self.aggregation!r}")
        object.__setattr__(self, "layers", layers)


def builtin_filter_bank(name="grad8", nonlinearity="softplus", padding="periodic"):
    """Small hand-made filter banks of 3x3 kernels.

    ``grad8`` holds the identity, first differences along both axes and
    both diagonals, and the second differences ``dxx``, ``dyy``, ``dxy``
    (8 kernels). ``derivatives`` holds the identity, ``dx``, ``dy`` and a
    Laplacian.

    Kernels are not paired with their negations: for a zero-sum kernel
    ``k``, ``softplus(t) - softplus(-t) = t`` makes the mean of the pair's
    difference the mean of ``k * x``, which vanishes under periodic padding,
    so the pair would be rank deficient.
    """
    k = {
        "delta": [[0, 0, 0], [0, 1, 0], [0, 0, 0]],
        "dx": [[0, 0, 0], [0, -1, 1], [0, 0, 0]],
        "dy": [[0, 0, 0], [0, -1, 0], [0, 1, 0]],
        "dd": [[0, 0, 0], [0, -1, 0], [0, 0, 1]],
        "da": [[0, 0, 0], [0, -1, 0], [1, 0, 0]],
        "dxx": [[0, 0, 0], [1, -2, 1], [0, 0, 0]],
        "dyy": [[0, 1, 0], [0, -2, 0], [0, 1, 0]],
        "dxy": [[1, 0, -1], [0, 0, 0], [-1, 0, 1]],
        "lap": [[0, 1, 0], [1, -4, 1], [0, 1, 0]],
    }
    banks = {
        "grad8": ("delta", "dx", "dy", "dd", "da", "dxx", "dyy", "dxy"),
        "derivatives": ("delta", "dx", "dy", "lap"),
    }
    if name not in banks:
        raise InvalidArgumentError(f"unknown built-in filter bank {name!r}")
    kernels = tuple(np.array(k[n], dtype=float) for n in banks[name])
    return FilterBank(kernels, nonlinearity=nonlinearity, padding=padding)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _chw(x):
    return np.moveaxis(np.asarray(x.data if isinstance(x, Image) else x), -1, 0)


def _check_input(spec, shape):
    if isinstance(spec, ConvNet) and shape[2] != spec.net.in_channels:
        raise InvalidArgumentError(
            f"network expects {spec.net.in_channels} channels, image has {shape[2]}"
        )


def feature_count(spec, shape):
    """Number of statistics ``p`` for an input of the given ``(H, W, C)`` shape."""
    h, w, c = shape
    _check_input(spec, shape)
    if isinstance(spec, FirstOrder):
        return len(spec.transforms) * (c if spec.per_channel else 1)
    if isinstance(spec, FilterBank):
        return len(spec.kernels) * c
    if isinstance(spec, ConvNet):
        if spec.aggregation == "layer":
            return len(spec.layers)
        return sum(spec.net.layers[j - 1].out_channels for j in spec.layers)
    raise InvalidArgumentError(f"unsupported feature spec {type(spec).__name__}")


def _forward_net(spec, x):
    """Pre-activations and activations up to the deepest selected layer."""
    net = spec.net
    a = x
    if net.input_offset is not None:
        a = a - np.asarray(net.input_offset)[:, None, None]
    pre, acts = [], []
    for layer in net.layers[: max(spec.layers)]:
        z = _correlate(a, layer.weight, layer.stride, layer.padding) + layer.bias[:, None, None]
        a = get_nonlinearity(layer.phi).fn(z)
        pre.append(z)
        acts.append(a)
    return pre, acts


def _channel_means(a):
    # same pairwise summation as ndarray.mean, with less call overhead
    flat = a.reshape(a.shape[0], -1)
    return np.add.reduce(flat, axis=1) / flat.shape[1]


def _global_mean(a):
    return np.add.reduce(a.reshape(-1)) / a.size


def _features(spec, x):
    """Raw statistics of a ``(C, H, W)`` array; may contain non-finite values."""
    if isinstance(spec, FirstOrder):
        flat = x.reshape(x.shape[0], -1) if spec.per_channel else x.reshape(1, -1)
        vals = [np.add.reduce(get_nonlinearity(t).fn(flat), axis=1) for t in spec.transforms]
        return np.concatenate(vals) / flat.shape[1]
    if isinstance(spec, FilterBank):
        phi = get_nonlinearity(spec.nonlinearity)
        return np.concatenate([_channel_means(phi.fn(_filter(x, k, spec.padding))) for k in spec.kernels])
    if isinstance(spec, ConvNet):
        _, acts = _forward_net(spec, x)
        vals = []
        for j in spec.layers:
            a = acts[j - 1]
            if spec.aggregation == "layer":
                vals.append(np.atleast_1d(_global_mean(a)))
            else:
                vals.append(_channel_means(a))
        return np.concatenate(vals)
    raise InvalidArgumentError(f"unsupported feature spec {type(spec).__name__}")


def _weighted_gradient(spec, x, theta):
    """``grad_x <theta, f(x)>`` for a ``(C, H, W)`` array, in the same layout."""
    c, h, w = x.shape
    hw = h * w
    if isinstance(spec, FirstOrder):
        g = np.zeros_like(x)
        k = 0
        for t in spec.transforms:
            n = c if spec.per_channel else 1
            wts = theta[k : k + n]
            k += n
            if not wts.any():
                continue
            d = get_nonlinearity(t).deriv(x)
            if spec.per_channel:
                g += wts[:, None, None] / hw * d
            else:
                g += wts[0] / x.size * d
        return g
    if isinstance(spec, FilterBank):
        phi = get_nonlinearity(spec.nonlinearity)
        g = np.zeros_like(x)
        for i, ker in enumerate(spec.kernels):
            wts = theta[i * c : (i + 1) * c, None, None] / hw
            if not np.any(wts):
                continue
            y = _filter(x, ker, spec.padding)
            g += _filter_adjoint(wts * phi.deriv(y), ker, spec.padding)
        return g
    if isinstance(spec, ConvNet):
        return _net_gradient(spec, x, theta)
    raise InvalidArgumentError(f"unsupported feature spec {type(spec).__name__}")


def _net_gradient(spec, x, theta):
    net = spec.net
    pre, acts = _forward_net(spec, x)
    # seed gradients w.r.t. each layer's activation
    seeds = [None] * len(acts)
    k = 0
    for j in spec.layers:
        a = acts[j - 1]
        if spec.aggregation == "layer":
            s = np.full_like(a, theta[k] / a.size)
            k += 1
        else:
            n = a.shape[0]
            s = np.broadcast_to(theta[k : k + n, None, None] / (a.shape[1] * a.shape[2]), a.shape)
            k += n
        seeds[j - 1] = s if seeds[j - 1] is None else seeds[j - 1] + s
    g_act = None
    for j in range(len(acts) - 1, -1, -1):
        if seeds[j] is not None:
            g_act = seeds[j] if g_act is None else g_act + seeds[j]
        if g_act is None:
            continue
        layer = net.layers[j]
        g_pre = g_act * get_nonlinearity(layer.phi).deriv(pre[j])
        in_hw = acts[j - 1].shape[1:] if j > 0 else x.shape[1:]
        g_act = _correlate_adjoint(g_pre, layer.weight, layer.stride, layer.padding, in_hw)
    return g_act if g_act is not None else np.zeros_like(x)


def eval_features(spec, x):
    """Statistics ``f(x)`` as a read-only float64 vector of length ``p``."""
    _check_input(spec, x.shape)
    with np.errstate(over="ignore", invalid="ignore"):
        f = _features(spec, _chw(x))
    if not np.all(np.isfinite(f)):
        raise NumericOverflowError("feature statistics are not finite")
    f.flags.writeable = False
    return f


def eval_weighted_gradient(spec, x, theta):
    """Gradient of ``x -> <theta, f(x)>`` computed by the adjoint pass."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    p = feature_count(spec, x.shape)
    if theta.shape != (p,):
        raise InvalidArgumentError(f"theta must have length {p}, got {theta.shape[0]}")
    if not np.all(np.isfinite(theta)):
        raise InvalidArgumentError("theta contains non-finite values")
    g = _weighted_gradient(spec, _chw(x), theta)
    return Image(np.moveaxis(g, 0, -1), copy=True)


def jacobian_rank(spec, x0, tol=1e-8):
    """Numerical rank of the ``p x d`` Jacobian of ``f`` at ``x0``.

    Returns
    -------
    rank : int
        Number of singular values above ``tol`` times the largest one.
    full_row_rank : bool
        Whether ``rank == p``.
    """
    p = feature_count(spec, x0.shape)
    d = x0.size
    if p > d:
        raise InvalidArgumentError(f"rank condition needs p <= d, got p={p}, d={d}")
    jac = np.empty((p, d))
    for i in range(p):
        e = np.zeros(p)
        e[i] = 1.0
        jac[i] = eval_weighted_gradient(spec, x0, e).flat()
    sv = np.linalg.svd(jac, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(sv > tol * sv[0]))
    return rank, rank == p


def nonlinearities_of(spec):
    """All :class:`Nonlinearity` objects a spec applies."""
    if isinstance(spec, FirstOrder):
        return [get_nonlinearity(t) for t in spec.transforms]
    if isinstance(spec, FilterBank):
        return [get_nonlinearity(spec.nonlinearity)]
    if isinstance(spec, ConvNet):
        used = spec.net.layers[: max(spec.layers)]
        return [get_nonlinearity(layer.phi) for layer in used]
    raise InvalidArgumentError(f"unsupported feature spec {type(spec).__name__}")
