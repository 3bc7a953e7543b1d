"""Shared builders and numerical oracles for the test suite."""

import numpy as np

from macrotex.core import Image
from macrotex.features import (
    ConvLayer,
    ConvNet,
    ConvNetSpec,
    FilterBank,
    FirstOrder,
    builtin_filter_bank,
    eval_features,
    feature_count,
)


def random_image(rng, h, w, c=1, scale=1.0):
    return Image(scale * rng.standard_normal((h, w, c)))


def random_convnet(rng, channels=(1, 3, 2), kernel=3, strides=None, padding="periodic", phi="softplus"):
    strides = strides or (1,) * (len(channels) - 1)
    layers = []
    for (cin, cout), s in zip(zip(channels[:-1], channels[1:]), strides):
        w = rng.standard_normal((cout, cin, kernel, kernel)) / (kernel * np.sqrt(cin))
        b = 0.1 * rng.standard_normal(cout)
        layers.append(ConvLayer(w, b, stride=s, padding=padding, phi=phi))
    net = ConvNetSpec(tuple(layers))
    return ConvNet(net, tuple(range(1, net.depth + 1)))


def fd_gradient(fn, x, h=1e-4):
    """Central finite differences of a scalar function of an Image."""
    base = np.array(x.data)
    grad = np.empty_like(base)
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        up, dn = base.copy(), base.copy()
        up[idx] += h
        dn[idx] -= h
        grad[idx] = (fn(Image(up)) - fn(Image(dn))) / (2 * h)
    return grad


def weighted_objective(spec, theta):
    return lambda x: float(np.dot(theta, eval_features(spec, x)))


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def gradient_instances():
    """At least 20 random (spec, x, theta) triples across every spec variant."""
    out = []
    for seed in range(24):
        rng = np.random.default_rng(1000 + seed)
        kind = seed % 6
        if kind == 0:
            spec = FirstOrder(("identity", "softplus", "tanh", "softabs", "square"), per_channel=bool(seed % 2))
            x = random_image(rng, 4, 5, 1 + seed % 3)
        elif kind == 1:
            ks = tuple(rng.standard_normal((rng.integers(1, 4), rng.integers(1, 4))) for _ in range(3))
            spec = FilterBank(ks, nonlinearity="softplus", padding="periodic")
            x = random_image(rng, 6, 5, 1 + seed % 2)
        elif kind == 2:
            spec = builtin_filter_bank("grad8", nonlinearity="tanh", padding="zero")
            x = random_image(rng, 5, 6)
        elif kind == 3:
            spec = random_convnet(rng, channels=(1, 4, 3))
            x = random_image(rng, 8, 8)
        elif kind == 4:
            spec = random_convnet(rng, channels=(3, 4, 2), strides=(2, 1), padding="zero", phi="tanh")
            x = random_image(rng, 8, 7, 3)
        else:
            net = random_convnet(rng, channels=(1, 3, 3, 2), strides=(1, 2, 1), phi="softabs").net
            spec = ConvNet(net, (1, 3), aggregation="layer" if seed % 2 else "channel")
            x = random_image(rng, 8, 8)
        theta = rng.standard_normal(feature_count(spec, x.shape))
        out.append((spec, x, theta))
    return out
