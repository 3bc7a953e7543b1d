"""Unadjusted Langevin kernel and step-size schedules.

One ULA step for the potential ``U`` of a :class:`~macrotex.gibbs.GibbsModel`
reads ``x' = x - gamma * grad U(x) + sqrt(2 gamma) z`` with ``z`` standard
normal. There is no Metropolis correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Image
from .errors import InvalidArgumentError, StateError
from .features import _chw, _features
from .gibbs import _drift

__all__ = ["Rate", "constant", "power", "StepSchedule", "ChainState", "ula_step", "run_chain"]


@dataclass(frozen=True)
class Rate:
    """The sequence ``n -> c * n**(-alpha)`` for ``n >= 1``; ``alpha = 0`` is constant."""

    c: float
    alpha: float = 0.0

    def __call__(self, n):
        if n < 1:
            raise InvalidArgumentError(f"sequences are indexed from 1, got n={n}")
        if self.alpha == 0.0:
            return float(self.c)
        return float(self.c) * float(n) ** (-float(self.alpha))

    @property
    def family(self):
        return "constant" if self.alpha == 0.0 else "power"


def constant(c):
    return Rate(float(c), 0.0)


def power(c, alpha):
    return Rate(float(c), float(alpha))


@dataclass(frozen=True)
class StepSchedule:
    """Dual steps ``delta_n``, Langevin steps ``gamma_n`` and inner counts ``m_n``.

    ``m_n`` is the ceiling of its rate, never less than 1.
    """

    delta: Rate
    gamma: Rate
    m: Rate = Rate(1.0, 0.0)

    def __post_init__(self):
        if self.delta.c < 0 or self.delta.alpha < 0:
            raise InvalidArgumentError("delta_n must be nonnegative and non-increasing")
        if self.gamma.c <= 0 or self.gamma.alpha < 0:
            raise InvalidArgumentError("gamma_n must be positive and non-increasing")
        if self.m.c <= 0:
            raise InvalidArgumentError("m_n must be positive")

    def delta_at(self, n):
        return self.delta(n)

    def gamma_at(self, n):
        return self.gamma(n)

    def m_at(self, n):
        return max(1, int(math.ceil(self.m(n) - 1e-12)))

    @classmethod
    def standard(cls, delta0, gamma0):
        """``delta_n = delta0 / n``, ``gamma_n = gamma0 / n``, ``m_n = 1``."""
        return cls(power(delta0, 1.0), power(gamma0, 1.0), constant(1))


@dataclass
class ChainState:
    """Current Langevin state plus the running sum of ``f`` over counted states.

    ``x`` always holds the last finite state: a step that would produce a
    non-finite value sets ``diverged`` and leaves ``x`` untouched.
    """

    x: Image
    steps: int = 0
    feature_sum: np.ndarray = None
    count: int = 0
    diverged: bool = False

    def reset_sum(self):
        self.feature_sum = None
        self.count = 0

    def average(self):
        if self.count == 0:
            return None
        return self.feature_sum / self.count


_NOISE_BLOCK = 256
_add = np.add.reduce


def _advance(model, x, steps, gamma, stream, fsum, count):
    """Run up to ``steps`` ULA steps on a ``(C, H, W)`` array.

    Noise is drawn in blocks of up to ``_NOISE_BLOCK`` steps; a block
    consumes the stream exactly as per-step draws would, except that a
    diverging chain may leave unused draws behind.

    Returns ``(x, completed, fsum, count, diverged)``.
    """
    scale = math.sqrt(2.0 * gamma)
    h, w, c = model.shape
    drift = _drift(model)
    spec = model.spec
    completed = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while completed < steps:
            k = min(_NOISE_BLOCK, steps - completed)
            # (k, H, W, C) in stream order, viewed as k arrays of shape (C, H, W)
            noise = stream.normal((k, h, w, c)).transpose(0, 3, 1, 2)
            for z in noise:
                x_new = x - gamma * drift(x)
                x_new += scale * z
                # a sum is finite only if every term is (or it overflowed, also divergence)
                if not math.isfinite(_add(x_new, axis=None)):
                    return x, completed, fsum, count, True
                f = _features(spec, x_new)
                if not math.isfinite(_add(f)):
                    return x, completed, fsum, count, True
                x = x_new
                fsum = f.copy() if fsum is None else fsum + f
                count += 1
                completed += 1
    return x, completed, fsum, count, False


def _check(model, state, gamma):
    if state.diverged:
        raise StateError("chain has diverged; start a new chain")
    if not gamma > 0:
        raise InvalidArgumentError(f"gamma must be positive, got {gamma}")
    if state.x.shape != model.shape:
        raise InvalidArgumentError(f"state shape {state.x.shape} does not match model shape {model.shape}")


def ula_step(model, state, gamma, stream):
    """One Langevin step; returns a new :class:`ChainState`."""
    _check(model, state, gamma)
    x, done, fsum, count, diverged = _advance(
        model, _chw(state.x), 1, gamma, stream, state.feature_sum, state.count
    )
    return ChainState(
        x=Image(np.moveaxis(x, 0, -1)) if done else state.x,
        steps=state.steps + done,
        feature_sum=fsum,
        count=count,
        diverged=diverged,
    )


def run_chain(model, state, steps, gamma, stream):
    """``steps`` Langevin steps at fixed ``gamma``.

    Returns the final state and the average of ``f`` over the states visited
    by this call (the starting state excluded). On divergence the chain
    stops early; the average then covers the completed steps only and is
    ``None`` if no step completed.
    """
    if int(steps) < 1:
        raise InvalidArgumentError(f"steps must be >= 1, got {steps}")
    _check(model, state, gamma)
    x, done, fsum, count, diverged = _advance(model, _chw(state.x), int(steps), gamma, stream, None, 0)
    new = ChainState(
        x=Image(np.moveaxis(x, 0, -1)) if done else state.x,
        steps=state.steps + done,
        feature_sum=fsum,
        count=count,
        diverged=diverged,
    )
    return new, new.average()
