"""Gibbs measures ``d Pi_theta / d lambda  ~  exp(-<theta, f(x) - f(x0)>) J(x)``.

The reference density is ``J(x) = exp(-epsilon ||x||^2)``; ``epsilon = 0``
gives ``J = 1``. The normalising constant is never computed here: in image
dimension only the potential and its gradient are needed (see
:mod:`macrotex.oracle` for low-dimensional partition functions).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import Image
from .errors import InvalidArgumentError, NumericOverflowError
from .features import (
    _chw,
    _features,
    _weighted_gradient,
    eval_features,
    feature_count,
    jacobian_rank,
    nonlinearities_of,
)

__all__ = ["GibbsModel", "potential", "potential_gradient", "MaxEntReport", "check_maxent_conditions"]


@dataclass(frozen=True, eq=False)
class GibbsModel:
    """Feature spec, exemplar statistics, parameters and reference strength."""

    spec: object
    target: np.ndarray
    theta: np.ndarray
    epsilon: float
    shape: tuple

    def __post_init__(self):
        target = np.array(self.target, dtype=np.float64).reshape(-1)
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        shape = tuple(int(s) for s in self.shape)
        p = feature_count(self.spec, shape)
        if target.shape != (p,) or theta.shape != (p,):
            raise InvalidArgumentError(
                f"theta and target must have length p={p}, got {theta.shape[0]} and {target.shape[0]}"
            )
        if not self.epsilon >= 0:
            raise InvalidArgumentError(f"epsilon must be nonnegative, got {self.epsilon}")
        target.flags.writeable = False
        theta.flags.writeable = False
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @classmethod
    def from_exemplar(cls, spec, exemplar, epsilon, theta=None, shape=None):
        """Model whose target is ``f(exemplar)``; ``shape`` defaults to the exemplar's."""
        target = eval_features(spec, exemplar)
        shape = tuple(shape) if shape is not None else exemplar.shape
        if theta is None:
            theta = np.zeros_like(target)
        return cls(spec, target, theta, epsilon, shape)

    @property
    def p(self):
        return self.target.shape[0]

    def with_theta(self, theta):
        return replace(self, theta=theta)


def _check_shape(model, x):
    if x.shape != model.shape:
        raise InvalidArgumentError(f"image shape {x.shape} does not match model shape {model.shape}")


def _potential_array(model, x_chw):
    f = _features(model.spec, x_chw)
    u = float(np.dot(model.theta, f - model.target))
    if model.epsilon:
        u += model.epsilon * float(np.sum(x_chw * x_chw))
    return u


def _drift(model):
    """``x -> grad U(x)`` on ``(C, H, W)`` arrays, with per-model work hoisted."""
    c = 2.0 * model.epsilon
    if not model.theta.any():
        return lambda x: c * x
    spec, theta = model.spec, model.theta
    if not c:
        return lambda x: _weighted_gradient(spec, x, theta)
    return lambda x: _weighted_gradient(spec, x, theta) + c * x


def _gradient_array(model, x_chw):
    if not model.theta.any():
        return 2.0 * model.epsilon * x_chw
    g = _weighted_gradient(model.spec, x_chw, model.theta)
    if model.epsilon:
        g = g + 2.0 * model.epsilon * x_chw
    return g


def potential(model, x):
    """``U(x) = <theta, f(x) - f(x0)> + epsilon ||x||^2``."""
    _check_shape(model, x)
    with np.errstate(over="ignore", invalid="ignore"):
        u = _potential_array(model, _chw(x))
    if not np.isfinite(u):
        raise NumericOverflowError("potential is not finite: the model has diverged")
    return u


def potential_gradient(model, x):
    """Drift of the Langevin dynamics: ``sum_i theta_i grad f_i(x) + 2 epsilon x``."""
    _check_shape(model, x)
    with np.errstate(over="ignore", invalid="ignore"):
        g = _gradient_array(model, _chw(x))
    if not np.all(np.isfinite(g)):
        raise NumericOverflowError("potential gradient is not finite: the model has diverged")
    return Image(np.moveaxis(g, 0, -1))


@dataclass
class MaxEntReport:
    """Outcome of :func:`check_maxent_conditions`.

    ``integrability`` and ``rank`` are each ``"PASS"``, ``"WARN"`` or
    ``"FAIL"``; ``verdict`` is the worse of the two.
    """

    integrability: str
    rank: str
    jacobian_rank: int
    p: int
    verdict: str
    messages: list = field(default_factory=list)

    def to_text(self):
        lines = [
            f"verdict: {self.verdict}",
            f"integrability: {self.integrability}",
            f"rank: {self.rank} (jacobian rank {self.jacobian_rank} of p={self.p})",
        ]
        lines += [f"note: {m}" for m in self.messages]
        return "\n".join(lines) + "\n"


_SEVERITY = {"PASS": 0, "WARN": 1, "FAIL": 2}


def check_maxent_conditions(model, x0, tol=1e-8):
    """Check the hypotheses under which the Gibbs form maximises entropy.

    Integrability is certified when ``epsilon > 0`` and every nonlinearity of
    the spec is registered as sub-linear. ``epsilon = 0`` only warns: runs
    are possible but may diverge. The rank condition requires the Jacobian
    of ``f`` at the exemplar to have full row rank ``p``.
    """
    messages = []
    phis = nonlinearities_of(model.spec)
    not_sublinear = sorted({phi.name for phi in phis if not phi.sublinear})
    not_smooth = sorted({phi.name for phi in phis if not phi.smooth})
    if model.epsilon == 0:
        integrability = "WARN"
        messages.append(
            "epsilon = 0 (J = 1): integrability is not guaranteed and the algorithm may diverge for some images"
        )
    elif not_sublinear:
        integrability = "FAIL"
        messages.append(f"nonlinearities {not_sublinear} are not sub-linear; integrability not certified")
    else:
        integrability = "PASS"
    if not_smooth:
        messages.append(f"nonlinearities {not_smooth} are not C^1; f is not continuously differentiable")
        if integrability == "PASS":
            integrability = "WARN"

    p = model.p
    if p > x0.size:
        rank, full, rank_status = 0, False, "FAIL"
        messages.append(f"p={p} exceeds d={x0.size}: rank condition cannot hold")
    else:
        rank, full = jacobian_rank(model.spec, x0, tol=tol)
        rank_status = "PASS" if full else "FAIL"
        if not full:
            messages.append(f"Jacobian of f at the exemplar has rank {rank} < p={p}")
    verdict = max((integrability, rank_status), key=_SEVERITY.__getitem__)
    return MaxEntReport(integrability, rank_status, rank, p, verdict, messages)
