"""SOUL: alternate Langevin sampling with projected dual steps on theta.

For outer iterations ``n = 1..N`` the chain is warm-started from its last
state, advanced ``m_n`` ULA steps at step ``gamma_n`` under the current
parameters, and the average of ``f`` over the ``m_n`` new states drives

    theta <- P_Theta[theta + delta_n * (avg f - f(x0))].

The starting state of an outer iteration is not part of its average.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import Image
from .errors import InvalidArgumentError, NumericOverflowError
from .sampler import ChainState, StepSchedule, run_chain

__all__ = [
    "Ball",
    "project_theta",
    "theta_update",
    "SoulConfig",
    "TraceRecord",
    "SoulTrace",
    "SoulResult",
    "run_soul",
]


@dataclass(frozen=True)
class Ball:
    """Euclidean ball of radius ``radius`` centred at the origin."""

    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidArgumentError(f"ball radius must be positive, got {self.radius}")


def project_theta(theta, domain=None):
    """Projection onto ``domain``; ``None`` means the unbounded domain."""
    theta = np.array(theta, dtype=np.float64)
    if domain is None:
        return theta
    norm = float(np.linalg.norm(theta))
    if norm <= domain.radius:
        return theta
    return theta * (domain.radius / norm)


def theta_update(theta, delta, batch_avg, target, domain=None):
    """One projected dual step ``P[theta + delta * (batch_avg - target)]``."""
    theta = np.asarray(theta, dtype=np.float64)
    batch_avg = np.asarray(batch_avg, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if not (theta.shape == batch_avg.shape == target.shape):
        raise InvalidArgumentError(
            f"dimension mismatch: theta {theta.shape}, batch {batch_avg.shape}, target {target.shape}"
        )
    if delta < 0:
        raise InvalidArgumentError(f"delta must be nonnegative, got {delta}")
    with np.errstate(over="ignore", invalid="ignore"):
        new = project_theta(theta + delta * (batch_avg - target), domain)
    if not (np.all(np.isfinite(new)) and np.all(np.isfinite(batch_avg))):
        raise NumericOverflowError("theta update produced non-finite values")
    return new


@dataclass(frozen=True, eq=False)
class SoulConfig:
    """Settings of one SOUL run.

    ``init`` is the starting image (zeros of the model shape when ``None``).
    ``averaging`` selects the reported estimate: ``"last"`` iterate or
    ``"polyak"`` running mean of the iterates. ``chains > 1`` pools batch
    averages over independent chains, each with its own sub-stream.
    """

    schedule: StepSchedule
    iterations: int
    domain: Optional[Ball] = None
    theta0: Optional[np.ndarray] = None
    init: Optional[Image] = None
    averaging: str = "last"
    chains: int = 1

    def __post_init__(self):
        if int(self.iterations) < 0:
            raise InvalidArgumentError(f"iterations must be >= 0, got {self.iterations}")
        if self.averaging not in ("last", "polyak"):
            raise InvalidArgumentError(f"averaging must be 'last' or 'polyak', got {self.averaging!r}")
        if int(self.chains) < 1:
            raise InvalidArgumentError("chains must be >= 1")


@dataclass
class TraceRecord:
    iteration: int
    theta: np.ndarray
    residual: np.ndarray
    residual_norm: float
    gamma: float
    delta: float
    m: int
    diverged: bool
    wall_clock: float


@dataclass
class SoulTrace:
    """One :class:`TraceRecord` per completed outer iteration."""

    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def append(self, record):
        if self.records and record.iteration <= self.records[-1].iteration:
            raise InvalidArgumentError("trace iterations must increase")
        self.records.append(record)

    @property
    def residual_norms(self):
        return np.array([r.residual_norm for r in self.records])

    @property
    def thetas(self):
        return np.array([r.theta for r in self.records])

    def to_csv(self, path=None):
        """CSV text (written to ``path`` when given); theta columns only when p <= 64."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        p = len(self.records[0].theta) if self.records else 0
        header = ["iteration", "theta_norm", "residual_norm", "gamma", "delta", "m", "diverged"]
        with_theta = 0 < p <= 64
        if with_theta:
            header += [f"theta_{i}" for i in range(p)]
        writer.writerow(header)
        for r in self.records:
            row = [
                r.iteration,
                repr(float(np.linalg.norm(r.theta))),
                repr(r.residual_norm),
                repr(r.gamma),
                repr(r.delta),
                r.m,
                int(r.diverged),
            ]
            if with_theta:
                row += [repr(float(t)) for t in r.theta]
            writer.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


@dataclass
class SoulResult:
    theta_hat: np.ndarray
    image: Image
    trace: SoulTrace
    status: str
    theta_last: np.ndarray
    ergodic_mean: Optional[np.ndarray]

    @property
    def diverged(self):
        return self.status == "diverged"


def run_soul(config, model, stream, callback: Optional[Callable] = None, update=theta_update):
    """Fit theta by SOUL.

    Parameters
    ----------
    config : SoulConfig
    model : GibbsModel
        Supplies features, target and reference strength; its ``theta`` is
        ignored in favour of ``config.theta0``.
    stream : RandomStream
    callback : callable, optional
        Called as ``callback(n, start_states, end_states, theta)`` after each
        outer iteration.
    update : callable
        Dual update rule, replaceable for mutation testing.

    Returns
    -------
    SoulResult
        ``status`` is ``"ok"`` or ``"diverged"``; on divergence the trace
        holds every completed iteration and ``image`` is the last finite
        state.
    """
    p = model.p
    theta = np.zeros(p) if config.theta0 is None else np.array(config.theta0, dtype=np.float64).reshape(-1)
    if theta.shape != (p,):
        raise InvalidArgumentError(f"theta0 must have length {p}, got {theta.shape[0]}")
    theta = project_theta(theta, config.domain)
    init = config.init if config.init is not None else Image.zeros(model.shape)
    if init.shape != model.shape:
        raise InvalidArgumentError(f"init shape {init.shape} does not match model shape {model.shape}")

    streams = [stream] if config.chains == 1 else stream.spawn(config.chains)
    states = [ChainState(init) for _ in streams]
    trace = SoulTrace()
    theta_sum = np.zeros(p)
    batch_sum = None
    status = "ok"
    t0 = time.perf_counter()
    sched = config.schedule

    for n in range(1, int(config.iterations) + 1):
        gamma, delta, m = sched.gamma_at(n), sched.delta_at(n), sched.m_at(n)
        current = model.with_theta(theta)
        start = states
        states, avgs = [], []
        diverged = False
        for state, s in zip(start, streams):
            state, avg = run_chain(current, state, m, gamma, s)
            states.append(state)
            if state.diverged:
                diverged = True
                break
            avgs.append(avg)
        if not diverged:
            batch = np.mean(avgs, axis=0)
            try:
                new_theta = update(theta, delta, batch, model.target, config.domain)
            except NumericOverflowError:
                diverged = True
        if diverged:
            states = states + start[len(states):]
            status = "diverged"
            trace.append(TraceRecord(n, theta.copy(), np.full(p, np.nan), float("nan"),
                                     gamma, delta, m, True, time.perf_counter() - t0))
            break
        residual = batch - model.target
        theta = np.asarray(new_theta, dtype=np.float64)
        theta_sum += theta
        batch_sum = batch.copy() if batch_sum is None else batch_sum + batch
        trace.append(TraceRecord(n, theta.copy(), residual, float(np.linalg.norm(residual)),
                                 gamma, delta, m, False, time.perf_counter() - t0))
        if callback is not None:
            callback(n, start, states, theta)

    completed = sum(1 for r in trace if not r.diverged)
    if config.averaging == "polyak" and completed:
        theta_hat = theta_sum / completed
    else:
        theta_hat = theta.copy()
    ergodic = batch_sum / completed if completed else None
    return SoulResult(theta_hat, states[0].x, trace, status, theta.copy(), ergodic)
