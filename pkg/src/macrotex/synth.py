"""Texture pipeline: Gaussian-field initialisation, the microcanonical
gradient-descent baseline, macrocanonical SOUL synthesis and histogram
matching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Image, RandomStream, white_noise_image
from .errors import InvalidArgumentError, MacrotexError
from .features import _chw, _features, _weighted_gradient, feature_count
from .gibbs import GibbsModel, check_maxent_conditions
from .images import read_image, write_image, write_pfm
from .sampler import StepSchedule
from .soul import Ball, SoulConfig, run_soul

__all__ = [
    "gaussian_field_init",
    "adsn_texton",
    "microcanonical_descent",
    "DescentResult",
    "histogram_match",
    "SynthesisJob",
    "SynthesisResult",
    "StageError",
    "synthesize",
]


class StageError(MacrotexError):
    """A pipeline stage failed; ``partial`` holds the artifacts built so far."""

    def __init__(self, stage, cause, partial=None):
        self.stage = stage
        self.partial = partial or {}
        super().__init__(f"stage {stage!r} failed: {cause}")


def adsn_texton(exemplar, out_shape):
    """Per-channel mean ``m`` and normalised texton ``t`` of shape ``out_shape``.

    ``t = (zero_pad(x0) - m 1_support) / sqrt(H0 W0)``.
    """
    h, w = (int(s) for s in out_shape[:2])
    if h < exemplar.height or w < exemplar.width:
        raise InvalidArgumentError(
            f"output shape {(h, w)} is smaller than exemplar {(exemplar.height, exemplar.width)}"
        )
    pixels = exemplar.data.reshape(-1, exemplar.channels)
    mean = pixels.mean(axis=0)
    # a summed mean of equal values can be off by an ulp; keep constants exact
    const = np.ptp(pixels, axis=0) == 0
    mean[const] = pixels[0, const]
    texton = np.zeros((h, w, exemplar.channels))
    texton[: exemplar.height, : exemplar.width] = (exemplar.data - mean) / math.sqrt(
        exemplar.height * exemplar.width
    )
    return mean, texton


def gaussian_field_init(exemplar, out_shape, stream=None, noise=None):
    """Stationary Gaussian field with the exemplar's mean and autocovariance.

    The output is ``m + t (*) w`` with circular convolution computed by FFT,
    ``t`` the normalised zero-padded exemplar (:func:`adsn_texton`) and
    ``w`` unit white noise drawn from ``stream`` (or passed as ``noise``).
    """
    mean, texton = adsn_texton(exemplar, out_shape)
    if noise is None:
        if stream is None:
            raise InvalidArgumentError("either stream or noise is required")
        noise = stream.normal(texton.shape)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != texton.shape:
        raise InvalidArgumentError(f"noise shape {noise.shape} != output shape {texton.shape}")
    spec = np.fft.fft2(texton, axes=(0, 1)) * np.fft.fft2(noise, axes=(0, 1))
    field_ = np.fft.ifft2(spec, axes=(0, 1)).real
    return Image(mean + field_, copy=False)


@dataclass
class DescentResult:
    image: Image
    residuals: np.ndarray
    status: str = "ok"


def microcanonical_descent(spec, target, init, steps, eta, backtracking=False):
    """Gradient descent on ``x -> ||f(x) - target||^2`` from ``init``.

    ``residuals[k]`` is ``||f(x_k) - target||`` with ``x_0 = init``. With
    ``backtracking`` the step is halved (at most 50 times) until the
    objective does not increase.
    """
    if int(steps) < 0:
        raise InvalidArgumentError(f"steps must be >= 0, got {steps}")
    if not eta > 0:
        raise InvalidArgumentError(f"eta must be positive, got {eta}")
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (feature_count(spec, init.shape),):
        raise InvalidArgumentError("target length does not match the feature count")
    x = _chw(init).copy()
    f = _features(spec, x)
    residuals = [float(np.linalg.norm(f - target))]
    status = "ok"
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(int(steps)):
            grad = _weighted_gradient(spec, x, 2.0 * (f - target))
            step = eta
            for _ in range(51):
                x_new = x - step * grad
                f_new = _features(spec, x_new)
                obj = float(np.sum((f_new - target) ** 2))
                if not backtracking or obj <= residuals[-1] ** 2:
                    break
                step *= 0.5
            if not (np.all(np.isfinite(x_new)) and np.isfinite(obj)):
                status = "diverged"
                break
            x, f = x_new, f_new
            residuals.append(math.sqrt(obj))
    return DescentResult(Image(np.moveaxis(x, 0, -1)), np.array(residuals), status)


def histogram_match(src, reference):
    """Give ``src`` the per-channel value distribution of ``reference``.

    Each source pixel receives the reference quantile at its own rank.
    Ranks come from a stable sort, so ties are broken by raster order. The
    sorted reference is resampled to the source pixel count by linear
    interpolation; with equal sizes it is used as is, and the output's
    value multiset equals the reference's exactly.
    """
    if src.channels != reference.channels:
        raise InvalidArgumentError(
            f"channel mismatch: source has {src.channels}, reference has {reference.channels}"
        )
    n = src.height * src.width
    s = src.data.reshape(n, src.channels)
    r = reference.data.reshape(-1, reference.channels)
    out = np.empty_like(s)
    for c in range(src.channels):
        ref_sorted = np.sort(r[:, c], kind="stable")
        if ref_sorted.size != n:
            pos = np.linspace(0.0, ref_sorted.size - 1, n)
            ref_sorted = np.interp(pos, np.arange(ref_sorted.size), ref_sorted)
        order = np.argsort(s[:, c], kind="stable")
        out[order, c] = ref_sorted
    return Image(out.reshape(src.shape), copy=False)


@dataclass(frozen=True, eq=False)
class SynthesisJob:
    """Everything needed to run one macrocanonical synthesis.

    ``exemplar`` may be an :class:`Image` or a path. ``out_shape`` defaults
    to the exemplar's spatial size. ``init`` is ``"gaussian_field"`` or
    ``"white_noise"``.
    """

    exemplar: object
    spec: object
    schedule: StepSchedule
    iterations: int
    epsilon: float = 0.0
    out_shape: Optional[tuple] = None
    init: str = "gaussian_field"
    histogram_match: bool = True
    seed: int = 0
    domain: Optional[Ball] = None
    theta0: Optional[np.ndarray] = None
    averaging: str = "last"
    chains: int = 1


@dataclass
class SynthesisResult:
    image: Image
    trace: object
    report: object
    init: Image
    status: str
    theta_hat: np.ndarray
    raw_image: Image = None
    files: dict = field(default_factory=dict)


def _init_image(job, exemplar, out_shape, stream):
    if job.init == "gaussian_field":
        return gaussian_field_init(exemplar, out_shape, stream)
    if job.init == "white_noise":
        data = exemplar.data
        return white_noise_image(out_shape, float(data.mean()), float(data.std()), stream)
    raise InvalidArgumentError(f"unknown init {job.init!r}")


def synthesize(job, run_dir=None):
    """Run the whole pipeline and, if ``run_dir`` is given, write its outputs.

    Stages: load exemplar, exemplar statistics, condition report,
    initialisation, SOUL, optional histogram matching, export. A failing
    stage raises :class:`StageError`; divergence of SOUL is reported through
    ``status == "diverged"`` and the last finite image is kept.
    """
    partial = {}

    def stage(name, fn):
        try:
            return fn()
        except (MacrotexError, OSError, ArithmeticError, ValueError) as exc:
            if isinstance(exc, StageError):
                raise
            raise StageError(name, exc, partial) from exc

    exemplar = stage("load", lambda: job.exemplar if isinstance(job.exemplar, Image) else read_image(job.exemplar))
    partial["exemplar"] = exemplar
    out_hw = tuple(job.out_shape[:2]) if job.out_shape is not None else (exemplar.height, exemplar.width)
    out_shape = out_hw + (exemplar.channels,)
    model = stage("features", lambda: GibbsModel.from_exemplar(job.spec, exemplar, job.epsilon, shape=out_shape))
    report = stage("check", lambda: check_maxent_conditions(model, exemplar))
    partial["report"] = report
    init_stream, soul_stream = RandomStream(job.seed).spawn(2)
    init = stage("init", lambda: _init_image(job, exemplar, out_shape, init_stream))
    partial["init"] = init
    config = SoulConfig(
        schedule=job.schedule,
        iterations=job.iterations,
        domain=job.domain,
        theta0=job.theta0,
        init=init,
        averaging=job.averaging,
        chains=job.chains,
    )
    result = stage("soul", lambda: run_soul(config, model, soul_stream))
    partial["trace"] = result.trace
    raw = result.image
    image = raw
    if job.histogram_match and result.status == "ok":
        image = stage("histogram", lambda: histogram_match(raw, exemplar))
    out = SynthesisResult(image, result.trace, report, init, result.status, result.theta_hat, raw)
    if run_dir is not None:
        stage("export", lambda: _export(out, Path(run_dir)))
    return out


def _export(result, run_dir):
    run_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    if result.image.channels in (1, 3):
        write_image(run_dir / "output.png", result.image)
        write_image(run_dir / "init.png", result.init)
        files.update(output=run_dir / "output.png", init=run_dir / "init.png")
        # a diverged state may not fit in 32-bit floats; output.npy keeps it
        if np.max(np.abs(result.image.data)) <= np.finfo(np.float32).max:
            write_pfm(run_dir / "output.pfm", result.image)
            files["output_pfm"] = run_dir / "output.pfm"
    np.save(run_dir / "output.npy", result.image.data)
    result.trace.to_csv(run_dir / "trace.csv")
    text = f"status: {result.status}\n" + result.report.to_text()
    (run_dir / "report.txt").write_text(text, encoding="utf-8")
    files.update(trace=run_dir / "trace.csv", report=run_dir / "report.txt", output_npy=run_dir / "output.npy")
    result.files = files
