"""Command-line interface.

    macrotex synth <config>      macrocanonical synthesis by SOUL
    macrotex baseline <config>   microcanonical gradient-descent baseline
    macrotex check <config>      maximum-entropy condition report only
    macrotex oracle [--tol X]    exponential-family identity battery

Exit codes: 0 success, 1 other error, 2 config error, 3 diverged,
4 failed check or oracle identity.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import build_domain, build_schedule, build_spec, emit_config, parse_config
from .core import RandomStream, white_noise_image
from .errors import ConfigError, MacrotexError
from .features import eval_features
from .gibbs import GibbsModel, check_maxent_conditions
from .images import read_image, write_image
from .oracle import identity_battery
from .soul import theta_update
from .synth import StageError, SynthesisJob, microcanonical_descent, synthesize

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_FAILED = 4

RUN_ROOT_ENV = "MACROTEX_RUN_ROOT"


def run_dir_for(cfg, config_path, override=None):
    """Run directory: explicit flag, then the config's ``run_dir``, then a
    name derived from command, config file and seed under the run root."""
    if override is not None:
        return Path(override)
    if cfg.run_dir:
        return Path(cfg.run_dir)
    root = Path(os.environ.get(RUN_ROOT_ENV, "runs"))
    return root / f"{cfg.command}-{Path(config_path).stem}-seed{cfg.seed}"


def _out_shape(cfg, exemplar):
    h = cfg.output_height or exemplar.height
    w = cfg.output_width or exemplar.width
    return (h, w, exemplar.channels)


def _weight_stream(cfg):
    return RandomStream(cfg.seed).spawn(3)[2]


def _load_exemplar(cfg):
    if cfg.exemplar is None:
        raise ConfigError("exemplar", "an exemplar image is required")
    return read_image(cfg.exemplar)


def _write_resolved(cfg, run_dir):
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "job.resolved").write_text(emit_config(cfg), encoding="utf-8")


def run_synth(cfg, run_dir):
    exemplar = _load_exemplar(cfg)
    spec = build_spec(cfg, _weight_stream(cfg))
    job = SynthesisJob(
        exemplar=exemplar,
        spec=spec,
        schedule=build_schedule(cfg),
        iterations=cfg.iterations,
        epsilon=cfg.epsilon,
        out_shape=_out_shape(cfg, exemplar),
        init=cfg.init,
        histogram_match=cfg.histogram_match,
        seed=cfg.seed,
        domain=build_domain(cfg),
        theta0=np.array(cfg.theta0) if cfg.theta0 else None,
        averaging=cfg.averaging,
        chains=cfg.chains,
    )
    _write_resolved(cfg, run_dir)
    result = synthesize(job, run_dir)
    print(f"status: {result.status}")
    print(f"iterations: {len(result.trace)}")
    if len(result.trace):
        print(f"final residual: {result.trace[-1].residual_norm:.6g}")
    print(f"run directory: {run_dir}")
    return EXIT_DIVERGED if result.status == "diverged" else EXIT_OK


def run_baseline(cfg, run_dir):
    exemplar = _load_exemplar(cfg)
    spec = build_spec(cfg, _weight_stream(cfg))
    target = eval_features(spec, exemplar)
    stream = RandomStream(cfg.seed).spawn(2)[0]
    data = exemplar.data
    init = white_noise_image(_out_shape(cfg, exemplar), float(data.mean()), float(data.std()), stream)
    result = microcanonical_descent(spec, target, init, cfg.steps, cfg.eta, cfg.backtracking)
    _write_resolved(cfg, run_dir)
    if result.image.channels in (1, 3):
        write_image(run_dir / "output.png", result.image)
    np.save(run_dir / "output.npy", result.image.data)
    with open(run_dir / "residuals.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "residual_norm"])
        for k, r in enumerate(result.residuals):
            writer.writerow([k, repr(float(r))])
    print(f"status: {result.status}")
    print(f"residual: {result.residuals[0]:.6g} -> {result.residuals[-1]:.6g}")
    print(f"run directory: {run_dir}")
    return EXIT_DIVERGED if result.status == "diverged" else EXIT_OK


def run_check(cfg, run_dir=None):
    exemplar = _load_exemplar(cfg)
    spec = build_spec(cfg, _weight_stream(cfg))
    model = GibbsModel.from_exemplar(spec, exemplar, cfg.epsilon, shape=_out_shape(cfg, exemplar))
    report = check_maxent_conditions(model, exemplar)
    print(report.to_text())
    return EXIT_FAILED if report.verdict == "FAIL" else EXIT_OK


def cmd_oracle(tol=None, update=theta_update, out=None):
    """Run the identity battery, print one line per identity.

    Returns 0 when every identity passes, otherwise 4 after naming the
    first failure.
    """
    out = out or sys.stdout
    results = identity_battery(tol=tol, update=update)
    first = None
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}", file=out)
        if not ok and first is None:
            first = name
    if first is not None:
        print(f"first failing identity: {first}", file=out)
        return EXIT_FAILED
    print("all identities hold", file=out)
    return EXIT_OK


_RUNNERS = {"synth": run_synth, "baseline": run_baseline, "check": run_check}


def _run_one(command, cfg, config_path, run_dir_flag):
    run_dir = run_dir_for(cfg, config_path, run_dir_flag)
    try:
        return _RUNNERS[command](cfg, run_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        if isinstance(exc.__cause__, ConfigError):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (MacrotexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def _severity(code):
    # diverged and failed runs outrank a generic error when combining replicates
    return {EXIT_OK: 0, EXIT_ERROR: 1, EXIT_CONFIG: 2, EXIT_FAILED: 3, EXIT_DIVERGED: 4}[code]


def build_parser():
    parser = argparse.ArgumentParser(prog="macrotex", description="Macrocanonical texture models.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("synth", "fit a macrocanonical model by SOUL and sample it"),
        ("baseline", "microcanonical gradient-descent baseline"),
        ("check", "print the maximum-entropy condition report"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override a config value (repeatable)")
        p.add_argument("--run-dir", help="output directory (single replicate only)")
        if name != "check":
            p.add_argument("--replicates", type=int, default=1,
                           help="run seeds seed, seed+1, ... in separate run directories")
            p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p = sub.add_parser("oracle", help="check the exponential-family identities")
    p.add_argument("--tol", type=float, default=None, help="replace every identity tolerance")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "oracle":
        return cmd_oracle(args.tol)
    try:
        cfg = parse_config(args.config, args.overrides, require_schedule=args.command == "synth")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = replace(cfg, command=args.command)
    replicates = getattr(args, "replicates", 1)
    if replicates < 1:
        print("config error: --replicates must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if replicates == 1:
        return _run_one(args.command, cfg, args.config, args.run_dir)
    if args.run_dir is not None:
        print("config error: --run-dir needs a single replicate", file=sys.stderr)
        return EXIT_CONFIG
    cfgs = [replace(cfg, seed=cfg.seed + k, run_dir=None) for k in range(replicates)]
    if cfg.run_dir:
        cfgs = [replace(c, run_dir=str(Path(cfg.run_dir) / f"seed{c.seed}")) for c in cfgs]
    jobs = max(1, int(args.jobs))
    if jobs == 1:
        codes = [_run_one(args.command, c, args.config, None) for c in cfgs]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            codes = list(pool.map(_run_one, [args.command] * len(cfgs), cfgs,
                                  [args.config] * len(cfgs), [None] * len(cfgs)))
    return max(codes, key=_severity)


if __name__ == "__main__":
    sys.exit(main())
