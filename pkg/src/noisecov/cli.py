"""Command-line interface: estimate, simulate, rate-check.

Every subcommand writes its outputs plus a ``manifest.json`` sufficient to
re-run the job bit-exactly into ``--out``. Failures produce a
machine-readable error JSON ``{"error": {"kind": ..., "message": ...}}`` on
stdout and a nonzero exit code (2 for I/O problems, 1 otherwise).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .errors import ExperimentError, NoiseCovError, TickDataError
from .estimator import (
    Adaptive,
    EstimatorConfig,
    IndexWindow,
    NoThreshold,
    TimeWindow,
    Universal,
    estimate_and_threshold,
)
from .experiments import (
    load_suite,
    rate_points,
    run_suite,
    synthetic_rate_points,
    validate_rate_suite,
)
from .experiments import _manifest as _suite_manifest
from .metrics import rate_check
from .panel import DEFAULT_TICK_DURATION, load_csv


@dataclass(frozen=True)
class RunConfig:
    """Parsed invocation: subcommand plus everything it needs."""

    subcommand: str
    out: Path
    input: Path | None = None
    spec: Path | None = None
    estimator: EstimatorConfig | None = None
    tick_duration: float = DEFAULT_TICK_DURATION
    seed: int | None = None
    workers: int = 1
    k_value: int | None = None
    slope_min: float = -0.65
    slope_max: float = -0.35
    synthetic_exponent: float | None = None

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError(f"--workers must be >= 1, got {self.workers}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisecov",
        description="Noise covariance estimation for asynchronous tick data.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    est = sub.add_parser("estimate", help="estimate a covariance matrix from tick CSV")
    est.add_argument("--input", required=True, help="tick CSV (tick,asset,value)")
    est.add_argument("--out", required=True, help="output directory")
    est.add_argument("--K", type=int, default=None, help="index window half-width")
    est.add_argument("--xi", type=float, default=None, help="time window half-width")
    est.add_argument(
        "--threshold",
        choices=["universal", "adaptive", "none"],
        default="adaptive",
        help="entry-wise thresholding rule (default: adaptive)",
    )
    est.add_argument("--beta", type=float, default=2.0, help="universal threshold constant")
    est.add_argument(
        "--tick-duration",
        type=float,
        default=DEFAULT_TICK_DURATION,
        help="length of one tick in years",
    )
    est.add_argument(
        "--diagonal-exempt",
        action="store_true",
        help="never zero diagonal entries when thresholding",
    )
    est.add_argument("--seed", type=int, default=None, help="recorded in the manifest")
    est.add_argument("--workers", type=int, default=1)

    sim = sub.add_parser("simulate", help="run a Monte Carlo experiment suite")
    sim.add_argument("--spec", required=True, help="experiment suite JSON")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--seed", type=int, default=None, help="override the suite seed")
    sim.add_argument("--workers", type=int, default=1)

    rate = sub.add_parser(
        "rate-check", help="fit the error-vs-sample-size slope across sync strides"
    )
    rate.add_argument("--spec", required=True, help="experiment suite JSON (sync only)")
    rate.add_argument("--out", required=True, help="output directory")
    rate.add_argument("--seed", type=int, default=None, help="override the suite seed")
    rate.add_argument("--workers", type=int, default=1)
    rate.add_argument("--K", type=int, default=None, help="window to fit (default: first)")
    rate.add_argument("--slope-min", type=float, default=-0.65)
    rate.add_argument("--slope-max", type=float, default=-0.35)
    rate.add_argument(
        "--synthetic-exponent",
        type=float,
        default=None,
        help="skip simulation and inject exact power-law errors with this exponent",
    )
    return parser


def _estimator_config(args) -> EstimatorConfig:
    if (args.K is None) == (args.xi is None):
        raise ValueError("exactly one of --K or --xi is required")
    window = IndexWindow(args.K) if args.K is not None else TimeWindow(args.xi)
    if args.threshold == "universal":
        threshold = Universal(beta=args.beta)
    elif args.threshold == "adaptive":
        threshold = Adaptive()
    else:
        threshold = NoThreshold()
    return EstimatorConfig(
        window=window,
        threshold=threshold,
        diagonal_exempt=args.diagonal_exempt,
    )


def _run_config(args) -> RunConfig:
    sub = args.subcommand
    kwargs = dict(
        subcommand=sub,
        out=Path(args.out),
        seed=args.seed,
        workers=args.workers,
    )
    if sub == "estimate":
        kwargs.update(
            input=Path(args.input),
            estimator=_estimator_config(args),
            tick_duration=args.tick_duration,
        )
    else:
        kwargs.update(spec=Path(args.spec))
        if sub == "rate-check":
            kwargs.update(
                k_value=args.K,
                slope_min=args.slope_min,
                slope_max=args.slope_max,
                synthetic_exponent=args.synthetic_exponent,
            )
    return RunConfig(**kwargs)


# ---------------------------------------------------------------------------
# estimate


def _config_dict(config: EstimatorConfig, tick_duration: float) -> dict:
    window = config.window
    if isinstance(window, IndexWindow):
        win = {"rule": "index", "K": window.k}
    else:
        win = {"rule": "time", "xi": window.xi}
    threshold = config.threshold
    if isinstance(threshold, Universal):
        thr = {"rule": "universal", "beta": threshold.beta}
    elif isinstance(threshold, Adaptive):
        thr = {"rule": "adaptive"}
    else:
        thr = {"rule": "none"}
    return {
        "window": win,
        "threshold": thr,
        "diagonal_exempt": config.diagonal_exempt,
        "kernel": config.kernel,
        "clamp_negative_theta": config.clamp_negative_theta,
        "tick_duration": tick_duration,
    }


def _versions() -> dict:
    try:
        import numba

        numba_version = numba.__version__
    except ImportError:  # pragma: no cover - numba is an install requirement
        numba_version = None
    import scipy

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba_version,
        "noisecov": __version__,
    }


def _pair_report_rows(panel, result) -> list[dict]:
    diag = result.diagnostics
    flag_map: dict[tuple[int, int], list[str]] = {}
    for flag in result.flags:
        flag_map.setdefault((flag.i, flag.j), []).append(flag.reason)
    if diag is not None:
        for key in diag.fallback_pairs:
            flag_map.setdefault(key, []).append("fallback")
        for key in diag.degenerate_fit_pairs:
            flag_map.setdefault(key, []).append("degenerate_fit")
    uni_cutoff = result.thresholded.meta.get("threshold_rule", {}).get("cutoff")

    def fmt(x) -> str:
        return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))

    rows = []
    p = panel.p
    for i in range(p):
        for j in range(i, p):
            cutoff = diag.cutoffs[i, j] if diag is not None else uni_cutoff
            rows.append(
                {
                    "asset_i": panel.assets[i],
                    "asset_j": panel.assets[j],
                    "n": int(result.pair_n[i, j]),
                    "estimate": repr(float(result.raw.entries[i, j])),
                    "theta": fmt(diag.theta[i, j]) if diag is not None else "",
                    "vartheta": fmt(diag.vartheta[i, j]) if diag is not None else "",
                    "bandwidth": fmt(diag.bandwidth[i, j]) if diag is not None else "",
                    "cutoff": fmt(cutoff),
                    "kept": int(result.thresholded.entries[i, j] != 0.0),
                    "flags": ";".join(flag_map.get((i, j), [])),
                }
            )
    return rows


PAIR_COLUMNS = (
    "asset_i",
    "asset_j",
    "n",
    "estimate",
    "theta",
    "vartheta",
    "bandwidth",
    "cutoff",
    "kept",
    "flags",
)


def cmd_estimate(config: RunConfig) -> int:
    """Estimate raw and thresholded matrices from a tick CSV."""
    panel = load_csv(config.input, tick_duration=config.tick_duration)
    result = estimate_and_threshold(panel, config.estimator)
    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    result.raw.to_csv(out / "raw.csv")
    result.raw.to_json(out / "raw.json")
    result.thresholded.to_csv(out / "thresholded.csv")
    result.thresholded.to_json(out / "thresholded.json")
    with open(out / "pairs.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(PAIR_COLUMNS))
        writer.writeheader()
        writer.writerows(_pair_report_rows(panel, result))
    manifest = {
        "command": "estimate",
        "input": str(config.input),
        "config": _config_dict(config.estimator, config.tick_duration),
        "seed": config.seed,
        "workers": config.workers,
        "backend": kernels.BACKEND,
        "versions": _versions(),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"estimated {panel.p}x{panel.p} matrix -> {out}")
    return 0


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(config: RunConfig) -> int:
    """Run a Monte Carlo suite; nonzero exit when over 1% of cells failed."""
    suite = load_suite(config.spec, seed_override=config.seed)
    result = run_suite(suite, config.out, workers=config.workers)
    n_rows, n_fail = len(result.rows), len(result.failures)
    print(
        f"{n_rows} cells completed, {n_fail} failed "
        f"({100 * result.failure_fraction:.2f}%) -> {result.out_dir}"
    )
    return 1 if result.failure_fraction > 0.01 else 0


# ---------------------------------------------------------------------------
# rate-check


def cmd_rate_check(config: RunConfig) -> int:
    """Fit the log-log error slope across sync strides and gate on a band."""
    suite = load_suite(config.spec, seed_override=config.seed)
    validate_rate_suite(suite)
    k_value = config.k_value if config.k_value is not None else suite.head.k_values[0]
    if k_value not in suite.head.k_values:
        raise ExperimentError(f"K={k_value} is not in the suite's k_values")
    out = config.out
    out.mkdir(parents=True, exist_ok=True)

    failure_exit = False
    if config.synthetic_exponent is not None:
        points = synthetic_rate_points(suite, config.synthetic_exponent)
        deltas = [s.delta for s in suite.schemes]
    else:
        result = run_suite(suite, out, workers=config.workers, command="rate-check")
        failure_exit = result.failure_fraction > 0.01
        points = rate_points(suite, result, k_value)
        deltas = [
            s.delta
            for s in suite.schemes
            if any(c["scheme"] == s.label and c["K"] == k_value for c in result.summary)
        ]
    slope = rate_check(points)
    within = config.slope_min <= slope <= config.slope_max

    with open(out / "slope_report.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["delta", "n_star", "mean_max_abs", "slope", "slope_min", "slope_max", "within_band"]
        )
        for delta, (n_star, err) in zip(deltas, points):
            writer.writerow(
                [delta, n_star, repr(float(err)), repr(slope),
                 config.slope_min, config.slope_max, str(within).lower()]
            )
    manifest = _suite_manifest(suite, "rate-check", config.workers)
    manifest["slope_band"] = [config.slope_min, config.slope_max]
    manifest["synthetic_exponent"] = config.synthetic_exponent
    manifest["K"] = k_value
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"slope {slope:.4f} (band [{config.slope_min}, {config.slope_max}]) -> {out}")
    if failure_exit or not within:
        return 1
    return 0


# ---------------------------------------------------------------------------
# entry point


def _error_json(kind: str, message: str) -> None:
    print(json.dumps({"error": {"kind": kind, "message": message}}))


_DISPATCH = {
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "rate-check": cmd_rate_check,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _run_config(args)
        return _DISPATCH[config.subcommand](config)
    except OSError as exc:
        _error_json("io", str(exc))
        return 2
    except json.JSONDecodeError as exc:
        _error_json("data", f"invalid JSON: {exc}")
        return 1
    except TickDataError as exc:
        _error_json("data", str(exc))
        return 1
    except (ValueError, TypeError, ExperimentError) as exc:
        _error_json("config", str(exc))
        return 1
    except NoiseCovError as exc:
        _error_json("estimation", str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
