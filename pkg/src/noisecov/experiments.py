"""Monte Carlo driver: replicated simulate-estimate-evaluate experiments.

A *suite* is a set of sampling schemes (several Δ strides and/or thinning
rates λ) sharing one latent-price configuration, one noise model, one window
list, one replication count and one master seed. Within a replication every
scheme observes the *same* latent paths and the same noise draws, so columns
of the output tables differ only through the observation scheme — mirroring
how such comparison tables are usually produced.

Randomness is organized per replication: replication ``r`` derives its
streams from ``SeedSequence(seed, spawn_key=(r,))`` spawning one child for
the price paths, one for the noise draws and one per async scheme, in suite
order. Results are therefore independent of the worker count and resumable
at replication granularity: per-replication rows are persisted and
aggregation only ever reads them back.
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
import math
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .covmatrix import CovMatrix
from .errors import ExperimentError, NoiseCovError, SpectralNormError
from .estimator import (
    Adaptive,
    EstimatorConfig,
    IndexWindow,
    NoThreshold,
    Universal,
)
from .estimator import estimate_and_threshold
from .metrics import max_abs_diff, rel_frobenius, spectral_norm, tpr_fpr
from .simlab import (
    ExperimentSpec,
    HestonConfig,
    NoiseModel,
    SamplingScheme,
    heston_paths,
    noise_cov,
    sample_async,
    sample_noise,
    sample_sync,
)

ROW_COLUMNS = (
    "scheme",
    "param",
    "K",
    "rep",
    "n",
    "n_star",
    "rel_fro_raw",
    "max_abs_raw",
    "rel_fro_thr",
    "max_abs_thr",
    "spectral_thr",
    "tpr",
    "fpr",
)

FAILURE_COLUMNS = ("scheme", "param", "K", "rep", "stage", "kind", "message")

_METRIC_COLUMNS = ROW_COLUMNS[6:]


@dataclass(frozen=True)
class Suite:
    """Validated experiment suite: one spec per sampling scheme.

    All specs share heston/noise/k_values/replications/seed; only
    ``sampling`` varies. ``threshold`` is the rule applied to every cell.
    """

    specs: tuple[ExperimentSpec, ...]
    threshold: Universal | Adaptive | NoThreshold

    def __post_init__(self):
        if not self.specs:
            raise ExperimentError("suite has no sampling schemes")
        head = self.specs[0]
        for spec in self.specs[1:]:
            shared = (
                spec.heston == head.heston
                and spec.noise == head.noise
                and spec.k_values == head.k_values
                and spec.replications == head.replications
                and spec.seed == head.seed
            )
            if not shared:
                raise ExperimentError(
                    "suite specs must differ only in their sampling scheme"
                )
        labels = [s.sampling.label for s in self.specs]
        if len(set(labels)) != len(labels):
            raise ExperimentError(f"duplicate sampling schemes: {labels}")

    @property
    def head(self) -> ExperimentSpec:
        return self.specs[0]

    @property
    def schemes(self) -> tuple[SamplingScheme, ...]:
        return tuple(s.sampling for s in self.specs)

    @property
    def cells_per_rep(self) -> int:
        return len(self.specs) * len(self.head.k_values)

    def to_dict(self) -> dict:
        """Normalized JSON-able form; also the manifest's record of the run."""
        head = self.head
        sampling = []
        for s in self.schemes:
            entry = {"variant": s.variant, "gap_model": s.gap_model}
            if s.variant == "sync":
                entry["delta"] = s.delta
            else:
                entry["lam"] = s.lam
            sampling.append(entry)
        if isinstance(self.threshold, Universal):
            thr = {"rule": "universal", "beta": self.threshold.beta}
        elif isinstance(self.threshold, Adaptive):
            thr = {"rule": "adaptive"}
        else:
            thr = {"rule": "none"}
        return {
            "heston": {
                "p": head.heston.p,
                "kappa": head.heston.kappa,
                "s": head.heston.s,
                "sigma_bar_sq": head.heston.sigma_bar_sq,
                "varsigma": head.heston.varsigma,
                "corr_decay": head.heston.corr_decay,
                "ticks_per_day": head.heston.ticks_per_day,
                "day_length": head.heston.day_length,
            },
            "noise": {
                "variant": head.noise.variant,
                "scale": head.noise.scale,
                "seed": head.noise.seed,
            },
            "sampling": sampling,
            "k_values": list(head.k_values),
            "replications": head.replications,
            "seed": head.seed,
            "threshold": thr,
        }


def _parse_threshold(raw: dict | None):
    if raw is None:
        return Adaptive()
    rule = raw.get("rule")
    if rule == "adaptive":
        return Adaptive()
    if rule == "universal":
        return Universal(beta=float(raw.get("beta", 2.0)))
    if rule == "none":
        return NoThreshold()
    raise ExperimentError(f"unknown threshold rule {rule!r}")


def _expand_sampling(raw) -> list[SamplingScheme]:
    entries = raw if isinstance(raw, list) else [raw]
    schemes: list[SamplingScheme] = []
    for entry in entries:
        variant = entry.get("variant")
        gap_model = entry.get("gap_model", "exponential")
        if variant == "sync":
            deltas = entry.get("delta")
            deltas = deltas if isinstance(deltas, list) else [deltas]
            for d in deltas:
                schemes.append(SamplingScheme("sync", delta=d, gap_model=gap_model))
        elif variant == "async":
            lams = entry.get("lam")
            lams = lams if isinstance(lams, list) else [lams]
            for lam in lams:
                schemes.append(SamplingScheme("async", lam=lam, gap_model=gap_model))
        else:
            raise ExperimentError(f"unknown sampling variant {variant!r}")
    return schemes


def load_suite(source, *, seed_override: int | None = None) -> Suite:
    """Build a :class:`Suite` from a JSON file path or an already-parsed dict.

    ``sampling`` may be a single scheme or a list, and ``delta``/``lam`` may
    be scalars or lists — lists expand into one scheme per value, in listing
    order. ``seed_override`` replaces the suite seed when given (the CLI's
    ``--seed`` flag).
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    else:
        raw = source
    try:
        heston = HestonConfig(**raw["heston"])
        noise = NoiseModel(**raw["noise"])
        schemes = _expand_sampling(raw["sampling"])
        k_values = tuple(raw["k_values"])
        replications = int(raw["replications"])
        seed = int(raw["seed"]) if seed_override is None else int(seed_override)
        threshold = _parse_threshold(raw.get("threshold"))
    except KeyError as exc:
        raise ExperimentError(f"experiment spec missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ExperimentError(f"invalid experiment spec: {exc}") from None
    try:
        specs = tuple(
            ExperimentSpec(
                heston=heston,
                noise=noise,
                sampling=s,
                k_values=k_values,
                replications=replications,
                seed=seed,
            )
            for s in schemes
        )
    except ValueError as exc:
        raise ExperimentError(f"invalid experiment spec: {exc}") from None
    return Suite(specs=specs, threshold=threshold)


# ---------------------------------------------------------------------------
# replication worker


def _evaluate_cell(panel, K, truth, threshold, scheme, rep) -> dict:
    config = EstimatorConfig(window=IndexWindow(K), threshold=threshold)
    result = estimate_and_threshold(panel, config)
    raw, thr = result.raw, result.thresholded
    try:
        spectral = spectral_norm(thr.entries - truth.entries)
    except SpectralNormError:
        spectral = math.nan
    tpr, fpr = tpr_fpr(thr, truth)
    return {
        "scheme": scheme.label,
        "param": scheme.param,
        "K": K,
        "rep": rep,
        "n": result.summary.n,
        "n_star": result.summary.n_star,
        "rel_fro_raw": rel_frobenius(raw, truth),
        "max_abs_raw": max_abs_diff(raw, truth),
        "rel_fro_thr": rel_frobenius(thr, truth),
        "max_abs_thr": max_abs_diff(thr, truth),
        "spectral_thr": spectral,
        "tpr": tpr,
        "fpr": fpr,
    }


def _fail_rows(spec, rep, stage, exc, k_values) -> list[dict]:
    message = " ".join(str(exc).split())
    return [
        {
            "scheme": spec.sampling.label,
            "param": spec.sampling.param,
            "K": K,
            "rep": rep,
            "stage": stage,
            "kind": type(exc).__name__,
            "message": message,
        }
        for K in k_values
    ]


def run_replication(suite: Suite, rep: int) -> tuple[list[dict], list[dict]]:
    """Run one replication across all schemes and windows.

    Returns ``(rows, failures)``; every (scheme, K) cell of the replication
    appears in exactly one of the two lists.
    """
    head = suite.head
    streams = np.random.SeedSequence(head.seed, spawn_key=(rep,)).spawn(
        2 + len(suite.specs)
    )
    truth = noise_cov(head.noise, head.heston.p, seed=head.noise.seed)
    try:
        X = heston_paths(head.heston, np.random.default_rng(streams[0]))
        U = sample_noise(truth, head.heston.ticks_per_day, np.random.default_rng(streams[1]))
    except NoiseCovError as exc:
        failures = []
        for spec in suite.specs:
            failures.extend(_fail_rows(spec, rep, "base", exc, head.k_values))
        return [], failures
    rows: list[dict] = []
    failures: list[dict] = []
    for idx, spec in enumerate(suite.specs):
        scheme = spec.sampling
        try:
            if scheme.variant == "sync":
                panel = sample_sync(
                    X, U, scheme.delta, tick_duration=head.heston.tick_duration
                )
            else:
                panel = sample_async(
                    X,
                    U,
                    scheme.lam,
                    np.random.default_rng(streams[2 + idx]),
                    gap_model=scheme.gap_model,
                    tick_duration=head.heston.tick_duration,
                )
        except NoiseCovError as exc:
            failures.extend(_fail_rows(spec, rep, "sampling", exc, head.k_values))
            continue
        for K in head.k_values:
            try:
                rows.append(
                    _evaluate_cell(panel, K, truth, suite.threshold, scheme, rep)
                )
            except NoiseCovError as exc:
                failures.extend(_fail_rows(spec, rep, "estimation", exc, (K,)))
    return rows, failures


# ---------------------------------------------------------------------------
# persistence


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _read_csv(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _typed_row(raw: dict) -> dict:
    row = dict(raw)
    row["K"] = int(raw["K"])
    row["rep"] = int(raw["rep"])
    row["n"] = int(raw["n"])
    row["n_star"] = int(raw["n_star"])
    row["param"] = float(raw["param"]) if "." in raw["param"] else int(raw["param"])
    for col in _METRIC_COLUMNS:
        row[col] = float(raw[col])
    return row


def _typed_failure(raw: dict) -> dict:
    row = dict(raw)
    row["K"] = int(raw["K"])
    row["rep"] = int(raw["rep"])
    row["param"] = float(raw["param"]) if "." in raw["param"] else int(raw["param"])
    return row


def _sort_key(suite: Suite):
    order = {spec.sampling.label: i for i, spec in enumerate(suite.specs)}

    def key(row):
        return (order.get(row["scheme"], len(order)), row["K"], row["rep"])

    return key


def summarize_rows(suite: Suite, rows: list[dict]) -> list[dict]:
    """Per-cell means and Monte Carlo standard errors over replication rows.

    NaN metric values (non-converged spectral norms) are dropped from their
    own metric's mean/SE; the replication still counts for every other
    metric.
    """
    cells: dict[tuple, list[dict]] = {}
    for row in rows:
        cells.setdefault((row["scheme"], row["K"]), []).append(row)
    out = []
    order = _sort_key(suite)
    for (scheme, K), group in sorted(
        cells.items(), key=lambda item: order({"scheme": item[0][0], "K": item[0][1], "rep": 0})
    ):
        entry = {
            "scheme": scheme,
            "param": group[0]["param"],
            "K": K,
            "replications_used": len(group),
            "n_star_mean": float(np.mean([g["n_star"] for g in group])),
        }
        for col in _METRIC_COLUMNS:
            vals = np.array([g[col] for g in group], dtype=np.float64)
            finite = vals[~np.isnan(vals)]
            if finite.size == 0:
                mean = se = math.nan
            else:
                mean = float(finite.mean())
                se = (
                    float(finite.std(ddof=1) / math.sqrt(finite.size))
                    if finite.size > 1
                    else math.nan
                )
            entry[f"{col}_mean"] = mean
            entry[f"{col}_se"] = se
        out.append(entry)
    return out


SUMMARY_COLUMNS = (
    "scheme",
    "param",
    "K",
    "replications_used",
    "n_star_mean",
    *(f"{c}_{s}" for c in _METRIC_COLUMNS for s in ("mean", "se")),
)


def _format_tables(suite: Suite, summary: list[dict], fpr_applicable: bool):
    """Comparison-table views: rows are (p, K), columns are schemes.

    ``table_error`` holds mean relative Frobenius error of the thresholded
    estimate ×100 with its standard error in parentheses; ``table_support``
    holds TPR% / FPR% pairs (FPR is n/a for dense designs).
    """
    by_cell = {(s["scheme"], s["K"]): s for s in summary}
    labels = [spec.sampling.label for spec in suite.specs]
    p = suite.head.heston.p
    error_rows, support_rows = [], []
    for K in suite.head.k_values:
        err = {"p": p, "K": K}
        sup = {"p": p, "K": K}
        for label in labels:
            cell = by_cell.get((label, K))
            if cell is None:
                err[label] = sup[label] = "n/a"
                continue
            mean, se = cell["rel_fro_thr_mean"], cell["rel_fro_thr_se"]
            err[label] = (
                "n/a" if math.isnan(mean) else f"{100 * mean:.2f} ({100 * se:.2f})"
            )
            tpr = f"{100 * cell['tpr_mean']:.2f}"
            fpr = f"{100 * cell['fpr_mean']:.3f}" if fpr_applicable else "n/a"
            sup[label] = f"{tpr} / {fpr}"
        error_rows.append(err)
        support_rows.append(sup)
    return ("p", "K", *labels), error_rows, support_rows


def _manifest(suite: Suite, command: str, workers: int) -> dict:
    try:
        import numba

        numba_version = numba.__version__
    except ImportError:  # pragma: no cover - numba is an install requirement
        numba_version = None
    import scipy

    from . import __version__

    return {
        "command": command,
        "suite": suite.to_dict(),
        "seed": suite.head.seed,
        "workers": workers,
        "backend": kernels.BACKEND,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba_version,
            "noisecov": __version__,
        },
    }


@dataclass(frozen=True)
class SuiteResult:
    """Outcome of :func:`run_suite`: all rows, failures and the aggregate."""

    rows: list
    failures: list
    summary: list
    failure_fraction: float
    out_dir: Path


def run_suite(
    suite: Suite,
    out_dir,
    *,
    workers: int = 1,
    resume: bool = True,
    command: str = "simulate",
) -> SuiteResult:
    """Run (or finish) a suite and write all outputs under ``out_dir``.

    Writes ``replications.csv`` (one row per completed cell),
    ``failures.csv``, ``summary.csv`` (per-cell mean and standard error),
    ``table_error.csv`` / ``table_support.csv`` (comparison-table views) and
    ``manifest.json``. With ``resume=True`` (default), replications whose
    cells are all already persisted are skipped; an existing manifest that
    disagrees with the current suite aborts instead of mixing results.
    """
    if workers < 1:
        raise ExperimentError(f"workers must be >= 1, got {workers}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(suite, command, workers)
    manifest_path = out_dir / "manifest.json"
    rows_path = out_dir / "replications.csv"
    failures_path = out_dir / "failures.csv"

    rows: list[dict] = []
    failures: list[dict] = []
    if resume and manifest_path.exists():
        with open(manifest_path, "r", encoding="utf-8") as fh:
            existing = json.load(fh)
        same = existing.get("suite") == manifest["suite"] and existing.get(
            "seed"
        ) == manifest["seed"]
        if not same:
            raise ExperimentError(
                f"{out_dir} holds results for a different experiment; "
                "use a fresh output directory"
            )
        rows = [_typed_row(r) for r in _read_csv(rows_path)]
        failures = [_typed_failure(r) for r in _read_csv(failures_path)]

    head = suite.head
    attempted: dict[int, int] = {}
    for row in rows:
        attempted[row["rep"]] = attempted.get(row["rep"], 0) + 1
    for row in failures:
        attempted[row["rep"]] = attempted.get(row["rep"], 0) + 1
    done = {rep for rep, count in attempted.items() if count >= suite.cells_per_rep}
    # Drop partial replications entirely and recompute them from scratch.
    rows = [r for r in rows if r["rep"] in done]
    failures = [r for r in failures if r["rep"] in done]
    todo = [rep for rep in range(head.replications) if rep not in done]

    if todo:
        if workers == 1:
            results = (run_replication(suite, rep) for rep in todo)
        else:
            pool = concurrent.futures.ProcessPoolExecutor(max_workers=workers)
            results = pool.map(run_replication, (suite,) * len(todo), todo)
        for new_rows, new_failures in results:
            rows.extend(new_rows)
            failures.extend(new_failures)
        if workers > 1:
            pool.shutdown()

    key = _sort_key(suite)
    rows.sort(key=key)
    failures.sort(key=key)
    _write_csv(rows_path, ROW_COLUMNS, rows)
    _write_csv(failures_path, FAILURE_COLUMNS, failures)

    summary = summarize_rows(suite, rows)
    _write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS, summary)

    truth = noise_cov(head.noise, head.heston.p, seed=head.noise.seed)
    fpr_applicable = bool((truth.entries == 0.0).any())
    table_cols, error_rows, support_rows = _format_tables(suite, summary, fpr_applicable)
    _write_csv(out_dir / "table_error.csv", table_cols, error_rows)
    _write_csv(out_dir / "table_support.csv", table_cols, support_rows)

    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    total_cells = head.replications * suite.cells_per_rep
    failure_fraction = len(failures) / total_cells if total_cells else 0.0
    return SuiteResult(
        rows=rows,
        failures=failures,
        summary=summary,
        failure_fraction=failure_fraction,
        out_dir=out_dir,
    )


# ---------------------------------------------------------------------------
# convergence-rate orchestration


def rate_points(suite: Suite, result: SuiteResult, K: int) -> list[tuple[int, float]]:
    """(n_star, mean unthresholded max-abs error) per sync scheme, for one K."""
    points = []
    for cell in result.summary:
        if not cell["scheme"].startswith("sync-") or cell["K"] != K:
            continue
        points.append((int(round(cell["n_star_mean"])), cell["max_abs_raw_mean"]))
    return points


def validate_rate_suite(suite: Suite) -> None:
    """A rate suite needs at least three distinct synchronous strides."""
    deltas = {s.delta for s in suite.schemes if s.variant == "sync"}
    if any(s.variant != "sync" for s in suite.schemes):
        raise ExperimentError("rate-check suites must use only sync sampling")
    if len(deltas) < 3:
        raise ExperimentError(
            f"rate-check needs >= 3 distinct delta values, got {sorted(deltas)}"
        )


def synthetic_rate_points(suite: Suite, exponent: float) -> list[tuple[int, float]]:
    """Exact power-law errors ``n_star**exponent`` for the suite's strides.

    Bypasses simulation entirely; used to validate the slope-fitting
    plumbing end to end.
    """
    n_ticks = suite.head.heston.ticks_per_day
    points = []
    for scheme in suite.schemes:
        n_star = n_ticks // scheme.delta
        points.append((n_star, float(n_star) ** exponent))
    return points
