"""Experiment-suite tests: spec parsing, replication determinism, output
files, resume behaviour, and the rate-check plumbing."""

import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from noisecov.errors import ExperimentError
from noisecov.estimator import Adaptive, NoThreshold, Universal
from noisecov.experiments import (
    FAILURE_COLUMNS,
    ROW_COLUMNS,
    Suite,
    load_suite,
    rate_points,
    run_replication,
    run_suite,
    summarize_rows,
    synthetic_rate_points,
    validate_rate_suite,
)


def raw_suite(**overrides):
    raw = {
        "heston": {"p": 4, "ticks_per_day": 600},
        "noise": {"variant": "m1"},
        "sampling": [
            {"variant": "sync", "delta": 3},
            {"variant": "async", "lam": 3.0},
        ],
        "k_values": [2],
        "replications": 2,
        "seed": 77,
        "threshold": {"rule": "adaptive"},
    }
    raw.update(overrides)
    return raw


def tiny_suite(**overrides):
    return load_suite(raw_suite(**overrides))


def read_outputs(out_dir: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(out_dir.iterdir())}


# ---------------------------------------------------------------------------
# suite parsing


class TestLoadSuite:
    def test_scalar_and_list_parameters_expand(self):
        suite = load_suite(
            raw_suite(
                sampling=[
                    {"variant": "sync", "delta": [3, 2, 1]},
                    {"variant": "async", "lam": 3},
                ]
            )
        )
        labels = [s.label for s in suite.schemes]
        assert labels == ["sync-3", "sync-2", "sync-1", "async-3"]

    def test_single_scheme_dict_allowed(self):
        suite = load_suite(raw_suite(sampling={"variant": "sync", "delta": 2}))
        assert [s.label for s in suite.schemes] == ["sync-2"]

    def test_async_gap_model_defaults_to_exponential(self):
        suite = tiny_suite()
        async_scheme = suite.schemes[1]
        assert async_scheme.gap_model == "exponential"

    def test_explicit_geometric_gap_model(self):
        suite = load_suite(
            raw_suite(sampling={"variant": "async", "lam": 2, "gap_model": "geometric"})
        )
        assert suite.schemes[0].gap_model == "geometric"

    def test_threshold_parsing(self):
        assert isinstance(tiny_suite().threshold, Adaptive)
        none = tiny_suite(threshold={"rule": "none"})
        assert isinstance(none.threshold, NoThreshold)
        uni = tiny_suite(threshold={"rule": "universal", "beta": 1.5})
        assert isinstance(uni.threshold, Universal)
        assert uni.threshold.beta == 1.5
        raw = raw_suite()
        del raw["threshold"]
        assert isinstance(load_suite(raw).threshold, Adaptive)

    def test_unknown_threshold_rule_rejected(self):
        with pytest.raises(ExperimentError):
            tiny_suite(threshold={"rule": "soft"})

    def test_seed_override(self):
        suite = load_suite(raw_suite(), seed_override=123)
        assert suite.head.seed == 123

    def test_missing_key_rejected(self):
        raw = raw_suite()
        del raw["k_values"]
        with pytest.raises(ExperimentError):
            load_suite(raw)

    def test_unknown_sampling_variant_rejected(self):
        with pytest.raises(ExperimentError):
            tiny_suite(sampling={"variant": "poisson", "lam": 3})

    def test_invalid_values_rejected(self):
        with pytest.raises(ExperimentError):
            tiny_suite(replications=0)
        with pytest.raises(ExperimentError):
            tiny_suite(noise={"variant": "m2"})  # random support needs a seed

    def test_duplicate_schemes_rejected(self):
        with pytest.raises(ExperimentError):
            load_suite(
                raw_suite(
                    sampling=[
                        {"variant": "sync", "delta": 3},
                        {"variant": "sync", "delta": 3},
                    ]
                )
            )

    def test_loads_from_json_file(self, tmp_path):
        path = tmp_path / "suite.json"
        path.write_text(json.dumps(raw_suite()))
        suite = load_suite(path)
        assert suite.head.heston.p == 4
        assert suite.to_dict() == tiny_suite().to_dict()

    def test_empty_sampling_rejected(self):
        with pytest.raises(ExperimentError):
            tiny_suite(sampling=[])


class TestSuiteShape:
    def test_cells_per_rep(self):
        suite = tiny_suite(k_values=[2, 3])
        assert suite.cells_per_rep == 2 * 2

    def test_specs_share_everything_but_sampling(self):
        specs = tiny_suite().specs
        mixed = specs[0], specs[1].__class__(
            heston=specs[1].heston,
            noise=specs[1].noise,
            sampling=specs[1].sampling,
            k_values=specs[1].k_values,
            replications=99,
            seed=specs[1].seed,
        )
        with pytest.raises(ExperimentError):
            Suite(specs=mixed, threshold=Adaptive())


# ---------------------------------------------------------------------------
# replication worker


class TestRunReplication:
    def test_deterministic(self):
        suite = tiny_suite()
        rows_a, fails_a = run_replication(suite, 0)
        rows_b, fails_b = run_replication(suite, 0)
        assert rows_a == rows_b
        assert fails_a == fails_b

    def test_replications_differ(self):
        suite = tiny_suite()
        rows_0, _ = run_replication(suite, 0)
        rows_1, _ = run_replication(suite, 1)
        assert rows_0[0]["rel_fro_raw"] != rows_1[0]["rel_fro_raw"]

    def test_every_cell_accounted_for(self):
        suite = tiny_suite(k_values=[2, 3])
        rows, failures = run_replication(suite, 0)
        cells = [(r["scheme"], r["K"]) for r in rows] + [
            (f["scheme"], f["K"]) for f in failures
        ]
        expected = [
            (spec.sampling.label, K)
            for spec in suite.specs
            for K in suite.head.k_values
        ]
        assert sorted(cells) == sorted(expected)

    def test_row_columns_exactly(self):
        rows, _ = run_replication(tiny_suite(), 0)
        assert set(rows[0]) == set(ROW_COLUMNS)

    def test_hopeless_sampling_becomes_failure_rows(self):
        suite = tiny_suite(
            sampling=[
                {"variant": "sync", "delta": 3},
                {"variant": "async", "lam": 1e6},
            ]
        )
        rows, failures = run_replication(suite, 0)
        assert len(rows) == 1  # the sync cell
        assert len(failures) == 1
        failure = failures[0]
        assert failure["stage"] == "sampling"
        assert failure["kind"] == "SamplingError"
        assert set(failure) == set(FAILURE_COLUMNS)


# ---------------------------------------------------------------------------
# summaries


class TestSummarizeRows:
    def test_mean_and_se(self):
        suite = tiny_suite()
        base = {
            "scheme": "sync-3", "param": 3, "K": 2, "n": 200, "n_star": 200,
            "rel_fro_raw": 0.0, "max_abs_raw": 0.0, "rel_fro_thr": 0.0,
            "max_abs_thr": 0.0, "spectral_thr": 0.0, "tpr": 1.0, "fpr": 0.0,
        }
        rows = [
            dict(base, rep=0, rel_fro_thr=0.10),
            dict(base, rep=1, rel_fro_thr=0.20),
            dict(base, rep=2, rel_fro_thr=0.30),
        ]
        (cell,) = summarize_rows(suite, rows)
        assert cell["replications_used"] == 3
        assert cell["rel_fro_thr_mean"] == pytest.approx(0.2)
        expected_se = np.std([0.1, 0.2, 0.3], ddof=1) / math.sqrt(3)
        assert cell["rel_fro_thr_se"] == pytest.approx(expected_se, rel=1e-12)

    def test_nan_metric_dropped_from_its_own_mean(self):
        suite = tiny_suite()
        base = {
            "scheme": "sync-3", "param": 3, "K": 2, "n": 200, "n_star": 200,
            "rel_fro_raw": 0.5, "max_abs_raw": 0.1, "rel_fro_thr": 0.4,
            "max_abs_thr": 0.1, "tpr": 1.0, "fpr": 0.0,
        }
        rows = [
            dict(base, rep=0, spectral_thr=math.nan),
            dict(base, rep=1, spectral_thr=0.25),
        ]
        (cell,) = summarize_rows(suite, rows)
        assert cell["spectral_thr_mean"] == pytest.approx(0.25)
        assert math.isnan(cell["spectral_thr_se"])  # single finite value
        assert cell["rel_fro_thr_mean"] == pytest.approx(0.4)
        assert cell["replications_used"] == 2

    def test_single_row_has_nan_se(self):
        suite = tiny_suite()
        row = {
            "scheme": "sync-3", "param": 3, "K": 2, "rep": 0, "n": 200,
            "n_star": 200, "rel_fro_raw": 0.5, "max_abs_raw": 0.1,
            "rel_fro_thr": 0.4, "max_abs_thr": 0.1, "spectral_thr": 0.2,
            "tpr": 1.0, "fpr": 0.0,
        }
        (cell,) = summarize_rows(suite, [row])
        assert math.isnan(cell["rel_fro_thr_se"])

    def test_cells_follow_suite_order(self):
        suite = tiny_suite(k_values=[2, 3])
        rows, _ = run_replication(suite, 0)
        summary = summarize_rows(suite, rows)
        assert [(c["scheme"], c["K"]) for c in summary] == [
            ("sync-3", 2), ("sync-3", 3), ("async-3", 2), ("async-3", 3),
        ]


# ---------------------------------------------------------------------------
# suite runner


EXPECTED_FILES = {
    "failures.csv",
    "manifest.json",
    "replications.csv",
    "summary.csv",
    "table_error.csv",
    "table_support.csv",
}


class TestRunSuite:
    def test_outputs_and_accounting(self, tmp_path):
        suite = tiny_suite()
        result = run_suite(suite, tmp_path / "out")
        assert set(p.name for p in (tmp_path / "out").iterdir()) == EXPECTED_FILES
        assert result.failure_fraction == 0.0
        assert len(result.rows) == suite.head.replications * suite.cells_per_rep
        assert len(result.summary) == suite.cells_per_rep

    def test_rerun_is_byte_identical(self, tmp_path):
        suite = tiny_suite()
        out = tmp_path / "out"
        run_suite(suite, out)
        first = read_outputs(out)
        run_suite(suite, out)  # resume: nothing to do
        assert read_outputs(out) == first
        run_suite(suite, out, resume=False)  # full recompute
        assert read_outputs(out) == first

    def test_resume_recomputes_partial_replications(self, tmp_path):
        suite = tiny_suite()
        out = tmp_path / "out"
        run_suite(suite, out)
        first = read_outputs(out)

        rows_path = out / "replications.csv"
        with open(rows_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        # drop one cell of replication 0: the rep is now partial and must be
        # recomputed from scratch, reproducing the original bytes
        kept = [r for r in rows if not (r["rep"] == "0" and r["scheme"] == "sync-3")]
        assert len(kept) < len(rows)
        with open(rows_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(ROW_COLUMNS))
            writer.writeheader()
            writer.writerows(kept)

        run_suite(suite, out)
        assert read_outputs(out) == first

    def test_mismatched_manifest_refuses_to_mix(self, tmp_path):
        out = tmp_path / "out"
        run_suite(tiny_suite(), out)
        with pytest.raises(ExperimentError):
            run_suite(tiny_suite(seed=78), out)
        with pytest.raises(ExperimentError):
            run_suite(tiny_suite(threshold={"rule": "none"}), out)

    def test_summary_matches_persisted_rows(self, tmp_path):
        suite = tiny_suite()
        out = tmp_path / "out"
        result = run_suite(suite, out)
        with open(out / "replications.csv", newline="") as fh:
            raw_rows = list(csv.DictReader(fh))
        by_cell = {}
        for row in raw_rows:
            by_cell.setdefault((row["scheme"], int(row["K"])), []).append(
                float(row["rel_fro_thr"])
            )
        for cell in result.summary:
            vals = by_cell[(cell["scheme"], cell["K"])]
            assert cell["rel_fro_thr_mean"] == pytest.approx(
                np.mean(vals), rel=1e-12
            )
            assert cell["replications_used"] == len(vals)

    def test_manifest_records_the_run(self, tmp_path):
        suite = tiny_suite()
        out = tmp_path / "out"
        run_suite(suite, out, command="simulate")
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["seed"] == 77
        assert manifest["suite"] == suite.to_dict()
        assert manifest["backend"] in {"numba", "numpy"}
        assert "numpy" in manifest["versions"]

    def test_failures_surface_in_outputs(self, tmp_path):
        suite = tiny_suite(
            sampling=[
                {"variant": "sync", "delta": 3},
                {"variant": "async", "lam": 1e6},
            ]
        )
        out = tmp_path / "out"
        result = run_suite(suite, out)
        assert result.failure_fraction == pytest.approx(0.5)
        with open(out / "failures.csv", newline="") as fh:
            failures = list(csv.DictReader(fh))
        assert len(failures) == suite.head.replications
        assert all(f["kind"] == "SamplingError" for f in failures)
        with open(out / "table_error.csv", newline="") as fh:
            (table_row,) = list(csv.DictReader(fh))
        assert table_row["async-1e+06"] == "n/a"
        assert table_row["sync-3"] != "n/a"
        # resume treats failure rows as attempted cells: nothing to redo
        before = read_outputs(out)
        run_suite(suite, out)
        assert read_outputs(out) == before

    def test_parallel_workers_match_serial(self, tmp_path):
        suite = tiny_suite()
        serial = tmp_path / "serial"
        parallel = tmp_path / "parallel"
        run_suite(suite, serial, workers=1)
        run_suite(suite, parallel, workers=2)
        a = read_outputs(serial)
        b = read_outputs(parallel)
        del a["manifest.json"], b["manifest.json"]  # records its worker count
        assert a == b

    def test_worker_count_validated(self, tmp_path):
        with pytest.raises(ExperimentError):
            run_suite(tiny_suite(), tmp_path / "out", workers=0)


# ---------------------------------------------------------------------------
# rate-check plumbing


class TestRatePlumbing:
    def rate_suite(self, **overrides):
        return tiny_suite(
            sampling={"variant": "sync", "delta": [4, 3, 2, 1]},
            threshold={"rule": "none"},
            **overrides,
        )

    def test_validate_rate_suite(self):
        validate_rate_suite(self.rate_suite())
        with pytest.raises(ExperimentError):
            validate_rate_suite(tiny_suite())  # contains an async scheme
        with pytest.raises(ExperimentError):
            validate_rate_suite(
                tiny_suite(sampling={"variant": "sync", "delta": [2, 1]})
            )

    def test_synthetic_points_follow_exact_power_law(self):
        suite = self.rate_suite()
        points = synthetic_rate_points(suite, -0.5)
        assert [n for n, _ in points] == [600 // 4, 600 // 3, 600 // 2, 600]
        for n, err in points:
            assert err == float(n) ** -0.5
        from noisecov.metrics import rate_check

        assert rate_check(points) == pytest.approx(-0.5, abs=1e-12)

    def test_rate_points_pull_unthresholded_errors(self, tmp_path):
        suite = self.rate_suite(replications=2)
        result = run_suite(suite, tmp_path / "out")
        points = rate_points(suite, result, K=2)
        assert len(points) == 4
        by_cell = {
            (c["scheme"], c["K"]): c["max_abs_raw_mean"] for c in result.summary
        }
        for (n_star, err), delta in zip(points, (4, 3, 2, 1)):
            assert err == by_cell[(f"sync-{delta}", 2)]
            assert n_star == 600 // delta
