"""Metric tests: norms, support-recovery rates, rate fitting, and the
combined evaluation report."""

import math

import numpy as np
import pytest

from noisecov.covmatrix import CovMatrix
from noisecov.errors import SpectralNormError
from noisecov.metrics import (
    EvalReport,
    max_abs_diff,
    rate_check,
    rel_frobenius,
    spectral_norm,
    tpr_fpr,
)


class TestRelFrobenius:
    def test_hand_example(self):
        truth = np.array([[3.0, 0.0], [0.0, 4.0]])  # norm 5
        est = np.array([[3.0, 1.0], [1.0, 4.0]])  # difference norm sqrt(2)
        assert rel_frobenius(est, truth) == pytest.approx(math.sqrt(2) / 5, rel=1e-15)

    def test_exact_estimate_gives_zero(self, rng):
        m = rng.standard_normal((4, 4))
        assert rel_frobenius(m, m) == 0.0

    def test_scale_invariance(self, rng):
        truth = rng.standard_normal((5, 5))
        est = rng.standard_normal((5, 5))
        base = rel_frobenius(est, truth)
        assert rel_frobenius(7.0 * est, 7.0 * truth) == pytest.approx(base, rel=1e-12)

    def test_zero_truth_rejected(self):
        with pytest.raises(ValueError):
            rel_frobenius(np.eye(2), np.zeros((2, 2)))

    def test_accepts_cov_matrices(self):
        truth = CovMatrix(np.eye(2))
        est = CovMatrix(2.0 * np.eye(2))
        assert rel_frobenius(est, truth) == pytest.approx(1.0, rel=1e-15)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            rel_frobenius(np.eye(2), np.eye(3))


class TestMaxAbsDiff:
    def test_hand_example(self):
        a = np.array([[1.0, 2.0], [2.0, 1.0]])
        b = np.array([[1.5, 2.0], [2.0, 0.0]])
        assert max_abs_diff(a, b) == 1.0

    def test_zero_truth_allowed(self):
        assert max_abs_diff(np.eye(2), np.zeros((2, 2))) == 1.0

    def test_nonsquare_rejected(self):
        with pytest.raises(ValueError):
            max_abs_diff(np.zeros((2, 3)), np.zeros((2, 3)))


class TestSpectralNorm:
    def test_diagonal_matrix(self):
        assert spectral_norm(np.diag([1.0, -3.0, 2.0])) == pytest.approx(3.0, rel=1e-9)

    def test_identity(self):
        assert spectral_norm(np.eye(5)) == pytest.approx(1.0, rel=1e-12)

    def test_scaled_identity(self):
        assert spectral_norm(-2.5 * np.eye(3)) == pytest.approx(2.5, rel=1e-9)

    def test_zero_matrix(self):
        assert spectral_norm(np.zeros((4, 4))) == 0.0

    def test_matches_dense_eigensolver(self, rng):
        for _ in range(20):
            m = rng.standard_normal((6, 6))
            m = (m + m.T) / 2
            expected = float(np.max(np.abs(np.linalg.eigvalsh(m))))
            assert spectral_norm(m) == pytest.approx(expected, rel=1e-8)

    def test_deterministic(self, rng):
        m = rng.standard_normal((5, 5))
        m = (m + m.T) / 2
        assert spectral_norm(m) == spectral_norm(m.copy())

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            spectral_norm(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_non_convergence_carries_residual(self):
        # tied +/- eigenvalues make the power iteration oscillate forever
        m = np.array([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(SpectralNormError) as excinfo:
            spectral_norm(m, max_iter=5)
        assert excinfo.value.residual > 0


class TestTprFpr:
    def test_hand_counts(self):
        truth = np.array([[1.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 1.0]])
        est = np.array([[1.0, 0.0, 0.1], [0.0, 1.0, 0.0], [0.1, 0.0, 1.0]])
        # truth nonzero: 5 entries, est keeps 3 of them -> tpr 3/5
        # truth zero: 4 entries, est fills 2 of them -> fpr 2/4
        tpr, fpr = tpr_fpr(est, truth)
        assert tpr == pytest.approx(3 / 5)
        assert fpr == pytest.approx(2 / 4)

    def test_perfect_recovery(self, rng):
        m = rng.standard_normal((4, 4))
        m = (m + m.T) / 2
        m[np.abs(m) < 0.3] = 0.0
        np.fill_diagonal(m, 1.0)
        tpr, fpr = tpr_fpr(m, m)
        assert (tpr, fpr) == (1.0, 0.0)

    def test_dense_truth_has_zero_fpr_by_convention(self):
        truth = np.full((3, 3), 0.5)
        est = np.full((3, 3), 0.5)
        tpr, fpr = tpr_fpr(est, truth)
        assert (tpr, fpr) == (1.0, 0.0)

    def test_all_zero_truth_rejected(self):
        with pytest.raises(ValueError):
            tpr_fpr(np.eye(2), np.zeros((2, 2)))

    def test_rates_in_unit_interval(self, rng):
        for _ in range(20):
            truth = rng.standard_normal((4, 4))
            truth[np.abs(truth) < 0.8] = 0.0
            if not truth.any():
                continue
            est = rng.standard_normal((4, 4))
            est[np.abs(est) < 0.8] = 0.0
            tpr, fpr = tpr_fpr(est, truth)
            assert 0.0 <= tpr <= 1.0 and 0.0 <= fpr <= 1.0


class TestRateCheck:
    def test_exact_power_law(self):
        points = [(n, 3.0 * n**-0.5) for n in (100, 400, 1600, 6400)]
        assert rate_check(points) == pytest.approx(-0.5, abs=1e-12)

    def test_exact_inverse_law(self):
        points = [(n, 10.0 / n) for n in (10, 100, 1000)]
        assert rate_check(points) == pytest.approx(-1.0, abs=1e-12)

    def test_needs_three_distinct_sizes(self):
        with pytest.raises(ValueError):
            rate_check([(100, 1.0), (100, 1.1), (200, 0.8)])

    def test_rejects_nonpositive_inputs(self):
        with pytest.raises(ValueError):
            rate_check([(100, 1.0), (200, 0.0), (400, 0.5)])
        with pytest.raises(ValueError):
            rate_check([(0, 1.0), (200, 0.9), (400, 0.5)])


class TestEvalReport:
    def test_evaluate_bundles_all_metrics(self, rng):
        truth = np.array([[1.0, 0.4, 0.0], [0.4, 1.0, 0.0], [0.0, 0.0, 1.0]])
        est = truth + 0.01 * np.eye(3)
        report = EvalReport.evaluate(est, truth, metadata={"scheme": "sync-1"})
        assert report.rel_frobenius == pytest.approx(rel_frobenius(est, truth))
        assert report.max_abs == pytest.approx(0.01)
        assert report.spectral_error == pytest.approx(0.01, rel=1e-6)
        assert report.tpr == 1.0 and report.fpr == 0.0
        assert report.metadata["scheme"] == "sync-1"
        assert report.metadata["fpr_applicable"] is True

    def test_dense_truth_marked_not_applicable(self):
        truth = np.full((2, 2), 0.3)
        report = EvalReport.evaluate(truth, truth)
        assert report.metadata["fpr_applicable"] is False

    def test_row_serialization_order(self):
        report = EvalReport(0.1, 0.2, 0.3, 1.0, 0.0)
        assert report.to_row() == [0.1, 0.2, 0.3, 1.0, 0.0]
        assert EvalReport.CSV_COLUMNS == (
            "rel_frobenius", "max_abs", "spectral_error", "tpr", "fpr",
        )

    def test_validation(self):
        with pytest.raises(ValueError):
            EvalReport(-0.1, 0.0, 0.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            EvalReport(0.1, 0.0, -1.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            EvalReport(0.1, 0.0, 0.0, 1.5, 0.0)

    def test_nan_spectral_error_allowed(self):
        report = EvalReport(0.1, 0.2, math.nan, 1.0, 0.0)
        assert math.isnan(report.spectral_error)
