"""Error metrics and support-recovery diagnostics for covariance estimates.

All functions accept either :class:`~noisecov.covmatrix.CovMatrix` or plain
square ndarrays. ``spectral_norm`` is a self-contained power iteration so the
reported operator-norm error never silently depends on LAPACK behaviour for
the near-tied eigenvalues that thresholded error matrices often have; it
raises :class:`SpectralNormError` instead of returning a bad number.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .covmatrix import CovMatrix
from .errors import SpectralNormError

SPECTRAL_TOL = 1e-10
SPECTRAL_MAX_ITER = 10_000


def _entries(m) -> np.ndarray:
    a = m.entries if isinstance(m, CovMatrix) else np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return a


def _pair(est, truth) -> tuple[np.ndarray, np.ndarray]:
    e, t = _entries(est), _entries(truth)
    if e.shape != t.shape:
        raise ValueError(f"shape mismatch: estimate {e.shape} vs truth {t.shape}")
    return e, t


def rel_frobenius(est, truth) -> float:
    """Frobenius error of ``est`` relative to the Frobenius norm of ``truth``."""
    e, t = _pair(est, truth)
    denom = float(np.linalg.norm(t))
    if denom == 0.0:
        raise ValueError("truth matrix is identically zero; relative error undefined")
    return float(np.linalg.norm(e - t)) / denom


def max_abs_diff(est, truth) -> float:
    """Largest absolute entry-wise deviation."""
    e, t = _pair(est, truth)
    return float(np.max(np.abs(e - t)))


def _seed_from_bytes(a: np.ndarray) -> int:
    digest = hashlib.sha256(a.tobytes() + repr(a.shape).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def spectral_norm(
    m,
    *,
    tol: float = SPECTRAL_TOL,
    max_iter: int = SPECTRAL_MAX_ITER,
) -> float:
    """Operator norm of a symmetric matrix by power iteration.

    The start vector is drawn from a generator seeded by a hash of the matrix
    bytes, so the result is a pure function of the input. Convergence is
    declared when the eigen-residual ``|M v - lambda v|`` drops to
    ``tol * max(1, |lambda|)``; exhausting ``max_iter`` iterations raises
    :class:`SpectralNormError` carrying the last residual.
    """
    a = _entries(m)
    if not np.array_equal(a, a.T):
        raise ValueError("spectral_norm expects a symmetric matrix")
    p = a.shape[0]
    rng = np.random.default_rng(_seed_from_bytes(a))
    v = rng.standard_normal(p)
    v /= np.linalg.norm(v)
    residual = math.inf
    for _ in range(max_iter):
        w = a @ v
        lam = float(v @ w)
        residual = float(np.linalg.norm(w - lam * v))
        if residual <= tol * max(1.0, abs(lam)):
            return abs(lam)
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            return 0.0
        v = w / norm_w
    raise SpectralNormError(
        f"power iteration did not converge in {max_iter} iterations",
        residual=residual,
    )


def tpr_fpr(est, truth) -> tuple[float, float]:
    """Support recovery rates over all ordered entries, diagonal included.

    TPR is the fraction of truly nonzero entries the estimate keeps nonzero;
    FPR is the fraction of truly zero entries the estimate turns nonzero.
    A truth with no nonzero entries is rejected; a truth with no zero
    entries (a dense design) gets FPR 0 by convention — callers that need
    to distinguish "no false positives" from "not applicable" should check
    ``(truth != 0).all()`` themselves.
    """
    e, t = _pair(est, truth)
    truth_nz = t != 0.0
    est_nz = e != 0.0
    n_nz = int(truth_nz.sum())
    if n_nz == 0:
        raise ValueError("truth matrix has no nonzero entries")
    tpr = int((est_nz & truth_nz).sum()) / n_nz
    n_zero = t.size - n_nz
    fpr = int((est_nz & ~truth_nz).sum()) / n_zero if n_zero else 0.0
    return tpr, fpr


def rate_check(points) -> float:
    """Least-squares slope of log error against log effective sample size.

    ``points`` is an iterable of ``(n_star, error)`` pairs; at least three
    distinct sample sizes with positive errors are required.
    """
    pts = [(float(n), float(err)) for n, err in points]
    if len({n for n, _ in pts}) < 3:
        raise ValueError(f"need >= 3 distinct sample sizes, got {len(pts)} points")
    if any(n <= 0 for n, _ in pts):
        raise ValueError("sample sizes must be positive")
    if any(err <= 0 for _, err in pts):
        raise ValueError("errors must be positive to fit a log-log slope")
    log_n = np.log([n for n, _ in pts])
    log_err = np.log([err for _, err in pts])
    return float(np.polyfit(log_n, log_err, 1)[0])


@dataclass(frozen=True)
class EvalReport:
    """Bundle of error metrics for one estimate against one truth.

    ``spectral_error`` is NaN when the power iteration failed to converge.
    ``rel_frobenius`` and ``max_abs`` are raw errors; ``tpr``/``fpr`` are
    rates in [0, 1]. ``metadata`` records context such as the scheme label
    or whether the FPR denominator was empty.
    """

    rel_frobenius: float
    max_abs: float
    spectral_error: float
    tpr: float
    fpr: float
    metadata: dict = field(default_factory=dict)

    CSV_COLUMNS = ("rel_frobenius", "max_abs", "spectral_error", "tpr", "fpr")

    def __post_init__(self):
        if self.rel_frobenius < 0 or self.max_abs < 0:
            raise ValueError("error metrics must be nonnegative")
        if not math.isnan(self.spectral_error) and self.spectral_error < 0:
            raise ValueError("spectral_error must be nonnegative or NaN")
        for name in ("tpr", "fpr"):
            r = getattr(self, name)
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {r}")

    @classmethod
    def evaluate(cls, est, truth, *, metadata: dict | None = None) -> "EvalReport":
        """Compute all metrics at once; spectral failure degrades to NaN."""
        try:
            spec_err = spectral_norm(_pair(est, truth)[0] - _entries(truth))
        except SpectralNormError:
            spec_err = math.nan
        tpr, fpr = tpr_fpr(est, truth)
        meta = dict(metadata or {})
        meta.setdefault("fpr_applicable", bool((_entries(truth) == 0.0).any()))
        return cls(
            rel_frobenius=rel_frobenius(est, truth),
            max_abs=max_abs_diff(est, truth),
            spectral_error=spec_err,
            tpr=tpr,
            fpr=fpr,
            metadata=meta,
        )

    def to_row(self) -> list:
        return [getattr(self, c) for c in self.CSV_COLUMNS]
