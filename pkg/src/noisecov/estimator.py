"""Noise-covariance estimators and thresholding rules.

The element-wise estimator averages localized products of pairwise
observation differences: for each common tick k of assets i and j, products
``(Y_i,l - Y_i,k)(Y_j,l - Y_j,k)`` over a small neighborhood of k are scaled
by half the neighborhood size and averaged over k. Neighborhoods are either
a time radius ``xi`` (in years) or ``K`` index neighbors on the pairwise
grid. Over short windows the latent-price increments are negligible against
the noise, so the average converges to the noise covariance entry.

Two sparsifiers operate on the raw matrix: a universal cutoff
``beta * sqrt(log p / n_star)`` and an adaptive entry-wise cutoff
``2 * sqrt(theta_ij * log p / n_ij)`` where ``theta_ij`` is the long-run
variance of the pair's zeta series (quadratic-spectral kernel, AR(1) plug-in
bandwidth).

Classes
-------
TimeWindow, IndexWindow, RateRule, Universal, Adaptive, NoThreshold,
EstimatorConfig, SparsityClassSpec, ZetaSeries, MatrixEstimate,
AdaptiveDiagnostics

Functions
---------
qs_kernel, ar1_coeff, andrews_bandwidth, longrun_variance, local_cov_k,
local_cov_xi, estimate_matrix, estimate_and_threshold, threshold_universal,
threshold_adaptive
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping

import numpy as np
import scipy.fft

from . import kernels
from .covmatrix import CovMatrix
from .errors import EstimationError
from .panel import AsyncPanel, PairGrid, PanelSummary, summarize

#: Bandwidths at or below this are treated as zero (theta falls back to the
#: lag-0 autocovariance); the bandwidth formula is undefined at h = 0.
H_EPS = 1e-12

#: AR(1) coefficient clamp; the bandwidth has a (1-x)^-4 pole at x = 1.
AR1_CLAMP = 0.97

#: Rows per long-run-variance FFT batch. Fixed so that identical zeta series
#: fed in the same order produce bit-identical theta regardless of the code
#: path (in-memory store vs. streaming sweep).
_THETA_CHUNK = 128


# ---------------------------------------------------------------------------
# configuration types


@dataclass(frozen=True)
class TimeWindow:
    """Neighborhoods are all ticks within time radius ``xi`` (years)."""

    xi: float

    def __post_init__(self):
        if not self.xi > 0:
            raise ValueError(f"xi must be positive, got {self.xi}")


@dataclass(frozen=True)
class IndexWindow:
    """Neighborhoods are the ``K`` nearest grid positions on each side."""

    k: int

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"K must be an integer >= 1, got {self.k}")


@dataclass(frozen=True)
class RateRule:
    """Pick the time radius from the sample size: ``xi = c * n_star**-kappa``.

    ``kappa`` must lie in (1/2, 1]; ``c`` defaults to 1 (only the exponent is
    pinned by the convergence theory).
    """

    kappa: float
    c: float = 1.0

    def __post_init__(self):
        if not 0.5 < self.kappa <= 1.0:
            raise ValueError(f"kappa must be in (1/2, 1], got {self.kappa}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")


@dataclass(frozen=True)
class Universal:
    """Universal thresholding with cutoff ``beta * sqrt(log p / n_star)``."""

    beta: float

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")


@dataclass(frozen=True)
class Adaptive:
    """Entry-wise adaptive thresholding with long-run-variance plug-in."""


@dataclass(frozen=True)
class NoThreshold:
    """Keep the raw estimate."""


_KERNELS: dict[str, Callable] = {}  # filled after qs_kernel is defined


@dataclass(frozen=True)
class EstimatorConfig:
    """Everything the matrix estimator needs besides the panel.

    Parameters
    ----------
    window : TimeWindow | IndexWindow | RateRule
    threshold : Universal | Adaptive | NoThreshold | None
        ``None`` means no thresholding.
    diagonal_exempt : bool
        When true, thresholding never zeroes diagonal entries. Off by
        default: the cutoff rules as defined apply to every entry.
    kernel : str
        Long-run-variance kernel selector; only ``"qs"`` (quadratic
        spectral) exists in this version.
    clamp_negative_theta : bool
        Clamp negative long-run-variance estimates to zero so adaptive
        cutoffs stay real.
    """

    window: TimeWindow | IndexWindow | RateRule
    threshold: Universal | Adaptive | NoThreshold | None = Adaptive()
    diagonal_exempt: bool = False
    kernel: str = "qs"
    clamp_negative_theta: bool = True

    def __post_init__(self):
        if not isinstance(self.window, (TimeWindow, IndexWindow, RateRule)):
            raise TypeError(f"unsupported window rule: {self.window!r}")
        if self.threshold is None:
            object.__setattr__(self, "threshold", NoThreshold())
        elif not isinstance(self.threshold, (Universal, Adaptive, NoThreshold)):
            raise TypeError(f"unsupported threshold rule: {self.threshold!r}")
        if self.kernel not in _KERNELS:
            raise ValueError(
                f"unknown kernel {self.kernel!r}; available: {sorted(_KERNELS)}"
            )


@dataclass(frozen=True)
class SparsityClassSpec:
    """Parameters (q, c_p, M) of the sparse covariance class.

    Matrices belong to the class when every row's l_q norm of off-diagonal-
    style magnitudes ``sum_j |m_ij|^q`` is at most ``c_p`` and variances are
    at most ``M``. Used by test generators and rate checks only.
    """

    q: float
    c_p: float
    M: float

    def __post_init__(self):
        if not 0 <= self.q < 1:
            raise ValueError(f"q must be in [0, 1), got {self.q}")
        if not (self.c_p > 0 and self.M > 0):
            raise ValueError("c_p and M must be positive")

    def contains(self, matrix: np.ndarray) -> bool:
        """Membership check for a symmetric matrix."""
        m = np.asarray(matrix, dtype=np.float64)
        if np.any(np.diag(m) > self.M):
            return False
        row_norms = (np.abs(m) ** self.q).sum(axis=1)
        return bool(np.all(row_norms <= self.c_p))


# ---------------------------------------------------------------------------
# long-run variance machinery


def qs_kernel(x):
    """Quadratic spectral lag-weighting kernel.

    ``K(x) = 25 / (12 pi^2 x^2) * (sin(6 pi x / 5) / (6 pi x / 5) - cos(6 pi x / 5))``

    with the removable singularity ``K(0) = 1``. Even in ``x`` and bounded by
    1 in magnitude. Accepts scalars or arrays.
    """
    x_arr = np.asarray(x, dtype=np.float64)
    y = (1.2 * np.pi) * x_arr
    small = np.abs(y) < 1e-2
    y_safe = np.where(small, 1.0, y)
    # substituting y = 6 pi x / 5 turns the prefactor into 3 / y^2
    closed = (3.0 / y_safe**2) * (np.sin(y_safe) / y_safe - np.cos(y_safe))
    y2 = y * y
    series = 1.0 - y2 / 10.0 + y2 * y2 / 280.0
    out = np.where(small, series, closed)
    if np.isscalar(x) or x_arr.ndim == 0:
        return float(out)
    return out


_KERNELS["qs"] = qs_kernel


def ar1_coeff(series, *, with_flag: bool = False):
    """Least-squares AR(1) slope of a series on its own lag, after centering.

    Fit without intercept on the centered values, then clamped into
    ``[-0.97, 0.97]`` so the bandwidth formula stays finite. A constant
    series has no serial dependence to fit; it yields 0 with the degenerate
    flag set.

    Parameters
    ----------
    series : array-like, length >= 3
    with_flag : bool
        When true, return ``(coefficient, degenerate)`` instead of just the
        coefficient.
    """
    z = np.asarray(series, dtype=np.float64).ravel()
    if z.size < 3:
        raise ValueError(f"need at least 3 observations, got {z.size}")
    coef, degenerate = _ar1_many(z[None, :])
    value = float(coef[0])
    if with_flag:
        return value, bool(degenerate[0])
    return value


def _ar1_many(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized AR(1) fit over the rows of a 2-d array."""
    C = Z - Z.mean(axis=1, keepdims=True)
    num = (C[:, 1:] * C[:, :-1]).sum(axis=1)
    den = (C[:, :-1] ** 2).sum(axis=1)
    constant = np.all(Z == Z[:, :1], axis=1)
    degenerate = constant | (den == 0.0)
    coef = np.where(degenerate, 0.0, num / np.where(den == 0.0, 1.0, den))
    return np.clip(coef, -AR1_CLAMP, AR1_CLAMP), degenerate


def andrews_bandwidth(n: int, vartheta: float) -> float:
    """Plug-in bandwidth ``1.3221 * (4 n vartheta^2 (1-vartheta)^-4)^(1/5)``.

    Zero exactly when ``vartheta`` is zero; requires ``|vartheta| < 1``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not abs(vartheta) < 1:
        raise ValueError(f"|vartheta| must be < 1, got {vartheta}")
    return 1.3221 * (4.0 * n * vartheta**2 / (1.0 - vartheta) ** 4) ** 0.2


def longrun_variance(series, kernel: Callable = qs_kernel, h: float | None = None,
                     *, clamp_negative: bool = True) -> float:
    """Kernel-weighted long-run variance of a series.

    ``theta = sum_{l=-n+1}^{n-1} kernel(l / h) * H(l)`` where ``H(l)`` is the
    lag-l autocovariance of the centered series (1/n normalization). The lag
    sums are evaluated exactly via zero-padded FFTs.

    Parameters
    ----------
    series : array-like, length >= 3
    kernel : callable
        Vectorized lag-weight function; defaults to :func:`qs_kernel`.
    h : float, optional
        Bandwidth. When omitted it is computed from the data with
        :func:`ar1_coeff` and :func:`andrews_bandwidth`. A bandwidth at or
        below ``H_EPS`` reduces theta to the lag-0 term ``H(0)``.
    clamp_negative : bool
        Clamp a negative result to 0 (finite-sample kernel sums can dip
        below zero).
    """
    z = np.asarray(series, dtype=np.float64).ravel()
    if z.size < 3:
        raise ValueError(f"need at least 3 observations, got {z.size}")
    h_arr = None if h is None else np.asarray([float(h)])
    theta, _, _, _ = _theta_batch(z[None, :], kernel, clamp_negative, h_arr)
    return float(theta[0])


def _theta_batch(
    Z: np.ndarray,
    kernel: Callable,
    clamp_negative: bool,
    h: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Long-run variances of the rows of ``Z`` (all the same length).

    Returns ``(theta, vartheta, h, degenerate)`` arrays. When ``h`` is given
    the AR(1) stage is skipped and ``vartheta`` is NaN.
    """
    m, L = Z.shape
    constant = np.all(Z == Z[:, :1], axis=1)
    if h is None:
        vartheta, degenerate = _ar1_many(Z)
        n_arr = np.full(m, L, dtype=np.float64)
        h = 1.3221 * (4.0 * n_arr * vartheta**2 / (1.0 - vartheta) ** 4) ** 0.2
    else:
        vartheta = np.full(m, np.nan)
        degenerate = constant.copy()
        h = np.broadcast_to(np.asarray(h, dtype=np.float64), (m,)).copy()

    C = Z - Z.mean(axis=1, keepdims=True)
    nfft = scipy.fft.next_fast_len(2 * L - 1, real=True)
    F = scipy.fft.rfft(C, nfft, axis=1)
    psd = F.real**2 + F.imag**2
    acov = scipy.fft.irfft(psd, nfft, axis=1)[:, :L] / L

    lags = np.arange(1, L, dtype=np.float64)
    live = h > H_EPS
    h_safe = np.where(live, h, 1.0)
    weights = kernel(lags[None, :] / h_safe[:, None])
    weights = np.where(live[:, None], weights, 0.0)
    theta = acov[:, 0] + 2.0 * (weights * acov[:, 1:]).sum(axis=1)
    theta = np.where(constant, 0.0, theta)
    if clamp_negative:
        theta = np.maximum(theta, 0.0)
    return theta, vartheta, h, degenerate


class _ThetaAccumulator:
    """Streams zeta rows into fixed-size, length-grouped FFT batches.

    Feeding the same rows in the same order always produces the same
    batches, hence bit-identical theta values — this is what keeps the
    in-memory and streaming estimation paths exactly equal.
    """

    def __init__(self, kernel: Callable, clamp_negative: bool):
        self._kernel = kernel
        self._clamp = clamp_negative
        self._groups: dict[int, list[tuple[tuple[int, int], np.ndarray]]] = {}
        self.theta: dict[tuple[int, int], float] = {}
        self.vartheta: dict[tuple[int, int], float] = {}
        self.bandwidth: dict[tuple[int, int], float] = {}
        self.degenerate: dict[tuple[int, int], bool] = {}

    def add(self, key: tuple[int, int], row: np.ndarray) -> None:
        group = self._groups.setdefault(row.size, [])
        group.append((key, row))
        if len(group) == _THETA_CHUNK:
            self._flush(row.size)

    def _flush(self, length: int) -> None:
        group = self._groups.pop(length, [])
        if not group:
            return
        Z = np.stack([row for _, row in group])
        theta, vartheta, h, degen = _theta_batch(Z, self._kernel, self._clamp)
        for idx, (key, _) in enumerate(group):
            self.theta[key] = float(theta[idx])
            self.vartheta[key] = float(vartheta[idx])
            self.bandwidth[key] = float(h[idx])
            self.degenerate[key] = bool(degen[idx])

    def finish(self) -> None:
        for length in list(self._groups):
            self._flush(length)


# ---------------------------------------------------------------------------
# element-wise estimators


@dataclass(frozen=True)
class ZetaSeries:
    """Per-observation localized products for one asset pair.

    The mean of ``values`` is the pair's covariance estimate; the series
    itself feeds the long-run-variance plug-in of the adaptive threshold.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size

    def mean(self) -> float:
        return float(np.mean(self.values))


def local_cov_k(grid: PairGrid, K: int) -> tuple[float, ZetaSeries]:
    """Covariance estimate over the index window of half-width ``K``.

    ``zeta_k = sum_{0 < |l-k| <= K} (Y_i,l - Y_i,k)(Y_j,l - Y_j,k) / (2 N_k)``
    with ``N_k`` the clipped window size; the estimate is the mean of the
    zeta series (identical summation, so the two agree exactly).

    Raises
    ------
    EstimationError
        If the grid has fewer than 2 points.
    """
    if int(K) != K or K < 1:
        raise ValueError(f"K must be an integer >= 1, got {K}")
    if grid.n < 2:
        raise EstimationError(
            f"pair ({grid.asset_i}, {grid.asset_j}): need at least 2 common "
            f"ticks, got {grid.n}"
        )
    zeta = kernels.zeta_k(grid.values_i, grid.values_j, int(K))
    series = ZetaSeries(zeta)
    return series.mean(), series


def local_cov_xi(grid: PairGrid, xi: float, tick_duration: float) -> float:
    """Covariance estimate over the time window of radius ``xi`` (years).

    Same localized products as :func:`local_cov_k` but with neighbors
    selected by time distance: ``|t_l - t_k| <= xi``. Grid points whose
    window is empty contribute nothing (their term is skipped while the
    1/n averaging keeps the full count).

    Raises
    ------
    EstimationError
        If the grid has fewer than 2 points or every neighborhood is empty.
    """
    if not xi > 0:
        raise ValueError(f"xi must be positive, got {xi}")
    if not tick_duration > 0:
        raise ValueError(f"tick_duration must be positive, got {tick_duration}")
    if grid.n < 2:
        raise EstimationError(
            f"pair ({grid.asset_i}, {grid.asset_j}): need at least 2 common "
            f"ticks, got {grid.n}"
        )
    zeta, counts = kernels.zeta_xi(
        grid.ticks, grid.values_i, grid.values_j, float(xi), float(tick_duration)
    )
    if not counts.any():
        raise EstimationError(
            f"pair ({grid.asset_i}, {grid.asset_j}): no tick has a neighbor "
            f"within xi={xi}"
        )
    return float(np.mean(zeta))


@dataclass(frozen=True)
class PairFlag:
    """A pair whose entry could not be estimated normally."""

    i: int
    j: int
    reason: str


@dataclass(frozen=True)
class MatrixEstimate:
    """Result of :func:`estimate_matrix`.

    Iterating yields ``(matrix, zetas, summary)`` so the result unpacks as a
    3-tuple; ``pair_n`` (the matrix of pairwise sample sizes) and ``flags``
    carry the diagnostics.
    """

    matrix: CovMatrix
    zetas: dict[tuple[int, int], ZetaSeries]
    summary: PanelSummary
    pair_n: np.ndarray
    flags: tuple[PairFlag, ...]

    def __iter__(self) -> Iterator:
        return iter((self.matrix, self.zetas, self.summary))


def _resolved_window(config: EstimatorConfig, panel: AsyncPanel,
                     n_star: int | None = None):
    """Turn a window rule into a concrete ('k', K) or ('xi', xi) choice."""
    w = config.window
    if isinstance(w, IndexWindow):
        return "k", int(w.k)
    if isinstance(w, TimeWindow):
        return "xi", float(w.xi)
    if n_star is None:
        n_star = summarize(panel).n_star
    if n_star < 1:
        raise EstimationError(
            "rate rule needs a positive pairwise sample size; some pair has "
            "an empty intersection"
        )
    return "xi", w.c * float(n_star) ** (-w.kappa)


def _window_label(mode: str, value) -> dict:
    if mode == "k":
        return {"kind": "index", "K": value}
    return {"kind": "time", "xi": value}


def estimate_matrix(panel: AsyncPanel, config: EstimatorConfig) -> MatrixEstimate:
    """Estimate the full noise-covariance matrix of a panel.

    Each pair (i <= j) is estimated once on its synchronized grid and the
    value written to both triangles, so the output is exactly symmetric.
    Pairs that cannot be estimated (no or a single common tick, or an empty
    time window everywhere) get entry 0 and a flag instead of failing the
    whole matrix — unless the pair is a diagonal one, which is fatal.

    Returns
    -------
    MatrixEstimate
        Unpacks as ``(matrix, zetas, summary)``. ``zetas`` holds the
        per-pair series keyed by ``(i, j)`` with ``i <= j`` — for index
        windows only, time windows do not define one.

    Notes
    -----
    Thresholding is separate: compose with :func:`threshold_universal` or
    :func:`threshold_adaptive`, or use :func:`estimate_and_threshold` to do
    both in one memory-lean pass.
    """
    sweep = _sweep(panel, config, want_zetas=True, want_theta=False)
    meta = {
        "window_rule": _window_label(sweep.mode, sweep.window_value),
        "threshold_rule": {"kind": "none"},
        "n_star": sweep.summary.n_star,
    }
    matrix = CovMatrix(sweep.entries, panel.assets, meta)
    return MatrixEstimate(matrix, sweep.zetas, sweep.summary, sweep.counts, tuple(sweep.flags))


@dataclass
class _SweepResult:
    entries: np.ndarray
    counts: np.ndarray
    zetas: dict[tuple[int, int], ZetaSeries]
    theta_acc: "_ThetaAccumulator | None"
    flags: list[PairFlag]
    summary: PanelSummary
    mode: str
    window_value: float


def _sweep(panel: AsyncPanel, config: EstimatorConfig, *, want_zetas: bool,
           want_theta: bool) -> _SweepResult:
    """One pass over all (i <= j) pairs: estimates, sizes, optional extras.

    Zeta rows are fed to the theta accumulator in pair order, which pins the
    FFT batch composition (see _ThetaAccumulator).
    """
    p = panel.p
    mode, wval = _resolved_window(config, panel)
    kernel_fn = _KERNELS[config.kernel]
    entries = np.zeros((p, p))
    counts = np.zeros((p, p), dtype=np.int64)
    zetas: dict[tuple[int, int], ZetaSeries] = {}
    flags: list[PairFlag] = []
    acc = _ThetaAccumulator(kernel_fn, config.clamp_negative_theta) if want_theta else None

    for i in range(p):
        for j in range(i, p):
            if i == j:
                grid = PairGrid(i, i, panel.ticks[i], panel.values[i], panel.values[i])
            elif panel.synchronous:
                grid = PairGrid(i, j, panel.ticks[0], panel.values[i], panel.values[j])
            else:
                idx_i, idx_j = kernels.intersect_sorted(panel.ticks[i], panel.ticks[j])
                grid = PairGrid(
                    i, j,
                    panel.ticks[i][idx_i],
                    panel.values[i][idx_i],
                    panel.values[j][idx_j],
                )
            counts[i, j] = counts[j, i] = grid.n
            if grid.n < 2:
                reason = "empty intersection" if grid.n == 0 else "single common tick"
                if i == j:
                    raise EstimationError(f"asset {i}: {reason}")
                flags.append(PairFlag(i, j, reason))
                continue
            if mode == "k":
                zeta = kernels.zeta_k(grid.values_i, grid.values_j, int(wval))
                value = float(np.mean(zeta))
                if want_zetas:
                    zetas[(i, j)] = ZetaSeries(zeta)
                if acc is not None and zeta.size >= 3:
                    # same length filter as threshold_adaptive: shorter
                    # series cannot support the AR(1) fit and fall back
                    acc.add((i, j), zeta)
            else:
                zeta, zcounts = kernels.zeta_xi(
                    grid.ticks, grid.values_i, grid.values_j,
                    float(wval), panel.tick_duration,
                )
                if not zcounts.any():
                    if i == j:
                        raise EstimationError(
                            f"asset {i}: no tick has a neighbor within xi={wval}"
                        )
                    flags.append(PairFlag(i, j, "all neighborhoods empty"))
                    continue
                value = float(np.mean(zeta))
            entries[i, j] = entries[j, i] = value
    if acc is not None:
        acc.finish()

    if panel.synchronous:
        n_union = panel.ticks[0].size
    else:
        n_union = np.unique(np.concatenate(panel.ticks)).size
    pair_sizes = counts[np.triu_indices(p)]
    empty = tuple(
        (f.i, f.j) for f in flags if f.reason == "empty intersection"
    )
    summary = PanelSummary(
        n=n_union,
        n_star=int(pair_sizes.min()),
        n_pair_max=int(pair_sizes.max()),
        empty_pairs=empty,
    )
    return _SweepResult(entries, counts, zetas, acc, flags, summary, mode, wval)


# ---------------------------------------------------------------------------
# thresholding


def _as_entries(est) -> tuple[np.ndarray, "CovMatrix | None"]:
    if isinstance(est, CovMatrix):
        return est.entries, est
    arr = np.asarray(est, dtype=np.float64)
    return arr, None


def threshold_universal(est, beta: float, n_star: int, p: int | None = None,
                        *, diagonal_exempt: bool = False):
    """Zero every entry smaller in magnitude than ``beta sqrt(log p / n_star)``.

    Entries with ``|value| >= cutoff`` are kept unchanged, the rest become
    exactly zero; symmetry is preserved. With ``p = 1`` the cutoff is zero
    and the matrix passes through unchanged.

    Parameters
    ----------
    est : CovMatrix or ndarray
        The matrix to sparsify; the return type matches the input type.
    beta : float
        Nonnegative tuning constant.
    n_star : int
        Effective pairwise sample size (smallest overlap count), >= 2.
    p : int, optional
        Dimension used inside ``log p``; defaults to the matrix dimension.
    diagonal_exempt : bool
        Keep diagonal entries regardless of the cutoff.
    """
    entries, cov = _as_entries(est)
    if p is None:
        p = entries.shape[0]
    if not beta >= 0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    if n_star < 2:
        raise ValueError(f"n_star must be >= 2, got {n_star}")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    cutoff = beta * math.sqrt(math.log(p) / n_star)
    keep = np.abs(entries) >= cutoff
    if diagonal_exempt:
        np.fill_diagonal(keep, True)
    out = np.where(keep, entries, 0.0)
    if cov is None:
        return out
    meta = dict(cov.meta)
    meta["threshold_rule"] = {
        "kind": "universal",
        "beta": beta,
        "cutoff": cutoff,
        "diagonal_exempt": diagonal_exempt,
    }
    return CovMatrix(out, cov.assets, meta)


@dataclass(frozen=True)
class AdaptiveDiagnostics:
    """Per-pair internals of the adaptive threshold.

    All matrices are symmetric with NaN where a quantity does not exist
    (e.g. theta of a pair that fell back to the universal rule).
    ``fallback_pairs`` lists (i, j) entries cut with the universal fallback
    because their zeta series was missing or too short;
    ``degenerate_fit_pairs`` lists pairs whose AR(1) fit was degenerate
    (constant series).
    """

    cutoffs: np.ndarray
    theta: np.ndarray
    vartheta: np.ndarray
    bandwidth: np.ndarray
    fallback_pairs: tuple[tuple[int, int], ...]
    degenerate_fit_pairs: tuple[tuple[int, int], ...]


def _apply_adaptive_cutoffs(
    entries: np.ndarray,
    pair_n: np.ndarray,
    acc: _ThetaAccumulator,
    log_p: float,
    *,
    diagonal_exempt: bool,
    n_star: int | None,
    fallback_beta: float,
) -> tuple[np.ndarray, AdaptiveDiagnostics]:
    """Apply per-pair cutoffs from an accumulator; shared by both code paths."""
    dim = entries.shape[0]
    cutoffs = np.full((dim, dim), np.nan)
    theta_m = np.full((dim, dim), np.nan)
    vartheta_m = np.full((dim, dim), np.nan)
    bandwidth_m = np.full((dim, dim), np.nan)
    degenerate: list[tuple[int, int]] = []
    fallback: list[tuple[int, int]] = []
    for i in range(dim):
        for j in range(i, dim):
            if (i, j) not in acc.theta:
                fallback.append((i, j))
                continue
            theta = acc.theta[(i, j)]
            cut = 2.0 * math.sqrt(theta * log_p / pair_n[i, j])
            cutoffs[i, j] = cutoffs[j, i] = cut
            theta_m[i, j] = theta_m[j, i] = theta
            vartheta_m[i, j] = vartheta_m[j, i] = acc.vartheta[(i, j)]
            bandwidth_m[i, j] = bandwidth_m[j, i] = acc.bandwidth[(i, j)]
            if acc.degenerate[(i, j)]:
                degenerate.append((i, j))
    if fallback:
        if n_star is None:
            usable = pair_n[pair_n >= 2]
            n_star = int(usable.min()) if usable.size else 0
        fb_cutoff = (
            fallback_beta * math.sqrt(log_p / n_star) if n_star >= 2 else math.inf
        )
        for i, j in fallback:
            cutoffs[i, j] = cutoffs[j, i] = fb_cutoff
    keep = np.abs(entries) >= cutoffs
    if diagonal_exempt:
        np.fill_diagonal(keep, True)
    out = np.where(keep, entries, 0.0)
    diag = AdaptiveDiagnostics(
        cutoffs, theta_m, vartheta_m, bandwidth_m, tuple(fallback), tuple(degenerate)
    )
    return out, diag


def threshold_adaptive(
    est,
    zetas: Mapping[tuple[int, int], "ZetaSeries | np.ndarray"],
    pair_n: np.ndarray,
    p: int | None = None,
    *,
    diagonal_exempt: bool = False,
    clamp_negative_theta: bool = True,
    kernel: Callable = qs_kernel,
    n_star: int | None = None,
    fallback_beta: float = 2.0,
    return_diagnostics: bool = False,
):
    """Adaptive entry-wise thresholding with long-run-variance plug-in.

    Entry (i, j) survives when ``|value| >= 2 sqrt(theta_ij log(p) / n_ij)``
    where ``theta_ij`` is the long-run variance of the pair's zeta series
    under the AR(1)/Andrews plug-in bandwidth. Pairs without a usable zeta
    series (missing, or shorter than 3) fall back to the universal cutoff
    with ``beta = fallback_beta`` and are flagged in the diagnostics; the
    universal fallback needs ``n_star`` (defaults to the smallest positive
    entry of ``pair_n``).

    Parameters
    ----------
    est : CovMatrix or ndarray
        Raw estimate; the return type matches.
    zetas : mapping
        ``(i, j) -> zeta series`` for ``i <= j`` as produced by
        :func:`estimate_matrix`.
    pair_n : ndarray
        Symmetric matrix of pairwise sample sizes ``n_ij``.
    p : int, optional
        Dimension inside ``log p``; defaults to the matrix dimension.
    return_diagnostics : bool
        When true, return ``(matrix, AdaptiveDiagnostics)``.
    """
    entries, cov = _as_entries(est)
    dim = entries.shape[0]
    if p is None:
        p = dim
    pair_n = np.asarray(pair_n)
    if pair_n.shape != entries.shape:
        raise ValueError(f"pair_n shape {pair_n.shape} != matrix shape {entries.shape}")
    log_p = math.log(p)

    acc = _ThetaAccumulator(kernel, clamp_negative_theta)
    for i in range(dim):
        for j in range(i, dim):
            z = zetas.get((i, j))
            if z is None:
                continue
            row = z.values if isinstance(z, ZetaSeries) else np.asarray(z, dtype=np.float64)
            if row.size < 3:
                continue
            acc.add((i, j), row)
    acc.finish()

    out, diag = _apply_adaptive_cutoffs(
        entries, pair_n, acc, log_p,
        diagonal_exempt=diagonal_exempt,
        n_star=n_star,
        fallback_beta=fallback_beta,
    )
    if cov is None:
        result = out
    else:
        meta = dict(cov.meta)
        meta["threshold_rule"] = {
            "kind": "adaptive",
            "fallback_beta": fallback_beta,
            "diagonal_exempt": diagonal_exempt,
        }
        result = CovMatrix(out, cov.assets, meta)
    if return_diagnostics:
        return result, diag
    return result


@dataclass(frozen=True)
class ThresholdedEstimate:
    """Raw and thresholded matrices from one streaming pass."""

    raw: CovMatrix
    thresholded: CovMatrix
    summary: PanelSummary
    pair_n: np.ndarray
    flags: tuple[PairFlag, ...]
    diagnostics: AdaptiveDiagnostics | None


def estimate_and_threshold(panel: AsyncPanel, config: EstimatorConfig) -> ThresholdedEstimate:
    """Estimate and threshold in one pass without storing all zeta series.

    Produces bit-identical matrices to ``estimate_matrix`` followed by the
    configured threshold function, but long-run variances are computed from
    zeta rows as they stream by, so peak memory stays bounded by the FFT
    batch instead of the full per-pair store. Index windows only (adaptive
    thresholding needs zeta series, which time windows do not define).
    """
    rule = config.threshold
    want_theta = isinstance(rule, Adaptive)
    if want_theta and not isinstance(config.window, IndexWindow):
        raise ValueError("adaptive thresholding requires an index window (K)")
    sweep = _sweep(panel, config, want_zetas=False, want_theta=want_theta)
    window_label = _window_label(sweep.mode, sweep.window_value)
    base_meta = {
        "window_rule": window_label,
        "threshold_rule": {"kind": "none"},
        "n_star": sweep.summary.n_star,
    }
    raw = CovMatrix(sweep.entries, panel.assets, base_meta)

    diagnostics = None
    if isinstance(rule, NoThreshold):
        thresholded = raw
    elif isinstance(rule, Universal):
        thresholded = threshold_universal(
            raw, rule.beta, sweep.summary.n_star, panel.p,
            diagonal_exempt=config.diagonal_exempt,
        )
    else:
        out, diagnostics = _apply_adaptive_cutoffs(
            sweep.entries, sweep.counts, sweep.theta_acc, math.log(panel.p),
            diagonal_exempt=config.diagonal_exempt,
            n_star=None,
            fallback_beta=2.0,
        )
        meta = dict(base_meta)
        meta["threshold_rule"] = {
            "kind": "adaptive",
            "fallback_beta": 2.0,
            "diagonal_exempt": config.diagonal_exempt,
        }
        thresholded = CovMatrix(out, panel.assets, meta)
    return ThresholdedEstimate(
        raw, thresholded, sweep.summary, sweep.counts, tuple(sweep.flags), diagnostics
    )
