"""Pure-NumPy reference implementations of the numerical kernels.

Every function here has a twin in :mod:`noisecov.kernels.numba_impl` with the
same signature and (up to floating-point summation order) the same result.
This module is the fallback when numba is unavailable or when
``NOISECOV_BACKEND=numpy`` is set.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def intersect_sorted(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Positions of the common elements of two sorted unique int64 arrays.

    Returns ``(idx_a, idx_b)`` such that ``a[idx_a] == b[idx_b]`` is the
    sorted intersection.
    """
    _, idx_a, idx_b = np.intersect1d(a, b, assume_unique=True, return_indices=True)
    return idx_a.astype(np.int64), idx_b.astype(np.int64)


def zeta_k(vi: np.ndarray, vj: np.ndarray, K: int) -> np.ndarray:
    """Per-observation localized products over the index window of half-width K.

    ``zeta[k] = sum_{0 < |l-k| <= K} (vi[l]-vi[k])*(vj[l]-vj[k]) / (2*N_k)``
    with ``N_k = min(k, K) + min(n-1-k, K)`` (0-based).
    """
    n = vi.size
    S = np.zeros(n)
    for d in range(1, min(K, n - 1) + 1):
        q = (vi[d:] - vi[:-d]) * (vj[d:] - vj[:-d])
        S[:-d] += q
        S[d:] += q
    idx = np.arange(n)
    counts = np.minimum(idx, K) + np.minimum(n - 1 - idx, K)
    return S / (2.0 * counts)


def zeta_xi(
    ticks: np.ndarray,
    vi: np.ndarray,
    vj: np.ndarray,
    xi: float,
    tick_duration: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Localized products over the time window of radius ``xi`` (in years).

    A neighbor l of k qualifies when ``|ticks[l]-ticks[k]| * tick_duration <= xi``.
    Returns ``(zeta, counts)``; entries with an empty neighborhood get zeta 0
    and count 0 (the caller decides how to treat them).
    """
    n = ticks.size
    S = np.zeros(n)
    counts = np.zeros(n, dtype=np.int64)
    for d in range(1, n):
        gaps = (ticks[d:] - ticks[:-d]).astype(np.float64) * tick_duration
        mask = gaps <= xi
        if not mask.any():
            # minimum gap at offset d is nondecreasing in d, so no larger
            # offset can qualify either
            break
        q = (vi[d:] - vi[:-d]) * (vj[d:] - vj[:-d]) * mask
        S[:-d] += q
        S[d:] += q
        counts[:-d] += mask
        counts[d:] += mask
    zeta = np.where(counts > 0, S / (2.0 * np.maximum(counts, 1)), 0.0)
    return zeta, counts


def heston_evolve(
    v0: np.ndarray,
    dB: np.ndarray,
    dW: np.ndarray,
    kappa: float,
    sigma_bar_sq: float,
    s: float,
    dt: float,
) -> np.ndarray:
    """Full-truncation Euler scheme for the log-price paths.

    ``X[i,k] = X[i,k-1] + sqrt(v) * dB[i,k]`` with the variance updated as
    ``v <- max(v + kappa*(sigma_bar_sq - v)*dt + s*sqrt(v)*dW[i,k], 0)``,
    where ``v`` is the variance at the start of step k. ``dB``/``dW`` are
    pre-scaled increments (already multiplied by sqrt(dt)).
    """
    p, n = dB.shape
    X = np.empty((p, n))
    v = v0.copy()
    x = np.zeros(p)
    for k in range(n):
        sv = np.sqrt(v)
        x = x + sv * dB[:, k]
        X[:, k] = x
        v = np.maximum(v + kappa * (sigma_bar_sq - v) * dt + s * sv * dW[:, k], 0.0)
    return X
