"""numba-accelerated kernels; importing this module requires numba.

The loop bodies mirror :mod:`noisecov.kernels.numpy_impl` exactly (same
neighbor sets, same count formulas). Within this backend, ``zeta_xi`` on a
window that coincides with an index window accumulates in the same order as
``zeta_k``, so the two agree bit-for-bit.
"""

from __future__ import annotations

import numpy as np
from numba import njit

BACKEND_NAME = "numba"


@njit(cache=True)
def _intersect_sorted(a, b):
    na, nb = a.size, b.size
    out_a = np.empty(min(na, nb), dtype=np.int64)
    out_b = np.empty(min(na, nb), dtype=np.int64)
    i = j = m = 0
    while i < na and j < nb:
        if a[i] == b[j]:
            out_a[m] = i
            out_b[m] = j
            m += 1
            i += 1
            j += 1
        elif a[i] < b[j]:
            i += 1
        else:
            j += 1
    return out_a[:m].copy(), out_b[:m].copy()


def intersect_sorted(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two-pointer merge; see the numpy twin for the contract."""
    return _intersect_sorted(a, b)


@njit(cache=True)
def _zeta_k(vi, vj, K):
    n = vi.size
    out = np.empty(n)
    for k in range(n):
        lo = k - K
        if lo < 0:
            lo = 0
        hi = k + K
        if hi > n - 1:
            hi = n - 1
        acc = 0.0
        for l in range(lo, hi + 1):
            if l != k:
                acc += (vi[l] - vi[k]) * (vj[l] - vj[k])
        left = k if k < K else K
        right = (n - 1 - k) if (n - 1 - k) < K else K
        out[k] = acc / (2.0 * (left + right))
    return out


def zeta_k(vi: np.ndarray, vj: np.ndarray, K: int) -> np.ndarray:
    """Index-window localized products; see the numpy twin for the contract."""
    return _zeta_k(vi, vj, K)


@njit(cache=True)
def _zeta_xi(ticks, vi, vj, xi, tick_duration):
    n = ticks.size
    zeta = np.zeros(n)
    counts = np.zeros(n, dtype=np.int64)
    for k in range(n):
        lo = k
        while lo > 0 and (ticks[k] - ticks[lo - 1]) * tick_duration <= xi:
            lo -= 1
        hi = k
        while hi < n - 1 and (ticks[hi + 1] - ticks[k]) * tick_duration <= xi:
            hi += 1
        cnt = hi - lo
        if cnt == 0:
            continue
        acc = 0.0
        for l in range(lo, hi + 1):
            if l != k:
                acc += (vi[l] - vi[k]) * (vj[l] - vj[k])
        zeta[k] = acc / (2.0 * cnt)
        counts[k] = cnt
    return zeta, counts


def zeta_xi(
    ticks: np.ndarray,
    vi: np.ndarray,
    vj: np.ndarray,
    xi: float,
    tick_duration: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Time-window localized products; see the numpy twin for the contract."""
    return _zeta_xi(ticks, vi, vj, float(xi), float(tick_duration))


@njit(cache=True)
def _heston_evolve(v0, dB, dW, kappa, sigma_bar_sq, s, dt):
    p, n = dB.shape
    X = np.empty((p, n))
    v = v0.copy()
    for k in range(n):
        for i in range(p):
            sv = np.sqrt(v[i])
            prev = X[i, k - 1] if k > 0 else 0.0
            X[i, k] = prev + sv * dB[i, k]
            vn = v[i] + kappa * (sigma_bar_sq - v[i]) * dt + s * sv * dW[i, k]
            v[i] = vn if vn > 0.0 else 0.0
    return X


def heston_evolve(
    v0: np.ndarray,
    dB: np.ndarray,
    dW: np.ndarray,
    kappa: float,
    sigma_bar_sq: float,
    s: float,
    dt: float,
) -> np.ndarray:
    """Full-truncation Euler loop; see the numpy twin for the contract."""
    return _heston_evolve(
        v0, dB, dW, float(kappa), float(sigma_bar_sq), float(s), float(dt)
    )
