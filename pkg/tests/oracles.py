"""Independent brute-force reference implementations used by the tests.

Everything here is written as direct, naive transcription of the defining
formulas — O(n^2) double loops, no vectorization, no shared code with the
package — so the fast implementations can be checked against them. Frozen
numeric constants were computed with mpmath at 40 digits.
"""

import math

import numpy as np

# mpmath-frozen reference values (40-digit evaluation, truncated to double)
QS_AT_1 = 0.1378605816745935486929596
QS_AT_HALF = 0.6869307300640594466343511
QS_AT_0005 = 0.9999644698750180473916781
ANDREWS_100_HALF = 5.782135991841631673300574
UNIVERSAL_CUTOFF_2_100_2 = 0.1665109222315395512706329
CORR_P2_OFFDIAG = -0.6246950475544242620964115


def brute_zeta_k(values_i, values_j, K):
    """Per-anchor localized products with an index window, by double loop."""
    vi = np.asarray(values_i, dtype=float)
    vj = np.asarray(values_j, dtype=float)
    n = vi.size
    zeta = np.zeros(n)
    for k in range(n):
        acc = 0.0
        count = 0
        for ell in range(n):
            if ell != k and abs(ell - k) <= K:
                acc += (vi[ell] - vi[k]) * (vj[ell] - vj[k])
                count += 1
        zeta[k] = acc / (2.0 * count)
    return zeta


def brute_sigma_k(values_i, values_j, K):
    zeta = brute_zeta_k(values_i, values_j, K)
    return zeta.mean()


def brute_zeta_xi(ticks, values_i, values_j, xi, tick_duration):
    """Per-anchor localized products with a time window; empty windows -> 0."""
    t = np.asarray(ticks, dtype=np.int64)
    vi = np.asarray(values_i, dtype=float)
    vj = np.asarray(values_j, dtype=float)
    n = vi.size
    zeta = np.zeros(n)
    counts = np.zeros(n, dtype=np.int64)
    for k in range(n):
        acc = 0.0
        count = 0
        for ell in range(n):
            if ell != k and abs(int(t[ell]) - int(t[k])) * tick_duration <= xi:
                acc += (vi[ell] - vi[k]) * (vj[ell] - vj[k])
                count += 1
        counts[k] = count
        if count:
            zeta[k] = acc / (2.0 * count)
    return zeta, counts


def brute_sigma_xi(ticks, values_i, values_j, xi, tick_duration):
    zeta, counts = brute_zeta_xi(ticks, values_i, values_j, xi, tick_duration)
    if not counts.any():
        raise ValueError("every window is empty")
    return zeta.mean()


def brute_autocov(series, lag):
    """Plain centered autocovariance with 1/n normalization."""
    z = np.asarray(series, dtype=float)
    n = z.size
    c = z - z.mean()
    acc = 0.0
    for k in range(lag, n):
        acc += c[k] * c[k - lag]
    return acc / n


def brute_longrun(series, h, kernel):
    """Kernel-weighted sum of autocovariances over every lag."""
    z = np.asarray(series, dtype=float)
    n = z.size
    total = brute_autocov(z, 0)
    for lag in range(1, n):
        total += 2.0 * kernel(lag / h) * brute_autocov(z, lag)
    return total


def brute_qs(x):
    """Quadratic spectral kernel straight from its closed form."""
    if x == 0.0:
        return 1.0
    y = 6.0 * math.pi * x / 5.0
    return (25.0 / (12.0 * math.pi**2 * x**2)) * (math.sin(y) / y - math.cos(y))


def brute_ar1(series):
    """Centered least-squares lag-one coefficient."""
    z = np.asarray(series, dtype=float)
    c = z - z.mean()
    num = 0.0
    den = 0.0
    for k in range(1, c.size):
        num += c[k] * c[k - 1]
        den += c[k - 1] * c[k - 1]
    return num / den


def brute_theta_pipeline(series):
    """Full plug-in long-run variance: AR(1) fit, bandwidth, weighted sum.

    Returns (theta, vartheta, bandwidth) with the same conventions the
    estimator documents: the lag-one coefficient is clamped to +/-0.97, a
    vanishing bandwidth falls back to the lag-zero autocovariance, and the
    final value is floored at zero.
    """
    z = np.asarray(series, dtype=float)
    vt = brute_ar1(z)
    vt = max(-0.97, min(0.97, vt))
    h = 1.3221 * (4.0 * z.size * vt**2 * (1.0 - vt) ** -4.0) ** 0.2
    if h <= 1e-12:
        theta = brute_autocov(z, 0)
    else:
        theta = brute_longrun(z, h, brute_qs)
    return max(theta, 0.0), vt, h


def random_pair_grid(rng, max_n=50):
    """A random strictly-increasing tick grid with two value series."""
    n = int(rng.integers(2, max_n + 1))
    ticks = np.sort(rng.choice(np.arange(1, 20 * max_n), size=n, replace=False))
    vi = rng.standard_normal(n)
    vj = rng.standard_normal(n)
    return ticks.astype(np.int64), vi, vj
