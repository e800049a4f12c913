"""Simulation laboratory for the noise-covariance estimators.

Generates correlated stochastic-volatility latent prices on a fine tick
lattice, contaminates them with cross-sectionally correlated Gaussian noise,
and observes them either synchronously (every Δ-th tick) or asynchronously
(independent per-asset random thinning). Three noise-correlation designs are
built in:

* ``m1`` — banded: 1 on the diagonal, 0.6 at lag one, 0.3 at lag two, 0 beyond;
* ``m2`` — sparse random support with an eigenvalue shift keeping it positive
  definite (needs a seed);
* ``m3`` — geometric decay ``0.6**|i-j|`` (nowhere zero).

All randomness flows through :class:`numpy.random.Generator`; every function
accepts either a generator (consumed in a documented order) or a seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .covmatrix import CovMatrix, default_asset_names
from .errors import IndefiniteMatrixError, SamplingError
from .panel import DEFAULT_TICK_DURATION, AsyncPanel


def _as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# latent price paths


@dataclass(frozen=True)
class HestonConfig:
    """Parameters of the correlated stochastic-volatility data generator.

    Defaults follow the standard intraday design: mean reversion ``kappa=4``
    per year toward long-run variance ``sigma_bar_sq=0.09`` with vol-of-vol
    ``s=0.3``, leverage correlation ``varsigma=-0.3`` between an asset's
    price and variance shocks, cross-asset Brownian correlation built from
    decay parameter ``corr_decay=-0.8``, and a 23400-tick trading day of
    length 1/252 years (one tick per second).
    """

    p: int
    kappa: float = 4.0
    s: float = 0.3
    sigma_bar_sq: float = 0.09
    varsigma: float = -0.3
    corr_decay: float = -0.8
    ticks_per_day: int = 23400
    day_length: float = 1.0 / 252

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if not (self.kappa > 0 and self.s > 0 and self.sigma_bar_sq > 0):
            raise ValueError("kappa, s and sigma_bar_sq must be positive")
        if not abs(self.varsigma) < 1:
            raise ValueError(f"|varsigma| must be < 1, got {self.varsigma}")
        if not abs(self.corr_decay) < 1:
            raise ValueError(f"|corr_decay| must be < 1, got {self.corr_decay}")
        if self.ticks_per_day < 2:
            raise ValueError(f"ticks_per_day must be >= 2, got {self.ticks_per_day}")
        if not self.day_length > 0:
            raise ValueError(f"day_length must be positive, got {self.day_length}")

    @property
    def dt(self) -> float:
        """Euler step, years per tick."""
        return self.day_length / self.ticks_per_day

    @property
    def tick_duration(self) -> float:
        return self.dt


def build_brownian_corr(p: int, a: float) -> CovMatrix:
    """Cross-asset Brownian correlation from a triangular decay factor.

    ``A`` is lower triangular with ``A[i, j] = a**(i-j)`` for ``i >= j``; the
    correlation is ``A A^T`` normalized by its own diagonal, which forces
    exact ones on the diagonal and positive semidefiniteness.
    """
    if not abs(a) < 1:
        raise ValueError(f"|a| must be < 1, got {a}")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    i, j = np.indices((p, p))
    A = np.where(i >= j, np.float_power(a, np.maximum(i - j, 0)), 0.0)
    M = A @ A.T
    d = np.sqrt(np.diag(M))
    rho = M / np.outer(d, d)
    np.fill_diagonal(rho, 1.0)
    return CovMatrix(rho, meta={"builder": "triangular-decay", "a": a})


def heston_paths(config: HestonConfig, seed=None) -> np.ndarray:
    """Simulate latent log-price paths on the full tick lattice.

    Full-truncation Euler for the square-root variance process:

    ``X[i,k] = X[i,k-1] + sqrt(v_i) dB_i``,
    ``v_i <- max(v_i + kappa (sigma_bar_sq - v_i) dt + s sqrt(v_i) dW_i, 0)``

    with correlated drivers: ``dB = L z1 sqrt(dt)`` where ``L`` is the
    Cholesky factor of the Brownian correlation, and
    ``dW_i = (varsigma (L z1)_i + sqrt(1 - varsigma^2) z2_i) sqrt(dt)`` so
    that corr(dB_i, dW_i) = varsigma while the variance drivers stay
    independent across assets. Initial variances are Gamma distributed with
    shape ``kappa sigma_bar_sq / s**2`` and scale ``s**2 / (2 kappa)``.

    Parameters
    ----------
    config : HestonConfig
    seed : int, Generator or None
        Draw order: initial variances, then the price shocks z1, then the
        variance shocks z2 — fixed so results are reproducible for a given
        seed.

    Returns
    -------
    ndarray of shape ``(p, ticks_per_day)``
        Paths start at 0 (the value before the first increment).
    """
    rng = _as_generator(seed)
    p, n = config.p, config.ticks_per_day
    dt = config.dt
    shape = config.kappa * config.sigma_bar_sq / config.s**2
    scale = config.s**2 / (2.0 * config.kappa)
    v0 = rng.gamma(shape, scale, size=p)
    z1 = rng.standard_normal((p, n))
    z2 = rng.standard_normal((p, n))
    L = np.linalg.cholesky(build_brownian_corr(p, config.corr_decay).entries)
    corr_shock = L @ z1
    sqrt_dt = math.sqrt(dt)
    dB = corr_shock * sqrt_dt
    dW = (config.varsigma * corr_shock + math.sqrt(1.0 - config.varsigma**2) * z2) * sqrt_dt
    return kernels.heston_evolve(
        v0, dB, dW, config.kappa, config.sigma_bar_sq, config.s, dt
    )


# ---------------------------------------------------------------------------
# noise models


@dataclass(frozen=True)
class NoiseModel:
    """Noise covariance design: ``Sigma_u = scale**2 * R``.

    ``variant`` is one of ``m1``, ``m2``, ``m3``; ``m2`` draws its random
    support from ``seed`` (required). ``scale`` is the per-asset noise
    standard deviation when the correlation diagonal is 1.
    """

    variant: str
    scale: float = 0.005
    seed: int | None = None

    def __post_init__(self):
        v = self.variant.lower()
        if v not in {"m1", "m2", "m3"}:
            raise ValueError(f"unknown noise model {self.variant!r}")
        object.__setattr__(self, "variant", v)
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


def noise_cov(model: NoiseModel, p: int, seed=None) -> CovMatrix:
    """Build the noise covariance matrix ``scale**2 * R`` for a model.

    ``m1`` and ``m3`` are deterministic Toeplitz designs. ``m2`` draws, for
    each pair i < j, a weight ``w ~ U(0.4, 0.8)`` activated with probability
    0.04, symmetrizes, and adds ``(|lambda_min| + 0.05) I`` so the smallest
    eigenvalue is at least 0.05 before scaling. The ``m2`` seed comes from
    the ``seed`` argument, falling back to ``model.seed``.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    v = model.variant
    if v == "m1":
        lag = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
        R = np.choose(np.minimum(lag, 3), [1.0, 0.6, 0.3, 0.0])
    elif v == "m3":
        lag = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
        R = 0.6 ** lag.astype(np.float64)
    else:
        if seed is None:
            seed = model.seed
        if seed is None:
            raise ValueError("m2 needs a seed (NoiseModel.seed or the seed argument)")
        rng = _as_generator(seed)
        m = p * (p - 1) // 2
        weights = rng.uniform(0.4, 0.8, size=m)
        active = rng.random(m) < 0.04
        R = np.zeros((p, p))
        iu, ju = np.triu_indices(p, k=1)
        R[iu, ju] = np.where(active, weights, 0.0)
        R = R + R.T
        lam_min = float(np.linalg.eigvalsh(R)[0])
        R = R + (abs(lam_min) + 0.05) * np.eye(p)
    return CovMatrix(
        model.scale**2 * R,
        meta={"noise_model": v, "scale": model.scale},
    )


def sample_noise(cov: CovMatrix | np.ndarray, count: int, seed=None) -> np.ndarray:
    """Draw ``count`` i.i.d. centered Gaussian vectors with covariance ``cov``.

    Uses the Cholesky factor when the matrix is positive definite and falls
    back to an eigendecomposition for semidefinite inputs (eigenvalues below
    ``-1e-10`` relative tolerance raise :class:`IndefiniteMatrixError`).

    Returns an array of shape ``(p, count)``.
    """
    entries = cov.entries if isinstance(cov, CovMatrix) else np.asarray(cov, dtype=np.float64)
    if count < 0:
        raise ValueError(f"count must be nonnegative, got {count}")
    p = entries.shape[0]
    try:
        factor = np.linalg.cholesky(entries)
    except np.linalg.LinAlgError:
        eigvals, eigvecs = np.linalg.eigh(entries)
        tol = 1e-10 * max(1.0, float(np.abs(eigvals).max(initial=0.0)))
        if eigvals.min(initial=0.0) < -tol:
            raise IndefiniteMatrixError(
                f"matrix has eigenvalue {eigvals.min():.3e} below -{tol:.3e}"
            ) from None
        factor = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))
    rng = _as_generator(seed)
    return factor @ rng.standard_normal((p, count))


# ---------------------------------------------------------------------------
# observation schemes


def sample_sync(
    X: np.ndarray,
    noise: np.ndarray,
    delta: int,
    *,
    tick_duration: float = DEFAULT_TICK_DURATION,
    assets: tuple[str, ...] | None = None,
) -> AsyncPanel:
    """Observe every asset at ticks ``delta, 2*delta, ...``.

    ``X`` and ``noise`` are ``(p, ticks)`` arrays over the full lattice
    (column k is tick k+1); the panel keeps ``floor(ticks / delta)``
    synchronous observations ``Y = X + noise`` per asset.
    """
    X = np.asarray(X, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if X.shape != noise.shape:
        raise ValueError(f"X shape {X.shape} != noise shape {noise.shape}")
    if int(delta) != delta or delta < 1:
        raise ValueError(f"delta must be an integer >= 1, got {delta}")
    delta = int(delta)
    p, n_ticks = X.shape
    kept = n_ticks // delta
    if kept < 2:
        raise SamplingError(
            f"delta={delta} keeps {kept} of {n_ticks} ticks; need at least 2"
        )
    cols = np.arange(1, kept + 1, dtype=np.int64) * delta - 1
    ticks = cols + 1
    Y = X[:, cols] + noise[:, cols]
    return AsyncPanel(
        tick_duration=tick_duration,
        assets=assets or default_asset_names(p),
        ticks=tuple(ticks for _ in range(p)),
        values=tuple(Y[i] for i in range(p)),
    )


def _geometric_columns(rng: np.random.Generator, n_ticks: int, lam: float) -> np.ndarray:
    mask = rng.random(n_ticks) < (1.0 / lam)
    return np.nonzero(mask)[0]


def _exponential_columns(rng: np.random.Generator, n_ticks: int, lam: float) -> np.ndarray:
    cols = []
    t = 0
    block = max(64, int(n_ticks / lam * 1.25) + 16)
    while t < n_ticks:
        gaps = np.ceil(rng.exponential(lam, size=block)).astype(np.int64)
        steps = t + np.cumsum(gaps)
        take = steps[steps <= n_ticks]
        cols.append(take)
        if take.size < steps.size:
            break
        t = int(steps[-1])
    joined = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    return joined - 1  # tick k lives in column k-1


def sample_async(
    X: np.ndarray,
    noise: np.ndarray,
    lam: float,
    seed=None,
    *,
    gap_model: str = "exponential",
    tick_duration: float = DEFAULT_TICK_DURATION,
    max_retries: int = 100,
    assets: tuple[str, ...] | None = None,
) -> AsyncPanel:
    """Observe each asset on its own random thinning of the tick lattice.

    The default ``exponential`` gap model draws continuous exponential
    inter-arrival times with mean ``lam`` ticks — a Poisson observation
    stream — and rounds each arrival up to the next tick. The round-up
    makes the realized mean gap ``1/(1 - exp(-1/lam))`` (about 3.53 ticks
    for ``lam=3``), so even ``lam=1`` leaves gaps. The alternative
    ``geometric`` model keeps each tick independently with probability
    ``1/lam``: gaps are then geometric with mean exactly ``lam``, and
    ``lam=1`` saturates the lattice, matching :func:`sample_sync` with
    ``delta=1`` on the same inputs.

    Noise is read from the same full-lattice ``noise`` matrix as
    :func:`sample_sync`, so assets observed at a shared tick see noise
    coordinates with exactly the cross-sectional covariance of the noise
    model. Streams are independent across assets and drawn in asset order;
    an asset that ends up with fewer than 2 observations is redrawn up to
    ``max_retries`` times before :class:`SamplingError` is raised.
    """
    X = np.asarray(X, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if X.shape != noise.shape:
        raise ValueError(f"X shape {X.shape} != noise shape {noise.shape}")
    if not lam >= 1:
        raise ValueError(f"lam must be >= 1, got {lam}")
    if gap_model not in {"geometric", "exponential"}:
        raise ValueError(f"unknown gap_model {gap_model!r}")
    rng = _as_generator(seed)
    p, n_ticks = X.shape
    draw = _geometric_columns if gap_model == "geometric" else _exponential_columns
    all_ticks = []
    all_values = []
    for i in range(p):
        for _ in range(max_retries):
            cols = draw(rng, n_ticks, lam)
            if cols.size >= 2:
                break
        else:
            raise SamplingError(
                f"asset {i}: could not draw >= 2 observations in "
                f"{max_retries} attempts (lam={lam}, ticks={n_ticks})"
            )
        all_ticks.append(cols + 1)
        all_values.append(X[i, cols] + noise[i, cols])
    return AsyncPanel(
        tick_duration=tick_duration,
        assets=assets or default_asset_names(p),
        ticks=tuple(all_ticks),
        values=tuple(all_values),
    )


# ---------------------------------------------------------------------------
# experiment description


@dataclass(frozen=True)
class SamplingScheme:
    """Observation scheme: synchronous stride or asynchronous thinning.

    Exactly one of ``delta`` (sync) or ``lam`` (async) is set, matching
    ``variant``.
    """

    variant: str
    delta: int | None = None
    lam: float | None = None
    gap_model: str = "exponential"

    def __post_init__(self):
        v = self.variant.lower()
        if v not in {"sync", "async"}:
            raise ValueError(f"unknown sampling variant {self.variant!r}")
        object.__setattr__(self, "variant", v)
        if v == "sync":
            if self.delta is None or self.lam is not None:
                raise ValueError("sync sampling takes delta and not lam")
            if int(self.delta) != self.delta or self.delta < 1:
                raise ValueError(f"delta must be an integer >= 1, got {self.delta}")
            object.__setattr__(self, "delta", int(self.delta))
        else:
            if self.lam is None or self.delta is not None:
                raise ValueError("async sampling takes lam and not delta")
            if not self.lam >= 1:
                raise ValueError(f"lam must be >= 1, got {self.lam}")
            object.__setattr__(self, "lam", float(self.lam))
        if self.gap_model not in {"geometric", "exponential"}:
            raise ValueError(f"unknown gap_model {self.gap_model!r}")

    @property
    def param(self) -> float:
        return self.delta if self.variant == "sync" else self.lam

    @property
    def label(self) -> str:
        if self.variant == "sync":
            return f"sync-{self.delta}"
        return f"async-{self.lam:g}"


@dataclass(frozen=True)
class ExperimentSpec:
    """One Monte Carlo scenario: generator, noise, sampling, windows, seed."""

    heston: HestonConfig
    noise: NoiseModel
    sampling: SamplingScheme
    k_values: tuple[int, ...]
    replications: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        if not self.k_values:
            raise ValueError("k_values must be nonempty")
        if any(k < 1 for k in self.k_values):
            raise ValueError(f"k_values must all be >= 1, got {self.k_values}")
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications}")
        if self.noise.variant == "m2" and self.noise.seed is None:
            raise ValueError("m2 noise in an experiment needs NoiseModel.seed")
