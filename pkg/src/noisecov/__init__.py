"""noisecov: covariance estimation for microstructure noise in tick data.

Estimates the covariance matrix of the additive noise contaminating
asynchronous high-frequency observations, using localized pairwise
differencing plus entry-wise thresholding, and ships a simulation
laboratory for Monte Carlo evaluation of the estimators.
"""

from .covmatrix import CovMatrix
from .errors import (
    EmptyIntersectionError,
    EstimationError,
    IndefiniteMatrixError,
    NoiseCovError,
    SamplingError,
    SpectralNormError,
    TickDataError,
)
from .estimator import (
    Adaptive,
    AdaptiveDiagnostics,
    EstimatorConfig,
    IndexWindow,
    MatrixEstimate,
    NoThreshold,
    RateRule,
    SparsityClassSpec,
    ThresholdedEstimate,
    TimeWindow,
    Universal,
    ZetaSeries,
    andrews_bandwidth,
    ar1_coeff,
    estimate_and_threshold,
    estimate_matrix,
    local_cov_k,
    local_cov_xi,
    longrun_variance,
    qs_kernel,
    threshold_adaptive,
    threshold_universal,
)
from .metrics import (
    EvalReport,
    max_abs_diff,
    rate_check,
    rel_frobenius,
    spectral_norm,
    tpr_fpr,
)
from .panel import (
    DEFAULT_TICK_DURATION,
    AsyncPanel,
    PairGrid,
    PanelSummary,
    load_csv,
    neighborhood_k,
    neighborhood_xi,
    pair_intersection,
    save_csv,
    summarize,
)
from .simlab import (
    ExperimentSpec,
    HestonConfig,
    NoiseModel,
    SamplingScheme,
    build_brownian_corr,
    heston_paths,
    noise_cov,
    sample_async,
    sample_noise,
    sample_sync,
)

__version__ = "0.1.0"

__all__ = [
    "AsyncPanel",
    "PairGrid",
    "PanelSummary",
    "CovMatrix",
    "ZetaSeries",
    "MatrixEstimate",
    "ThresholdedEstimate",
    "EstimatorConfig",
    "TimeWindow",
    "IndexWindow",
    "RateRule",
    "Universal",
    "Adaptive",
    "NoThreshold",
    "AdaptiveDiagnostics",
    "SparsityClassSpec",
    "HestonConfig",
    "NoiseModel",
    "SamplingScheme",
    "ExperimentSpec",
    "EvalReport",
    "DEFAULT_TICK_DURATION",
    "pair_intersection",
    "neighborhood_xi",
    "neighborhood_k",
    "load_csv",
    "save_csv",
    "summarize",
    "local_cov_xi",
    "local_cov_k",
    "estimate_matrix",
    "estimate_and_threshold",
    "threshold_universal",
    "threshold_adaptive",
    "qs_kernel",
    "ar1_coeff",
    "andrews_bandwidth",
    "longrun_variance",
    "build_brownian_corr",
    "heston_paths",
    "noise_cov",
    "sample_noise",
    "sample_sync",
    "sample_async",
    "rel_frobenius",
    "max_abs_diff",
    "spectral_norm",
    "tpr_fpr",
    "rate_check",
    "NoiseCovError",
    "TickDataError",
    "EmptyIntersectionError",
    "EstimationError",
    "IndefiniteMatrixError",
    "SamplingError",
    "SpectralNormError",
    "__version__",
]
