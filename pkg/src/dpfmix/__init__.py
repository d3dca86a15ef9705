"""Differentially private feature mixup (DPFMix).

Noise calibration under Gaussian differential privacy for Poisson-subsampled
feature mixup, private dataset release, the linear-regression laboratory for
the optimal mixup degree, and a linear learner with membership metrics.
"""

__version__ = "0.1.0"

from dpfmix.errors import (
    AccuracyError,
    ConfigError,
    DomainError,
    DPFMixError,
    IngestionError,
    SingularSystemError,
    TrainingError,
)
from dpfmix.tradeoff import (
    EpsDelta,
    TradeoffCurve,
    curve_to_epsdelta,
    epsdelta_to_mu,
    gaussian_tradeoff,
    identity_tradeoff,
    invert,
    mu_to_eps,
    mu_to_epsdelta,
    subsample_mixture,
    symmetrize,
)
from dpfmix.accountant import (
    MechanismStep,
    NoiseScales,
    PrivacyLossDistribution,
    RdpCurve,
    calibrate_noise,
    clt_convergence_table,
    clt_mu,
    compose_exact,
    noise_vs_m_table,
    rdp_epsilon,
    rdp_to_epsdelta,
    step_tradeoff,
)
