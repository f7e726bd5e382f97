"""Frequency estimation under local differential privacy."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    DirichletPrior,
    Distribution,
    EstimateReport,
    InvariantError,
    Mechanism,
    SignedVector,
    TallyVector,
    ldp_epsilon,
    simplex_project,
    validate_mechanism,
)
from .estimators import (  # noqa: E402
    FrequencyOracle,
    MaximumLikelihood,
    MLEConfig,
    NormSub,
    RRExactMLE,
    fo_estimate,
    mle_estimate,
    norm_sub,
    rr_mle_exact,
)
from .mechanisms import (  # noqa: E402
    RandomizedResponse,
    RRSpec,
    UESpec,
    UnaryEncoding,
    rr_matrix,
    sample_prior,
    sample_private_data,
    sample_reports,
    ue_matrix,
)
from .posterior import PosteriorMean, posterior_mean_exact, posterior_mse_exact  # noqa: E402

__all__ = [
    "DirichletPrior",
    "Distribution",
    "EstimateReport",
    "FrequencyOracle",
    "InvariantError",
    "MLEConfig",
    "MaximumLikelihood",
    "Mechanism",
    "NormSub",
    "PosteriorMean",
    "RRExactMLE",
    "RRSpec",
    "RandomizedResponse",
    "SignedVector",
    "TallyVector",
    "UESpec",
    "UnaryEncoding",
    "fo_estimate",
    "ldp_epsilon",
    "mle_estimate",
    "norm_sub",
    "posterior_mean_exact",
    "posterior_mse_exact",
    "rr_matrix",
    "rr_mle_exact",
    "sample_prior",
    "sample_private_data",
    "sample_reports",
    "simplex_project",
    "ue_matrix",
    "validate_mechanism",
]
