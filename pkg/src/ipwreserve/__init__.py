"""Inverse-probability-weighted (Horvitz-Thompson) claims reserving."""
from .core import (
    Claim,
    DataError,
    ObservedSnapshot,
    Payment,
    Portfolio,
    load_portfolio,
    snapshot,
)
from .estimators import (
    ReserveEstimate,
    ibnr_reserve,
    ibns_reserve,
    rbns_reserve,
    trim_probabilities,
)
from .hazard import (
    FitError,
    FitOptions,
    InclusionProbabilities,
    PemModel,
    TimeGrid,
    compute_inclusion_probabilities,
    fit_payment_model,
    fit_reporting_model,
    pseudo_residuals,
)
from .pipeline import ReserveSettings, run_reserve_at
from .simulate import SimConfig, simulate_portfolio, true_reserves

__version__ = "0.1.0"
