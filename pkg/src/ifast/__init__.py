"""Hybrid forward/spot trading for mobile crowdsensing markets."""
from .forward import build_problem, solve_exact_ie, solve_sca
from .market import (
    BuyerProfile,
    ContractSet,
    EconomicParams,
    ForwardContract,
    Level,
    Realization,
    RiskBounds,
    Scenario,
    SellerProfile,
    StructuralLimits,
    TruncatedGaussianSpec,
    ValidationError,
    derive_stream,
    sample_realization,
)
from .risk import CapacityError, RiskReport, compute_risks_exact, estimate_risks_mc, simulate_fulfillment
from .spot import SpotConfig, TransactionOutcome, execute_transaction

__version__ = "0.1.0"
