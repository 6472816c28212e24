"""Adaptive stratified Monte-Carlo integration of noisy functions on [0,1]."""

from .errors import (
    BudgetError,
    ConfigError,
    DepthLimitError,
    DomainError,
    InsufficientDataError,
    InvariantError,
)
from .integrands import (
    AsianOptionParams,
    NoisyIntegrand,
    asian_option_integrand,
    normal_inverse_cdf,
    synthetic_integrand,
)
from .partition import Cut, NodeId, PartitionTree, enumerate_cuts, sigma_hat, sigma_tilde, t_threshold
from .sampling import bss_a_draw, bss_draw
from .ucb import UcbParams, crude_mc, mc_ucb, ucb_index, uniform_strata
from .ulcb import (
    UlcbConstants,
    UlcbOptions,
    UlcbResult,
    compute_constants,
    compute_r,
    run_mc_ulcb,
    run_record,
    select_partition,
)
from .evaluation import (
    RiskReport,
    confidence_width,
    mse_harness,
    oracle_risk,
    pseudo_risk,
    theorem1_bound,
)

__version__ = "0.1.0"
