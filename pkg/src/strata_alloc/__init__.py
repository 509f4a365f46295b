"""Stratified allocation under expected response rates.

Proportional-to-size (PS) and expected-response-rate (ERR) allocation,
post-stratified estimation of a 'yes' fraction under unit nonresponse,
delta-method variances, Monte Carlo checks and a misspecification sweep.
"""

from strata_alloc.errors import (
    AllDiscarded,
    DegenerateStratum,
    StrataError,
    ValidationError,
    ZeroRespondents,
)
from strata_alloc.population import (
    DesignSpec,
    Population,
    ResponseScenario,
    Stratum,
    average_expected_rate,
    intended_from_allocated,
    load_design,
)
from strata_alloc.allocation import (
    Allocation,
    IntegerAllocation,
    Method,
    allocate,
    allocate_err,
    allocate_ps,
    expected_respondents,
    round_allocation,
)
from strata_alloc.estimator import (
    CellProbabilities,
    ObservedSample,
    StratumCounts,
    cell_probabilities,
    estimate_stratum,
    estimate_total,
    estimate_total_weighted,
    poststrat_weight,
)
from strata_alloc.variance import (
    VarianceReport,
    compare,
    delta_variance_general,
    delta_variance_stratum,
    variance_err_total,
    variance_ps_total,
)

__version__ = "0.1.0"

__all__ = [
    "AllDiscarded",
    "Allocation",
    "CellProbabilities",
    "DegenerateStratum",
    "DesignSpec",
    "IntegerAllocation",
    "Method",
    "ObservedSample",
    "Population",
    "ResponseScenario",
    "StrataError",
    "Stratum",
    "StratumCounts",
    "ValidationError",
    "VarianceReport",
    "ZeroRespondents",
    "allocate",
    "allocate_err",
    "allocate_ps",
    "average_expected_rate",
    "cell_probabilities",
    "compare",
    "delta_variance_general",
    "delta_variance_stratum",
    "estimate_stratum",
    "estimate_total",
    "estimate_total_weighted",
    "expected_respondents",
    "intended_from_allocated",
    "load_design",
    "poststrat_weight",
    "round_allocation",
    "variance_err_total",
    "variance_ps_total",
]
