"""Delta-method asymptotic variances of the post-stratified 'yes' fraction.

Two routes are kept side by side on purpose: the gradient/covariance
product against the closed form for one stratum, and the plug-in chain
(allocated sizes -> per-stratum variances -> share-squared sum) against the
direct total formulas. The totals cross-check each other on every call.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from strata_alloc.allocation import Method, allocate_err, allocate_ps
from strata_alloc.errors import DegenerateStratum, ValidationError
from strata_alloc.estimator import CellProbabilities
from strata_alloc.metrics import misspecification, spread_from_weighted_average
from strata_alloc.population import DesignSpec, ResponseScenario, average_expected_rate

IDENTITY_RTOL = 1e-12


def gradient_vector(n: float, cells: CellProbabilities) -> np.ndarray:
    """Gradient of Z4 / (Z3 + Z4) at the expected counts n * cells."""
    e3, e4 = n * cells.p3, n * cells.p4
    denom = (e3 + e4) ** 2
    if denom == 0:
        raise DegenerateStratum("p3 + p4 == 0: nobody responds")
    return np.array([0.0, 0.0, -e4 / denom, e3 / denom])


def multinomial_covariance(n: float, cells: CellProbabilities) -> np.ndarray:
    pi = np.array(cells.as_tuple())
    return n * (np.diag(pi) - np.outer(pi, pi))


def delta_variance_general(n: float, cells: CellProbabilities) -> float:
    """D' Sigma D for the four-cell multinomial."""
    if not n > 0:
        raise ValidationError(f"n must be positive, got {n!r}", "n")
    d = gradient_vector(n, cells)
    sigma = multinomial_covariance(n, cells)
    return float(max(d @ sigma @ d, 0.0))


def delta_variance_stratum(n_h: float, p_h: float, q_h: float) -> float:
    """Closed form q(1 - q) / (n p)."""
    if not n_h > 0:
        raise ValidationError(f"n_h must be positive, got {n_h!r}", "n_h")
    if not p_h > 0:
        raise ValidationError(f"p_h must be positive, got {p_h!r}", "p_h")
    return q_h * (1.0 - q_h) / (n_h * p_h)


def _scenario(design: DesignSpec, scenario: ResponseScenario | None) -> ResponseScenario:
    scenario = design.scenario if scenario is None else scenario
    scenario.check_aligned(design.population)
    if any(p <= 0 for p in scenario.true_rates):
        raise ValidationError("true response rates must be > 0", "true_rates")
    return scenario


def per_stratum_variances(design: DesignSpec, scenario: ResponseScenario | None, method: Method | str) -> tuple[float, ...]:
    """Per-stratum variances with the real-valued allocated sizes of ``method``."""
    scenario = _scenario(design, scenario)
    alloc = allocate_ps(design) if Method.parse(method) is Method.PS else allocate_err(design)
    return tuple(
        delta_variance_stratum(n_h, p_h, q_h)
        for n_h, p_h, q_h in zip(alloc.per_stratum, scenario.true_rates, design.population.yes_probs)
    )


def _combine(design: DesignSpec, per_stratum: tuple[float, ...]) -> float:
    return math.fsum(w * w * v for w, v in zip(design.population.shares, per_stratum))


def _direct_total(design: DesignSpec, scenario: ResponseScenario, inflations) -> float:
    pop = design.population
    terms = (
        n_h * q * (1.0 - q) * a / p
        for n_h, q, a, p in zip(pop.sizes, pop.yes_probs, inflations, scenario.true_rates)
    )
    return math.fsum(terms) / (pop.total_size * design.intended_size)


def _cross_check(direct: float, chained: float, label: str) -> None:
    # absolute floor: subnormal results carry no relative precision
    if abs(direct - chained) > IDENTITY_RTOL * max(abs(direct), abs(chained), 1e-300):
        raise ArithmeticError(f"{label}: direct {direct!r} != plug-in {chained!r}")


def variance_ps_total(design: DesignSpec, scenario: ResponseScenario | None = None) -> float:
    """(1/(N m)) sum_h N_h q_h (1 - q_h) r / p_h, with r the average expected rate."""
    scenario = _scenario(design, scenario)
    r = average_expected_rate(design.population)
    direct = _direct_total(design, scenario, [r] * design.population.H)
    _cross_check(direct, _combine(design, per_stratum_variances(design, scenario, Method.PS)), "PS")
    return direct


def variance_err_total(design: DesignSpec, scenario: ResponseScenario | None = None) -> float:
    """(1/(N m)) sum_h N_h q_h (1 - q_h) r_h / p_h."""
    scenario = _scenario(design, scenario)
    direct = _direct_total(design, scenario, design.population.expected_rates)
    _cross_check(direct, _combine(design, per_stratum_variances(design, scenario, Method.ERR)), "ERR")
    return direct


def variance_total(design: DesignSpec, scenario: ResponseScenario | None, method: Method | str) -> float:
    if Method.parse(method) is Method.PS:
        return variance_ps_total(design, scenario)
    return variance_err_total(design, scenario)


@dataclass(frozen=True)
class VarianceReport:
    per_stratum_ps: tuple[float, ...]
    per_stratum_err: tuple[float, ...]
    total_ps: float
    total_err: float
    ratio: float | None
    ratio_defined: bool
    correctly_specified: bool
    misspec: float
    spread_from_avg: float

    def to_dict(self) -> dict:
        out = asdict(self)
        out["per_stratum_ps"] = list(self.per_stratum_ps)
        out["per_stratum_err"] = list(self.per_stratum_err)
        return out


def compare(design: DesignSpec, scenario: ResponseScenario | None = None) -> VarianceReport:
    """PS and ERR variances side by side, ratio = ERR / PS.

    The ratio is reported as undefined (None) when the PS variance is zero,
    which happens when every q_h is 0 or 1.
    """
    scenario = _scenario(design, scenario)
    total_ps = variance_ps_total(design, scenario)
    total_err = variance_err_total(design, scenario)
    defined = total_ps > 0
    pop = design.population
    return VarianceReport(
        per_stratum_ps=per_stratum_variances(design, scenario, Method.PS),
        per_stratum_err=per_stratum_variances(design, scenario, Method.ERR),
        total_ps=total_ps,
        total_err=total_err,
        ratio=total_err / total_ps if defined else None,
        ratio_defined=defined,
        correctly_specified=scenario.is_correct_for(pop),
        misspec=misspecification(scenario.true_rates, pop.expected_rates),
        spread_from_avg=spread_from_weighted_average(scenario.true_rates, pop),
    )


def totals_vectorized(
    shares: np.ndarray, r: np.ndarray, p: np.ndarray, q: np.ndarray, m: float
) -> tuple[np.ndarray, np.ndarray]:
    """Both total variances for a batch of cells.

    ``r``, ``p``, ``q`` have shape (cells, H); ``shares`` has shape (H,).
    Strata are accumulated column by column so a row's result does not
    depend on how many rows share the batch.
    """
    H = r.shape[1]
    rbar = np.zeros(r.shape[0])
    for h in range(H):
        rbar = rbar + shares[h] * r[:, h]
    ps = np.zeros(r.shape[0])
    err = np.zeros(r.shape[0])
    for h in range(H):
        base = shares[h] * q[:, h] * (1.0 - q[:, h]) / p[:, h]
        ps = ps + base * rbar
        err = err + base * r[:, h]
    return ps / m, err / m
