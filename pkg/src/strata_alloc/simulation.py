"""Product-multinomial Monte Carlo of the post-stratified estimator.

Replicate ``i`` draws from its own generator seeded by ``(seed, i)``, so the
result does not depend on execution order or on the number of workers.
"""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from strata_alloc.allocation import Method, allocate, round_allocation
from strata_alloc.errors import AllDiscarded, ValidationError, ZeroRespondents
from strata_alloc.estimator import CellProbabilities, StratumCounts, cell_probabilities
from strata_alloc.population import DesignSpec, ResponseScenario, design_from_dict, design_to_dict
from strata_alloc.variance import variance_total

SEED_MAX = 2**64 - 1


class EmptyStratumPolicy(str, enum.Enum):
    DISCARD = "discard"
    ERROR = "error"

    @classmethod
    def parse(cls, value) -> EmptyStratumPolicy:
        try:
            return cls(str(getattr(value, "value", value)).lower())
        except ValueError:
            raise ValidationError(f"policy must be discard or error, got {value!r}", "policy") from None


@dataclass(frozen=True)
class SimConfig:
    design: DesignSpec
    method: Method = Method.ERR
    replications: int = 20_000
    seed: int = 0
    empty_stratum_policy: EmptyStratumPolicy = EmptyStratumPolicy.DISCARD
    scenario: ResponseScenario | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        object.__setattr__(self, "empty_stratum_policy", EmptyStratumPolicy.parse(self.empty_stratum_policy))
        if self.scenario is None:
            object.__setattr__(self, "scenario", self.design.scenario)
        self.scenario.check_aligned(self.design.population)
        if isinstance(self.replications, bool) or not isinstance(self.replications, int) or self.replications < 1:
            raise ValidationError(f"replications must be an integer >= 1, got {self.replications!r}", "replications")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed <= SEED_MAX:
            raise ValidationError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}", "seed")

    def to_dict(self) -> dict:
        doc = design_to_dict(self.design)
        doc["true_rates"] = list(self.scenario.true_rates)
        doc.update(
            method=self.method.value,
            replications=self.replications,
            seed=self.seed,
            empty_stratum_policy=self.empty_stratum_policy.value,
        )
        return doc

    @classmethod
    def from_dict(cls, doc: Any, **overrides) -> SimConfig:
        design = design_from_dict(doc)
        kwargs = {
            "method": doc.get("method", Method.ERR),
            "replications": doc.get("replications", 20_000),
            "seed": doc.get("seed", 0),
            "empty_stratum_policy": doc.get("empty_stratum_policy", EmptyStratumPolicy.DISCARD),
        }
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(design=design, **kwargs)


@dataclass(frozen=True)
class SimResult:
    mean_estimate: float
    empirical_variance: float
    replicate_count_used: int
    discarded_replicates: int
    per_stratum_mean_estimates: tuple[float, ...]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["per_stratum_mean_estimates"] = list(self.per_stratum_mean_estimates)
        return out


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """Independent generator for one replicate, keyed by (seed, replicate)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(replicate,))))


def draw_stratum(n_h: int, cells: CellProbabilities | Sequence[float], rng: np.random.Generator) -> StratumCounts:
    """One multinomial draw via successive binomials on the remaining mass."""
    probs = cells.as_tuple() if isinstance(cells, CellProbabilities) else tuple(cells)
    remaining_n = int(n_h)
    remaining_p = 1.0
    out = []
    for pk in probs[:-1]:
        if remaining_n == 0 or remaining_p <= 0.0:
            out.append(0)
            continue
        frac = min(max(pk / remaining_p, 0.0), 1.0)
        k = int(rng.binomial(remaining_n, frac))
        out.append(k)
        remaining_n -= k
        remaining_p -= pk
    out.append(remaining_n)
    return StratumCounts(*out)


def _stratum_cells(config: SimConfig) -> list[CellProbabilities]:
    pop = config.design.population
    return [cell_probabilities(p, q) for p, q in zip(config.scenario.true_rates, pop.yes_probs)]


def _run_block(args) -> tuple[int, np.ndarray]:
    """Stratum estimates for replicates [start, stop); NaN marks an empty stratum."""
    seed, start, stop, sizes, cells = args
    est = np.empty((stop - start, len(sizes)))
    for row, rep in enumerate(range(start, stop)):
        rng = replicate_rng(seed, rep)
        for h, (n_h, c) in enumerate(zip(sizes, cells)):
            z = draw_stratum(n_h, c, rng)
            est[row, h] = z.z4 / z.observed if z.observed else math.nan
    return start, est


BLOCK = 2048


def _default_workers() -> int:
    env = os.environ.get("STRATA_ALLOC_THREADS")
    return max(1, int(env)) if env else 1


def replicate_estimates(config: SimConfig, workers: int | None = None) -> np.ndarray:
    """(replications, H) array of per-stratum estimates, NaN where o_h == 0."""
    workers = _default_workers() if workers is None else max(1, int(workers))
    sizes = round_allocation(allocate(config.design, config.method)).per_stratum
    cells = _stratum_cells(config)
    R = config.replications
    jobs = [(config.seed, s, min(s + BLOCK, R), sizes, cells) for s in range(0, R, BLOCK)]
    out = np.empty((R, len(sizes)))
    if workers == 1 or len(jobs) == 1:
        for start, est in map(_run_block, jobs):
            out[start : start + len(est)] = est
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for start, est in pool.map(_run_block, jobs):
                out[start : start + len(est)] = est
    return out


def run_monte_carlo(config: SimConfig, workers: int | None = None) -> SimResult:
    """Mean and unbiased (R - 1) variance of the total estimate over replicates."""
    est = replicate_estimates(config, workers)
    empty = np.isnan(est).any(axis=1)
    if empty.any() and config.empty_stratum_policy is EmptyStratumPolicy.ERROR:
        rep = int(np.argmax(empty))
        raise ZeroRespondents(int(np.argmax(np.isnan(est[rep]))))
    used = est[~empty]
    if len(used) == 0:
        raise AllDiscarded(f"all {config.replications} replicates had an empty stratum")
    shares = config.design.population.shares
    totals = [math.fsum(w * v for w, v in zip(shares, row)) for row in used.tolist()]
    mean = math.fsum(totals) / len(totals)
    if len(totals) > 1:
        var = math.fsum((t - mean) ** 2 for t in totals) / (len(totals) - 1)
    else:
        var = 0.0
    per_stratum = tuple(math.fsum(col) / len(used) for col in used.T.tolist())
    return SimResult(
        mean_estimate=mean,
        empirical_variance=var,
        replicate_count_used=len(used),
        discarded_replicates=int(empty.sum()),
        per_stratum_mean_estimates=per_stratum,
    )


@dataclass(frozen=True)
class VarianceCheck:
    empirical_variance: float
    analytic_variance: float
    relative_error: float
    result: SimResult = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "empirical_variance": self.empirical_variance,
            "analytic_variance": self.analytic_variance,
            "relative_error": self.relative_error,
            "simulation": self.result.to_dict(),
        }


def empirical_vs_asymptotic(config: SimConfig, workers: int | None = None) -> VarianceCheck:
    """Monte Carlo variance (rounded allocation) against the delta-method value (real allocation)."""
    result = run_monte_carlo(config, workers)
    analytic = variance_total(config.design, config.scenario, config.method)
    emp = result.empirical_variance
    if analytic > 0:
        rel = abs(emp - analytic) / analytic
    else:
        rel = 0.0 if emp == 0 else math.inf
    return VarianceCheck(emp, analytic, rel, result)
