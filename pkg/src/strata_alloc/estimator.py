"""Four-cell response model and the post-stratified 'yes' fraction estimators.

Cells within a stratum, in order: nonresponse & would-say-no,
nonresponse & would-say-yes, response & no, response & yes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

from strata_alloc.errors import ValidationError, ZeroRespondents
from strata_alloc.population import Population


@dataclass(frozen=True)
class CellProbabilities:
    p1: float
    p2: float
    p3: float
    p4: float

    def __iter__(self) -> Iterator[float]:
        return iter((self.p1, self.p2, self.p3, self.p4))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.p1, self.p2, self.p3, self.p4)

    @property
    def response_mass(self) -> float:
        return self.p3 + self.p4


def cell_probabilities(p: float, q: float) -> CellProbabilities:
    """Independence table of response (prob ``p``) and answer 'yes' (prob ``q``)."""
    if not 0.0 < p <= 1.0:
        raise ValidationError(f"response probability must lie in (0, 1], got {p!r}", "p")
    if not 0.0 <= q <= 1.0:
        raise ValidationError(f"yes probability must lie in [0, 1], got {q!r}", "q")
    return CellProbabilities((1 - p) * (1 - q), (1 - p) * q, p * (1 - q), p * q)


@dataclass(frozen=True)
class StratumCounts:
    z1: int
    z2: int
    z3: int
    z4: int

    def __post_init__(self):
        if min(self.z1, self.z2, self.z3, self.z4) < 0:
            raise ValidationError("cell counts must be nonnegative")

    @property
    def observed(self) -> int:
        """Number of respondents, z3 + z4."""
        return self.z3 + self.z4

    @property
    def allocated(self) -> int:
        return self.z1 + self.z2 + self.z3 + self.z4

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.z1, self.z2, self.z3, self.z4)


@dataclass(frozen=True)
class ObservedSample:
    strata: tuple[StratumCounts, ...]

    def __post_init__(self):
        object.__setattr__(self, "strata", tuple(self.strata))
        if not self.strata:
            raise ValidationError("sample needs at least one stratum")

    def __len__(self) -> int:
        return len(self.strata)

    @property
    def observed(self) -> tuple[int, ...]:
        return tuple(c.observed for c in self.strata)


def _check_aligned(sample: ObservedSample, pop: Population) -> None:
    if len(sample) != pop.H:
        raise ValidationError(f"sample has {len(sample)} strata, population has {pop.H}")


def poststrat_weight(h: int, sample: ObservedSample, pop: Population) -> float:
    """Weight (N_h/N * sum_i o_i) / o_h for every respondent in stratum ``h``.

    Raises ZeroRespondents when o_h == 0.
    """
    _check_aligned(sample, pop)
    o_h = sample.strata[h].observed
    if o_h == 0:
        raise ZeroRespondents(h)
    return pop.sizes[h] / pop.total_size * sum(sample.observed) / o_h


def estimate_stratum(counts: StratumCounts) -> float:
    """Share of 'yes' among respondents, z4 / (z3 + z4)."""
    if counts.observed == 0:
        raise ZeroRespondents()
    return counts.z4 / counts.observed


def estimate_total(sample: ObservedSample, pop: Population) -> float:
    """Population-share weighted mean of the stratum estimates."""
    _check_aligned(sample, pop)
    terms = []
    for h, (counts, size) in enumerate(zip(sample.strata, pop.sizes)):
        if counts.observed == 0:
            raise ZeroRespondents(h)
        terms.append(size * (counts.z4 / counts.observed))
    return math.fsum(terms) / pop.total_size


def estimate_total_weighted(sample: ObservedSample, pop: Population) -> float:
    """Same estimate computed the long way, from post-stratification weighted counts.

    Kept as an independent route to check ``estimate_total`` against.
    """
    _check_aligned(sample, pop)
    weights = [poststrat_weight(h, sample, pop) for h in range(len(sample))]
    yes = math.fsum(w * c.z4 for w, c in zip(weights, sample.strata))
    responded = math.fsum(w * c.z3 + w * c.z4 for w, c in zip(weights, sample.strata))
    return yes / responded


def weighted_observed_total(sample: ObservedSample, pop: Population) -> float:
    """Sum of weight_h * o_h; equals the unweighted respondent total."""
    return math.fsum(poststrat_weight(h, sample, pop) * c.observed for h, c in enumerate(sample.strata))


def sample_from_counts(rows: Sequence[Sequence[int]]) -> ObservedSample:
    return ObservedSample(tuple(StratumCounts(*map(int, row)) for row in rows))
