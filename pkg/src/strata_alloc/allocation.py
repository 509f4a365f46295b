"""PS and ERR allocation of the allocated (pre-nonresponse) sample."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

from strata_alloc.errors import ValidationError
from strata_alloc.population import DesignSpec, ResponseScenario, average_expected_rate


class Method(str, enum.Enum):
    PS = "PS"
    ERR = "ERR"

    @classmethod
    def parse(cls, value: str | Method) -> Method:
        try:
            return cls(str(value.value if isinstance(value, Method) else value).upper())
        except ValueError:
            raise ValidationError(f"method must be PS or ERR, got {value!r}", "method") from None


@dataclass(frozen=True)
class Allocation:
    method: Method
    per_stratum: tuple[float, ...]
    total: float

    def __post_init__(self):
        if any(n < 0 for n in self.per_stratum):
            raise ValidationError("allocated sizes must be nonnegative", "per_stratum")
        s = math.fsum(self.per_stratum)
        if abs(s - self.total) > 1e-9 * max(abs(s), 1.0):
            raise ValidationError(f"total {self.total} != sum of strata {s}", "total")


@dataclass(frozen=True)
class IntegerAllocation:
    method: Method
    per_stratum: tuple[int, ...]
    total: int

    def __post_init__(self):
        if sum(self.per_stratum) != self.total:
            raise ValidationError("total != sum of strata", "total")


def allocate_ps(design: DesignSpec) -> Allocation:
    """Proportional to size, inflated by the single average expected rate.

    Uses expected rates only, even under misspecification.
    """
    pop = design.population
    r = average_expected_rate(pop)
    m = design.intended_size
    n_total = pop.total_size
    per = tuple(size / n_total * m / r for size in pop.sizes)
    return Allocation(Method.PS, per, math.fsum(per))


def allocate_err(design: DesignSpec) -> Allocation:
    """Each stratum's proportional share inflated by its own expected rate."""
    pop = design.population
    m = design.intended_size
    n_total = pop.total_size
    per = tuple(s.size / n_total * m / s.expected_rate for s in pop.strata)
    return Allocation(Method.ERR, per, math.fsum(per))


def allocate(design: DesignSpec, method: Method | str) -> Allocation:
    method = Method.parse(method)
    return allocate_ps(design) if method is Method.PS else allocate_err(design)


def round_allocation(alloc: Allocation) -> IntegerAllocation:
    """Largest-remainder (Hamilton) rounding that keeps round(total) exact.

    Ties in the fractional part go to the lowest stratum index.
    """
    floors = [math.floor(n) for n in alloc.per_stratum]
    target = math.floor(alloc.total + 0.5)  # half-up, not banker's rounding
    leftover = target - sum(floors)
    fracs = [n - f for n, f in zip(alloc.per_stratum, floors)]
    # stable sort on -frac keeps index order among ties
    order = sorted(range(len(fracs)), key=lambda i: -fracs[i])
    out = list(floors)
    if leftover >= 0:
        for i in order[:leftover]:
            out[i] += 1
    else:
        # accumulated float noise can push the floors above the rounded total
        for i in reversed(order):
            if leftover == 0:
                break
            if out[i] > 0:
                out[i] -= 1
                leftover += 1
    return IntegerAllocation(alloc.method, tuple(out), sum(out))


def expected_respondents(alloc: Allocation | IntegerAllocation, scenario: ResponseScenario | Sequence[float]) -> float:
    """Expected number of respondents, sum n_h p_h."""
    rates = scenario.true_rates if isinstance(scenario, ResponseScenario) else tuple(scenario)
    if len(rates) != len(alloc.per_stratum):
        raise ValidationError(
            f"allocation has {len(alloc.per_stratum)} strata, scenario has {len(rates)}", "true_rates"
        )
    return math.fsum(n * p for n, p in zip(alloc.per_stratum, rates))
