"""L1 distances used to describe misspecification of response rates."""

from __future__ import annotations

import math
from typing import Sequence

from strata_alloc.errors import ValidationError
from strata_alloc.population import Population


def misspecification(p: Sequence[float], r: Sequence[float]) -> float:
    """Total absolute misspecification, sum_h |r_h - p_h|."""
    if len(p) != len(r):
        raise ValidationError(f"rate vectors differ in length ({len(p)} vs {len(r)})")
    return math.fsum(abs(a - b) for a, b in zip(r, p))


def spread_from_weighted_average(p: Sequence[float], pop: Population | Sequence[float]) -> float:
    """sum_h |p_h - pbar| where pbar is the size-weighted mean of ``p``.

    ``pop`` may be a Population or a plain sequence of stratum sizes.
    """
    sizes = pop.sizes if isinstance(pop, Population) else tuple(pop)
    if len(p) != len(sizes):
        raise ValidationError(f"rate vector has {len(p)} entries, population has {len(sizes)} strata")
    total = math.fsum(sizes)
    pbar = math.fsum(n * x for n, x in zip(sizes, p)) / total
    return math.fsum(abs(x - pbar) for x in p)
