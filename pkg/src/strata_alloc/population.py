"""Population frame, expected/true response rates and the design spec."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from strata_alloc.errors import ValidationError


def _check_prob(value: float, name: str, *, allow_zero: bool) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a number, got {value!r}", name) from None
    lo_ok = value >= 0.0 if allow_zero else value > 0.0
    if not (math.isfinite(value) and lo_ok and value <= 1.0):
        interval = "[0, 1]" if allow_zero else "(0, 1]"
        raise ValidationError(f"{name} must lie in {interval}, got {value!r}", name)
    return value


def _check_count(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise ValidationError(f"{name} must be an integer, got {value!r}", name)
    if value < 1:
        raise ValidationError(f"{name} must be >= 1, got {value}", name)
    return value


@dataclass(frozen=True)
class Stratum:
    size: int
    expected_rate: float
    yes_prob: float

    def __post_init__(self):
        object.__setattr__(self, "size", _check_count(self.size, "size"))
        object.__setattr__(
            self, "expected_rate", _check_prob(self.expected_rate, "expected_rate", allow_zero=False)
        )
        object.__setattr__(self, "yes_prob", _check_prob(self.yes_prob, "yes_prob", allow_zero=True))


@dataclass(frozen=True)
class Population:
    strata: tuple[Stratum, ...]

    def __post_init__(self):
        strata = tuple(self.strata)
        if not strata:
            raise ValidationError("population needs at least one stratum", "strata")
        object.__setattr__(self, "strata", strata)

    @classmethod
    def from_arrays(
        cls,
        sizes: Sequence[int],
        expected_rates: Sequence[float],
        yes_probs: Sequence[float] | None = None,
    ) -> Population:
        if yes_probs is None:
            yes_probs = [0.5] * len(sizes)
        if not len(sizes) == len(expected_rates) == len(yes_probs):
            raise ValidationError("sizes, expected_rates and yes_probs differ in length")
        return cls(tuple(Stratum(n, r, q) for n, r, q in zip(sizes, expected_rates, yes_probs)))

    def __len__(self) -> int:
        return len(self.strata)

    @property
    def H(self) -> int:
        return len(self.strata)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(s.size for s in self.strata)

    @property
    def expected_rates(self) -> tuple[float, ...]:
        return tuple(s.expected_rate for s in self.strata)

    @property
    def yes_probs(self) -> tuple[float, ...]:
        return tuple(s.yes_prob for s in self.strata)

    @property
    def total_size(self) -> int:
        return sum(self.sizes)

    @property
    def shares(self) -> tuple[float, ...]:
        """Population shares N_h / N."""
        n = self.total_size
        return tuple(s / n for s in self.sizes)


@dataclass(frozen=True)
class ResponseScenario:
    """True (fieldwork) response rates, aligned with ``Population.strata``."""

    true_rates: tuple[float, ...]

    def __post_init__(self):
        rates = tuple(
            _check_prob(p, f"true_rates[{i}]", allow_zero=False) for i, p in enumerate(self.true_rates)
        )
        if not rates:
            raise ValidationError("true_rates is empty", "true_rates")
        object.__setattr__(self, "true_rates", rates)

    @classmethod
    def correct(cls, pop: Population) -> ResponseScenario:
        """Scenario in which true rates equal the expected ones."""
        return cls(pop.expected_rates)

    def check_aligned(self, pop: Population) -> None:
        if len(self.true_rates) != pop.H:
            raise ValidationError(
                f"true_rates has {len(self.true_rates)} entries, population has {pop.H} strata",
                "true_rates",
            )

    def is_correct_for(self, pop: Population) -> bool:
        return tuple(self.true_rates) == pop.expected_rates


@dataclass(frozen=True)
class DesignSpec:
    population: Population
    intended_size: int
    scenario: ResponseScenario | None = field(default=None, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "intended_size", _check_count(self.intended_size, "intended_size"))
        if self.scenario is None:
            object.__setattr__(self, "scenario", ResponseScenario.correct(self.population))
        self.scenario.check_aligned(self.population)

    @property
    def m(self) -> int:
        return self.intended_size


def average_expected_rate(pop: Population) -> float:
    """Size-weighted mean of the expected response rates, sum(r_h N_h) / N."""
    return math.fsum(s.expected_rate * s.size for s in pop.strata) / pop.total_size


def intended_from_allocated(n_allocated: float, r: float) -> float:
    if not r > 0:
        raise ValidationError(f"response rate must be > 0, got {r!r}", "r")
    if n_allocated < 0:
        raise ValidationError(f"allocated size must be >= 0, got {n_allocated!r}", "n_allocated")
    return n_allocated * r


def design_from_dict(doc: Any) -> DesignSpec:
    """Build a design from the JSON document layout.

    ``{"strata": [{"size", "expected_rate", "yes_prob"}, ...],
    "true_rates": [...], "intended_size": m}``; ``true_rates`` is optional
    and defaults to the expected rates.
    """
    if not isinstance(doc, dict):
        raise ValidationError("config must be a JSON object")
    if "strata" not in doc:
        raise ValidationError("missing required key 'strata'", "strata")
    if "intended_size" not in doc:
        raise ValidationError("missing required key 'intended_size'", "intended_size")
    raw = doc["strata"]
    if not isinstance(raw, list) or not raw:
        raise ValidationError("'strata' must be a non-empty list", "strata")
    strata = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict):
            raise ValidationError(f"strata[{i}] must be an object", f"strata[{i}]")
        for key in ("size", "expected_rate", "yes_prob"):
            if key not in item:
                raise ValidationError(f"strata[{i}] missing key '{key}'", f"strata[{i}].{key}")
        try:
            strata.append(Stratum(item["size"], item["expected_rate"], item["yes_prob"]))
        except ValidationError as exc:
            raise ValidationError(f"strata[{i}]: {exc}", f"strata[{i}].{exc.field}") from None
    pop = Population(tuple(strata))
    scenario = None
    if doc.get("true_rates") is not None:
        if not isinstance(doc["true_rates"], list):
            raise ValidationError("'true_rates' must be a list", "true_rates")
        scenario = ResponseScenario(tuple(doc["true_rates"]))
    return DesignSpec(pop, doc["intended_size"], scenario)


def design_to_dict(design: DesignSpec) -> dict:
    return {
        "strata": [
            {"size": s.size, "expected_rate": s.expected_rate, "yes_prob": s.yes_prob}
            for s in design.population.strata
        ],
        "true_rates": list(design.scenario.true_rates),
        "intended_size": design.intended_size,
    }


def load_design(path: str | Path) -> DesignSpec:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return design_from_dict(doc)
