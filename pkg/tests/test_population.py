import json

import pytest
from hypothesis import given, strategies as st

from conftest import designs
from strata_alloc.errors import ValidationError
from strata_alloc.population import (
    DesignSpec,
    Population,
    ResponseScenario,
    Stratum,
    average_expected_rate,
    design_from_dict,
    intended_from_allocated,
    load_design,
)


@pytest.mark.parametrize(
    "sizes, rates, expected",
    [
        ((500, 500), (0.5, 0.5), 0.5),
        ((750, 250), (0.5, 0.25), 0.4375),
        ((10,), (0.3,), 0.3),
    ],
)
def test_average_expected_rate(sizes, rates, expected):
    pop = Population.from_arrays(sizes, rates)
    assert average_expected_rate(pop) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("n, r, expected", [(200, 0.5, 100), (37, 1.0, 37), (0, 0.7, 0)])
def test_intended_from_allocated(n, r, expected):
    assert intended_from_allocated(n, r) == expected


def test_intended_rejects_zero_rate():
    with pytest.raises(ValidationError):
        intended_from_allocated(10, 0.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(size=0, expected_rate=0.5, yes_prob=0.5),
        dict(size=10, expected_rate=0.0, yes_prob=0.5),
        dict(size=10, expected_rate=1.2, yes_prob=0.5),
        dict(size=10, expected_rate=0.5, yes_prob=-0.1),
        dict(size=10, expected_rate=0.5, yes_prob=float("nan")),
    ],
)
def test_stratum_validation(kwargs):
    with pytest.raises(ValidationError):
        Stratum(**kwargs)


def test_yes_prob_endpoints_allowed():
    Stratum(1, 1.0, 0.0)
    Stratum(1, 0.1, 1.0)


def test_population_requires_strata():
    with pytest.raises(ValidationError):
        Population(())


def test_total_size():
    pop = Population.from_arrays([3, 4, 5], [0.5] * 3)
    assert pop.total_size == 12
    assert sum(pop.shares) == pytest.approx(1.0)


def test_scenario_defaults_to_correct():
    pop = Population.from_arrays([3, 4], [0.2, 0.6])
    d = DesignSpec(pop, 10)
    assert d.scenario.true_rates == (0.2, 0.6)
    assert d.scenario.is_correct_for(pop)


def test_scenario_length_mismatch():
    pop = Population.from_arrays([3, 4], [0.2, 0.6])
    with pytest.raises(ValidationError):
        DesignSpec(pop, 10, ResponseScenario((0.5,)))


def test_scenario_rejects_zero_rate():
    with pytest.raises(ValidationError):
        ResponseScenario((0.5, 0.0))


def test_design_json_roundtrip(tmp_path):
    doc = {
        "strata": [
            {"size": 750, "expected_rate": 0.5, "yes_prob": 0.2},
            {"size": 250, "expected_rate": 0.25, "yes_prob": 0.6},
        ],
        "true_rates": [0.4, 0.3],
        "intended_size": 175,
    }
    path = tmp_path / "d.json"
    path.write_text(json.dumps(doc))
    d = load_design(path)
    assert d.population.sizes == (750, 250)
    assert d.scenario.true_rates == (0.4, 0.3)
    assert d.intended_size == 175


@pytest.mark.parametrize(
    "doc, field",
    [
        ({"intended_size": 10}, "strata"),
        ({"strata": [{"size": 1, "expected_rate": 0.5, "yes_prob": 0.5}]}, "intended_size"),
        ({"strata": [{"size": 1, "yes_prob": 0.5}], "intended_size": 1}, "strata[0].expected_rate"),
        ({"strata": [{"size": 1, "expected_rate": 2, "yes_prob": 0.5}], "intended_size": 1}, "strata[0].expected_rate"),
    ],
)
def test_design_validation_names_field(doc, field):
    with pytest.raises(ValidationError) as info:
        design_from_dict(doc)
    assert info.value.field == field


@given(designs())
def test_average_rate_within_bounds(d):
    pop = d.population
    r = average_expected_rate(pop)
    assert min(pop.expected_rates) - 1e-15 <= r <= max(pop.expected_rates) + 1e-15


@given(designs(), st.integers(min_value=2, max_value=50))
def test_average_rate_scale_invariant(d, k):
    pop = d.population
    scaled = Population.from_arrays([n * k for n in pop.sizes], pop.expected_rates, pop.yes_probs)
    assert average_expected_rate(scaled) == pytest.approx(average_expected_rate(pop), rel=1e-13)


@given(st.floats(min_value=0, max_value=1e7), st.floats(min_value=1e-6, max_value=1.0))
def test_intended_inverts_division(n, r):
    assert intended_from_allocated(n / r, r) == pytest.approx(n, rel=1e-14, abs=1e-300)
