import sys
from pathlib import Path

import pytest
from hypothesis import strategies as st

from strata_alloc.population import DesignSpec, Population, ResponseScenario

sys.path.insert(0, str(Path(__file__).parent))

rates = st.floats(min_value=0.01, max_value=1.0, allow_nan=False)
probs = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
sizes = st.integers(min_value=1, max_value=100_000)


@st.composite
def designs(draw, max_strata=6, shared_q=False, correct=True):
    H = draw(st.integers(min_value=1, max_value=max_strata))
    ns = draw(st.lists(sizes, min_size=H, max_size=H))
    rs = draw(st.lists(rates, min_size=H, max_size=H))
    if shared_q:
        qs = [draw(probs)] * H
    else:
        qs = draw(st.lists(probs, min_size=H, max_size=H))
    m = draw(st.integers(min_value=1, max_value=100_000))
    scenario = None
    if not correct:
        scenario = ResponseScenario(tuple(draw(st.lists(rates, min_size=H, max_size=H))))
    return DesignSpec(Population.from_arrays(ns, rs, qs), m, scenario)


@pytest.fixture
def two_strata():
    """N = (750, 250), r = (0.5, 0.25), m = 175."""
    return DesignSpec(Population.from_arrays([750, 250], [0.5, 0.25], [0.5, 0.5]), 175)


@pytest.fixture
def skewed_rates():
    """N = (500, 500), r = p = (0.9, 0.1), q = 0.5, m = 100."""
    return DesignSpec(Population.from_arrays([500, 500], [0.9, 0.1], [0.5, 0.5]), 100)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
