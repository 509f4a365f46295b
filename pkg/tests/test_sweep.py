import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from strata_alloc.errors import ValidationError
from strata_alloc.population import Population
from strata_alloc.sweep import (
    GridSpec,
    Q_SETUPS,
    collect,
    figure_bins,
    format_real,
    generate_grid,
    load_records,
    misspecification,
    run_sweep,
    spread_from_weighted_average,
)
from strata_alloc.variance import compare

RATES = (0.1, 0.3, 0.5, 0.7, 0.9)


def test_misspecification_examples():
    assert misspecification((0.1, 0.3, 0.5), (0.1, 0.3, 0.5)) == 0
    assert misspecification((0.1, 0.3, 0.5), (0.3, 0.1, 0.5)) == pytest.approx(0.4)
    with pytest.raises(ValidationError):
        misspecification((0.1,), (0.1, 0.2))


@given(st.lists(st.floats(0.01, 1), min_size=1, max_size=5).flatmap(
    lambda a: st.tuples(st.just(a), st.lists(st.floats(0.01, 1), min_size=len(a), max_size=len(a)))))
def test_misspecification_symmetric(pair):
    a, b = pair
    assert misspecification(a, b) == misspecification(b, a)


def test_spread_examples():
    assert spread_from_weighted_average((0.4, 0.4, 0.4), (1, 5, 9)) == pytest.approx(0, abs=1e-15)
    assert spread_from_weighted_average((0.1, 0.5, 0.9), (7, 7, 7)) == pytest.approx(0.8)
    pop = Population.from_arrays([2, 3, 5], [0.5] * 3)
    scaled = Population.from_arrays([20, 30, 50], [0.5] * 3)
    p = (0.1, 0.7, 0.3)
    assert spread_from_weighted_average(p, pop) == pytest.approx(spread_from_weighted_average(p, scaled), rel=1e-14)


@pytest.mark.parametrize(
    "kwargs, count",
    [
        (dict(strata_count=3, q_values=(0.5,)), 15_625),
        (dict(strata_count=1, rate_values=(0.5,), q_values=(0.5,)), 1),
        (dict(strata_count=3, q_mode="per-stratum"), 144_703_125),
        (dict(strata_count=3), 328_125),
    ],
)
def test_grid_counts(kwargs, count):
    assert GridSpec(**kwargs).cell_count == count


@pytest.mark.parametrize(
    "kwargs",
    [dict(rate_values=()), dict(q_values=()), dict(rate_values=(0.0, 0.5)), dict(q_values=(1.5,)),
     dict(strata_count=0), dict(population_sizes=(1, 2)), dict(q_mode="sometimes")],
)
def test_grid_validation(kwargs):
    with pytest.raises(ValidationError):
        GridSpec(**kwargs)


def test_generate_grid_order_and_count():
    spec = GridSpec(strata_count=2, rate_values=(0.2, 0.8), q_values=(0.0, 0.5), q_mode="per-stratum")
    cells = list(generate_grid(spec))
    assert len(cells) == spec.cell_count == 2**4 * 2**2
    expected = list(itertools.product((0.2, 0.8), (0.2, 0.8), (0.2, 0.8), (0.2, 0.8), (0.0, 0.5), (0.0, 0.5)))
    got = [d.population.expected_rates + s.true_rates + d.population.yes_probs for d, s in cells]
    assert got == expected


def small_spec(**kw):
    base = dict(strata_count=3, q_values=(0.0, 0.2, 0.5, 1.0), population_sizes=(300, 200, 500), intended_size=400)
    base.update(kw)
    return GridSpec(**base)


def test_vectorized_sweep_matches_scalar_compare():
    spec = small_spec(rate_values=(0.1, 0.5, 0.9))
    table = collect(spec)
    for i, (design, scenario) in enumerate(generate_grid(spec)):
        rep = compare(design, scenario)
        assert table.var_ps[i] == pytest.approx(rep.total_ps, rel=1e-12, abs=1e-300)
        assert table.var_err[i] == pytest.approx(rep.total_err, rel=1e-12, abs=1e-300)
        if rep.ratio is None:
            assert math.isnan(table.ratio[i])
        else:
            assert table.ratio[i] == pytest.approx(rep.ratio, rel=1e-12)
        assert table.misspec[i] == pytest.approx(rep.misspec, abs=1e-14)
        assert table.spread[i] == pytest.approx(rep.spread_from_avg, abs=1e-14)


def test_correctly_specified_cells_favour_err():
    spec = GridSpec(q_values=(0.05, 0.5, 0.95))
    table = collect(spec)
    correct = np.all(table.p == table.r, axis=1)
    assert (table.ratio[correct] <= 1 + 1e-12).all()


def test_summary_counts_and_degenerate_cells():
    spec = small_spec()
    buf = io.StringIO()
    summary = run_sweep(spec, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "p1,p2,p3,r1,r2,r3,q1,q2,q3,var_ps,var_err,ratio,misspec,spread"
    assert len(lines) - 1 == summary.cell_count == spec.cell_count
    # q in {0, 1}: zero variances and NA ratio
    assert summary.undefined_ratio_count == spec.cell_count // 2
    degenerate = [l for l in lines[1:] if l.split(",")[6] in ("0", "1")]
    assert degenerate and all(l.split(",")[9:12] == ["0", "0", "NA"] for l in degenerate)
    assert summary.theorem43_violations == 0
    assert summary.theorem43_cells == 5**3 * 4


def test_ratio_invariant_to_m():
    a = collect(small_spec(intended_size=100))
    b = collect(small_spec(intended_size=1000))
    np.testing.assert_allclose(a.ratio, b.ratio, rtol=1e-13)
    np.testing.assert_allclose(a.var_ps, 10 * b.var_ps, rtol=1e-13)


def test_run_sweep_deterministic_across_workers():
    spec = GridSpec(q_values=(0.3, 0.6))
    one, many = io.StringIO(), io.StringIO()
    s1 = run_sweep(spec, one, workers=1)
    s2 = run_sweep(spec, many, workers=4)
    assert one.getvalue() == many.getvalue()
    assert s1 == s2


def test_csv_values_round_trip(tmp_path):
    path = tmp_path / "records.csv"
    with open(path, "w") as fh:
        run_sweep(small_spec(rate_values=(0.1, 0.7)), fh)
    for line in path.read_text().splitlines()[1:50]:
        for text in line.split(","):
            if text != "NA":
                assert format_real(float(text)) == text
    table = load_records(path)
    np.testing.assert_array_equal(table.var_err, collect(small_spec(rate_values=(0.1, 0.7))).var_err)


def test_format_real():
    assert format_real(0.1) == "0.10000000000000001"
    assert format_real(float("nan")) == "NA"
    assert format_real(2.0) == "2"


def test_per_stratum_mode_shape():
    spec = GridSpec(strata_count=2, rate_values=(0.5, 0.9), q_values=(0.1, 0.9), q_mode="per-stratum")
    table = collect(spec)
    assert table.q.shape == (spec.cell_count, 2)
    assert not np.all(table.q[:, 0] == table.q[:, 1])


# -- figure aggregates ---------------------------------------------------------


def test_figure4_setup_filter_count():
    bins = figure_bins(collect(GridSpec()))
    assert bins.setup_count((0.5, 0.5, 0.5)) == 5**6
    assert bins.setup_count((0.1, 0.1, 0.1)) == 5**6
    # mixed setup only exists with per-stratum q
    assert bins.setup_count((0.1, 0.5, 0.9)) == 0


def test_figure4_mixed_setup_per_stratum():
    spec = GridSpec(q_values=(0.1, 0.5, 0.9), q_mode="per-stratum")
    bins = figure_bins(collect(spec))
    for setup in Q_SETUPS:
        assert bins.setup_count(setup) == 5**6


def test_correct_cells_land_in_zero_misspec_bin():
    table = collect(GridSpec(q_values=(0.5,)))
    correct = np.all(table.p == table.r, axis=1)
    from strata_alloc.sweep import bin_index

    assert (bin_index(table.misspec[correct]) == 0).all()


def test_bin_count_bound():
    bins = figure_bins(collect(GridSpec(q_values=(0.5,))))
    bound = math.ceil(2 * 3 * 0.8 / 0.1) + 1
    for binned in (bins.figure1, bins.figure2, bins.figure3):
        nx, ny = binned.axis_bins()
        assert nx <= bound and ny <= bound
        assert sum(n for _, _, n, _ in binned.rows()) == 5**6


def test_figure_bins_empty():
    table = collect(GridSpec(strata_count=1, rate_values=(0.5,), q_values=(0.5,)))
    empty = type(table)(*(getattr(table, f)[:0] for f in table.__dataclass_fields__))
    with pytest.raises(ValidationError):
        figure_bins(empty)
