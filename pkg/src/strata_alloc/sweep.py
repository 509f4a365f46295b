"""Grid sweep of PS vs ERR variances under misspecified response rates.

Cells are enumerated lexicographically over (r_1..r_H, p_1..p_H, q), the
last coordinate varying fastest; ``q`` is one shared value or one value per
stratum depending on ``q_mode``. Evaluation is analytic (no Monte Carlo)
and proceeds in fixed-size chunks, so output bytes do not depend on the
number of workers.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence, TextIO

import numpy as np

from strata_alloc.errors import ValidationError
from strata_alloc.metrics import misspecification, spread_from_weighted_average
from strata_alloc.population import DesignSpec, Population, ResponseScenario, Stratum
from strata_alloc.variance import totals_vectorized

PAPER_RATES = (0.1, 0.3, 0.5, 0.7, 0.9)
PAPER_Q = tuple(round(0.05 * i, 2) for i in range(21))
Q_SETUPS = ((0.1, 0.1, 0.1), (0.1, 0.5, 0.9), (0.5, 0.5, 0.5), (0.9, 0.9, 0.9))
CHUNK = 16_384
THEOREM_TOL = 1e-12
FIGURE3_TOL = 1e-9
BIN_WIDTH = 0.1
TIE_TOL = 1e-12


class QMode(str, enum.Enum):
    SHARED = "shared"
    PER_STRATUM = "per-stratum"

    @classmethod
    def parse(cls, value) -> QMode:
        text = str(getattr(value, "value", value)).lower().replace("_", "-")
        if text == "perstratum":
            text = "per-stratum"
        try:
            return cls(text)
        except ValueError:
            raise ValidationError(f"q_mode must be shared or per-stratum, got {value!r}", "q_mode") from None


@dataclass(frozen=True)
class GridSpec:
    strata_count: int = 3
    rate_values: tuple[float, ...] = PAPER_RATES
    q_values: tuple[float, ...] = PAPER_Q
    q_mode: QMode = QMode.SHARED
    population_sizes: tuple[int, ...] | None = None
    intended_size: int = 1000

    def __post_init__(self):
        H = self.strata_count
        if isinstance(H, bool) or not isinstance(H, int) or H < 1:
            raise ValidationError(f"strata_count must be an integer >= 1, got {H!r}", "strata_count")
        rates = tuple(float(v) for v in self.rate_values)
        qs = tuple(float(v) for v in self.q_values)
        if not rates:
            raise ValidationError("rate_values is empty", "rate_values")
        if not qs:
            raise ValidationError("q_values is empty", "q_values")
        if any(not 0.0 < v <= 1.0 for v in rates):
            raise ValidationError("rate_values must lie in (0, 1]", "rate_values")
        if any(not 0.0 <= v <= 1.0 for v in qs):
            raise ValidationError("q_values must lie in [0, 1]", "q_values")
        sizes = self.population_sizes
        sizes = (1000,) * H if sizes is None else tuple(int(s) for s in sizes)
        if len(sizes) != H or any(s < 1 for s in sizes):
            raise ValidationError(f"population_sizes must be {H} positive integers", "population_sizes")
        if isinstance(self.intended_size, bool) or not isinstance(self.intended_size, int) or self.intended_size < 1:
            raise ValidationError("intended_size must be an integer >= 1", "intended_size")
        object.__setattr__(self, "rate_values", rates)
        object.__setattr__(self, "q_values", qs)
        object.__setattr__(self, "q_mode", QMode.parse(self.q_mode))
        object.__setattr__(self, "population_sizes", sizes)

    @property
    def q_width(self) -> int:
        return self.strata_count if self.q_mode is QMode.PER_STRATUM else 1

    @property
    def cell_count(self) -> int:
        return len(self.rate_values) ** (2 * self.strata_count) * len(self.q_values) ** self.q_width

    @property
    def shares(self) -> np.ndarray:
        sizes = np.array(self.population_sizes, dtype=float)
        return sizes / sizes.sum()

    def to_dict(self) -> dict:
        out = asdict(self)
        out["q_mode"] = self.q_mode.value
        for key in ("rate_values", "q_values", "population_sizes"):
            out[key] = list(out[key])
        return out

    @classmethod
    def from_dict(cls, doc: Any, **overrides) -> GridSpec:
        if not isinstance(doc, dict):
            raise ValidationError("grid spec must be a JSON object")
        known = {"strata_count", "rate_values", "q_values", "q_mode", "population_sizes", "intended_size"}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown grid spec key(s): {sorted(unknown)}", sorted(unknown)[0])
        kwargs = {k: doc[k] for k in known if k in doc}
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)


def _digits(index: np.ndarray, spec: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decode flat cell indices into (r, p, q) arrays of shape (cells, H)."""
    H = spec.strata_count
    rates = np.array(spec.rate_values)
    qvals = np.array(spec.q_values)
    nr, nq = len(rates), len(qvals)
    rest = index.astype(np.int64)
    q_idx = np.empty((len(index), spec.q_width), dtype=np.int64)
    for j in reversed(range(spec.q_width)):
        q_idx[:, j] = rest % nq
        rest = rest // nq
    rp_idx = np.empty((len(index), 2 * H), dtype=np.int64)
    for j in reversed(range(2 * H)):
        rp_idx[:, j] = rest % nr
        rest = rest // nr
    r = rates[rp_idx[:, :H]]
    p = rates[rp_idx[:, H:]]
    q = qvals[q_idx]
    if spec.q_mode is QMode.SHARED:
        q = np.repeat(q, H, axis=1)
    return r, p, q


def generate_grid(spec: GridSpec) -> Iterator[tuple[DesignSpec, ResponseScenario]]:
    """Yield every cell as a (design, true-rate scenario) pair, in sweep order."""
    for start in range(0, spec.cell_count, CHUNK):
        idx = np.arange(start, min(start + CHUNK, spec.cell_count))
        r, p, q = _digits(idx, spec)
        for ri, pi, qi in zip(r.tolist(), p.tolist(), q.tolist()):
            pop = Population(tuple(Stratum(n, rr, qq) for n, rr, qq in zip(spec.population_sizes, ri, qi)))
            scenario = ResponseScenario(tuple(pi))
            yield DesignSpec(pop, spec.intended_size, scenario), scenario


@dataclass(frozen=True)
class SweepRecord:
    p: tuple[float, ...]
    r: tuple[float, ...]
    q: tuple[float, ...]
    var_ps: float
    var_err: float
    ratio: float | None
    misspec: float
    spread_from_avg: float


@dataclass
class SweepTable:
    """Columnar block of sweep records; ``ratio`` is NaN where undefined."""

    p: np.ndarray
    r: np.ndarray
    q: np.ndarray
    var_ps: np.ndarray
    var_err: np.ndarray
    ratio: np.ndarray
    misspec: np.ndarray
    spread: np.ndarray

    def __len__(self) -> int:
        return len(self.var_ps)

    def records(self) -> Iterator[SweepRecord]:
        for i in range(len(self)):
            ratio = float(self.ratio[i])
            yield SweepRecord(
                tuple(self.p[i].tolist()),
                tuple(self.r[i].tolist()),
                tuple(self.q[i].tolist()),
                float(self.var_ps[i]),
                float(self.var_err[i]),
                None if math.isnan(ratio) else ratio,
                float(self.misspec[i]),
                float(self.spread[i]),
            )

    @classmethod
    def concat(cls, tables: Sequence[SweepTable]) -> SweepTable:
        return cls(*(np.concatenate([getattr(t, f) for t in tables]) for f in cls.__dataclass_fields__))


def evaluate_chunk(spec: GridSpec, start: int, stop: int) -> SweepTable:
    r, p, q = _digits(np.arange(start, stop), spec)
    shares = spec.shares
    var_ps, var_err = totals_vectorized(shares, r, p, q, spec.intended_size)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(var_ps > 0, var_err / np.where(var_ps > 0, var_ps, 1.0), np.nan)
    H = spec.strata_count
    mis = np.zeros(len(r))
    pbar = np.zeros(len(r))
    for h in range(H):
        mis = mis + np.abs(r[:, h] - p[:, h])
        pbar = pbar + shares[h] * p[:, h]
    spread = np.zeros(len(r))
    for h in range(H):
        spread = spread + np.abs(p[:, h] - pbar)
    return SweepTable(p, r, q, var_ps, var_err, ratio, mis, spread)


def format_real(x: float) -> str:
    """17 significant digits; ``NA`` for NaN. Round-trips through float()."""
    if math.isnan(x):
        return "NA"
    return "%.17g" % x


def csv_header(H: int) -> list[str]:
    return (
        [f"p{h + 1}" for h in range(H)]
        + [f"r{h + 1}" for h in range(H)]
        + [f"q{h + 1}" for h in range(H)]
        + ["var_ps", "var_err", "ratio", "misspec", "spread"]
    )


def table_to_csv_rows(table: SweepTable) -> str:
    cols = np.column_stack(
        [table.p, table.r, table.q, table.var_ps, table.var_err, table.ratio, table.misspec, table.spread]
    )
    return "".join(",".join(map(format_real, row)) + "\n" for row in cols.tolist())


@dataclass
class ChunkStats:
    """Per-chunk partial summary, reduced in chunk order."""

    count: int = 0
    defined: int = 0
    below_one: int = 0
    ratio_min: float = math.inf
    ratio_max: float = -math.inf
    theorem_cells: int = 0
    theorem_violations: int = 0
    theorem_equality_mismatches: int = 0
    fig3_cells: int = 0
    fig3_violations: int = 0
    band_sums: dict = field(default_factory=dict)
    band_counts: dict = field(default_factory=dict)
    counterexamples: list = field(default_factory=list)

    def merge(self, other: ChunkStats, keep: int) -> None:
        self.count += other.count
        self.defined += other.defined
        self.below_one += other.below_one
        self.ratio_min = min(self.ratio_min, other.ratio_min)
        self.ratio_max = max(self.ratio_max, other.ratio_max)
        self.theorem_cells += other.theorem_cells
        self.theorem_violations += other.theorem_violations
        self.theorem_equality_mismatches += other.theorem_equality_mismatches
        self.fig3_cells += other.fig3_cells
        self.fig3_violations += other.fig3_violations
        for k, v in other.band_sums.items():
            self.band_sums.setdefault(k, []).extend(v)
            self.band_counts[k] = self.band_counts.get(k, 0) + other.band_counts[k]
        room = keep - len(self.counterexamples)
        self.counterexamples.extend(other.counterexamples[: max(room, 0)])


FIGURE2_BANDS = (0.3, 0.4)


def chunk_stats(table: SweepTable, start: int, keep: int = 20) -> ChunkStats:
    st = ChunkStats(count=len(table))
    ratio = table.ratio
    defined = ~np.isnan(ratio)
    st.defined = int(defined.sum())
    if st.defined:
        st.below_one = int((ratio[defined] < 1.0).sum())
        st.ratio_min = float(ratio[defined].min())
        st.ratio_max = float(ratio[defined].max())

    # correctly specified cells
    correct = np.all(table.p == table.r, axis=1)
    st.theorem_cells = int(correct.sum())
    st.theorem_violations = int((correct & (table.var_err > table.var_ps + THEOREM_TOL)).sum())
    rates_equal = (table.r.max(axis=1) - table.r.min(axis=1)) <= THEOREM_TOL
    equal_var = np.abs(table.var_ps - table.var_err) <= THEOREM_TOL
    # equality is only informative where the variances are nonzero
    informative = correct & (table.var_ps > 0)
    st.theorem_equality_mismatches = int((informative & (equal_var != rates_equal)).sum())

    # strict inequalities: mathematically tied cells must not tip in on rounding noise
    region = defined & (table.misspec < table.spread - TIE_TOL)
    st.fig3_cells = int(region.sum())
    bad = region & (ratio > 1.0 + FIGURE3_TOL)
    st.fig3_violations = int(bad.sum())
    for i in np.flatnonzero(bad)[:keep].tolist():
        st.counterexamples.append(
            {
                "cell": start + i,
                "p": table.p[i].tolist(),
                "r": table.r[i].tolist(),
                "q": table.q[i].tolist(),
                "ratio": float(ratio[i]),
                "misspec": float(table.misspec[i]),
                "spread": float(table.spread[i]),
            }
        )

    for band in FIGURE2_BANDS:
        sel = defined & (table.misspec < band - TIE_TOL)
        st.band_sums[band] = [math.fsum(ratio[sel].tolist())]
        st.band_counts[band] = int(sel.sum())
    return st


def _evaluate_block(args) -> tuple[str, ChunkStats]:
    spec, start, stop = args
    table = evaluate_chunk(spec, start, stop)
    return table_to_csv_rows(table), chunk_stats(table, start)


@dataclass(frozen=True)
class SweepSummary:
    cell_count: int
    defined_ratio_count: int
    undefined_ratio_count: int
    fraction_ratio_below_one: float | None
    min_ratio: float | None
    max_ratio: float | None
    theorem43_cells: int
    theorem43_violations: int
    theorem43_equality_mismatches: int
    figure3_region_cells: int
    figure3_violations: int
    figure3_counterexamples: list
    figure2_band_mean_ratio: dict

    def to_dict(self) -> dict:
        out = asdict(self)
        out["figure2_band_mean_ratio"] = {str(k): v for k, v in self.figure2_band_mean_ratio.items()}
        return out


def _chunks(spec: GridSpec) -> list[tuple[GridSpec, int, int]]:
    n = spec.cell_count
    return [(spec, s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]


def run_sweep(
    spec: GridSpec,
    sink: TextIO | None = None,
    workers: int = 1,
    on_table=None,
    keep_counterexamples: int = 20,
) -> SweepSummary:
    """Evaluate every grid cell, stream CSV rows to ``sink`` and summarize.

    ``on_table``, if given, is called with each evaluated SweepTable chunk in
    cell order (used for figure aggregates without re-reading the CSV).
    """
    if sink is not None:
        sink.write(",".join(csv_header(spec.strata_count)) + "\n")
    total = ChunkStats()
    jobs = _chunks(spec)

    def consume(results):
        for (text, stats), job in zip(results, jobs):
            if sink is not None:
                sink.write(text)
            if on_table is not None:
                on_table(evaluate_chunk(*job))
            total.merge(stats, keep_counterexamples)

    if workers <= 1 or len(jobs) == 1:
        consume(map(_evaluate_block, jobs))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            # map yields results in submission order, which fixes the byte order
            consume(pool.map(_evaluate_block, jobs, chunksize=1))

    band_means = {
        band: (math.fsum(total.band_sums[band]) / total.band_counts[band]) if total.band_counts.get(band) else None
        for band in FIGURE2_BANDS
    }
    return SweepSummary(
        cell_count=total.count,
        defined_ratio_count=total.defined,
        undefined_ratio_count=total.count - total.defined,
        fraction_ratio_below_one=total.below_one / total.defined if total.defined else None,
        min_ratio=total.ratio_min if total.defined else None,
        max_ratio=total.ratio_max if total.defined else None,
        theorem43_cells=total.theorem_cells,
        theorem43_violations=total.theorem_violations,
        theorem43_equality_mismatches=total.theorem_equality_mismatches,
        figure3_region_cells=total.fig3_cells,
        figure3_violations=total.fig3_violations,
        figure3_counterexamples=total.counterexamples,
        figure2_band_mean_ratio=band_means,
    )


def collect(spec: GridSpec) -> SweepTable:
    """Whole grid in memory. Only sensible for small grids."""
    return SweepTable.concat([evaluate_chunk(*job) for job in _chunks(spec)])


def load_records(path: str | Path) -> SweepTable:
    """Read a records CSV written by ``run_sweep``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[math.nan if v == "NA" else float(v) for v in row] for row in reader]
    H = sum(1 for h in header if h.startswith("p"))
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return SweepTable(
        data[:, :H], data[:, H : 2 * H], data[:, 2 * H : 3 * H], *(data[:, 3 * H + k] for k in range(5))
    )


# -- figure aggregates -------------------------------------------------------


def bin_index(values: np.ndarray, width: float = BIN_WIDTH) -> np.ndarray:
    # small nudge so grid values like 0.3 / 0.1 land in bin 3, not 2
    return np.floor(np.asarray(values) / width + 1e-9).astype(np.int64)


@dataclass
class BinnedMeans:
    """Mean ratio per (x bin, y bin); bin k covers [k*width, (k+1)*width)."""

    x_name: str
    y_name: str
    width: float
    sums: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def add(self, x: np.ndarray, y: np.ndarray, ratio: np.ndarray) -> None:
        keep = ~np.isnan(ratio)
        bx, by = bin_index(x[keep], self.width), bin_index(y[keep], self.width)
        vals = ratio[keep]
        keys = bx * 100_000 + by
        order = np.argsort(keys, kind="stable")
        keys, vals = keys[order], vals[order]
        uniq, first = np.unique(keys, return_index=True)
        bounds = list(first[1:]) + [len(keys)]
        for key, lo, hi in zip(uniq.tolist(), first.tolist(), bounds):
            k = (key // 100_000, key % 100_000)
            self.sums.setdefault(k, []).append(math.fsum(vals[lo:hi].tolist()))
            self.counts[k] = self.counts.get(k, 0) + (hi - lo)

    def rows(self) -> list[tuple[float, float, int, float]]:
        out = []
        for k in sorted(self.counts):
            out.append(
                (k[0] * self.width, k[1] * self.width, self.counts[k], math.fsum(self.sums[k]) / self.counts[k])
            )
        return out

    def axis_bins(self) -> tuple[int, int]:
        xs = {k[0] for k in self.counts}
        ys = {k[1] for k in self.counts}
        return len(xs), len(ys)


@dataclass
class FigureBins:
    figure1: BinnedMeans
    figure2: BinnedMeans
    figure3: BinnedMeans
    figure4: dict

    def scatter_rows(self) -> list[tuple[str, float, float, float]]:
        rows = []
        for setup, parts in self.figure4.items():
            label = "/".join(format_real(v) for v in setup)
            for spread, ratio, mis in parts:
                rows.extend((label, s, r, m) for s, r, m in zip(spread.tolist(), ratio.tolist(), mis.tolist()))
        return rows

    def setup_count(self, setup: tuple[float, ...]) -> int:
        return sum(len(part[0]) for part in self.figure4.get(tuple(setup), []))


class FigureAccumulator:
    """Incremental builder for ``FigureBins`` over a stream of SweepTables."""

    def __init__(self, width: float = BIN_WIDTH, setups: Iterable[tuple[float, ...]] = Q_SETUPS):
        self.width = width
        self.setups = [tuple(s) for s in setups]
        self.bins = FigureBins(
            BinnedMeans("misspec", "spread", width),
            # both axes are the same L1 distance as described for this figure
            BinnedMeans("misspec", "misspec_vs_expected", width),
            BinnedMeans("spread", "misspec_vs_expected", width),
            {s: [] for s in self.setups},
        )
        self.rows_seen = 0

    def __call__(self, table: SweepTable) -> None:
        self.rows_seen += len(table)
        b = self.bins
        b.figure1.add(table.misspec, table.spread, table.ratio)
        b.figure2.add(table.misspec, table.misspec, table.ratio)
        b.figure3.add(table.spread, table.misspec, table.ratio)
        H = table.q.shape[1]
        for setup in self.setups:
            if len(setup) != H:
                continue
            sel = np.all(np.abs(table.q - np.array(setup)) <= 1e-9, axis=1)
            if sel.any():
                b.figure4[setup].append((table.spread[sel], table.ratio[sel], table.misspec[sel]))


def figure_bins(records: SweepTable | Iterable[SweepTable], width: float = BIN_WIDTH) -> FigureBins:
    """Binned mean ratios for the heat-map figures and the per-q-setup scatter."""
    tables = [records] if isinstance(records, SweepTable) else list(records)
    acc = FigureAccumulator(width)
    for t in tables:
        acc(t)
    if acc.rows_seen == 0:
        raise ValidationError("no records to bin")
    return acc.bins


def write_binned_csv(path: Path, binned: BinnedMeans) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"{binned.x_name}_lo,{binned.y_name}_lo,count,mean_ratio\n")
        for x, y, n, mean in binned.rows():
            fh.write(f"{format_real(x)},{format_real(y)},{n},{format_real(mean)}\n")


def write_scatter_csv(path: Path, bins: FigureBins) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("q_setup,spread,ratio,misspec\n")
        for label, s, r, m in bins.scatter_rows():
            fh.write(f"{label},{format_real(s)},{format_real(r)},{format_real(m)}\n")


def write_svgs(out_dir: Path, bins: FigureBins) -> list[Path]:
    """Heat maps and scatter plots. Presentation only; failures are swallowed by the caller."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    for name, binned in (("figure1", bins.figure1), ("figure2", bins.figure2), ("figure3", bins.figure3)):
        rows = binned.rows()
        if not rows:
            continue
        xs = sorted({r[0] for r in rows})
        ys = sorted({r[1] for r in rows})
        grid = np.full((len(ys), len(xs)), np.nan)
        for x, y, _, mean in rows:
            grid[ys.index(y), xs.index(x)] = mean
        fig, ax = plt.subplots(figsize=(6, 5))
        im = ax.imshow(grid, origin="lower", aspect="auto", cmap="RdBu_r", vmin=0, vmax=2,
                       extent=(xs[0], xs[-1] + binned.width, ys[0], ys[-1] + binned.width))
        ax.set_xlabel(binned.x_name)
        ax.set_ylabel(binned.y_name)
        fig.colorbar(im, ax=ax, label="mean var_err / var_ps")
        path = out_dir / f"{name}.svg"
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    setups = [s for s in bins.figure4 if bins.figure4[s]]
    if setups:
        fig, axes = plt.subplots(1, len(setups), figsize=(4 * len(setups), 4), squeeze=False)
        for ax, setup in zip(axes[0], setups):
            spread = np.concatenate([p[0] for p in bins.figure4[setup]])
            ratio = np.concatenate([p[1] for p in bins.figure4[setup]])
            mis = np.concatenate([p[2] for p in bins.figure4[setup]])
            sc = ax.scatter(spread, ratio, c=mis, s=2, cmap="viridis")
            ax.set_title("q = " + ", ".join(f"{v:g}" for v in setup))
            ax.set_xlabel("spread")
            ax.set_ylabel("ratio")
        fig.colorbar(sc, ax=axes[0].tolist(), label="misspec")
        path = out_dir / "figure4.svg"
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written


def dump_summary(summary: SweepSummary, fh: TextIO) -> None:
    json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
    fh.write("\n")
