"""Command-line front end: ``strata-alloc {allocate,variance,compare,simulate,sweep}``.

Exit codes: 0 ok, 2 invalid config or arguments, 3 undefined ratio under
``--require-ratio``, 4 every simulation replicate discarded, 5 output I/O
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from strata_alloc import __version__
from strata_alloc.allocation import Method, allocate, round_allocation
from strata_alloc.errors import AllDiscarded, ValidationError, ZeroRespondents
from strata_alloc.population import average_expected_rate, design_from_dict, design_to_dict
from strata_alloc.simulation import SimConfig, empirical_vs_asymptotic
from strata_alloc.sweep import (
    FigureAccumulator,
    GridSpec,
    dump_summary,
    format_real,
    run_sweep,
    write_binned_csv,
    write_scatter_csv,
    write_svgs,
)
from strata_alloc.variance import compare, per_stratum_variances, variance_err_total, variance_ps_total

EXIT_VALIDATION = 2
EXIT_DEGENERATE = 3
EXIT_DISCARDED = 4
EXIT_IO = 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int | None = None
    tool_version: str = __version__
    started: str = field(default_factory=lambda: _now())
    finished: str | None = None
    outputs: dict = field(default_factory=dict)

    def add(self, path: Path) -> None:
        self.outputs[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()

    def write(self, path: Path) -> None:
        self.finished = _now()
        doc = {
            "tool_version": self.tool_version,
            "subcommand": self.subcommand,
            "config": self.config,
            "seed": self.seed,
            "started": self.started,
            "finished": self.finished,
            "outputs": self.outputs,
        }
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _read_json(path: str) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}", EXIT_VALIDATION) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}", EXIT_VALIDATION) from None


def _validation(path: str, exc: ValidationError) -> CliError:
    where = f" (field '{exc.field}')" if exc.field else ""
    return CliError(f"{path}: {exc}{where}", EXIT_VALIDATION)


def _real(x: float | None) -> str:
    return "NA" if x is None else format_real(x)


def _emit(text: str, out: str | None, manifest: RunManifest | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        if manifest is not None:
            manifest.add(path)
            manifest.write(path.with_name(path.name + ".manifest.json"))
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc.strerror}", EXIT_IO) from None


def _json(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _load_design(args):
    doc = _read_json(args.config)
    try:
        return doc, design_from_dict(doc)
    except ValidationError as exc:
        raise _validation(args.config, exc) from None


# -- subcommands -------------------------------------------------------------


def cmd_allocate(args) -> int:
    _, design = _load_design(args)
    rows = {}
    for method in (Method.PS, Method.ERR):
        alloc = allocate(design, method)
        rounded = round_allocation(alloc)
        rows[method.value] = {
            "per_stratum": list(alloc.per_stratum),
            "total": alloc.total,
            "rounded": list(rounded.per_stratum),
            "rounded_total": rounded.total,
        }
    if args.format == "json":
        doc = {"average_expected_rate": average_expected_rate(design.population), "intended_size": design.m, **rows}
        text = _json(doc)
    else:
        H = design.population.H
        lines = ["method,kind," + ",".join(f"n{h + 1}" for h in range(H)) + ",total"]
        for method, row in rows.items():
            lines.append(f"{method},real," + ",".join(map(format_real, row["per_stratum"])) + f",{format_real(row['total'])}")
            lines.append(f"{method},rounded," + ",".join(map(str, row["rounded"])) + f",{row['rounded_total']}")
        text = "\n".join(lines) + "\n"
    _emit(text, args.out, RunManifest("allocate", design_to_dict(design)) if args.out else None)
    return 0


def cmd_variance(args) -> int:
    _, design = _load_design(args)
    doc = {
        "PS": {"per_stratum": list(per_stratum_variances(design, None, Method.PS)), "total": variance_ps_total(design)},
        "ERR": {"per_stratum": list(per_stratum_variances(design, None, Method.ERR)), "total": variance_err_total(design)},
    }
    if args.format == "json":
        text = _json(doc)
    else:
        H = design.population.H
        lines = ["method," + ",".join(f"var{h + 1}" for h in range(H)) + ",total"]
        for method, row in doc.items():
            lines.append(method + "," + ",".join(map(format_real, row["per_stratum"])) + "," + format_real(row["total"]))
        text = "\n".join(lines) + "\n"
    if args.require_ratio and doc["PS"]["total"] == 0:
        _emit(text, args.out, None)
        raise CliError("variance ratio undefined: PS variance is zero", EXIT_DEGENERATE)
    _emit(text, args.out, RunManifest("variance", design_to_dict(design)) if args.out else None)
    return 0


def cmd_compare(args) -> int:
    _, design = _load_design(args)
    report = compare(design)
    doc = report.to_dict()
    if args.format == "json":
        text = _json(doc)
    else:
        cols = ["total_ps", "total_err", "ratio", "ratio_defined", "correctly_specified", "misspec", "spread_from_avg"]
        values = [
            _real(report.total_ps),
            _real(report.total_err),
            _real(report.ratio),
            str(report.ratio_defined).lower(),
            str(report.correctly_specified).lower(),
            _real(report.misspec),
            _real(report.spread_from_avg),
        ]
        text = ",".join(cols) + "\n" + ",".join(values) + "\n"
    _emit(text, args.out, RunManifest("compare", design_to_dict(design)) if args.out else None)
    if args.require_ratio and not report.ratio_defined:
        raise CliError("variance ratio undefined: PS variance is zero", EXIT_DEGENERATE)
    return 0


def cmd_simulate(args) -> int:
    if args.ci and args.seed is None:
        raise CliError("--seed is mandatory in CI mode", EXIT_VALIDATION)
    if args.reps is not None and args.reps < 1:
        raise CliError("--reps must be >= 1", EXIT_VALIDATION)
    doc = _read_json(args.config)
    try:
        config = SimConfig.from_dict(
            doc, seed=args.seed, replications=args.reps, empty_stratum_policy=args.policy, method=args.method
        )
    except ValidationError as exc:
        raise _validation(args.config, exc) from None
    try:
        check = empirical_vs_asymptotic(config, workers=args.workers)
    except AllDiscarded as exc:
        raise CliError(f"simulation failed: {exc}", EXIT_DISCARDED) from None
    except ZeroRespondents as exc:
        raise CliError(f"simulation failed under the error policy: {exc}", EXIT_DISCARDED) from None
    out = check.to_dict()
    out["method"] = config.method.value
    if args.format == "json":
        text = _json(out)
    else:
        sim = out["simulation"]
        cols = ["method", "mean_estimate", "empirical_variance", "analytic_variance", "relative_error",
                "replicate_count_used", "discarded_replicates"]
        values = [config.method.value, _real(sim["mean_estimate"]), _real(out["empirical_variance"]),
                  _real(out["analytic_variance"]), _real(out["relative_error"]),
                  str(sim["replicate_count_used"]), str(sim["discarded_replicates"])]
        text = ",".join(cols) + "\n" + ",".join(values) + "\n"
    manifest = RunManifest("simulate", config.to_dict(), seed=config.seed) if args.out else None
    _emit(text, args.out, manifest)
    return 0


def cmd_sweep(args) -> int:
    doc = _read_json(args.config) if args.config else {}
    try:
        spec = GridSpec.from_dict(doc, q_mode=args.q_mode)
    except (ValidationError, TypeError) as exc:
        if isinstance(exc, ValidationError):
            raise _validation(args.config or "<defaults>", exc) from None
        raise CliError(f"{args.config}: {exc}", EXIT_VALIDATION) from None
    out_dir = Path(args.out or "sweep_out")
    existed = out_dir.exists()
    written: list[Path] = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest("sweep", spec.to_dict())
        records = out_dir / "records.csv"
        acc = FigureAccumulator() if not args.no_figures else None
        with open(records, "w", newline="") as fh:
            written.append(records)
            summary = run_sweep(spec, fh, workers=args.workers, on_table=acc)
        if acc is not None:
            for name, binned in (("figure1", acc.bins.figure1), ("figure2", acc.bins.figure2), ("figure3", acc.bins.figure3)):
                path = out_dir / f"{name}_bins.csv"
                write_binned_csv(path, binned)
                written.append(path)
            path = out_dir / "figure4_scatter.csv"
            write_scatter_csv(path, acc.bins)
            written.append(path)
        summary_path = out_dir / "summary.json"
        with open(summary_path, "w") as fh:
            dump_summary(summary, fh)
        written.append(summary_path)
        for path in written:
            manifest.add(path)
        if acc is not None and args.svg:
            try:
                for path in write_svgs(out_dir, acc.bins):
                    manifest.add(path)
            except Exception as exc:  # plots are decoration only
                print(f"warning: SVG output skipped: {exc}", file=sys.stderr)
        manifest.write(out_dir / "manifest.json")
    except OSError as exc:
        for path in written:
            path.unlink(missing_ok=True)
        if not existed:
            shutil.rmtree(out_dir, ignore_errors=True)
        raise CliError(f"sweep output failed: {exc}", EXIT_IO) from None
    text = _json({k: v for k, v in summary.to_dict().items() if k != "figure3_counterexamples"})
    sys.stdout.write(text)
    return 0


# -- parser --------------------------------------------------------------------


def _workers_default() -> int:
    env = os.environ.get("STRATA_ALLOC_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="strata-alloc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON config path")
        p.add_argument("--out", help="output path (directory for sweep); stdout if omitted")
        p.add_argument("--format", choices=("json", "csv"), default="json")

    p = sub.add_parser("allocate", help="PS and ERR allocations, real and rounded")
    common(p)
    p.set_defaults(func=cmd_allocate)

    for name, func, text in (
        ("variance", cmd_variance, "delta-method variances per stratum and in total"),
        ("compare", cmd_compare, "PS vs ERR variance report"),
    ):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--require-ratio", action="store_true", help="exit 3 if the ratio is undefined")
        p.set_defaults(func=func)

    p = sub.add_parser("simulate", help="Monte Carlo check of the delta-method variance")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--policy", choices=("discard", "error"))
    p.add_argument("--method", choices=("PS", "ERR", "ps", "err"))
    p.add_argument("--workers", type=int, default=_workers_default())
    p.add_argument("--ci", action="store_true", default=bool(os.environ.get("CI")), help="require --seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="misspecification grid sweep")
    common(p, config_required=False)
    p.add_argument("--workers", type=int, default=_workers_default())
    p.add_argument("--q-mode", choices=("shared", "per-stratum"))
    p.add_argument("--svg", action="store_true", help="also write SVG figures")
    p.add_argument("--no-figures", action="store_true", help="skip figure aggregate CSVs")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
