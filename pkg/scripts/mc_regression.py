"""Run the Monte Carlo regression suite and print one CSV row per config.

    python scripts/mc_regression.py [--reps 20000] [--workers 4]
"""

import argparse
import csv
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from regression_suite import suite_configs  # noqa: E402
from strata_alloc.simulation import empirical_vs_asymptotic  # noqa: E402


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--reps", type=int, default=20_000)
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    writer = csv.writer(sys.stdout)
    writer.writerow(["config", "method", "m", "analytic", "empirical", "relative_error", "mean", "discarded", "seconds"])
    for label, config in suite_configs(args.reps):
        t0 = time.perf_counter()
        check = empirical_vs_asymptotic(config, workers=args.workers)
        writer.writerow([
            label, config.method.value, config.design.intended_size,
            f"{check.analytic_variance:.6e}", f"{check.empirical_variance:.6e}",
            f"{check.relative_error:.4f}", f"{check.result.mean_estimate:.6f}",
            check.result.discarded_replicates, f"{time.perf_counter() - t0:.2f}",
        ])


if __name__ == "__main__":
    main()
