#!/usr/bin/env python3
"""Time the TPM operations under both digest algorithms and dump the rows as CSV."""

import argparse
import csv
import sys

from attest_sim.harness.bench import DEFAULT_ITERATIONS, OPS, run_bench
from attest_sim.tpm_core import DigestAlg


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--iters", type=int, default=DEFAULT_ITERATIONS)
    parser.add_argument("--ops", default=",".join(OPS))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--csv", help="output file (default: stdout)")
    args = parser.parse_args()

    ops = args.ops.split(",")
    reports = [run_bench(ops, args.iters, args.seed, alg=alg) for alg in DigestAlg]
    for report in reports:
        print(report.render(), file=sys.stderr)
        print(file=sys.stderr)

    out = open(args.csv, "w", newline="", encoding="utf-8") if args.csv else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["alg", "op", "iterations", "mean_ms", "std_ms"])
        for report in reports:
            for row in report.rows:
                writer.writerow([report.alg.name, row.name, row.iterations, f"{row.mean_ms:.6f}", f"{row.std_ms:.6f}"])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
