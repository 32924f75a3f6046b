#!/usr/bin/env python3
"""Run every scenario, print the byte and operation tables, write a JSON summary."""

import argparse
import json
import sys

from attest_sim.harness.report import report_tables
from attest_sim.harness.scenarios import SCENARIOS, run_suite


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--transport", choices=("inprocess", "tcp"), default="inprocess")
    parser.add_argument("--only", nargs="*", choices=sorted(SCENARIOS), help="subset of scenarios")
    parser.add_argument("--out", help="write scenario reports and table cells as JSON")
    args = parser.parse_args()

    reports = run_suite(args.seed, args.only, transport=args.transport)
    for r in reports:
        print(f"{r.name:<22} {'PASS' if r.passed else 'FAIL'}")
    tables = report_tables(reports)
    print()
    print(tables.render())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"scenarios": [r.to_dict() for r in reports], "tables": tables.to_dict()}, fh, indent=2)
    return 0 if all(r.passed for r in reports) and tables.all_match else 1


if __name__ == "__main__":
    sys.exit(main())
