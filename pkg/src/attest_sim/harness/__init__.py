"""Scenario runner, report tables, benchmarks, persistence and the CLI."""

from .bench import BenchReport, run_bench
from .report import Tables, report_tables
from .scenarios import HONEST_SUITE, SCENARIOS, ScenarioReport, World, run_scenario, run_suite

__all__ = [
    "BenchReport",
    "HONEST_SUITE",
    "SCENARIOS",
    "ScenarioReport",
    "Tables",
    "World",
    "report_tables",
    "run_bench",
    "run_scenario",
    "run_suite",
]
