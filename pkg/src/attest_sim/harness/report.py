"""Byte and operation-count tables built from scenario runs.

Only granted flows contribute. Each cell lists the observed value (or range,
when flows differ) next to the published reference and a match flag.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from ..errors import NoData
from .scenarios import ScenarioReport

# (row label, flow kind, reference bytes per flow)
BYTE_REFERENCE = (
    ("Credential based", "credential", 44),
    ("Registration process", "registration", 84),
    ("Login (1 Step)", "login-1", 40),
    ("Login (2 Steps)", "login-2", 84),
)

# (row label, counter column, login reference, registration reference)
OPS_REFERENCE = (
    ("Sealing", 0, {0}, {2}),
    ("Hashing", 1, {1}, {1}),
    ("Unsealing", 2, {1, 2}, {0}),
    ("AIK Generation", 3, {1}, {1}),
    ("Extend PCR", 4, {3}, {3}),
)

LOGIN_FLOWS = ("login-1", "login-2")


def fmt_values(values: Iterable[int]) -> str:
    vals = sorted(set(values))
    if not vals:
        return "-"
    if len(vals) == 1:
        return str(vals[0])
    if vals == list(range(vals[0], vals[-1] + 1)):
        return f"{vals[0]}-{vals[-1]}"
    return ",".join(map(str, vals))


@dataclass(frozen=True)
class Cell:
    table: str
    row: str
    column: str
    observed: tuple[int, ...]
    allowed: frozenset[int]

    @property
    def reference(self) -> str:
        return fmt_values(self.allowed)

    @property
    def status(self) -> str:
        if not self.observed:
            return "no data"
        return "match" if set(self.observed) <= self.allowed else "MISMATCH"

    def to_dict(self) -> dict:
        return {
            "table": self.table,
            "row": self.row,
            "column": self.column,
            "observed": fmt_values(self.observed),
            "reference": self.reference,
            "status": self.status,
        }


@dataclass(frozen=True)
class Tables:
    bytes_cells: tuple[Cell, ...]
    ops_cells: tuple[Cell, ...]

    @property
    def cells(self) -> tuple[Cell, ...]:
        return self.bytes_cells + self.ops_cells

    @property
    def all_match(self) -> bool:
        return all(c.status == "match" for c in self.cells)

    def render(self) -> str:
        lines = ["Payload bytes per flow", f"  {'Flow':<22}{'Observed':>10}{'Reference':>11}  Status"]
        for c in self.bytes_cells:
            lines.append(f"  {c.row:<22}{fmt_values(c.observed):>10}{c.reference:>11}  {c.status}")
        lines += ["", "TPM operations per flow", f"  {'Operation':<16}{'Flow':<14}{'Observed':>10}{'Reference':>11}  Status"]
        for c in self.ops_cells:
            lines.append(f"  {c.row:<16}{c.column:<14}{fmt_values(c.observed):>10}{c.reference:>11}  {c.status}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"cells": [c.to_dict() for c in self.cells], "all_match": self.all_match}


def report_tables(reports: Iterable[ScenarioReport]) -> Tables:
    flows = [f for r in reports for f in r.flows if f.outcome == "grant"]
    if not flows:
        raise NoData("no granted flows recorded; run the scenario suite first")
    by_kind: dict[str, list] = {}
    for f in flows:
        by_kind.setdefault(f.flow, []).append(f)
    bytes_cells = tuple(
        Cell("bytes", label, "bytes", tuple(sorted({f.request_bytes for f in by_kind.get(kind, [])})), frozenset({ref}))
        for label, kind, ref in BYTE_REFERENCE
    )
    login = [f for k in LOGIN_FLOWS for f in by_kind.get(k, [])]
    registration = by_kind.get("registration", [])
    ops_cells = []
    for label, col, login_ref, reg_ref in OPS_REFERENCE:
        ops_cells.append(Cell("ops", label, "login", tuple(sorted({f.counters[col] for f in login})), frozenset(login_ref)))
        ops_cells.append(
            Cell("ops", label, "registration", tuple(sorted({f.counters[col] for f in registration})), frozenset(reg_ref))
        )
    return Tables(bytes_cells, tuple(ops_cells))
