"""Per-operation timing: mean and standard deviation over N iterations.

Every sample gets equal weight, so the deviation is the population one.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Callable, Iterable

from ..errors import UnknownOp
from ..tpm_core import PCR_SOFTWARE, DigestAlg, KeyKind, Locality, Tpm

DEFAULT_ITERATIONS = 10000
DEFAULT_WARMUP = 100

# op key -> report row name, in report order
OPS = {
    "rng": "RNG",
    "pcr-read": "PCR Read",
    "hash": "Data Hash",
    "sign": "Key Sign",
    "extend": "Extend PCR",
}

# Published timings on the original phone hardware (ms, std dev); shown for
# orientation only, desk hardware is not expected to match.
REFERENCE_MS = {
    "rng": (0.896, 0.17),
    "pcr-read": (1.05, 0.12),
    "hash": (1.06, 0.15),
    "sign": (0.4, 0.07),
    "extend": (1.2, 0.11),
}


@dataclass(frozen=True)
class BenchRow:
    op: str
    name: str
    iterations: int
    mean_ms: float
    std_ms: float

    def to_dict(self) -> dict:
        return {"op": self.op, "name": self.name, "iterations": self.iterations, "mean_ms": self.mean_ms, "std_ms": self.std_ms}


@dataclass(frozen=True)
class BenchReport:
    rows: tuple[BenchRow, ...]
    alg: DigestAlg = DigestAlg.SHA1

    def render(self) -> str:
        lines = [
            f"TPM operation timings ({self.alg.name}, times in ms)",
            f"  {'Operation':<12}{'Iterations':>11}{'Mean':>12}{'[Std Dev]':>12}{'Reference':>20}",
        ]
        for r in self.rows:
            ref_mean, ref_std = REFERENCE_MS[r.op]
            lines.append(
                f"  {r.name:<12}{r.iterations:>11}{r.mean_ms:>12.4f}{'[' + format(r.std_ms, '.4f') + ']':>12}"
                f"{f'{ref_mean} [{ref_std}]':>20}"
            )
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"alg": self.alg.name, "rows": [r.to_dict() for r in self.rows]}


def _operations(tpm: Tpm) -> dict[str, Callable[[], object]]:
    aik = tpm.create_key(KeyKind.ATTESTATION)
    payload = tpm.get_random(64)
    digest = tpm.alg.digest(payload)
    return {
        "rng": lambda: tpm.get_random(20),
        "pcr-read": lambda: tpm.pcr_read(0),
        "hash": lambda: tpm.hash(payload),
        "sign": lambda: tpm.sign(digest, aik),
        "extend": lambda: tpm.pcr_extend(PCR_SOFTWARE, payload, Locality.OS),
    }


def time_op(fn: Callable[[], object], iterations: int, clock: Callable[[], float], warmup: int = 0) -> list[float]:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(iterations):
        t0 = clock()
        fn()
        samples.append(clock() - t0)
    return samples


def run_bench(
    ops: Iterable[str] | None = None,
    iterations: int = DEFAULT_ITERATIONS,
    seed: int | None = 0,
    clock: Callable[[], float] = time.perf_counter,
    warmup: int = DEFAULT_WARMUP,
    alg: DigestAlg = DigestAlg.SHA1,
) -> BenchReport:
    wanted = list(OPS) if ops is None else list(ops)
    unknown = [o for o in wanted if o not in OPS]
    if unknown:
        raise UnknownOp(f"unknown benchmark op(s): {', '.join(unknown)}; known: {', '.join(OPS)}")
    if iterations < 1:
        raise ValueError("iterations must be positive")
    tpm = Tpm(alg=alg, seed=seed)
    table = _operations(tpm)
    rows = []
    for op in OPS:  # fixed report order regardless of request order
        if op not in wanted:
            continue
        samples = [s * 1000.0 for s in time_op(table[op], iterations, clock, warmup)]
        rows.append(BenchRow(op, OPS[op], iterations, statistics.fmean(samples), statistics.pstdev(samples)))
    return BenchReport(tuple(rows), alg)
