"""Acceptance criteria, one test each. Every test records a PASS/FAIL line."""

import itertools
import random
import subprocess
import sys
import time
from dataclasses import replace

import pytest

from attest_sim import codec as c
from attest_sim.codec import Deny, Grant, LoginRequest1
from attest_sim.errors import CodecError, Lockout, PolicyMismatch, WrongPin
from attest_sim.harness.report import report_tables
from attest_sim.harness.scenarios import HONEST_SUITE, run_scenario, run_suite
from attest_sim.lma_client import Pin

from conftest import IMAGE, Rig, record_acceptance
from gen import command_mutations, flip_bit, random_command, random_wire, wire_mutations

PIN = Pin("482916")


def verdict(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
    print(line)
    record_acceptance(line)
    assert ok, line


def cli(*args, cwd=None) -> subprocess.CompletedProcess:
    return subprocess.run(
        [sys.executable, "-m", "attest_sim.harness.cli", *args], capture_output=True, text=True, cwd=cwd, timeout=600
    )


def test_criterion_1_operation_counts():
    t0 = time.perf_counter()
    reports = run_suite(seed=0, names=HONEST_SUITE)
    flows = {f.flow: f.counters for r in reports for f in r.flows if f.outcome == "grant"}
    elapsed = time.perf_counter() - t0
    cells = report_tables(reports).ops_cells
    ok = (
        flows["registration"] == (2, 1, 0, 1, 3)
        and flows["login-1"] == (0, 1, 1, 1, 3)
        and flows["login-2"] == (0, 1, 2, 1, 3)
        and len(cells) == 10
        and all(cell.status == "match" for cell in cells)
        and elapsed < 1.0
    )
    verdict(1, "operation counts", ok, f"registration={flows['registration']} login-1={flows['login-1']} "
            f"login-2={flows['login-2']}, {sum(x.status == 'match' for x in cells)}/10 cells, {elapsed:.3f}s")


def test_criterion_2_byte_counts():
    t0 = time.perf_counter()
    reports = run_suite(seed=0, names=HONEST_SUITE)
    elapsed = time.perf_counter() - t0
    sizes = {}
    for f in (f for r in reports for f in r.flows if f.outcome == "grant"):
        sizes.setdefault(f.flow, set()).add(f.request_bytes)
    observed = tuple(sizes[k] for k in ("credential", "registration", "login-1", "login-2"))
    ok = observed == ({44}, {84}, {40}, {84}) and elapsed < 1.0
    verdict(2, "payload byte counts", ok, f"observed={[sorted(s)[0] for s in observed]}, {elapsed:.3f}s")


def test_criterion_3_unseal_grid():
    t0 = time.perf_counter()
    rig = Rig(seed="grid")
    rig.register()
    client, tpm = rig.client, rig.tpm
    blob = client.store.credential_blob
    right = {20: IMAGE, 21: rig.key, 22: tpm.hash(PIN.encode())}
    successes, failures = [], 0
    for pattern in itertools.product((True, False), repeat=3):
        for (index, good), match in zip(right.items(), pattern):
            tpm.pcr_reset(index, 2)
            tpm.pcr_extend(index, good if match else b"wrong:" + good, 2)
        try:
            tpm.unseal(blob, blob.sk_id)
            successes.append(pattern)
        except PolicyMismatch:
            failures += 1
        tpm.reset_lockout(tpm.admin_token)
    elapsed = time.perf_counter() - t0
    ok = successes == [(True, True, True)] and failures == 7 and elapsed < 1.0
    verdict(3, "unseal gate brute force", ok, f"{len(successes)} success at {successes}, {failures} failures, {elapsed:.3f}s")


def test_criterion_4_anti_hammering():
    rig = Rig(seed="hammer", max_tries=5)
    rig.register()
    seen = []
    for attempt in range(1, 6):
        rig.client.measure_software(IMAGE)
        try:
            rig.client.login(Pin("000000"), 1, rig.challenge(f"a{attempt}"))
            seen.append("ok")
        except (WrongPin, Lockout) as exc:
            seen.append(type(exc).__name__)
        rig.client.end_session()
    persisted = []
    for attempt in range(3):
        rig.client.measure_software(IMAGE)
        try:
            rig.client.login(PIN, 1, rig.challenge(f"c{attempt}"))
            persisted.append("ok")
        except Lockout:
            persisted.append("Lockout")
        rig.client.end_session()
    rig.tpm.reset_lockout(rig.tpm.admin_token)
    rig.client.measure_software(IMAGE)
    out = rig.client.login(PIN, 1, rig.challenge("after"))
    recovered = isinstance(rig.bank.verify_login(out.request, out.quote, "after"), Grant)
    scenario = [o for o in run_scenario("wrong-pin-bruteforce").outcomes() if o.startswith("error")]
    ok = (
        seen == ["WrongPin"] * 4 + ["Lockout"]
        and persisted == ["Lockout"] * 3
        and recovered
        and scenario[:5] == ["error:WrongPin"] * 4 + ["error:Lockout"]
    )
    verdict(4, "anti-hammering", ok, f"attempts={seen}, correct-PIN while locked={persisted}, after reset grant={recovered}")


def test_criterion_5_attestation_soundness():
    expected = {
        "tampered-image": "deny:UNKNOWN_COMPOSITE",
        "replayed-quote": "deny:STALE_NONCE",
        "revoked-version": "deny:REVOKED",
        "foreign-tpm-blob": "error:ForeignTpm",
    }
    scenario_ok = {}
    for name, final in expected.items():
        report = run_scenario(name, seed=0, strict=False)
        scenario_ok[name] = report.passed and final in report.outcomes()

    rig = Rig(seed="mutations")
    rig.register()
    rng = random.Random(5)
    grants = denials = 0
    for trial in range(1000):
        session = f"m{trial}"
        rig.client.measure_software(IMAGE)
        out = rig.client.login(PIN, 1, rig.challenge(session))
        rig.client.end_session()
        field = rng.choice(["composite", "qualifying_nonce", "signature"])
        q = replace(out.quote, **{field: flip_bit(getattr(out.quote, field), rng)})
        # the request mirrors the mutated quote so only the attestation checks can object
        result = rig.bank.verify_login(LoginRequest1(q.composite, q.qualifying_nonce), q, session)
        grants += isinstance(result, Grant)
        denials += isinstance(result, Deny)
    ok = all(scenario_ok.values()) and grants == 0 and denials == 1000
    verdict(5, "attestation soundness", ok, f"scenarios={scenario_ok}, mutated quotes: {denials} denied, {grants} granted")


def test_criterion_6_codec_properties():
    rng = random.Random(2024)
    n = 10_000
    cmd_ok = wire_ok = 0
    rejected = silent = 0
    flips_rejected = flips_canonical = 0
    for _ in range(n):
        cmd = random_command(rng)
        buf = c.encode_command(cmd)
        back = c.decode_command(buf)
        cmd_ok += back == cmd and c.encode_command(back) == buf
        msg = random_wire(rng)
        wbuf = c.encode_wire(msg)
        wback = c.decode_wire(wbuf)
        wire_ok += wback == msg and c.encode_wire(wback) == wbuf
        for decode, mutations in ((c.decode_command, command_mutations(buf, rng)), (c.decode_wire, wire_mutations(wbuf, rng))):
            for _, bad in mutations:
                try:
                    decode(bad)
                    silent += 1
                except CodecError:
                    rejected += 1
        for encode, decode, good in ((c.encode_command, c.decode_command, buf), (c.encode_wire, c.decode_wire, wbuf)):
            bad = flip_bit(good, rng)
            try:
                value = decode(bad)
            except CodecError:
                flips_rejected += 1
                continue
            if encode(value) == bad:
                flips_canonical += 1
            else:
                silent += 1
    ok = cmd_ok == n and wire_ok == n and rejected >= n and silent == 0
    verdict(
        6,
        "codec properties",
        ok,
        f"round trips {cmd_ok}+{wire_ok}/{2 * n}, structural mutations rejected {rejected}, "
        f"bit flips rejected {flips_rejected} / re-encode canonically {flips_canonical}, silent acceptances {silent}",
    )


@pytest.mark.slow
def test_criterion_7_benchmark_methodology():
    proc = cli("bench")
    rows = {}
    for line in proc.stdout.splitlines():
        for name in ("RNG", "PCR Read", "Data Hash", "Key Sign", "Extend PCR"):
            if line.strip().startswith(name):
                fields = line.strip()[len(name):].split()
                rows[name] = (int(fields[0]), float(fields[1]), float(fields[2].strip("[]")))
    ok = (
        proc.returncode == 0
        and list(rows) == ["RNG", "PCR Read", "Data Hash", "Key Sign", "Extend PCR"]
        and all(iters == 10000 and mean < 50.0 and std >= 0 for iters, mean, std in rows.values())
    )
    summary = ", ".join(f"{k} {v[1]:.4f}ms [{v[2]:.4f}]" for k, v in rows.items())
    verdict(7, "benchmark methodology", ok, f"rc={proc.returncode}, {len(rows)} rows x 10000: {summary}")


def test_criterion_8_determinism(tmp_path):
    runs = []
    for i in range(2):
        d = tmp_path / f"run{i}"
        d.mkdir()
        proc = cli("suite", "--seed", "42", cwd=d)
        runs.append((proc.returncode, proc.stdout, (d / "attest-sim-results.json").read_bytes()))
    (rc1, out1, res1), (rc2, out2, res2) = runs
    ok = rc1 == rc2 == 0 and out1 == out2 and res1 == res2 and len(out1) > 0
    verdict(8, "end-to-end determinism", ok, f"stdout {len(out1)} bytes identical={out1 == out2}, results file identical={res1 == res2}")

