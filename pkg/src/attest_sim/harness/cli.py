"""``attest-sim`` command line."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from ..bank_service import BankService
from ..channel import BankEndpoint, BankServer, ChannelConfig, open_session, report_bytes
from ..errors import AttestSimError, NoData
from ..lma_client import LmaClient, Pin, exchange_login, exchange_registration
from ..tpm_core import Tpm, make_rng
from .bench import DEFAULT_ITERATIONS, DEFAULT_WARMUP, OPS, run_bench
from .report import report_tables
from .scenarios import DEFAULT_IMAGE, SCENARIOS, ScenarioReport, UserMaterial, outcome_of, run_scenario, run_suite
from .store import load_device, load_tpm, persist_device, persist_tpm

SEED_ENV = "ATTEST_SIM_SEED"
DEFAULT_RESULTS = "attest-sim-results.json"


def resolve_seed(cli_seed: int | None) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None:
        return int(env)
    return 0 if cli_seed is None else cli_seed


def demo_users(seed: int, count: int) -> list[UserMaterial]:
    """Deterministic customer material shared by ``serve`` and ``client``."""
    rng = make_rng(f"{seed}:demo")
    users = []
    for i in range(count):
        secret = rng(16)
        key = rng(20)
        pin = Pin("".join(str(b % 10) for b in rng(6)))
        users.append(UserMaterial(f"user{i}", f"user{i:08d}".encode(), secret, key, pin))
    return users


def demo_token(seed: int) -> bytes:
    return make_rng(f"{seed}:server-token")(32)


def _write_json(path: str | os.PathLike, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_scenario(args) -> int:
    seed = resolve_seed(args.seed)
    report = run_scenario(args.name, seed, args.transport, strict=False)
    print(report.render())
    if args.json:
        _write_json(args.json, report.to_dict())
    return 0 if report.passed else 1


def cmd_suite(args) -> int:
    seed = resolve_seed(args.seed)
    reports = run_suite(seed, transport=args.transport, parallel=args.parallel)
    for r in reports:
        print(r.render())
        print()
    tables = report_tables(reports)
    print(tables.render())
    passed = sum(r.passed for r in reports)
    print(f"\n{passed}/{len(reports)} scenarios passed; tables {'match' if tables.all_match else 'DO NOT match'}")
    _write_json(args.results, {"seed": seed, "scenarios": [r.to_dict() for r in reports], "tables": tables.to_dict()})
    return 0 if passed == len(reports) and tables.all_match else 1


def cmd_report(args) -> int:
    path = Path(args.results)
    if not path.exists():
        raise NoData(f"{path} not found; run `attest-sim suite` first")
    data = json.loads(path.read_text(encoding="utf-8"))
    reports = [ScenarioReport.from_dict(d) for d in data.get("scenarios", [])]
    print(report_tables(reports).render())
    return 0


def cmd_bench(args) -> int:
    ops = [o.strip() for o in args.ops.split(",") if o.strip()]
    report = run_bench(ops, args.iters, resolve_seed(args.seed), warmup=args.warmup)
    print(report.render())
    print("\nReference values come from different hardware and are not expected to match.")
    if args.json:
        _write_json(args.json, report.to_dict())
    return 0


def cmd_serve(args) -> int:
    seed = resolve_seed(args.seed)
    bank = BankService(seed=f"{seed}:serve", whitelist_path=args.whitelist)
    for u in demo_users(seed, args.users):
        bank.open_account(u.user_id, u.secret)
        bank.assign_activation_key(u.user_id, u.activation_key)
    token = bytes.fromhex(args.token) if args.token else demo_token(seed)
    server = BankServer(BankEndpoint(bank, token), args.host, args.port)
    host, port = server.address
    print(f"bank listening on {host}:{port} with {args.users} provisioned users", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_client(args) -> int:
    seed = resolve_seed(args.seed)
    host, _, port = args.server.rpartition(":")
    user = demo_users(seed, args.user + 1)[args.user]
    token = bytes.fromhex(args.token) if args.token else demo_token(seed)
    cfg = ChannelConfig(token, "tcp", address=(host or "127.0.0.1", int(port)))
    image = Path(args.image).read_bytes() if args.image else DEFAULT_IMAGE

    device_dir = Path(args.device) if args.device else None
    tpm_file = device_dir / "tpm.bin" if device_dir else None
    store_file = device_dir / "store.bin" if device_dir else None
    if tpm_file is not None and tpm_file.exists():
        tpm = load_tpm(tpm_file)
    else:
        tpm = Tpm(seed=f"{seed}:client:{args.user}")
    client = LmaClient(tpm)
    if store_file is not None and store_file.exists():
        client.load_store(load_device(store_file))

    transcripts = []
    if client.store is None:
        client.measure_software(image)
        with open_session(cfg) as s:
            transcripts.append(s.transcript)
            reply = exchange_registration(client, s, user.activation_key, user.pin, user.credentials)
        print(f"registration: {outcome_of(reply)} counters={client.counters.as_tuple()}")
        client.end_session()
    client.measure_software(image)
    with open_session(cfg) as s:
        transcripts.append(s.transcript)
        try:
            reply = exchange_login(client, s, user.pin, args.steps)
            print(f"login ({args.steps}-step): {outcome_of(reply)} counters={client.counters.as_tuple()}")
        finally:
            client.end_session()
    print(report_bytes(*transcripts).render())
    if device_dir is not None:
        device_dir.mkdir(parents=True, exist_ok=True)
        persist_tpm(tpm, tpm_file)
        persist_device(client.store, store_file)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="attest-sim", description="TPM-backed mobile banking attestation simulator")
    sub = p.add_subparsers(dest="command", required=True)

    sc = sub.add_parser("scenario", help="run one named scenario")
    sc.add_argument("name", choices=sorted(SCENARIOS))
    sc.add_argument("--seed", type=int)
    sc.add_argument("--transport", choices=("inprocess", "tcp"), default="inprocess")
    sc.add_argument("--json", help="also write the report as JSON")
    sc.set_defaults(func=cmd_scenario)

    su = sub.add_parser("suite", help="run every scenario and print the tables")
    su.add_argument("--seed", type=int)
    su.add_argument("--transport", choices=("inprocess", "tcp"), default="inprocess")
    su.add_argument("--parallel", action="store_true", help="run scenarios concurrently")
    su.add_argument("--results", default=DEFAULT_RESULTS, help="machine-readable results file")
    su.set_defaults(func=cmd_suite)

    rp = sub.add_parser("report", help="render the tables from a suite results file")
    rp.add_argument("--results", default=DEFAULT_RESULTS)
    rp.set_defaults(func=cmd_report)

    be = sub.add_parser("bench", help="time the TPM operations")
    be.add_argument("--iters", type=int, default=DEFAULT_ITERATIONS)
    be.add_argument("--ops", default=",".join(OPS))
    be.add_argument("--seed", type=int)
    be.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)
    be.add_argument("--json")
    be.set_defaults(func=cmd_bench)

    se = sub.add_parser("serve", help="start the bank on a local TCP port")
    se.add_argument("--port", type=int, default=7878)
    se.add_argument("--host", default="127.0.0.1")
    se.add_argument("--seed", type=int)
    se.add_argument("--users", type=int, default=4)
    se.add_argument("--whitelist", help="whitelist file (loaded at start, rewritten on change)")
    se.add_argument("--token", help="server auth token, hex")
    se.set_defaults(func=cmd_serve)

    cl = sub.add_parser("client", help="register and log in against a running bank")
    cl.add_argument("--server", required=True, help="host:port")
    cl.add_argument("--user", type=int, default=0)
    cl.add_argument("--steps", type=int, choices=(1, 2), default=1)
    cl.add_argument("--seed", type=int)
    cl.add_argument("--token", help="expected server token, hex")
    cl.add_argument("--image", help="app image file to measure")
    cl.add_argument("--device", help="directory persisting the device TPM and store")
    cl.set_defaults(func=cmd_client)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AttestSimError as exc:
        print(f"attest-sim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
