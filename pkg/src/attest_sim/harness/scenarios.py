"""Scripted end-to-end scenarios over the channel and bank.

A scenario is an ordered list of steps, each with an expected outcome. The
runner executes them against a fresh :class:`World` (one bank, any number of
devices), stops at the first divergence and records every completed flow's
operation counters and request payload size for the report tables.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

from ..bank_service import BankService
from ..channel import BankEndpoint, BankServer, ChannelConfig, Session, open_session
from ..codec import Credentials, Deny, Evidence, Grant, LoginRequest1, MsgKind, decode_wire
from ..errors import AttestSimError, ExpectationFailed, UnknownScenario
from ..lma_client import (
    APP_PCRS,
    LmaClient,
    Pin,
    exchange_credential_login,
    exchange_login,
    exchange_registration,
)
from ..tpm_core import PCR_ACTIVATION, PCR_PIN, DigestAlg, Tpm, make_rng
from .store import dump_device, parse_device

DEFAULT_IMAGE = b"LMA-banking-app v1.0\x00" + bytes(range(256)) * 4

REQUEST_KIND = {
    "registration": MsgKind.REGISTRATION_REQUEST,
    "login-1": MsgKind.LOGIN_REQUEST_1,
    "login-2": MsgKind.LOGIN_REQUEST_2,
    "credential": MsgKind.CREDENTIAL_LOGIN,
}


class SimClock:
    """Manually advanced clock for challenge expiry."""

    def __init__(self, now: float = 0.0):
        self.now = now

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


@dataclass
class UserMaterial:
    """What the bank hands a customer out of band."""

    name: str
    user_id: bytes
    secret: bytes
    activation_key: bytes
    pin: Pin

    @property
    def credentials(self) -> Credentials:
        return Credentials(self.user_id, hashlib.sha256(self.secret).digest())


@dataclass
class Device:
    name: str
    client: LmaClient
    image: bytes
    last_login: tuple | None = None


@dataclass
class FlowRecord:
    scenario: str
    flow: str
    outcome: str
    counters: tuple[int, ...]
    request_bytes: int

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "flow": self.flow,
            "outcome": self.outcome,
            "counters": list(self.counters),
            "request_bytes": self.request_bytes,
        }


def outcome_of(reply) -> str:
    if isinstance(reply, Grant):
        return "grant"
    if isinstance(reply, Deny):
        return f"deny:{reply.reason.name}"
    return f"unexpected:{type(reply).__name__}"


class World:
    """One bank plus devices, all derived from a single seed."""

    def __init__(
        self,
        seed: int = 0,
        alg: DigestAlg = DigestAlg.SHA1,
        max_tries: int = 5,
        transport: str = "inprocess",
        scenario: str = "",
    ):
        self.seed = seed
        self.alg = alg
        self.max_tries = max_tries
        self.scenario = scenario
        self.clock = SimClock()
        self.bank = BankService(alg=alg, seed=f"{seed}:bank", clock=self.clock)
        rng = make_rng(f"{seed}:world")
        self._rng = rng
        self.token = rng(32)
        self.endpoint = BankEndpoint(self.bank, self.token)
        self.server: BankServer | None = None
        if transport == "tcp":
            self.server = BankServer(self.endpoint)
            self.server.start()
        self.transport = transport
        self.users: dict[str, UserMaterial] = {}
        self.devices: dict[str, Device] = {}
        self.flows: list[FlowRecord] = []
        self.transcripts = []

    def close(self) -> None:
        if self.server is not None:
            self.server.stop()
            self.server = None

    def channel(self, token: bytes | None = None) -> ChannelConfig:
        token = self.token if token is None else token
        if self.transport == "tcp":
            return ChannelConfig(token, "tcp", address=self.server.address, digest_size=self.alg.size)
        return ChannelConfig(token, "inprocess", endpoint=self.endpoint, digest_size=self.alg.size)

    def session(self) -> Session:
        s = open_session(self.channel())
        self.transcripts.append(s.transcript)
        return s

    def provision(self, name: str) -> UserMaterial:
        user_id = f"{name[:4]:_<4}{len(self.users):08d}".encode()
        secret = self._rng(16)
        self.bank.open_account(user_id, secret)
        key = self.bank.issue_activation_key(user_id)
        pin = Pin("".join(str(b % 10) for b in self._rng(6)))
        user = UserMaterial(name, user_id, secret, key, pin)
        self.users[name] = user
        return user

    def install(self, name: str, image: bytes = DEFAULT_IMAGE) -> Device:
        tpm = Tpm(alg=self.alg, seed=f"{self.seed}:tpm:{name}", max_tries=self.max_tries)
        device = Device(name, LmaClient(tpm), image)
        self.devices[name] = device
        return device

    def record(self, flow: str, outcome: str, counters, session: Session | None) -> None:
        kind = REQUEST_KIND[flow]
        nbytes = session.transcript.payload_totals.get(kind, 0) if session is not None else 0
        self.flows.append(FlowRecord(self.scenario, flow, outcome, tuple(counters), nbytes))


# --- steps ------------------------------------------------------------------


@dataclass(frozen=True)
class Step:
    action: str
    args: dict = field(default_factory=dict)
    expect: str = "ok"

    def describe(self) -> str:
        inner = " ".join(f"{k}={v}" for k, v in self.args.items())
        return f"{self.action} {inner}".strip()


def _err(exc: AttestSimError) -> str:
    return f"error:{type(exc).__name__}"


def _do_provision(w: World, user: str) -> str:
    w.provision(user)
    return "ok"


def _do_install(w: World, device: str, image: bytes = DEFAULT_IMAGE) -> str:
    w.install(device, image)
    return "ok"


def _do_measure(w: World, device: str) -> str:
    d = w.devices[device]
    d.client.measure_software(d.image)
    return "ok"


def _do_end_session(w: World, device: str) -> str:
    w.devices[device].client.end_session()
    return "ok"


def _do_register(w: World, device: str, user: str) -> str:
    d, u = w.devices[device], w.users[user]
    with w.session() as s:
        try:
            reply = exchange_registration(d.client, s, u.activation_key, u.pin, u.credentials)
        except AttestSimError as exc:
            return _err(exc)
        outcome = outcome_of(reply)
        w.record("registration", outcome, d.client.counters.as_tuple(), s)
    return outcome


def _do_login(w: World, device: str, user: str, steps: int = 1, pin: str | None = None) -> str:
    d, u = w.devices[device], w.users[user]
    the_pin = Pin(pin) if pin is not None else u.pin
    with w.session() as s:
        try:
            reply = exchange_login(d.client, s, the_pin, steps)
        except AttestSimError as exc:
            return _err(exc)
        outcome = outcome_of(reply)
        w.record(f"login-{steps}", outcome, d.client.counters.as_tuple(), s)
        sent = [p for direction, _, p in s.transcript.records if direction == "out"]
        d.last_login = tuple(sent)
    return outcome


def _do_credential_login(w: World, user: str, wrong_secret: bool = False) -> str:
    u = w.users[user]
    creds = u.credentials
    if wrong_secret:
        creds = Credentials(u.user_id, hashlib.sha256(u.secret + b"x").digest())
    with w.session() as s:
        reply = exchange_credential_login(s, creds)
        outcome = outcome_of(reply)
        w.record("credential", outcome, (0, 0, 0, 0, 0), s)
    return outcome


def _do_tamper_image(w: World, device: str, offset: int = 7) -> str:
    d = w.devices[device]
    img = bytearray(d.image)
    img[offset] ^= 0x01
    d.image = bytes(img)
    return "ok"


def _do_forged_login(w: World, device: str, user: str) -> str:
    """A modified app bypasses the local unseal gate and attests anyway.

    It even knows the genuine activation key and PIN; only the software
    measurement differs, so the quote is validly signed but unknown to the bank.
    """
    d, u = w.devices[device], w.users[user]
    tpm, client = d.client.tpm, d.client
    with w.session() as s:
        nonce = s.recv().nonce
        tpm.pcr_extend(PCR_PIN, tpm.hash(u.pin.encode()), client.locality)
        tpm.pcr_extend(PCR_ACTIVATION, u.activation_key, client.locality)
        quote = tpm.quote(APP_PCRS, nonce, tpm.load_key(client.store.aik_id))
        s.send(LoginRequest1(quote.composite, nonce))
        s.send(Evidence(quote))
        return outcome_of(s.recv())


def _do_replay_login(w: World, device: str) -> str:
    """Resend the previous login's request and evidence verbatim in a new session."""
    d = w.devices[device]
    kinds = (MsgKind.LOGIN_REQUEST_1, MsgKind.EVIDENCE)
    with w.session() as s:
        s.recv()
        for kind, payload in zip(kinds, d.last_login):
            s.send(decode_wire(bytes([kind]) + payload, w.alg.size))
        return outcome_of(s.recv())


def _do_revoke(w: World, device: str) -> str:
    measurement = w.alg.digest(w.devices[device].image)
    return f"revoked:{w.bank.revoke_configuration(measurement)}"


def _do_move_store(w: World, source: str, target: str) -> str:
    """Copy the app's persisted store onto another device with its own TPM."""
    data = dump_device(w.devices[source].client.store)
    w.devices[target].client.load_store(parse_device(data))
    return "ok"


def _do_reset_lockout(w: World, device: str) -> str:
    tpm = w.devices[device].client.tpm
    tpm.reset_lockout(tpm.admin_token)
    return "ok"


def _do_expire(w: World, seconds: float) -> str:
    w.clock.advance(seconds)
    return "ok"


ACTIONS: dict[str, Callable[..., str]] = {
    "provision": _do_provision,
    "install": _do_install,
    "measure": _do_measure,
    "end_session": _do_end_session,
    "register": _do_register,
    "login": _do_login,
    "credential_login": _do_credential_login,
    "tamper_image": _do_tamper_image,
    "forged_login": _do_forged_login,
    "replay_login": _do_replay_login,
    "revoke": _do_revoke,
    "move_store": _do_move_store,
    "reset_lockout": _do_reset_lockout,
    "expire": _do_expire,
}


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    steps: tuple[Step, ...]


def _setup(user: str = "alice", device: str = "phone") -> list[Step]:
    return [Step("provision", {"user": user}), Step("install", {"device": device})]


def _registered(user: str = "alice", device: str = "phone") -> list[Step]:
    return _setup(user, device) + [
        Step("measure", {"device": device}),
        Step("register", {"device": device, "user": user}, "grant"),
        Step("end_session", {"device": device}),
    ]


def _login(steps: int = 1, expect: str = "grant", pin: str | None = None, device="phone", user="alice"):
    args: dict[str, Any] = {"device": device, "user": user, "steps": steps}
    if pin is not None:
        args["pin"] = pin
    return [
        Step("measure", {"device": device}),
        Step("login", args, expect),
        Step("end_session", {"device": device}),
    ]


def _bruteforce(max_tries: int = 5) -> list[Step]:
    steps = _registered()
    for attempt in range(1, max_tries + 1):
        expect = "error:Lockout" if attempt == max_tries else "error:WrongPin"
        steps += _login(1, expect, pin="0000000000")
    steps += _login(1, "error:Lockout")
    steps += [Step("reset_lockout", {"device": "phone"})]
    steps += _login(1, "grant")
    return steps


SCENARIOS: dict[str, Scenario] = {
    s.name: s
    for s in (
        Scenario("honest-register", "register a fresh app instance", tuple(_registered())),
        Scenario("honest-login-1", "register, then attestation-only login", tuple(_registered() + _login(1))),
        Scenario("honest-login-2", "register, then attestation plus credential login", tuple(_registered() + _login(2))),
        Scenario(
            "credential-baseline",
            "plain credential login without attestation",
            tuple(_setup() + [Step("credential_login", {"user": "alice"}, "grant")]),
        ),
        Scenario("wrong-pin-bruteforce", "PIN guessing until the TPM locks out", tuple(_bruteforce())),
        Scenario(
            "tampered-image",
            "modified app image: local unseal fails, forced attestation is denied",
            tuple(
                _registered()
                + [Step("tamper_image", {"device": "phone"})]
                + _login(1, "error:WrongPin")
                + [
                    Step("measure", {"device": "phone"}),
                    Step("forged_login", {"device": "phone", "user": "alice"}, "deny:UNKNOWN_COMPOSITE"),
                    Step("end_session", {"device": "phone"}),
                ]
            ),
        ),
        Scenario(
            "replayed-quote",
            "replay a captured login transcript in a new session",
            tuple(_registered() + _login(1) + [Step("replay_login", {"device": "phone"}, "deny:STALE_NONCE")]),
        ),
        Scenario(
            "revoked-version",
            "bank revokes an app version used by two customers",
            tuple(
                _registered("alice", "phone")
                + _registered("bob", "tablet")
                + [Step("revoke", {"device": "phone"}, "revoked:2")]
                + _login(1, "deny:REVOKED")
            ),
        ),
        Scenario(
            "foreign-tpm-blob",
            "copy the sealed store to another device",
            tuple(
                _registered()
                + [
                    Step("install", {"device": "clone"}),
                    Step("move_store", {"source": "phone", "target": "clone"}),
                ]
                + _login(1, "error:ForeignTpm", device="clone")
            ),
        ),
    )
}

HONEST_SUITE = ("honest-register", "honest-login-1", "honest-login-2", "credential-baseline")


@dataclass
class StepResult:
    index: int
    step: str
    expected: str
    observed: str

    @property
    def ok(self) -> bool:
        return self.expected == self.observed


@dataclass
class ScenarioReport:
    name: str
    seed: int
    results: list[StepResult] = field(default_factory=list)
    flows: list[FlowRecord] = field(default_factory=list)
    total_steps: int = 0

    @property
    def passed(self) -> bool:
        return len(self.results) == self.total_steps and all(r.ok for r in self.results)

    @property
    def first_divergence(self) -> StepResult | None:
        return next((r for r in self.results if not r.ok), None)

    def outcomes(self) -> list[str]:
        return [r.observed for r in self.results]

    def render(self) -> str:
        lines = [f"scenario {self.name} (seed {self.seed}): {'PASS' if self.passed else 'FAIL'}"]
        for r in self.results:
            mark = "ok " if r.ok else "!! "
            lines.append(f"  {mark}{r.index:>2} {r.step:<44} expect {r.expected:<26} got {r.observed}")
        for f in self.flows:
            lines.append(f"  flow {f.flow:<12} {f.outcome:<26} counters={f.counters} bytes={f.request_bytes}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "passed": self.passed,
            "total_steps": self.total_steps,
            "steps": [
                {"index": r.index, "step": r.step, "expected": r.expected, "observed": r.observed}
                for r in self.results
            ],
            "flows": [f.to_dict() for f in self.flows],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioReport":
        results = [StepResult(s["index"], s["step"], s["expected"], s["observed"]) for s in d["steps"]]
        flows = [
            FlowRecord(f["scenario"], f["flow"], f["outcome"], tuple(f["counters"]), f["request_bytes"])
            for f in d["flows"]
        ]
        return cls(d["name"], d["seed"], results, flows, d["total_steps"])


def run_scenario(
    name: str | Scenario,
    seed: int = 0,
    transport: str = "inprocess",
    strict: bool = True,
    alg: DigestAlg = DigestAlg.SHA1,
) -> ScenarioReport:
    if isinstance(name, Scenario):
        scenario = name
    else:
        try:
            scenario = SCENARIOS[name]
        except KeyError:
            raise UnknownScenario(f"no scenario named {name!r}; known: {', '.join(SCENARIOS)}") from None
    world = World(seed, alg=alg, transport=transport, scenario=scenario.name)
    report = ScenarioReport(scenario.name, seed, total_steps=len(scenario.steps))
    try:
        for i, step in enumerate(scenario.steps, 1):
            observed = ACTIONS[step.action](world, **step.args)
            report.results.append(StepResult(i, step.describe(), step.expect, observed))
            if observed != step.expect:
                break
    finally:
        world.close()
    report.flows = world.flows
    if strict and not report.passed:
        div = report.first_divergence
        raise ExpectationFailed(
            f"{scenario.name}: step {div.index} ({div.step}) expected {div.expected}, got {div.observed}", report
        )
    return report


def run_suite(
    seed: int = 0, names=None, transport: str = "inprocess", parallel: bool = False
) -> list[ScenarioReport]:
    """Run scenarios (all by default) without raising; results keep the given order."""
    names = list(names or SCENARIOS)

    def one(name: str) -> ScenarioReport:
        return run_scenario(name, seed, transport, strict=False)

    if parallel:
        with ThreadPoolExecutor() as pool:
            return list(pool.map(one, names))
    return [one(n) for n in names]


__all__ = [
    "ACTIONS",
    "DEFAULT_IMAGE",
    "HONEST_SUITE",
    "SCENARIOS",
    "FlowRecord",
    "Scenario",
    "ScenarioReport",
    "SimClock",
    "Step",
    "World",
    "run_scenario",
    "run_suite",
]
