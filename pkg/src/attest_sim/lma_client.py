"""Local mobile application: registration and one-/two-step login flows.

The client drives a TPM (a :class:`~attest_sim.tpm_core.Tpm` or any object
with the same surface, e.g. :class:`~attest_sim.tbs.TbsTpm`) and produces the
wire messages the bank expects. Two sealed blobs are kept on the device:

* the activation blob holds the bank-issued activation key and is gated on the
  software and PIN registers only, since the activation-key register is
  re-extended from its own contents during login;
* the credential blob holds the 44-byte credential block and is gated on all
  three registers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .codec import (
    ACTIVATION_KEY_SIZE,
    CHALLENGE_SIZE,
    Challenge,
    CredentialLogin,
    Credentials,
    Evidence,
    LoginRequest1,
    LoginRequest2,
    RegistrationRequest,
)
from .errors import AlreadyRegistered, NotRegistered, PolicyMismatch, ProtocolError, WrongPin
from .tpm_core import (
    PCR_ACTIVATION,
    PCR_PIN,
    PCR_SOFTWARE,
    AttestationQuote,
    FlowCounters,
    KeyKind,
    Locality,
    PcrPolicy,
    SealedBlob,
)

APP_PCRS = (PCR_SOFTWARE, PCR_ACTIVATION, PCR_PIN)
ACTIVATION_POLICY_PCRS = (PCR_SOFTWARE, PCR_PIN)

__all__ = [
    "AppPhase",
    "Credentials",
    "DeviceStore",
    "FlowCounters",
    "LmaClient",
    "LoginOutput",
    "Pin",
    "RegistrationOutput",
    "exchange_credential_login",
    "exchange_login",
    "exchange_registration",
]


@dataclass(frozen=True, repr=False)
class Pin:
    digits: str

    def __post_init__(self):
        if not (4 <= len(self.digits) <= 12 and self.digits.isascii() and self.digits.isdigit()):
            raise ValueError("PIN must be 4 to 12 decimal digits")

    def __repr__(self) -> str:
        return "Pin(<hidden>)"

    def encode(self) -> bytes:
        return self.digits.encode("ascii")


class AppPhase(enum.Enum):
    FRESH = "fresh"
    REGISTERED = "registered"


@dataclass(frozen=True)
class DeviceStore:
    activation_blob: SealedBlob
    credential_blob: SealedBlob
    aik_id: int


@dataclass(frozen=True)
class RegistrationOutput:
    request: RegistrationRequest
    quote: AttestationQuote
    aik_public: bytes

    def evidence(self) -> Evidence:
        return Evidence(self.quote, self.aik_public)


@dataclass(frozen=True)
class LoginOutput:
    request: LoginRequest1 | LoginRequest2
    quote: AttestationQuote

    def evidence(self) -> Evidence:
        return Evidence(self.quote)


@dataclass
class LmaClient:
    tpm: object
    locality: int = Locality.OS
    phase: AppPhase = AppPhase.FRESH
    store: DeviceStore | None = None
    counters: FlowCounters = field(default_factory=FlowCounters)

    def __post_init__(self):
        self.tpm.counters = self.counters

    def _new_flow(self) -> None:
        self.counters = FlowCounters()
        self.tpm.counters = self.counters

    def _policy(self, indices) -> PcrPolicy:
        return PcrPolicy.of({i: self.tpm.pcr_read(i) for i in indices})

    def measure_software(self, app_image: bytes) -> None:
        """OS-side measurement of the app image; starts a new counted flow."""
        self._new_flow()
        self.tpm.pcr_extend(PCR_SOFTWARE, app_image, self.locality)

    def register(self, activation_key: bytes, pin: Pin, creds: Credentials, challenge: bytes) -> RegistrationOutput:
        if self.phase is AppPhase.REGISTERED:
            raise AlreadyRegistered("this app instance is already registered")
        if len(activation_key) != ACTIVATION_KEY_SIZE:
            raise ValueError(f"activation key must be {ACTIVATION_KEY_SIZE} bytes")
        if len(challenge) != CHALLENGE_SIZE:
            raise ValueError(f"challenge must be {CHALLENGE_SIZE} bytes")
        tpm = self.tpm
        tpm.pcr_extend(PCR_ACTIVATION, activation_key, self.locality)
        pin_digest = tpm.hash(pin.encode())
        tpm.pcr_extend(PCR_PIN, pin_digest, self.locality)
        aik = tpm.create_key(KeyKind.ATTESTATION)
        sk = tpm.create_key(KeyKind.STORAGE)
        activation_blob = tpm.seal(activation_key, self._policy(ACTIVATION_POLICY_PCRS), sk)
        credential_blob = tpm.seal(creds.encode(), self._policy(APP_PCRS), sk)
        quote = tpm.quote(APP_PCRS, challenge, aik)
        self.store = DeviceStore(activation_blob, credential_blob, aik.id)
        self.phase = AppPhase.REGISTERED
        return RegistrationOutput(RegistrationRequest(activation_key, pin_digest, creds), quote, aik.public)

    def login(self, pin: Pin, steps: int, challenge: bytes) -> LoginOutput:
        if steps not in (1, 2):
            raise ValueError("steps must be 1 or 2")
        if self.phase is not AppPhase.REGISTERED or self.store is None:
            raise NotRegistered("register before logging in")
        if len(challenge) != CHALLENGE_SIZE:
            raise ValueError(f"challenge must be {CHALLENGE_SIZE} bytes")
        tpm, store = self.tpm, self.store
        pin_digest = tpm.hash(pin.encode())
        tpm.pcr_extend(PCR_PIN, pin_digest, self.locality)
        try:
            activation_key = tpm.unseal(store.activation_blob, store.activation_blob.sk_id)
        except PolicyMismatch as exc:
            raise WrongPin("activation blob refused to unseal") from exc
        tpm.pcr_extend(PCR_ACTIVATION, activation_key, self.locality)
        aik = tpm.load_key(store.aik_id)
        quote = tpm.quote(APP_PCRS, challenge, aik)
        step1 = LoginRequest1(quote.composite, challenge)
        if steps == 1:
            return LoginOutput(step1, quote)
        block = tpm.unseal(store.credential_blob, store.credential_blob.sk_id)
        return LoginOutput(LoginRequest2(step1, Credentials.decode(block)), quote)

    def end_session(self) -> None:
        """Leave the app: clear the application registers so the next flow re-measures."""
        for index in APP_PCRS:
            self.tpm.pcr_reset(index, self.locality)
        self._new_flow()

    def load_store(self, store: DeviceStore) -> None:
        self.store = store
        self.phase = AppPhase.REGISTERED


def _expect_challenge(session) -> bytes:
    msg = session.recv()
    if not isinstance(msg, Challenge):
        raise ProtocolError(f"expected a challenge, got {type(msg).__name__}")
    return msg.nonce


def exchange_registration(client: LmaClient, session, activation_key: bytes, pin: Pin, creds: Credentials):
    """Run registration over an open channel session; returns the bank's Grant or Deny."""
    nonce = _expect_challenge(session)
    out = client.register(activation_key, pin, creds, nonce)
    session.send(out.request)
    session.send(out.evidence())
    return session.recv()


def exchange_login(client: LmaClient, session, pin: Pin, steps: int):
    nonce = _expect_challenge(session)
    out = client.login(pin, steps, nonce)
    session.send(out.request)
    session.send(out.evidence())
    return session.recv()


def exchange_credential_login(session, creds: Credentials):
    _expect_challenge(session)
    session.send(CredentialLogin(creds))
    return session.recv()
