"""Remote verifier: accounts, whitelist, challenges, quote and credential checks.

All state mutations happen under one lock, so each operation is atomic and two
concurrent registrations for the same user cannot both succeed.
"""

from __future__ import annotations

import hashlib
import hmac
import itertools
import os
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .codec import (
    ACTIVATION_KEY_SIZE,
    CHALLENGE_SIZE,
    TOKEN_SIZE,
    USER_ID_SIZE,
    Challenge,
    CredentialLogin,
    Credentials,
    Deny,
    DenyReason,
    Evidence,
    Grant,
    LoginRequest1,
    LoginRequest2,
    RegistrationRequest,
)
from .errors import AttestSimError
from .tpm_core import (
    AttestationQuote,
    DigestAlg,
    composite_digest,
    extend_digest,
    make_rng,
    verify_quote,
)

APP_PCRS = (20, 21, 22)
DEFAULT_NONCE_TTL = 120.0


class RegistrationDenied(AttestSimError):
    def __init__(self, reason: DenyReason, message: str = ""):
        super().__init__(message or reason.name)
        self.reason = reason


def credential_digest(secret: bytes) -> bytes:
    return hashlib.sha256(secret).digest()


@dataclass
class WhitelistEntry:
    user_id: bytes
    expected_composite: bytes
    aik_public: bytes
    revoked: bool = False

    def to_line(self) -> str:
        return f"{self.user_id.hex()} {self.expected_composite.hex()} {self.aik_public.hex()} {int(self.revoked)}"

    @classmethod
    def from_line(cls, line: str) -> "WhitelistEntry":
        fields = line.split(" ")
        if len(fields) != 4 or fields[3] not in ("0", "1"):
            raise ValueError(f"bad whitelist line: {line!r}")
        user_id, composite, aik = (bytes.fromhex(f) for f in fields[:3])
        if len(user_id) != USER_ID_SIZE:
            raise ValueError(f"bad user id in whitelist line: {line!r}")
        return cls(user_id, composite, aik, fields[3] == "1")


@dataclass
class Account:
    user_id: bytes
    credential_digest: bytes
    activation_key: bytes | None = None


@dataclass
class UserRecord:
    user_id: bytes
    credential_digest: bytes
    access_certificate: bytes
    activation_key: bytes
    pin_digest: bytes


def load_whitelist(path: str | os.PathLike) -> list[WhitelistEntry]:
    text = Path(path).read_text(encoding="ascii")
    return [WhitelistEntry.from_line(line) for line in text.splitlines() if line]


def save_whitelist(path: str | os.PathLike, entries: list[WhitelistEntry]) -> None:
    """Rewrite the whitelist file atomically (temp file + rename)."""
    path = Path(path)
    body = "".join(e.to_line() + "\n" for e in entries)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="ascii") as fh:
            fh.write(body)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class BankService:
    def __init__(
        self,
        alg: DigestAlg = DigestAlg.SHA1,
        seed: int | str | None = None,
        whitelist_path: str | os.PathLike | None = None,
        clock: Callable[[], float] = time.monotonic,
        nonce_ttl: float = DEFAULT_NONCE_TTL,
    ):
        self.alg = DigestAlg(alg)
        self._rng = make_rng(seed)
        self._lock = threading.RLock()
        self._sessions = itertools.count(1)
        self.clock = clock
        self.nonce_ttl = nonce_ttl
        self.whitelist_path = Path(whitelist_path) if whitelist_path is not None else None
        self.accounts: dict[bytes, Account] = {}
        self.users: dict[bytes, UserRecord] = {}
        self.outstanding: dict[object, tuple[bytes, float]] = {}
        self.consumed: set[bytes] = set()
        self.whitelist: list[WhitelistEntry] = []
        if self.whitelist_path is not None and self.whitelist_path.exists():
            self.whitelist = load_whitelist(self.whitelist_path)

    def _persist(self) -> None:
        if self.whitelist_path is not None:
            save_whitelist(self.whitelist_path, self.whitelist)

    def new_session_id(self) -> int:
        return next(self._sessions)

    # -- out-of-band provisioning -------------------------------------------

    def open_account(self, user_id: bytes, secret: bytes) -> Account:
        if len(user_id) != USER_ID_SIZE:
            raise ValueError(f"user id must be {USER_ID_SIZE} bytes")
        with self._lock:
            account = Account(bytes(user_id), credential_digest(secret))
            self.accounts[account.user_id] = account
            return account

    def issue_activation_key(self, user_id: bytes) -> bytes:
        """Issue the per-user activation key; never the same key for two users."""
        with self._lock:
            account = self.accounts[bytes(user_id)]
            issued = {a.activation_key for a in self.accounts.values()}
            key = self._rng(ACTIVATION_KEY_SIZE)
            while key in issued:
                key = self._rng(ACTIVATION_KEY_SIZE)
            account.activation_key = key
            return key

    def assign_activation_key(self, user_id: bytes, key: bytes) -> None:
        """Record a key that was generated elsewhere (pre-provisioned devices)."""
        if len(key) != ACTIVATION_KEY_SIZE:
            raise ValueError(f"activation key must be {ACTIVATION_KEY_SIZE} bytes")
        with self._lock:
            if any(a.activation_key == key for a in self.accounts.values() if a.user_id != user_id):
                raise ValueError("activation key already issued to another user")
            self.accounts[bytes(user_id)].activation_key = bytes(key)

    # -- challenges ---------------------------------------------------------

    def issue_challenge(self, session) -> bytes:
        with self._lock:
            nonce = self._rng(CHALLENGE_SIZE)
            while nonce in self.consumed or any(n == nonce for n, _ in self.outstanding.values()):
                nonce = self._rng(CHALLENGE_SIZE)
            self.outstanding[session] = (nonce, self.clock() + self.nonce_ttl)
            return nonce

    def _consume(self, nonce: bytes, session=None) -> bool:
        """Retire a session challenge; True only if ``nonce`` is its live, unexpired value."""
        if session is None:
            session = next((s for s, (n, _) in self.outstanding.items() if n == nonce), None)
        pending = self.outstanding.pop(session, None)
        if pending is None:
            return False
        expected, expiry = pending
        self.consumed.add(expected)
        return hmac.compare_digest(expected, nonce) and self.clock() <= expiry

    # -- registration -------------------------------------------------------

    def register_user(
        self, req: RegistrationRequest, quote: AttestationQuote, aik_public: bytes, session=None
    ) -> bytes:
        """Verify a registration and return a fresh access certificate.

        Raises :class:`RegistrationDenied` with the reason on any failure.
        """
        with self._lock:
            if quote.selection != APP_PCRS:
                raise RegistrationDenied(DenyReason.MALFORMED, "quote must cover the application registers")
            if not verify_quote(quote, aik_public):
                raise RegistrationDenied(DenyReason.BAD_SIGNATURE)
            if not self._consume(quote.qualifying_nonce, session):
                raise RegistrationDenied(DenyReason.STALE_NONCE)
            creds = req.credentials
            account = self.accounts.get(creds.user_id)
            if (
                account is None
                or account.activation_key is None
                or not hmac.compare_digest(account.activation_key, req.activation_key)
            ):
                raise RegistrationDenied(DenyReason.UNKNOWN_ACTIVATION_KEY)
            if not hmac.compare_digest(account.credential_digest, creds.secret_digest):
                raise RegistrationDenied(DenyReason.BAD_CREDENTIALS)
            if any(e.user_id == creds.user_id and not e.revoked for e in self.whitelist):
                raise RegistrationDenied(DenyReason.DUPLICATE_REGISTRATION)
            certificate = self._rng(TOKEN_SIZE)
            self.users[creds.user_id] = UserRecord(
                creds.user_id, account.credential_digest, certificate, req.activation_key, req.pin_digest
            )
            self.whitelist.append(WhitelistEntry(creds.user_id, quote.composite, aik_public))
            self._persist()
            return certificate

    # -- login --------------------------------------------------------------

    def _entry_for(self, composite: bytes) -> WhitelistEntry | None:
        matches = [e for e in self.whitelist if e.expected_composite == composite]
        active = [e for e in matches if not e.revoked]
        return (active or matches or [None])[0]

    def verify_login(self, msg: LoginRequest1 | LoginRequest2, quote: AttestationQuote, session) -> Grant | Deny:
        with self._lock:
            if msg.composite != quote.composite or msg.nonce != quote.qualifying_nonce:
                return Deny(DenyReason.BAD_SIGNATURE)
            if quote.selection != APP_PCRS:
                return Deny(DenyReason.UNKNOWN_COMPOSITE)
            entry = self._entry_for(quote.composite)
            if entry is None:
                return Deny(DenyReason.UNKNOWN_COMPOSITE)
            if not verify_quote(quote, entry.aik_public):
                return Deny(DenyReason.BAD_SIGNATURE)
            if not self._consume(quote.qualifying_nonce, session):
                return Deny(DenyReason.STALE_NONCE)
            if entry.revoked:
                return Deny(DenyReason.REVOKED)
            if isinstance(msg, LoginRequest2):
                record = self.users.get(entry.user_id)
                creds = msg.credentials
                if (
                    record is None
                    or creds.user_id != entry.user_id
                    or not hmac.compare_digest(record.credential_digest, creds.secret_digest)
                ):
                    return Deny(DenyReason.BAD_CREDENTIALS)
            return Grant(self._rng(TOKEN_SIZE))

    def verify_credential_login(self, msg: CredentialLogin) -> Grant | Deny:
        """Baseline: plain credential check, no attestation."""
        with self._lock:
            creds = msg.credentials
            account = self.accounts.get(creds.user_id)
            if account is None or not hmac.compare_digest(account.credential_digest, creds.secret_digest):
                return Deny(DenyReason.BAD_CREDENTIALS)
            return Grant(self._rng(TOKEN_SIZE))

    # -- revocation ---------------------------------------------------------

    def _composite_for(self, record: UserRecord, measurement: bytes) -> bytes:
        zeros = self.alg.zeros()
        software = self.alg.digest(zeros + measurement)
        return composite_digest(
            self.alg,
            (software, extend_digest(self.alg, zeros, record.activation_key), extend_digest(self.alg, zeros, record.pin_digest)),
        )

    def revoke_configuration(self, digest: bytes) -> int:
        """Revoke every active entry whose configuration matches ``digest``.

        ``digest`` is either a whitelisted composite or the measurement (hash)
        of an app image; the latter revokes that app version for every user
        registered with it. Returns the number of entries revoked.
        """
        with self._lock:
            count = 0
            for entry in self.whitelist:
                if entry.revoked:
                    continue
                record = self.users.get(entry.user_id)
                hit = entry.expected_composite == digest or (
                    record is not None
                    and len(digest) == self.alg.size
                    and self._composite_for(record, digest) == entry.expected_composite
                )
                if hit:
                    entry.revoked = True
                    count += 1
            if count:
                self._persist()
            return count


class BankConnection:
    """Server side of one channel session: issues a challenge, answers requests.

    Requests that need attestation are held until the following Evidence
    message arrives.
    """

    def __init__(self, bank: BankService, session_id=None):
        self.bank = bank
        self.session_id = session_id if session_id is not None else bank.new_session_id()
        self._pending = None

    def open(self) -> list:
        return [Challenge(self.bank.issue_challenge(self.session_id))]

    def receive(self, msg) -> list:
        bank = self.bank
        if isinstance(msg, CredentialLogin):
            return [bank.verify_credential_login(msg)]
        if isinstance(msg, (RegistrationRequest, LoginRequest1, LoginRequest2)):
            self._pending = msg
            return []
        if isinstance(msg, Evidence) and self._pending is not None:
            req, self._pending = self._pending, None
            if isinstance(req, RegistrationRequest):
                try:
                    return [Grant(bank.register_user(req, msg.quote, msg.aik_public, self.session_id))]
                except RegistrationDenied as denied:
                    return [Deny(denied.reason)]
            return [bank.verify_login(req, msg.quote, self.session_id)]
        return [Deny(DenyReason.MALFORMED)]


__all__ = [
    "Account",
    "BankConnection",
    "BankService",
    "Credentials",
    "RegistrationDenied",
    "UserRecord",
    "WhitelistEntry",
    "credential_digest",
    "load_whitelist",
    "save_whitelist",
]
