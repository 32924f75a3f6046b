"""Software TPM 2.0 subset.

PCR bank with locality-gated extend/reset, hashing, RNG, key creation,
PCR-policy sealing bound to a TPM-held nonce record, quote signing and a
dictionary-attack (anti-hammering) lockout.

Every public command runs under a single re-entrant lock: the device is one
logical unit and processes commands strictly one at a time.
"""

from __future__ import annotations

import enum
import functools
import hashlib
import hmac
import os
import random
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import (
    BadAuthorization,
    BadIndex,
    BadParameter,
    BlobIntegrity,
    EmptySelection,
    ForeignTpm,
    LocalityDenied,
    Lockout,
    PolicyMismatch,
    StaticPcr,
    UnknownKey,
    UnsupportedLocality,
    WrongKey,
    WrongKeyKind,
)

NUM_PCRS = 24
FIRST_DYNAMIC_PCR = 17

# Role assignment of the three application PCRs.
PCR_SOFTWARE = 20
PCR_ACTIVATION = 21
PCR_PIN = 22

NONCE_TAG_SIZE = 16
GCM_NONCE_SIZE = 12
HANDLE_BASE = 0x81000000


class DigestAlg(enum.IntEnum):
    """PCR bank / hash algorithm. Values are the TCG algorithm ids."""

    SHA1 = 0x0004
    SHA256 = 0x000B

    @property
    def size(self) -> int:
        return 20 if self is DigestAlg.SHA1 else 32

    @property
    def hashlib_name(self) -> str:
        return "sha1" if self is DigestAlg.SHA1 else "sha256"

    def digest(self, data: bytes) -> bytes:
        return hashlib.new(self.hashlib_name, data).digest()

    def zeros(self) -> bytes:
        return bytes(self.size)


class Locality(enum.IntEnum):
    BOOT = 0
    OS = 2  # the measured launch environment
    TEE = 32
    TEE_APP = 33


class KeyKind(enum.IntEnum):
    STORAGE = 1
    ATTESTATION = 2


def extend_digest(alg: DigestAlg, old: bytes, data: bytes) -> bytes:
    """new = H(old || H(data))"""
    return alg.digest(old + alg.digest(data))


def composite_digest(alg: DigestAlg, values: Iterable[bytes]) -> bytes:
    return alg.digest(b"".join(values))


def check_index(index: int) -> int:
    if isinstance(index, bool) or not isinstance(index, int) or not 0 <= index < NUM_PCRS:
        raise BadIndex(f"PCR index {index!r} outside [0, {NUM_PCRS - 1}]")
    return index


def is_dynamic(index: int) -> bool:
    return check_index(index) >= FIRST_DYNAMIC_PCR


def check_locality(locality: int) -> Locality:
    try:
        return Locality(locality)
    except ValueError:
        raise UnsupportedLocality(f"locality {locality!r} is not supported") from None


_EXTEND_STATIC = frozenset({Locality.BOOT})
_EXTEND_DYNAMIC = frozenset({Locality.OS, Locality.TEE, Locality.TEE_APP})
_RESET_DYNAMIC = _EXTEND_DYNAMIC


def may_extend(index: int, locality: int) -> bool:
    allowed = _EXTEND_DYNAMIC if is_dynamic(index) else _EXTEND_STATIC
    return check_locality(locality) in allowed


@dataclass(frozen=True)
class KeyHandle:
    id: int
    kind: KeyKind
    public: bytes = b""


@dataclass(frozen=True)
class PcrPolicy:
    """Expected digests for a set of PCRs, kept sorted by index."""

    expected: tuple[tuple[int, bytes], ...]

    def __post_init__(self):
        items = tuple(sorted((check_index(i), bytes(d)) for i, d in self.expected))
        indices = [i for i, _ in items]
        if len(set(indices)) != len(indices):
            raise BadParameter("policy lists a PCR index twice")
        object.__setattr__(self, "expected", items)

    @classmethod
    def of(cls, mapping: Mapping[int, bytes]) -> "PcrPolicy":
        return cls(tuple(mapping.items()))

    @property
    def selection(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.expected)

    def as_dict(self) -> dict[int, bytes]:
        return dict(self.expected)


@dataclass(frozen=True)
class SealedBlob:
    ciphertext: bytes  # GCM nonce || ciphertext || tag
    policy: PcrPolicy
    nonce_tag: bytes
    sk_id: int


@dataclass(frozen=True)
class AttestationQuote:
    selection: tuple[int, ...]
    composite: bytes
    qualifying_nonce: bytes
    signature: bytes

    @property
    def signed_bytes(self) -> bytes:
        return self.composite + self.qualifying_nonce


def verify_quote(quote: AttestationQuote, aik_public: bytes) -> bool:
    return verify_signature(aik_public, quote.signed_bytes, quote.signature)


def verify_signature(public: bytes, data: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, data)
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass
class LockoutState:
    max_tries: int = 5
    failed_count: int = 0

    def __post_init__(self):
        if self.max_tries < 1:
            raise ValueError("max_tries must be positive")

    @property
    def locked(self) -> bool:
        return self.failed_count >= self.max_tries


@dataclass
class FlowCounters:
    """Per-flow tally of seal, hash, unseal, AIK and extend operations."""

    sealing: int = 0
    hashing: int = 0
    unsealing: int = 0
    aik: int = 0
    extend: int = 0

    def as_tuple(self) -> tuple[int, int, int, int, int]:
        return (self.sealing, self.hashing, self.unsealing, self.aik, self.extend)


def make_rng(seed: int | str | None) -> Callable[[int], bytes]:
    """Byte source: ``os.urandom`` by default, reproducible when seeded."""
    if seed is None:
        return os.urandom
    return random.Random(seed).randbytes


@dataclass
class KeyRecord:
    handle: KeyHandle
    secret: bytes  # AES key for storage keys, Ed25519 seed for attestation keys
    signer: Ed25519PrivateKey | None = None


@dataclass
class TpmState:
    alg: DigestAlg
    pcrs: list[bytes]
    keys: dict[int, KeyRecord] = field(default_factory=dict)
    seal_nonces: set[bytes] = field(default_factory=set)
    lockout: LockoutState = field(default_factory=LockoutState)
    next_handle: int = HANDLE_BASE


def _serialized(method):
    @functools.wraps(method)
    def wrapper(self, *args, **kwargs):
        with self._lock:
            return method(self, *args, **kwargs)

    return wrapper


class Tpm:
    """A simulated TPM instance.

    ``counters`` may be set to a :class:`FlowCounters` by a caller that wants
    the device to tally successful seal/hash/unseal/AIK/extend commands.
    """

    def __init__(
        self,
        alg: DigestAlg = DigestAlg.SHA1,
        seed: int | str | None = None,
        max_tries: int = 5,
        admin_token: bytes | None = None,
    ):
        self._lock = threading.RLock()
        self._rng = make_rng(seed)
        self.alg = DigestAlg(alg)
        self.max_tries = max_tries
        self.admin_token = admin_token if admin_token is not None else self._rng(20)
        self.counters: FlowCounters | None = None
        self.state = self._fresh_state()

    def _fresh_state(self) -> TpmState:
        return TpmState(
            alg=self.alg,
            pcrs=[self.alg.zeros()] * NUM_PCRS,
            lockout=LockoutState(max_tries=self.max_tries),
        )

    def _count(self, column: str) -> None:
        if self.counters is not None:
            setattr(self.counters, column, getattr(self.counters, column) + 1)

    @property
    def lockout(self) -> LockoutState:
        return self.state.lockout

    # -- platform -----------------------------------------------------------

    @_serialized
    def reset(self) -> TpmState:
        """TPM reset: zero all PCRs, drop keys and nonce records, clear lockout."""
        self.state = self._fresh_state()
        return self.state

    @_serialized
    def get_random(self, n: int) -> bytes:
        if n < 0:
            raise BadParameter("negative byte count")
        return self._rng(n)

    @_serialized
    def hash(self, data: bytes, alg: DigestAlg | None = None) -> bytes:
        out = DigestAlg(alg if alg is not None else self.alg).digest(data)
        self._count("hashing")
        return out

    # -- PCRs ---------------------------------------------------------------

    @_serialized
    def pcr_read(self, index: int) -> bytes:
        return self.state.pcrs[check_index(index)]

    @_serialized
    def pcr_extend(self, index: int, data: bytes, locality: int) -> bytes:
        check_index(index)
        if not may_extend(index, locality):
            raise LocalityDenied(f"locality {locality} may not extend PCR {index}")
        new = extend_digest(self.alg, self.state.pcrs[index], data)
        self.state.pcrs[index] = new
        self._count("extend")
        return new

    @_serialized
    def pcr_reset(self, index: int, locality: int) -> None:
        if not is_dynamic(index):
            raise StaticPcr(f"PCR {index} is static; only a TPM reset clears it")
        if check_locality(locality) not in _RESET_DYNAMIC:
            raise LocalityDenied(f"locality {locality} may not reset PCR {index}")
        self.state.pcrs[index] = self.alg.zeros()

    # -- keys ---------------------------------------------------------------

    @_serialized
    def create_key(self, kind: KeyKind) -> KeyHandle:
        kind = KeyKind(kind)
        hid = self.state.next_handle
        self.state.next_handle += 1
        secret = self._rng(32)
        if kind is KeyKind.ATTESTATION:
            signer = Ed25519PrivateKey.from_private_bytes(secret)
            public = signer.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
            handle = KeyHandle(hid, kind, public)
            self.state.keys[hid] = KeyRecord(handle, secret, signer)
            self._count("aik")
        else:
            handle = KeyHandle(hid, kind)
            self.state.keys[hid] = KeyRecord(handle, secret)
        return handle

    def _key(self, handle: KeyHandle | int) -> KeyRecord:
        hid = handle.id if isinstance(handle, KeyHandle) else handle
        try:
            return self.state.keys[hid]
        except KeyError:
            raise UnknownKey(f"no key with handle {hid:#x}") from None

    @_serialized
    def load_key(self, handle: KeyHandle | int) -> KeyHandle:
        key = self._key(handle)
        if key.handle.kind is KeyKind.ATTESTATION:
            self._count("aik")
        return key.handle

    @_serialized
    def sign(self, data: bytes, key: KeyHandle | int) -> bytes:
        k = self._key(key)
        if k.handle.kind is not KeyKind.ATTESTATION:
            raise WrongKeyKind("storage keys never sign")
        return k.signer.sign(data)

    # -- sealing ------------------------------------------------------------

    @staticmethod
    def _aad(policy: PcrPolicy, nonce_tag: bytes, sk_id: int) -> bytes:
        parts = [sk_id.to_bytes(4, "big"), nonce_tag]
        for index, digest in policy.expected:
            parts.append(bytes([index]) + digest)
        return b"".join(parts)

    @_serialized
    def seal(self, data: bytes, policy: PcrPolicy, sk: KeyHandle | int) -> SealedBlob:
        """Encrypt ``data`` under ``sk``; PCRs are only checked at unseal time."""
        k = self._key(sk)
        if k.handle.kind is not KeyKind.STORAGE:
            raise WrongKeyKind("attestation keys never seal")
        for _, digest in policy.expected:
            if len(digest) != self.alg.size:
                raise BadParameter("policy digest length does not match the PCR bank")
        nonce_tag = self._rng(NONCE_TAG_SIZE)
        while nonce_tag in self.state.seal_nonces:
            nonce_tag = self._rng(NONCE_TAG_SIZE)
        self.state.seal_nonces.add(nonce_tag)
        iv = self._rng(GCM_NONCE_SIZE)
        ct = AESGCM(k.secret).encrypt(iv, bytes(data), self._aad(policy, nonce_tag, k.handle.id))
        self._count("sealing")
        return SealedBlob(iv + ct, policy, nonce_tag, k.handle.id)

    @_serialized
    def unseal(self, blob: SealedBlob, sk: KeyHandle | int) -> bytes:
        """Release a sealed payload.

        Checked in order: lockout, the nonce record (the blob must have been
        sealed by this TPM), the storage key, blob integrity, then the PCR
        policy. Only a policy failure counts toward the lockout; the failure
        that reaches ``max_tries`` is itself reported as :class:`Lockout`.
        """
        lock = self.state.lockout
        if lock.locked:
            raise Lockout("TPM is locked out after repeated authorization failures")
        if blob.nonce_tag not in self.state.seal_nonces:
            raise ForeignTpm("blob was not sealed by this TPM")
        sk_id = sk.id if isinstance(sk, KeyHandle) else sk
        if sk_id != blob.sk_id:
            raise WrongKey("blob is bound to a different storage key")
        k = self._key(sk_id)
        if k.handle.kind is not KeyKind.STORAGE:
            raise WrongKeyKind("attestation keys never unseal")
        iv, ct = blob.ciphertext[:GCM_NONCE_SIZE], blob.ciphertext[GCM_NONCE_SIZE:]
        try:
            plaintext = AESGCM(k.secret).decrypt(iv, ct, self._aad(blob.policy, blob.nonce_tag, sk_id))
        except (InvalidTag, ValueError):
            raise BlobIntegrity("sealed blob failed authentication") from None
        pcrs = self.state.pcrs
        if any(pcrs[i] != expected for i, expected in blob.policy.expected):
            lock.failed_count += 1
            if lock.locked:
                raise Lockout(f"policy mismatch; locked after {lock.failed_count} failures")
            raise PolicyMismatch("current PCR values do not satisfy the blob policy")
        lock.failed_count = 0
        self._count("unsealing")
        return plaintext

    # -- attestation --------------------------------------------------------

    @_serialized
    def quote(self, selection: Iterable[int], qualifying_nonce: bytes, aik: KeyHandle | int) -> AttestationQuote:
        sel = tuple(sorted({check_index(i) for i in selection}))
        if not sel:
            raise EmptySelection("quote needs at least one PCR")
        k = self._key(aik)
        if k.handle.kind is not KeyKind.ATTESTATION:
            raise WrongKeyKind("only attestation keys sign quotes")
        composite = composite_digest(self.alg, (self.state.pcrs[i] for i in sel))
        nonce = bytes(qualifying_nonce)
        return AttestationQuote(sel, composite, nonce, k.signer.sign(composite + nonce))

    # -- lockout ------------------------------------------------------------

    @_serialized
    def reset_lockout(self, admin: bytes) -> None:
        if not hmac.compare_digest(bytes(admin), self.admin_token):
            raise BadAuthorization("admin token rejected")
        self.state.lockout.failed_count = 0
