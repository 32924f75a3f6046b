"""Binary marshaling: TPM commands/responses and client<->bank wire messages.

All integers are big-endian. Decoding is strict: a buffer is accepted only if
it is the exact (canonical) encoding of some value, so truncation, trailing
bytes, inconsistent size fields, unknown codes and out-of-domain field values
all raise a :class:`~attest_sim.errors.CodecError` subclass.

Layouts are documented with hex examples in FORMATS.md.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Union

from .errors import (
    Malformed,
    SizeMismatch,
    TPM_ERRORS,
    TpmError,
    TrailingBytes,
    Truncated,
    UnknownCode,
    WrongLength,
)
from .tpm_core import (
    AttestationQuote,
    DigestAlg,
    KeyHandle,
    KeyKind,
    PcrPolicy,
    SealedBlob,
)

TAG_NO_SESSIONS = 0x8001
HEADER_SIZE = 10
_HEADER = struct.Struct(">HII")

USER_ID_SIZE = 12
SECRET_DIGEST_SIZE = 32
CREDENTIALS_SIZE = USER_ID_SIZE + SECRET_DIGEST_SIZE
ACTIVATION_KEY_SIZE = 20
CHALLENGE_SIZE = 20
TOKEN_SIZE = 32


class CommandCode(enum.IntEnum):
    # Real TPM 2.0 codes where an equivalent command exists; 0x2000xxxx is a
    # vendor range for the simulator-only commands.
    DICTIONARY_ATTACK_LOCK_RESET = 0x00000139
    PCR_RESET = 0x0000013D
    STARTUP = 0x00000144
    CREATE = 0x00000153
    LOAD = 0x00000157
    QUOTE = 0x00000158
    UNSEAL = 0x0000015E
    SIGN = 0x0000015D
    GET_RANDOM = 0x0000017B
    HASH = 0x0000017D
    PCR_READ = 0x0000017E
    PCR_EXTEND = 0x00000182
    SEAL = 0x20000001


# --- primitive reader/writer ------------------------------------------------


class Reader:
    def __init__(self, buf: bytes, offset: int = 0):
        self.buf = bytes(buf)
        self.pos = offset

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise Truncated(f"need {n} bytes at offset {self.pos}, have {len(self.buf) - self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return int.from_bytes(self.take(2), "big")

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "big")

    def b16(self) -> bytes:
        return self.take(self.u16())

    def b32(self) -> bytes:
        return self.take(self.u32())

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise TrailingBytes(f"{len(self.buf) - self.pos} unconsumed bytes")


def _u8(v: int) -> bytes:
    return struct.pack(">B", v)


def _u16(v: int) -> bytes:
    return struct.pack(">H", v)


def _u32(v: int) -> bytes:
    return struct.pack(">I", v)


def _b16(data: bytes) -> bytes:
    if len(data) > 0xFFFF:
        raise WrongLength("field exceeds 65535 bytes")
    return _u16(len(data)) + bytes(data)


def _b32(data: bytes) -> bytes:
    return _u32(len(data)) + bytes(data)


def _enum(cls, value):
    try:
        return cls(value)
    except ValueError:
        raise Malformed(f"{value!r} is not a valid {cls.__name__}") from None


# --- structures shared by commands, responses and wire messages -------------


def pack_selection(selection) -> bytes:
    sel = tuple(selection)
    return _u8(len(sel)) + bytes(sel)


def unpack_selection(r: Reader) -> tuple[int, ...]:
    sel = tuple(r.take(r.u8()))
    if any(a >= b for a, b in zip(sel, sel[1:])):
        raise Malformed("PCR selection must be strictly increasing")
    return sel


def pack_policy(policy: PcrPolicy) -> bytes:
    out = [_u8(len(policy.expected))]
    for index, digest in policy.expected:
        out.append(_u8(index) + _b16(digest))
    return b"".join(out)


def unpack_policy(r: Reader) -> PcrPolicy:
    items = []
    for _ in range(r.u8()):
        index = r.u8()
        items.append((index, r.b16()))
    indices = [i for i, _ in items]
    if any(a >= b for a, b in zip(indices, indices[1:])):
        raise Malformed("policy indices must be strictly increasing")
    try:
        return PcrPolicy(tuple(items))
    except TpmError as exc:
        raise Malformed(str(exc)) from None


def pack_blob(blob: SealedBlob) -> bytes:
    return _u32(blob.sk_id) + _b16(blob.nonce_tag) + pack_policy(blob.policy) + _b32(blob.ciphertext)


def unpack_blob(r: Reader) -> SealedBlob:
    sk_id = r.u32()
    nonce_tag = r.b16()
    policy = unpack_policy(r)
    return SealedBlob(r.b32(), policy, nonce_tag, sk_id)


def encode_blob(blob: SealedBlob) -> bytes:
    return pack_blob(blob)


def decode_blob(buf: bytes) -> SealedBlob:
    r = Reader(buf)
    blob = unpack_blob(r)
    r.done()
    return blob


def pack_quote(q: AttestationQuote) -> bytes:
    return pack_selection(q.selection) + _b16(q.composite) + _b16(q.qualifying_nonce) + _b16(q.signature)


def unpack_quote(r: Reader) -> AttestationQuote:
    sel = unpack_selection(r)
    return AttestationQuote(sel, r.b16(), r.b16(), r.b16())


def encode_quote(q: AttestationQuote) -> bytes:
    return pack_quote(q)


def decode_quote(buf: bytes) -> AttestationQuote:
    r = Reader(buf)
    q = unpack_quote(r)
    r.done()
    return q


def pack_handle(h: KeyHandle) -> bytes:
    return _u32(h.id) + _u8(h.kind) + _b16(h.public)


def unpack_handle(r: Reader) -> KeyHandle:
    hid = r.u32()
    kind = _enum(KeyKind, r.u8())
    return KeyHandle(hid, kind, r.b16())


# --- TPM command parameters -------------------------------------------------


@dataclass(frozen=True)
class Startup:
    CODE = CommandCode.STARTUP

    def pack(self) -> bytes:
        return b""

    @classmethod
    def unpack(cls, r: Reader) -> "Startup":
        return cls()


@dataclass(frozen=True)
class GetRandom:
    n: int
    CODE = CommandCode.GET_RANDOM

    def pack(self) -> bytes:
        return _u16(self.n)

    @classmethod
    def unpack(cls, r: Reader) -> "GetRandom":
        return cls(r.u16())


@dataclass(frozen=True)
class Hash:
    data: bytes
    alg: DigestAlg = DigestAlg.SHA1
    CODE = CommandCode.HASH

    def pack(self) -> bytes:
        return _u16(self.alg) + _b32(self.data)

    @classmethod
    def unpack(cls, r: Reader) -> "Hash":
        alg = _enum(DigestAlg, r.u16())
        return cls(r.b32(), alg)


@dataclass(frozen=True)
class PcrRead:
    index: int
    CODE = CommandCode.PCR_READ

    def pack(self) -> bytes:
        return _u8(self.index)

    @classmethod
    def unpack(cls, r: Reader) -> "PcrRead":
        return cls(r.u8())


@dataclass(frozen=True)
class PcrExtend:
    index: int
    data: bytes
    CODE = CommandCode.PCR_EXTEND

    def pack(self) -> bytes:
        return _u8(self.index) + _b32(self.data)

    @classmethod
    def unpack(cls, r: Reader) -> "PcrExtend":
        return cls(r.u8(), r.b32())


@dataclass(frozen=True)
class PcrReset:
    index: int
    CODE = CommandCode.PCR_RESET

    def pack(self) -> bytes:
        return _u8(self.index)

    @classmethod
    def unpack(cls, r: Reader) -> "PcrReset":
        return cls(r.u8())


@dataclass(frozen=True)
class CreateKey:
    kind: KeyKind
    CODE = CommandCode.CREATE

    def pack(self) -> bytes:
        return _u8(self.kind)

    @classmethod
    def unpack(cls, r: Reader) -> "CreateKey":
        return cls(_enum(KeyKind, r.u8()))


@dataclass(frozen=True)
class LoadKey:
    handle: int
    CODE = CommandCode.LOAD

    def pack(self) -> bytes:
        return _u32(self.handle)

    @classmethod
    def unpack(cls, r: Reader) -> "LoadKey":
        return cls(r.u32())


@dataclass(frozen=True)
class Sign:
    key: int
    data: bytes
    CODE = CommandCode.SIGN

    def pack(self) -> bytes:
        return _u32(self.key) + _b32(self.data)

    @classmethod
    def unpack(cls, r: Reader) -> "Sign":
        return cls(r.u32(), r.b32())


@dataclass(frozen=True)
class Seal:
    sk: int
    policy: PcrPolicy
    data: bytes
    CODE = CommandCode.SEAL

    def pack(self) -> bytes:
        return _u32(self.sk) + pack_policy(self.policy) + _b32(self.data)

    @classmethod
    def unpack(cls, r: Reader) -> "Seal":
        sk = r.u32()
        policy = unpack_policy(r)
        return cls(sk, policy, r.b32())


@dataclass(frozen=True)
class Unseal:
    sk: int
    blob: SealedBlob
    CODE = CommandCode.UNSEAL

    def pack(self) -> bytes:
        return _u32(self.sk) + pack_blob(self.blob)

    @classmethod
    def unpack(cls, r: Reader) -> "Unseal":
        return cls(r.u32(), unpack_blob(r))


@dataclass(frozen=True)
class Quote:
    aik: int
    selection: tuple[int, ...]
    nonce: bytes
    CODE = CommandCode.QUOTE

    def pack(self) -> bytes:
        return _u32(self.aik) + pack_selection(self.selection) + _b16(self.nonce)

    @classmethod
    def unpack(cls, r: Reader) -> "Quote":
        aik = r.u32()
        sel = unpack_selection(r)
        return cls(aik, sel, r.b16())


@dataclass(frozen=True)
class ResetLockout:
    token: bytes
    CODE = CommandCode.DICTIONARY_ATTACK_LOCK_RESET

    def pack(self) -> bytes:
        return _b16(self.token)

    @classmethod
    def unpack(cls, r: Reader) -> "ResetLockout":
        return cls(r.b16())


Params = Union[
    Startup, GetRandom, Hash, PcrRead, PcrExtend, PcrReset, CreateKey, LoadKey, Sign, Seal, Unseal, Quote, ResetLockout
]

PARAMS_BY_CODE: dict[CommandCode, type] = {
    cls.CODE: cls
    for cls in (
        Startup,
        GetRandom,
        Hash,
        PcrRead,
        PcrExtend,
        PcrReset,
        CreateKey,
        LoadKey,
        Sign,
        Seal,
        Unseal,
        Quote,
        ResetLockout,
    )
}


@dataclass(frozen=True)
class CommandHeader:
    tag: int
    size: int
    code: int


@dataclass(frozen=True)
class TpmCommand:
    params: Params
    locality: int = 0
    tag: int = TAG_NO_SESSIONS

    @property
    def code(self) -> CommandCode:
        return self.params.CODE


def encode_command(cmd: TpmCommand) -> bytes:
    body = _u8(cmd.locality) + cmd.params.pack()
    return _HEADER.pack(cmd.tag, HEADER_SIZE + len(body), cmd.code) + body


def decode_header(buf: bytes) -> CommandHeader:
    if len(buf) < HEADER_SIZE:
        raise Truncated(f"header needs {HEADER_SIZE} bytes, got {len(buf)}")
    tag, size, code = _HEADER.unpack_from(buf)
    if size != len(buf):
        raise SizeMismatch(f"size field {size} != buffer length {len(buf)}")
    return CommandHeader(tag, size, code)


def decode_command(buf: bytes) -> TpmCommand:
    header = decode_header(buf)
    if header.tag != TAG_NO_SESSIONS:
        raise Malformed(f"unsupported tag {header.tag:#06x}")
    try:
        cls = PARAMS_BY_CODE[CommandCode(header.code)]
    except ValueError:
        raise UnknownCode(f"unknown command code {header.code:#010x}") from None
    r = Reader(buf, HEADER_SIZE)
    locality = r.u8()
    params = cls.unpack(r)
    r.done()
    return TpmCommand(params, locality, header.tag)


# --- TPM responses ----------------------------------------------------------

RC_SUCCESS = 0


def _pack_result(code: CommandCode, result) -> bytes:
    if code in (CommandCode.GET_RANDOM, CommandCode.HASH, CommandCode.PCR_READ, CommandCode.PCR_EXTEND, CommandCode.SIGN):
        return _b16(result)
    if code is CommandCode.UNSEAL:
        return _b32(result)
    if code in (CommandCode.CREATE, CommandCode.LOAD):
        return pack_handle(result)
    if code is CommandCode.SEAL:
        return pack_blob(result)
    if code is CommandCode.QUOTE:
        return pack_quote(result)
    return b""


def _unpack_result(code: CommandCode, r: Reader):
    if code in (CommandCode.GET_RANDOM, CommandCode.HASH, CommandCode.PCR_READ, CommandCode.PCR_EXTEND, CommandCode.SIGN):
        return r.b16()
    if code is CommandCode.UNSEAL:
        return r.b32()
    if code in (CommandCode.CREATE, CommandCode.LOAD):
        return unpack_handle(r)
    if code is CommandCode.SEAL:
        return unpack_blob(r)
    if code is CommandCode.QUOTE:
        return unpack_quote(r)
    return None


def encode_response(code: CommandCode, result=None, rc: int = RC_SUCCESS) -> bytes:
    body = _pack_result(CommandCode(code), result) if rc == RC_SUCCESS else b""
    return _HEADER.pack(TAG_NO_SESSIONS, HEADER_SIZE + len(body), rc) + body


def decode_response(code: CommandCode, buf: bytes):
    """Return the command's result, or raise the TPM error named by the return code."""
    header = decode_header(buf)
    r = Reader(buf, HEADER_SIZE)
    if header.code != RC_SUCCESS:
        r.done()
        raise TPM_ERRORS.get(header.code, TpmError)(f"TPM returned {header.code:#x}")
    result = _unpack_result(CommandCode(code), r)
    r.done()
    return result


# --- wire messages ----------------------------------------------------------


class MsgKind(enum.IntEnum):
    REGISTRATION_REQUEST = 1
    LOGIN_REQUEST_1 = 2
    LOGIN_REQUEST_2 = 3
    CREDENTIAL_LOGIN = 4
    CHALLENGE = 5
    GRANT = 6
    DENY = 7
    EVIDENCE = 8  # out-of-band quote + AIK public, excluded from byte accounting


class DenyReason(enum.IntEnum):
    BAD_SIGNATURE = 1
    UNKNOWN_COMPOSITE = 2
    REVOKED = 3
    STALE_NONCE = 4
    BAD_CREDENTIALS = 5
    UNKNOWN_ACTIVATION_KEY = 6
    DUPLICATE_REGISTRATION = 7
    MALFORMED = 8


def _fixed(name: str, value: bytes, size: int) -> bytes:
    value = bytes(value)
    if len(value) != size:
        raise WrongLength(f"{name} must be {size} bytes, got {len(value)}")
    return value


@dataclass(frozen=True)
class Credentials:
    user_id: bytes
    secret_digest: bytes

    def __post_init__(self):
        _fixed("user_id", self.user_id, USER_ID_SIZE)
        _fixed("secret_digest", self.secret_digest, SECRET_DIGEST_SIZE)

    def encode(self) -> bytes:
        return self.user_id + self.secret_digest

    @classmethod
    def decode(cls, block: bytes) -> "Credentials":
        _fixed("credential block", block, CREDENTIALS_SIZE)
        return cls(block[:USER_ID_SIZE], block[USER_ID_SIZE:])


@dataclass(frozen=True)
class CredentialLogin:
    credentials: Credentials
    KIND = MsgKind.CREDENTIAL_LOGIN

    def payload(self) -> bytes:
        return self.credentials.encode()


@dataclass(frozen=True)
class RegistrationRequest:
    activation_key: bytes
    pin_digest: bytes
    credentials: Credentials
    KIND = MsgKind.REGISTRATION_REQUEST

    def payload(self) -> bytes:
        return (
            _fixed("activation_key", self.activation_key, ACTIVATION_KEY_SIZE)
            + bytes(self.pin_digest)
            + self.credentials.encode()
        )


@dataclass(frozen=True)
class LoginRequest1:
    composite: bytes
    nonce: bytes
    KIND = MsgKind.LOGIN_REQUEST_1

    def payload(self) -> bytes:
        return bytes(self.composite) + _fixed("nonce", self.nonce, CHALLENGE_SIZE)


@dataclass(frozen=True)
class LoginRequest2:
    step1: LoginRequest1
    credentials: Credentials
    KIND = MsgKind.LOGIN_REQUEST_2

    @property
    def composite(self) -> bytes:
        return self.step1.composite

    @property
    def nonce(self) -> bytes:
        return self.step1.nonce

    def payload(self) -> bytes:
        return self.step1.payload() + self.credentials.encode()


@dataclass(frozen=True)
class Challenge:
    nonce: bytes
    KIND = MsgKind.CHALLENGE

    def payload(self) -> bytes:
        return _fixed("challenge", self.nonce, CHALLENGE_SIZE)


@dataclass(frozen=True)
class Grant:
    token: bytes
    KIND = MsgKind.GRANT

    def payload(self) -> bytes:
        return _fixed("token", self.token, TOKEN_SIZE)


@dataclass(frozen=True)
class Deny:
    reason: DenyReason
    KIND = MsgKind.DENY

    def payload(self) -> bytes:
        return _u8(self.reason)


@dataclass(frozen=True)
class Evidence:
    quote: AttestationQuote
    aik_public: bytes = b""
    KIND = MsgKind.EVIDENCE

    def payload(self) -> bytes:
        return pack_quote(self.quote) + _b16(self.aik_public)


WireMessage = Union[
    CredentialLogin, RegistrationRequest, LoginRequest1, LoginRequest2, Challenge, Grant, Deny, Evidence
]


def payload_size(kind: MsgKind, digest_size: int = 20) -> int | None:
    """Layout-defined payload length, or None for the variable-size Evidence."""
    return {
        MsgKind.CREDENTIAL_LOGIN: CREDENTIALS_SIZE,
        MsgKind.REGISTRATION_REQUEST: ACTIVATION_KEY_SIZE + digest_size + CREDENTIALS_SIZE,
        MsgKind.LOGIN_REQUEST_1: digest_size + CHALLENGE_SIZE,
        MsgKind.LOGIN_REQUEST_2: digest_size + CHALLENGE_SIZE + CREDENTIALS_SIZE,
        MsgKind.CHALLENGE: CHALLENGE_SIZE,
        MsgKind.GRANT: TOKEN_SIZE,
        MsgKind.DENY: 1,
        MsgKind.EVIDENCE: None,
    }[MsgKind(kind)]


def wire_payload(msg: WireMessage, digest_size: int = 20) -> bytes:
    payload = msg.payload()
    expected = payload_size(msg.KIND, digest_size)
    if expected is not None and len(payload) != expected:
        raise WrongLength(f"{msg.KIND.name} payload is {len(payload)} bytes, layout says {expected}")
    return payload


def encode_wire(msg: WireMessage, digest_size: int = 20) -> bytes:
    return _u8(msg.KIND) + wire_payload(msg, digest_size)


def decode_wire(buf: bytes, digest_size: int = 20) -> WireMessage:
    if not buf:
        raise Truncated("empty wire message")
    try:
        kind = MsgKind(buf[0])
    except ValueError:
        raise UnknownCode(f"unknown message kind {buf[0]}") from None
    payload = bytes(buf[1:])
    expected = payload_size(kind, digest_size)
    if expected is not None and len(payload) != expected:
        raise WrongLength(f"{kind.name} payload is {len(payload)} bytes, layout says {expected}")
    d, c = digest_size, CHALLENGE_SIZE
    if kind is MsgKind.CREDENTIAL_LOGIN:
        return CredentialLogin(Credentials.decode(payload))
    if kind is MsgKind.REGISTRATION_REQUEST:
        a = ACTIVATION_KEY_SIZE
        return RegistrationRequest(payload[:a], payload[a : a + d], Credentials.decode(payload[a + d :]))
    if kind is MsgKind.LOGIN_REQUEST_1:
        return LoginRequest1(payload[:d], payload[d:])
    if kind is MsgKind.LOGIN_REQUEST_2:
        return LoginRequest2(LoginRequest1(payload[:d], payload[d : d + c]), Credentials.decode(payload[d + c :]))
    if kind is MsgKind.CHALLENGE:
        return Challenge(payload)
    if kind is MsgKind.GRANT:
        return Grant(payload)
    if kind is MsgKind.DENY:
        return Deny(_enum(DenyReason, payload[0]))
    r = Reader(payload)
    quote = unpack_quote(r)
    aik_public = r.b16()
    r.done()
    return Evidence(quote, aik_public)
