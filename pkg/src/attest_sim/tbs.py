"""Binary command interface to a :class:`~attest_sim.tpm_core.Tpm`.

:class:`TpmBaseServices` plays the role of the platform's TPM base services:
a byte buffer goes in, a byte buffer comes out. :class:`TbsTpm` is a
caller-side proxy with the same method surface as ``Tpm`` that marshals every
call through that interface, so client code can run against either.
"""

from __future__ import annotations

from typing import Iterable

from . import codec
from .codec import CommandCode, TpmCommand
from .errors import BadParameter, CodecError, TpmError
from .tpm_core import (
    AttestationQuote,
    DigestAlg,
    FlowCounters,
    KeyHandle,
    KeyKind,
    Locality,
    PcrPolicy,
    SealedBlob,
    Tpm,
)


def _hid(handle: KeyHandle | int) -> int:
    return handle.id if isinstance(handle, KeyHandle) else handle


class TpmBaseServices:
    def __init__(self, tpm: Tpm):
        self.tpm = tpm

    def submit(self, buf: bytes) -> bytes:
        try:
            cmd = codec.decode_command(buf)
        except CodecError:
            return codec.encode_response(CommandCode.STARTUP, rc=BadParameter.code)
        try:
            result = self._dispatch(cmd)
        except TpmError as exc:
            return codec.encode_response(cmd.code, rc=exc.code)
        return codec.encode_response(cmd.code, result)

    def _dispatch(self, cmd: TpmCommand):
        tpm, p = self.tpm, cmd.params
        code = cmd.code
        if code is CommandCode.STARTUP:
            tpm.reset()
            return None
        if code is CommandCode.GET_RANDOM:
            return tpm.get_random(p.n)
        if code is CommandCode.HASH:
            return tpm.hash(p.data, p.alg)
        if code is CommandCode.PCR_READ:
            return tpm.pcr_read(p.index)
        if code is CommandCode.PCR_EXTEND:
            return tpm.pcr_extend(p.index, p.data, cmd.locality)
        if code is CommandCode.PCR_RESET:
            return tpm.pcr_reset(p.index, cmd.locality)
        if code is CommandCode.CREATE:
            return tpm.create_key(p.kind)
        if code is CommandCode.LOAD:
            return tpm.load_key(p.handle)
        if code is CommandCode.SIGN:
            return tpm.sign(p.data, p.key)
        if code is CommandCode.SEAL:
            return tpm.seal(p.data, p.policy, p.sk)
        if code is CommandCode.UNSEAL:
            return tpm.unseal(p.blob, p.sk)
        if code is CommandCode.QUOTE:
            return tpm.quote(p.selection, p.nonce, p.aik)
        if code is CommandCode.DICTIONARY_ATTACK_LOCK_RESET:
            return tpm.reset_lockout(p.token)
        raise BadParameter(f"unhandled command {code!r}")


class TbsTpm:
    """``Tpm``-compatible proxy speaking the binary command interface.

    Counters, when attached, are tallied here on successful responses.
    """

    def __init__(self, services: TpmBaseServices, alg: DigestAlg | None = None, locality: int = Locality.OS):
        self.services = services
        self.alg = DigestAlg(alg if alg is not None else services.tpm.alg)
        self.locality = locality
        self.counters: FlowCounters | None = None

    def _call(self, params, locality: int | None = None):
        cmd = TpmCommand(params, self.locality if locality is None else locality)
        return codec.decode_response(cmd.code, self.services.submit(codec.encode_command(cmd)))

    def _count(self, column: str) -> None:
        if self.counters is not None:
            setattr(self.counters, column, getattr(self.counters, column) + 1)

    def reset(self) -> None:
        self._call(codec.Startup())

    def get_random(self, n: int) -> bytes:
        return self._call(codec.GetRandom(n))

    def hash(self, data: bytes, alg: DigestAlg | None = None) -> bytes:
        out = self._call(codec.Hash(data, DigestAlg(alg if alg is not None else self.alg)))
        self._count("hashing")
        return out

    def pcr_read(self, index: int) -> bytes:
        return self._call(codec.PcrRead(index))

    def pcr_extend(self, index: int, data: bytes, locality: int) -> bytes:
        out = self._call(codec.PcrExtend(index, data), locality)
        self._count("extend")
        return out

    def pcr_reset(self, index: int, locality: int) -> None:
        self._call(codec.PcrReset(index), locality)

    def create_key(self, kind: KeyKind) -> KeyHandle:
        handle = self._call(codec.CreateKey(KeyKind(kind)))
        if handle.kind is KeyKind.ATTESTATION:
            self._count("aik")
        return handle

    def load_key(self, handle: KeyHandle | int) -> KeyHandle:
        loaded = self._call(codec.LoadKey(_hid(handle)))
        if loaded.kind is KeyKind.ATTESTATION:
            self._count("aik")
        return loaded

    def sign(self, data: bytes, key: KeyHandle | int) -> bytes:
        return self._call(codec.Sign(_hid(key), data))

    def seal(self, data: bytes, policy: PcrPolicy, sk: KeyHandle | int) -> SealedBlob:
        blob = self._call(codec.Seal(_hid(sk), policy, data))
        self._count("sealing")
        return blob

    def unseal(self, blob: SealedBlob, sk: KeyHandle | int) -> bytes:
        out = self._call(codec.Unseal(_hid(sk), blob))
        self._count("unsealing")
        return out

    def quote(self, selection: Iterable[int], qualifying_nonce: bytes, aik: KeyHandle | int) -> AttestationQuote:
        sel = tuple(sorted(set(selection)))
        return self._call(codec.Quote(_hid(aik), sel, qualifying_nonce))

    def reset_lockout(self, admin: bytes) -> None:
        self._call(codec.ResetLockout(admin))
