"""On-disk formats for a device: the app's DeviceStore and a TPM state snapshot.

Both files share one container: 4-byte magic, 1-byte version, then a fixed
number of sections, each a 4-byte big-endian length followed by that many
bytes. Anything else (wrong magic or version, short read, extra bytes,
malformed section) is rejected.
"""

from __future__ import annotations

import os
from pathlib import Path

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from ..codec import Reader, decode_blob, encode_blob
from ..errors import BadMagic, BadVersion, CodecError, Corrupt
from ..lma_client import DeviceStore
from ..tpm_core import (
    NUM_PCRS,
    DigestAlg,
    KeyHandle,
    KeyKind,
    KeyRecord,
    LockoutState,
    Tpm,
    TpmState,
)

DEVICE_MAGIC = b"ASDV"
TPM_MAGIC = b"ASTP"
VERSION = 1


def pack_container(magic: bytes, sections: list[bytes]) -> bytes:
    out = [magic, bytes([VERSION])]
    for s in sections:
        out.append(len(s).to_bytes(4, "big") + s)
    return b"".join(out)


def unpack_container(magic: bytes, data: bytes, count: int) -> list[bytes]:
    if data[:4] != magic[: len(data)]:
        raise BadMagic(f"expected magic {magic!r}, found {data[:4]!r}")
    if len(data) < 5:
        raise Corrupt("file ends before the version byte")
    if data[4] != VERSION:
        raise BadVersion(f"unsupported version {data[4]}")
    r = Reader(data, 5)
    try:
        sections = [r.b32() for _ in range(count)]
        r.done()
    except CodecError as exc:
        raise Corrupt(str(exc)) from None
    return sections


def dump_device(store: DeviceStore) -> bytes:
    return pack_container(
        DEVICE_MAGIC,
        [encode_blob(store.activation_blob), encode_blob(store.credential_blob), store.aik_id.to_bytes(4, "big")],
    )


def parse_device(data: bytes) -> DeviceStore:
    activation, credential, aik = unpack_container(DEVICE_MAGIC, data, 3)
    if len(aik) != 4:
        raise Corrupt("AIK handle section must be 4 bytes")
    try:
        return DeviceStore(decode_blob(activation), decode_blob(credential), int.from_bytes(aik, "big"))
    except CodecError as exc:
        raise Corrupt(str(exc)) from None


def persist_device(store: DeviceStore, path: str | os.PathLike) -> None:
    Path(path).write_bytes(dump_device(store))


def load_device(path: str | os.PathLike) -> DeviceStore:
    return parse_device(Path(path).read_bytes())


# --- TPM snapshot -----------------------------------------------------------


def dump_tpm(tpm: Tpm) -> bytes:
    st = tpm.state
    keys = b"".join(
        k.handle.id.to_bytes(4, "big") + bytes([k.handle.kind]) + k.secret for k in st.keys.values()
    )
    nonces = b"".join(sorted(st.seal_nonces))
    meta = (
        int(st.alg).to_bytes(2, "big")
        + st.lockout.max_tries.to_bytes(4, "big")
        + st.lockout.failed_count.to_bytes(4, "big")
        + st.next_handle.to_bytes(4, "big")
    )
    return pack_container(TPM_MAGIC, [meta, b"".join(st.pcrs), keys, nonces, tpm.admin_token])


def parse_tpm(data: bytes, seed: int | str | None = None) -> Tpm:
    """Rebuild a TPM from a snapshot. The RNG is not part of the snapshot."""
    meta, pcrs, keys, nonces, admin = unpack_container(TPM_MAGIC, data, 5)
    if len(meta) != 14:
        raise Corrupt("bad metadata section")
    try:
        alg = DigestAlg(int.from_bytes(meta[:2], "big"))
    except ValueError:
        raise Corrupt("unknown digest algorithm") from None
    max_tries = int.from_bytes(meta[2:6], "big")
    failed = int.from_bytes(meta[6:10], "big")
    next_handle = int.from_bytes(meta[10:14], "big")
    if max_tries < 1 or len(pcrs) != NUM_PCRS * alg.size or len(keys) % 37 or len(nonces) % 16:
        raise Corrupt("section sizes do not match the snapshot layout")
    tpm = Tpm(alg=alg, seed=seed, max_tries=max_tries, admin_token=admin)
    records = {}
    for off in range(0, len(keys), 37):
        hid = int.from_bytes(keys[off : off + 4], "big")
        try:
            kind = KeyKind(keys[off + 4])
        except ValueError:
            raise Corrupt("unknown key kind") from None
        secret = keys[off + 5 : off + 37]
        if kind is KeyKind.ATTESTATION:
            signer = Ed25519PrivateKey.from_private_bytes(secret)
            public = signer.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
            records[hid] = KeyRecord(KeyHandle(hid, kind, public), secret, signer)
        else:
            records[hid] = KeyRecord(KeyHandle(hid, kind), secret)
    size = alg.size
    tpm.state = TpmState(
        alg=alg,
        pcrs=[pcrs[i : i + size] for i in range(0, len(pcrs), size)],
        keys=records,
        seal_nonces={nonces[i : i + 16] for i in range(0, len(nonces), 16)},
        lockout=LockoutState(max_tries, failed),
        next_handle=next_handle,
    )
    return tpm


def persist_tpm(tpm: Tpm, path: str | os.PathLike) -> None:
    Path(path).write_bytes(dump_tpm(tpm))


def load_tpm(path: str | os.PathLike, seed: int | str | None = None) -> Tpm:
    return parse_tpm(Path(path).read_bytes(), seed)
