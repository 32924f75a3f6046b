import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attest_sim import codec as c
from attest_sim.errors import (
    CodecError,
    Lockout,
    Malformed,
    SizeMismatch,
    TrailingBytes,
    Truncated,
    UnknownCode,
    WrongLength,
)
from attest_sim.tpm_core import PcrPolicy

from gen import command_mutations, flip_bit, random_command, random_wire, wire_mutations

CREDS = c.Credentials(b"alice0000001", bytes(range(32)))


def test_header_contract():
    buf = c.encode_command(c.TpmCommand(c.PcrRead(0)))
    assert struct.unpack(">H", buf[:2])[0] == c.TAG_NO_SESSIONS
    assert struct.unpack(">I", buf[2:6])[0] == len(buf)
    assert struct.unpack(">I", buf[6:10])[0] == c.CommandCode.PCR_READ
    # tag | size | code | locality | index
    assert buf.hex() == "8001" "0000000c" "0000017e" "00" "00"


def test_extend_layout():
    buf = c.encode_command(c.TpmCommand(c.PcrExtend(20, b"abc"), locality=2))
    assert buf.hex() == "8001" "00000013" "00000182" "02" "14" "00000003" "616263"


def test_decode_errors():
    good = c.encode_command(c.TpmCommand(c.PcrRead(3)))
    with pytest.raises(Truncated):
        c.decode_command(b"\x80\x01\x00\x00\x00")
    with pytest.raises(SizeMismatch):
        c.decode_command(good[:2] + struct.pack(">I", len(good) + 1) + good[6:])
    with pytest.raises(UnknownCode):
        c.decode_command(good[:6] + struct.pack(">I", 0x12345678) + good[10:])
    with pytest.raises(TrailingBytes):
        padded = good + b"\x00"
        c.decode_command(padded[:2] + struct.pack(">I", len(padded)) + padded[6:])
    with pytest.raises(Malformed):
        c.decode_command(b"\x80\x02" + good[2:])


def test_selection_must_increase():
    buf = c.encode_command(c.TpmCommand(c.Quote(1, (20, 21), b"")))
    swapped = buf.replace(bytes([2, 20, 21]), bytes([2, 21, 20]))
    with pytest.raises(Malformed):
        c.decode_command(swapped)


def test_policy_bad_index_is_malformed():
    buf = c.encode_command(c.TpmCommand(c.Seal(1, PcrPolicy.of({5: bytes(20)}), b"x")))
    with pytest.raises(Malformed):
        c.decode_command(buf.replace(bytes([1, 5]), bytes([1, 99]), 1))


def test_response_roundtrip_and_errors():
    buf = c.encode_response(c.CommandCode.PCR_READ, bytes(20))
    assert c.decode_response(c.CommandCode.PCR_READ, buf) == bytes(20)
    with pytest.raises(Lockout):
        c.decode_response(c.CommandCode.UNSEAL, c.encode_response(c.CommandCode.UNSEAL, rc=Lockout.code))


def test_command_roundtrip_seeded():
    rng = random.Random(1234)
    for _ in range(2000):
        cmd = random_command(rng)
        buf = c.encode_command(cmd)
        back = c.decode_command(buf)
        assert back == cmd
        assert c.encode_command(back) == buf


@settings(max_examples=300)
@given(st.integers(0, 2**32))
def test_command_roundtrip_property(seed):
    cmd = random_command(random.Random(seed))
    assert c.decode_command(c.encode_command(cmd)) == cmd


@settings(max_examples=300)
@given(st.integers(0, 2**32))
def test_wire_roundtrip_property(seed):
    msg = random_wire(random.Random(seed))
    buf = c.encode_wire(msg)
    assert c.decode_wire(buf) == msg
    assert c.encode_wire(c.decode_wire(buf)) == buf


@settings(max_examples=300)
@given(st.integers(0, 2**32))
def test_structural_mutations_rejected(seed):
    rng = random.Random(seed)
    buf = c.encode_command(random_command(rng))
    for label, bad in command_mutations(buf, rng):
        with pytest.raises(CodecError):
            c.decode_command(bad)
    wbuf = c.encode_wire(random_wire(rng))
    for label, bad in wire_mutations(wbuf, rng):
        with pytest.raises(CodecError):
            c.decode_wire(bad)


@settings(max_examples=300)
@given(st.integers(0, 2**32))
def test_bit_flips_never_silently_accepted(seed):
    """A flipped buffer either fails to parse or is itself a canonical encoding."""
    rng = random.Random(seed)
    for encode, decode, make in (
        (c.encode_command, c.decode_command, random_command),
        (c.encode_wire, c.decode_wire, random_wire),
    ):
        bad = flip_bit(encode(make(rng)), rng)
        try:
            value = decode(bad)
        except CodecError:
            continue
        assert encode(value) == bad


# --- wire layouts --------------------------------------------------------------


def test_wire_lengths():
    step1 = c.LoginRequest1(b"C" * 20, b"N" * 20)
    assert len(c.wire_payload(c.CredentialLogin(CREDS))) == 44
    assert len(c.wire_payload(c.RegistrationRequest(b"K" * 20, b"P" * 20, CREDS))) == 84
    assert len(c.wire_payload(step1)) == 40
    assert len(c.wire_payload(c.LoginRequest2(step1, CREDS))) == 84


def test_wire_layout_bytes():
    req = c.RegistrationRequest(b"K" * 20, b"P" * 20, CREDS)
    buf = c.encode_wire(req)
    assert buf[0] == c.MsgKind.REGISTRATION_REQUEST
    assert buf[1:21] == b"K" * 20 and buf[21:41] == b"P" * 20
    assert buf[41:53] == b"alice0000001" and buf[53:] == bytes(range(32))


def test_sha256_layout():
    step1 = c.LoginRequest1(b"C" * 32, b"N" * 20)
    assert c.payload_size(c.MsgKind.LOGIN_REQUEST_1, 32) == 52
    assert c.decode_wire(c.encode_wire(step1, 32), 32) == step1
    with pytest.raises(WrongLength):
        c.encode_wire(step1)


def test_wrong_lengths():
    with pytest.raises(WrongLength):
        c.Credentials(b"short", bytes(32))
    with pytest.raises(WrongLength):
        c.decode_wire(bytes([c.MsgKind.CHALLENGE]) + bytes(19))
    with pytest.raises(Malformed):
        c.decode_wire(bytes([c.MsgKind.DENY, 0]))
    with pytest.raises(UnknownCode):
        c.decode_wire(b"\x63" + bytes(10))
