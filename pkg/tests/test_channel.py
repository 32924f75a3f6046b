import socket
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from attest_sim.channel import (
    BankServer,
    ChannelConfig,
    Transcript,
    merge_transcripts,
    open_session,
    report_bytes,
)
from attest_sim.codec import Challenge, CredentialLogin, Deny, DenyReason, Grant, MsgKind, decode_wire
from attest_sim.errors import Closed, ServerAuthFailed, Unreachable
from attest_sim.harness.scenarios import SCENARIOS, run_scenario
from attest_sim.lma_client import exchange_credential_login, exchange_login, exchange_registration

from conftest import IMAGE, TOKEN, Rig


class CountingEndpoint:
    def __init__(self, inner):
        self.inner = inner
        self.frames = 0
        self.server_token = inner.server_token
        self.digest_size = inner.digest_size

    def connect(self):
        return self.inner.connect()

    def handle_frame(self, conn, frame):
        self.frames += 1
        return self.inner.handle_frame(conn, frame)


def test_open_session_checks_token(rig):
    with open_session(rig.cfg) as s:
        assert isinstance(s.recv(), Challenge)
    spy = CountingEndpoint(rig.endpoint)
    with pytest.raises(ServerAuthFailed):
        open_session(ChannelConfig(b"X" * 32, endpoint=spy))
    assert spy.frames == 0


def test_unreachable():
    with pytest.raises(Unreachable):
        open_session(ChannelConfig(TOKEN))
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    with pytest.raises(Unreachable):
        open_session(ChannelConfig(TOKEN, "tcp", address=("127.0.0.1", port), timeout=1))


def test_closed_session(rig):
    s = open_session(rig.cfg)
    s.close()
    with pytest.raises(Closed):
        s.send(CredentialLogin(rig.creds))
    with pytest.raises(Closed):
        s.recv()


def test_parallel_sessions_independent(rig):
    a, b = open_session(rig.cfg), open_session(rig.cfg)
    na, nb = a.recv().nonce, b.recv().nonce
    assert na != nb
    a.send(CredentialLogin(rig.creds))
    assert isinstance(a.recv(), Grant)
    assert MsgKind.CREDENTIAL_LOGIN not in b.transcript.payload_totals
    assert a.transcript.payload_totals[MsgKind.CREDENTIAL_LOGIN] == 44


def test_flows_account_bytes(rig):
    with open_session(rig.cfg) as s:
        rig.client.measure_software(IMAGE)
        assert isinstance(exchange_registration(rig.client, s, rig.key, rig.pin, rig.creds), Grant)
        rig.client.end_session()
    assert s.transcript.payload_totals[MsgKind.REGISTRATION_REQUEST] == 84
    for steps, kind, size in ((1, MsgKind.LOGIN_REQUEST_1, 40), (2, MsgKind.LOGIN_REQUEST_2, 84)):
        with open_session(rig.cfg) as s:
            rig.client.measure_software(IMAGE)
            assert isinstance(exchange_login(rig.client, s, rig.pin, steps), Grant)
            rig.client.end_session()
        assert s.transcript.payload_totals[kind] == size
        assert s.transcript.message_counts[kind] == 1


def test_report_bytes_empty_and_sums(rig):
    assert report_bytes().totals() == (0, 0, 0, 0)
    assert report_bytes(Transcript()).per_flow() == (0, 0, 0, 0)
    t = Transcript()
    t.record("out", MsgKind.REGISTRATION_REQUEST, bytes(84))
    t.record("out", MsgKind.REGISTRATION_REQUEST, bytes(84))
    t.record("in", MsgKind.CHALLENGE, bytes(20))
    report = report_bytes(t)
    assert report.totals() == (0, 168, 0, 0)
    assert report.per_flow() == (0, 84, 0, 0)
    assert "Registration process" in report.render()


def test_transcript_text_roundtrip():
    t = Transcript()
    t.record("out", MsgKind.LOGIN_REQUEST_1, bytes(range(40)))
    t.record("in", MsgKind.DENY, b"\x03")
    text = t.to_text()
    assert text.splitlines()[1] == "in DENY 03"
    back = Transcript.from_text(text)
    assert back == t
    assert merge_transcripts([t, t]).payload_totals[MsgKind.LOGIN_REQUEST_1] == 80


@given(st.lists(st.tuples(st.sampled_from(list(MsgKind)), st.binary(max_size=90)), max_size=20))
def test_payload_totals_invariant(records):
    t = Transcript()
    for kind, payload in records:
        t.record("out", kind, payload)
    for kind in MsgKind:
        assert t.payload_totals.get(kind, 0) == sum(len(p) for k, p in records if k == kind)


# --- tcp ------------------------------------------------------------------------------


@pytest.fixture
def server(rig):
    srv = BankServer(rig.endpoint)
    srv.start()
    yield srv
    srv.stop()


def test_tcp_flow(rig, server):
    cfg = ChannelConfig(TOKEN, "tcp", address=server.address)
    with open_session(cfg) as s:
        assert isinstance(exchange_credential_login(s, rig.creds), Grant)
    with open_session(cfg) as s:
        rig.client.measure_software(IMAGE)
        assert isinstance(exchange_registration(rig.client, s, rig.key, rig.pin, rig.creds), Grant)
        rig.client.end_session()
    assert s.transcript.payload_totals[MsgKind.REGISTRATION_REQUEST] == 84
    with pytest.raises(ServerAuthFailed):
        open_session(ChannelConfig(b"Y" * 32, "tcp", address=server.address))


def test_tcp_framing(server):
    with socket.create_connection(server.address, timeout=2) as sock:
        f = sock.makefile("rb")
        (n,) = struct.unpack(">I", f.read(4))
        assert f.read(n) == TOKEN
        (n,) = struct.unpack(">I", f.read(4))
        assert isinstance(decode_wire(f.read(n)), Challenge)
        junk = b"\xee\x00"
        sock.sendall(struct.pack(">I", len(junk)) + junk)
        (n,) = struct.unpack(">I", f.read(4))
        assert decode_wire(f.read(n)) == Deny(DenyReason.MALFORMED)


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_transport_transparency(name):
    local = run_scenario(name, seed=11, transport="inprocess")
    remote = run_scenario(name, seed=11, transport="tcp")
    assert local.outcomes() == remote.outcomes()
    assert [f.to_dict() for f in local.flows] == [f.to_dict() for f in remote.flows]


def test_two_registrations_sum():
    rig_a, rig_b = Rig(seed="a"), Rig(seed="b")
    transcripts = []
    for rig in (rig_a, rig_b):
        with open_session(rig.cfg) as s:
            rig.client.measure_software(IMAGE)
            exchange_registration(rig.client, s, rig.key, rig.pin, rig.creds)
            transcripts.append(s.transcript)
    row = report_bytes(*transcripts).rows[1]
    assert (row.total, row.per_flow) == (168, 84)
