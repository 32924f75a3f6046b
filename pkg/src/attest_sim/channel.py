"""Server-authenticated channel between the app and the bank, with transcripts.

Transport security is modeled, not implemented: on connect the server presents
a token and the client refuses to send anything unless it matches the one it
expects. Two transports are provided, an in-process one that calls the bank
directly and a local TCP one using 4-byte big-endian length-prefixed frames.
Both carry the encoded wire messages, so every payload byte is accounted for.
"""

from __future__ import annotations

import hmac
import socket
import socketserver
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from .bank_service import BankConnection, BankService
from .codec import Deny, DenyReason, MsgKind, decode_wire, encode_wire
from .errors import Closed, CodecError, ServerAuthFailed, Unreachable

MAX_FRAME = 1 << 20

TABLE3_ROWS = (
    ("Credential based", MsgKind.CREDENTIAL_LOGIN),
    ("Registration process", MsgKind.REGISTRATION_REQUEST),
    ("Login (1 Step)", MsgKind.LOGIN_REQUEST_1),
    ("Login (2 Steps)", MsgKind.LOGIN_REQUEST_2),
)


@dataclass
class Transcript:
    records: list[tuple[str, MsgKind, bytes]] = field(default_factory=list)
    payload_totals: dict[MsgKind, int] = field(default_factory=dict)
    message_counts: dict[MsgKind, int] = field(default_factory=dict)

    def record(self, direction: str, kind: MsgKind, payload: bytes) -> None:
        kind = MsgKind(kind)
        self.records.append((direction, kind, bytes(payload)))
        self.payload_totals[kind] = self.payload_totals.get(kind, 0) + len(payload)
        self.message_counts[kind] = self.message_counts.get(kind, 0) + 1

    def extend(self, other: "Transcript") -> None:
        for rec in other.records:
            self.record(*rec)

    def to_text(self) -> str:
        return "".join(f"{d} {k.name} {p.hex()}\n" for d, k, p in self.records)

    @classmethod
    def from_text(cls, text: str) -> "Transcript":
        t = cls()
        for line in text.splitlines():
            direction, kind, payload = (line.split(" ") + [""])[:3]
            t.record(direction, MsgKind[kind], bytes.fromhex(payload))
        return t


@dataclass(frozen=True)
class ByteRow:
    name: str
    kind: MsgKind
    total: int
    count: int

    @property
    def per_flow(self) -> float:
        return self.total / self.count if self.count else 0


@dataclass(frozen=True)
class ByteReport:
    rows: tuple[ByteRow, ...]

    def per_flow(self) -> tuple[float, ...]:
        return tuple(r.per_flow for r in self.rows)

    def totals(self) -> tuple[int, ...]:
        return tuple(r.total for r in self.rows)

    def render(self) -> str:
        lines = [f"{'Flow':<22}{'Bytes/flow':>12}{'Total':>8}{'Msgs':>6}"]
        for r in self.rows:
            lines.append(f"{r.name:<22}{r.per_flow:>12g}{r.total:>8}{r.count:>6}")
        return "\n".join(lines)


def report_bytes(*transcripts: Transcript) -> ByteReport:
    """Request payload bytes per flow kind, summed over the given transcripts."""
    totals: dict[MsgKind, int] = {}
    counts: dict[MsgKind, int] = {}
    for t in transcripts:
        for kind, n in t.payload_totals.items():
            totals[kind] = totals.get(kind, 0) + n
        for kind, n in t.message_counts.items():
            counts[kind] = counts.get(kind, 0) + n
    return ByteReport(tuple(ByteRow(name, k, totals.get(k, 0), counts.get(k, 0)) for name, k in TABLE3_ROWS))


# --- server side ------------------------------------------------------------


class BankEndpoint:
    """The bank as reachable over a channel: service plus the token it presents."""

    def __init__(self, bank: BankService, server_token: bytes, digest_size: int | None = None):
        self.bank = bank
        self.server_token = bytes(server_token)
        self.digest_size = digest_size if digest_size is not None else bank.alg.size

    def connect(self) -> BankConnection:
        return BankConnection(self.bank)

    def handle_frame(self, conn: BankConnection, frame: bytes) -> list[bytes]:
        try:
            msg = decode_wire(frame, self.digest_size)
        except CodecError:
            replies = [Deny(DenyReason.MALFORMED)]
        else:
            replies = conn.receive(msg)
        return [encode_wire(r, self.digest_size) for r in replies]


def _send_frame(sock: socket.socket, data: bytes) -> None:
    sock.sendall(len(data).to_bytes(4, "big") + data)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(n)
        if not chunk:
            raise Closed("peer closed the connection")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def _recv_frame(sock: socket.socket) -> bytes:
    size = int.from_bytes(_recv_exact(sock, 4), "big")
    if size > MAX_FRAME:
        raise Closed(f"frame of {size} bytes exceeds limit")
    return _recv_exact(sock, size)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        endpoint: BankEndpoint = self.server.endpoint
        sock = self.request
        conn = endpoint.connect()
        try:
            _send_frame(sock, endpoint.server_token)
            for reply in conn.open():
                _send_frame(sock, encode_wire(reply, endpoint.digest_size))
            while True:
                frame = _recv_frame(sock)
                for out in endpoint.handle_frame(conn, frame):
                    _send_frame(sock, out)
        except (Closed, OSError):
            pass


class BankServer(socketserver.ThreadingTCPServer):
    """Bank listening on a local TCP port; one thread per session."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, endpoint: BankEndpoint, host: str = "127.0.0.1", port: int = 0):
        self.endpoint = endpoint
        super().__init__((host, port), _Handler)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def start(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


# --- client side ------------------------------------------------------------


class InProcessTransport:
    def __init__(self, endpoint: BankEndpoint):
        self.endpoint = endpoint
        self.conn = endpoint.connect()
        self.inbox: deque[bytes] = deque()

    def handshake(self) -> bytes:
        self.inbox.extend(encode_wire(m, self.endpoint.digest_size) for m in self.conn.open())
        return self.endpoint.server_token

    def send(self, frame: bytes) -> None:
        self.inbox.extend(self.endpoint.handle_frame(self.conn, frame))

    def recv(self) -> bytes:
        if not self.inbox:
            raise Closed("no message from the bank is pending")
        return self.inbox.popleft()

    def close(self) -> None:
        self.inbox.clear()


class TcpTransport:
    def __init__(self, address: tuple[str, int], timeout: float = 5.0):
        try:
            self.sock = socket.create_connection(address, timeout=timeout)
        except OSError as exc:
            raise Unreachable(f"cannot reach bank at {address[0]}:{address[1]}: {exc}") from None

    def handshake(self) -> bytes:
        return _recv_frame(self.sock)

    def send(self, frame: bytes) -> None:
        try:
            _send_frame(self.sock, frame)
        except OSError as exc:
            raise Closed(str(exc)) from None

    def recv(self) -> bytes:
        try:
            return _recv_frame(self.sock)
        except OSError as exc:
            raise Closed(str(exc)) from None

    def close(self) -> None:
        self.sock.close()


@dataclass(frozen=True)
class ChannelConfig:
    server_auth_token: bytes
    transport: str = "inprocess"  # or "tcp"
    endpoint: BankEndpoint | None = None
    address: tuple[str, int] | None = None
    digest_size: int = 20
    timeout: float = 5.0


class Session:
    def __init__(self, transport, digest_size: int = 20):
        self.transport = transport
        self.digest_size = digest_size
        self.transcript = Transcript()
        self.closed = False

    def send(self, msg) -> None:
        if self.closed:
            raise Closed("session is closed")
        frame = encode_wire(msg, self.digest_size)
        self.transport.send(frame)
        self.transcript.record("out", msg.KIND, frame[1:])

    def recv(self):
        if self.closed:
            raise Closed("session is closed")
        frame = self.transport.recv()
        msg = decode_wire(frame, self.digest_size)
        self.transcript.record("in", msg.KIND, frame[1:])
        return msg

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.transport.close()

    def __enter__(self) -> "Session":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_session(cfg: ChannelConfig) -> Session:
    if cfg.transport == "inprocess":
        if cfg.endpoint is None:
            raise Unreachable("no in-process bank endpoint configured")
        transport = InProcessTransport(cfg.endpoint)
    elif cfg.transport == "tcp":
        if cfg.address is None:
            raise Unreachable("no bank address configured")
        transport = TcpTransport(cfg.address, cfg.timeout)
    else:
        raise ValueError(f"unknown transport {cfg.transport!r}")
    try:
        presented = transport.handshake()
    except Closed as exc:
        transport.close()
        raise Unreachable(str(exc)) from None
    if not hmac.compare_digest(presented, cfg.server_auth_token):
        transport.close()
        raise ServerAuthFailed("server did not present the expected token")
    return Session(transport, cfg.digest_size)


def merge_transcripts(transcripts: Iterable[Transcript]) -> Transcript:
    out = Transcript()
    for t in transcripts:
        out.extend(t)
    return out
