"""Backend endpoints the forwarder talks to.

Both directions use the same frames: the gateway sends one message frame
per record and the backend answers each with an ack frame whose body is
``{"ref": <message id>}``. A fault frame, or no answer, leaves the record
pending.
"""

from __future__ import annotations

import socket
import ssl
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

from ..errors import Incomplete, ScgError
from ..model import Kind, Message, Zone, decode_frame, encode_frame, frame_length, utcnow
from ..tls.policy import HandshakeProfile, ideal_profile
from .channels import profile_from_ssl

ACK_REF = "ref"
_HEADER = 4


def ack_message(ref: str, sender: str, ts=None) -> Message:
    return Message.new(Kind.ACK, sender, {ACK_REF: ref}, ts=ts)


def fault_message(ref: Optional[str], sender: str, error: str, ts=None) -> Message:
    return Message.new(Kind.FAULT, sender, {ACK_REF: ref or "", "error": error}, ts=ts)


class Backend(Protocol):
    zone: Zone

    def handshake(self) -> HandshakeProfile: ...

    def send(self, messages: Sequence[Message]) -> set[str]: ...

    def close(self) -> None: ...


@dataclass
class MemorySink:
    """Deduplicating sink for tests and the simulator.

    ``captures`` keeps every frame exactly as received so payloads can be
    scanned for leaks.
    """

    zone: Zone
    profile: HandshakeProfile = field(
        default_factory=lambda: ideal_profile("TLS_ECDHE_RSA_WITH_AES_256_GCM_SHA384"))
    clock: Callable = utcnow
    up: bool = True
    drop_acks: bool = False
    keep_captures: bool = True
    captures: list = field(default_factory=list)
    received: dict = field(default_factory=dict)
    duplicates: int = 0

    def handshake(self) -> HandshakeProfile:
        if not self.up:
            raise ConnectionError("backend unreachable")
        return self.profile

    def deliver(self, frame: bytes) -> str:
        msg, _ = decode_frame(frame, now=self.clock())
        if self.keep_captures:
            self.captures.append(frame)
        if msg.id in self.received:
            self.duplicates += 1
        else:
            self.received[msg.id] = msg
        return msg.id

    def send(self, messages: Sequence[Message]) -> set[str]:
        if not self.up:
            raise ConnectionError("backend unreachable")
        now = self.clock()
        acked = {self.deliver(encode_frame(m, now=now)) for m in messages}
        return set() if self.drop_acks else acked

    def close(self) -> None:
        pass


def read_frame(sock, buf: bytes = b"") -> tuple[bytes, bytes]:
    """Block until one whole frame is buffered; returns (frame, leftover)."""
    while True:
        try:
            end = _HEADER + frame_length(buf)
        except Incomplete:
            end = None
        if end is not None and len(buf) >= end:
            return buf[:end], buf[end:]
        chunk = sock.recv(65536)
        if not chunk:
            raise ConnectionError("peer closed the connection")
        buf += chunk


class TlsBackend:
    """Frame client over mutual TLS; one connection per forwarding cycle."""

    def __init__(self, host: str, port: int, zone: Zone, context: ssl.SSLContext, *,
                 presents_certificate: bool = True, server_hostname: Optional[str] = None,
                 timeout: float = 10.0, dh_group_bits: int = 2048, ecdh_curve: str = "prime256v1"):
        self.host, self.port, self.zone = host, port, zone
        self._ctx = context
        self._presents = presents_certificate
        self._hostname = server_hostname or host
        self._timeout = timeout
        self._dh, self._curve = dh_group_bits, ecdh_curve
        self._sock: Optional[ssl.SSLSocket] = None

    def handshake(self) -> HandshakeProfile:
        self.close()
        raw = socket.create_connection((self.host, self.port), timeout=self._timeout)
        try:
            self._sock = self._ctx.wrap_socket(raw, server_hostname=self._hostname)
        except (OSError, ssl.SSLError):
            raw.close()
            raise
        return profile_from_ssl(self._sock, client_certificate_presented=self._presents,
                                dh_group_bits=self._dh, ecdh_curve=self._curve)

    def send(self, messages: Sequence[Message]) -> set[str]:
        if self._sock is None:
            raise ConnectionError("handshake() must run before send()")
        self._sock.sendall(b"".join(encode_frame(m, now=utcnow()) for m in messages))
        wanted = {m.id for m in messages}
        acked: set[str] = set()
        buf = b""
        try:
            while wanted - acked:
                frame, buf = read_frame(self._sock, buf)
                reply, _ = decode_frame(frame)
                ref = reply.body.get(ACK_REF)
                if ref not in wanted:
                    continue
                if reply.kind is Kind.ACK:
                    acked.add(ref)
                else:
                    wanted.discard(ref)
        except (OSError, ScgError):
            # whatever was acked before the failure still counts
            pass
        return acked

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
