"""Encrypted, authenticated sessions over the TCP transport.

Connection setup, after the connector has a key from the KDC::

    C -> L  SECURE_HELLO  key_id                 (clear)            C: JOIN-SENT
            L fetches the same key from the KDC by id            L: JOIN-RECEIVED
    C -> L  record{CHALLENGE        c1 ^ nonce}
    L -> C  record{CHALLENGE_REPLY  (c1+1) ^ nonce | c2 ^ nonce}      C: ESTABLISHED
    C -> L  record{CHALLENGE_FINISH (c2+1) ^ nonce}                   L: ESTABLISHED

Challenges are 128-bit integers mixed with the session nonce, so a peer
holding the right cipher/MAC keys but a different nonce fails the check.
Every later frame travels as one MSG_SECURE_RECORD.
"""

from __future__ import annotations

import logging
import os

from ..core import Connector, Listener, SessionState, TransportHandle, TransportKind
from ..errors import (HandshakeFailed, IntegrityViolation, NetweaveError,
                      ProtocolError, SessionClosed)
from ..framing import (MSG_SECURE_CHALLENGE, MSG_SECURE_CHALLENGE_FINISH,
                       MSG_SECURE_CHALLENGE_REPLY, MSG_SECURE_HELLO, MSG_SECURE_RECORD, Frame,
                       decode_all, encode)
from ..tcp import FrameChannel, TcpStream, close_endpoint, tcp_accept, tcp_connect, tcp_listen
from .credentials import load_credential
from .crypto import SessionKey
from .kdc import kdc_fetch_grant, kdc_request_key

log = logging.getLogger(__name__)

_MASK = (1 << 128) - 1


def _mix(value: int, nonce: bytes) -> bytes:
    return (value ^ int.from_bytes(nonce, "big")).to_bytes(16, "big")


def _unmix(data: bytes, nonce: bytes) -> int:
    return int.from_bytes(data, "big") ^ int.from_bytes(nonce, "big")


class SecureChannel:
    """Byte driver: seals each outgoing frame into a record, opens incoming ones."""

    def __init__(self, stream: TcpStream, key: SessionKey, chan: FrameChannel | None = None):
        self.stream = stream
        self.key = key
        self.chan = chan or FrameChannel(stream)
        self.transcript: list[tuple[str, str, int]] = []

    def send(self, data: bytes) -> int:
        return self.stream.send(encode(Frame(MSG_SECURE_RECORD, self.key.seal(data))))

    def recv(self) -> bytes:
        try:
            outer = self.chan.recv_frame()
        except SessionClosed:
            return b""
        if outer.mtype is not MSG_SECURE_RECORD:
            raise ProtocolError(f"unexpected {outer.mtype.name} inside a secure session")
        return self.key.open(outer.payload)

    def send_inner(self, frame: Frame) -> None:
        self.send(encode(frame))

    def recv_inner(self, timeout: float) -> Frame:
        outer = self.chan.recv_frame(timeout)
        if outer.mtype is not MSG_SECURE_RECORD:
            raise ProtocolError(f"unexpected {outer.mtype.name} during handshake")
        frames = decode_all(self.key.open(outer.payload))
        if len(frames) != 1:
            raise ProtocolError("a record must carry exactly one frame")
        return frames[0]

    def shutdown(self) -> None:
        self.key.zeroize()
        self.stream.shutdown()


def _handle(driver: SecureChannel, local: str, peer: str, listening: bool) -> TransportHandle:
    return TransportHandle(TransportKind.SECURE, driver, local_id=local, peer_id=peer,
                           listening=listening)


class SecureListener(Listener):
    kind = TransportKind.SECURE

    def __init__(self, config, listener_id, host: str | None = None, port: int | None = None):
        super().__init__(config, listener_id)
        self.credential = load_credential(config.credential_path)
        if self.credential.node_id != self.listener_id:
            raise HandshakeFailed(f"credential belongs to {self.credential.node_id}, not {listener_id}")
        self.host = host or config.coordinator_host
        self.endpoint = tcp_listen(self.host, config.coordinator_port if port is None else port)
        self.port = self.endpoint.getsockname()[1]
        self.state = SessionState.LISTEN

    def wait_for_connection(self, timeout=None) -> TransportHandle:
        """Accept one peer. A peer whose key the KDC cannot find raises KeyNotFound;
        the listener stays usable for the next peer."""
        if self.closed:
            raise SessionClosed("listener closed")
        stream = tcp_accept(self.endpoint, timeout)
        if self.closed:
            stream.shutdown()
            raise SessionClosed("listener closed")
        try:
            return self._handshake(stream)
        except BaseException:
            stream.shutdown()
            raise

    def _handshake(self, stream: TcpStream) -> TransportHandle:
        cfg, t = self.config, self.config.connect_timeout
        chan = FrameChannel(stream)
        try:
            hello = chan.recv_frame(t)
        except NetweaveError as exc:
            raise HandshakeFailed(f"no hello: {exc}") from exc
        if hello.mtype is not MSG_SECURE_HELLO:
            raise HandshakeFailed(f"expected SECURE_HELLO, got {hello.mtype.name}")
        grant = kdc_fetch_grant(cfg.kdc_host, cfg.kdc_port, self.credential, hello.payload, t)
        if grant.target != self.listener_id:
            raise HandshakeFailed("key was issued for another listener")
        driver = SecureChannel(stream, grant.key, chan)
        handle = _handle(driver, self.listener_id, grant.requester, listening=True)
        handle.transition(SessionState.JOIN_RECEIVED)
        nonce = bytes(grant.key.session_nonce)
        try:
            ch = driver.recv_inner(t)
            if ch.mtype is not MSG_SECURE_CHALLENGE:
                raise HandshakeFailed(f"expected challenge, got {ch.mtype.name}")
            c1 = _unmix(ch.payload, nonce)
            c2 = int.from_bytes(os.urandom(16), "big")
            driver.send_inner(Frame(MSG_SECURE_CHALLENGE_REPLY,
                                    _mix((c1 + 1) & _MASK, nonce) + _mix(c2, nonce)))
            fin = driver.recv_inner(t)
            if fin.mtype is not MSG_SECURE_CHALLENGE_FINISH or _unmix(fin.payload, nonce) != (c2 + 1) & _MASK:
                raise HandshakeFailed("peer failed key confirmation")
        except (IntegrityViolation, ProtocolError, SessionClosed) as exc:
            handle._teardown(notify=False)
            raise HandshakeFailed(f"key confirmation failed: {exc}") from exc
        except BaseException:
            handle._teardown(notify=False)
            raise
        driver.transcript = [("recv", "challenge", c1), ("send", "reply", c2),
                             ("recv", "finish", (c2 + 1) & _MASK)]
        handle.transition(SessionState.ESTABLISHED)
        return handle

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self.state = SessionState.CLOSED
        close_endpoint(self.endpoint)


class SecureConnector(Connector):
    kind = TransportKind.SECURE

    def __init__(self, config, connector_id, host: str | None = None, port: int | None = None):
        super().__init__(config, connector_id)
        self.credential = load_credential(config.credential_path)
        if self.credential.node_id != self.connector_id:
            raise HandshakeFailed(f"credential belongs to {self.credential.node_id}, not {connector_id}")
        self.host = host or config.coordinator_host
        self.port = config.coordinator_port if port is None else port

    def connect(self, target, timeout=None) -> TransportHandle:
        if self.closed:
            raise SessionClosed("connector closed")
        cfg = self.config
        t = cfg.connect_timeout if timeout is None else timeout
        key = kdc_request_key(cfg.kdc_host, cfg.kdc_port, self.credential, target, t)
        try:
            stream = tcp_connect(self.host, self.port, t)
        except BaseException:
            key.zeroize()
            raise
        driver = SecureChannel(stream, key)
        handle = _handle(driver, self.connector_id, target, listening=False)
        nonce = bytes(key.session_nonce)
        try:
            stream.send(encode(Frame(MSG_SECURE_HELLO, bytes(key.key_id))))
            handle.transition(SessionState.JOIN_SENT)
            c1 = int.from_bytes(os.urandom(16), "big")
            driver.send_inner(Frame(MSG_SECURE_CHALLENGE, _mix(c1, nonce)))
            reply = driver.recv_inner(t)
            if reply.mtype is not MSG_SECURE_CHALLENGE_REPLY:
                raise HandshakeFailed(f"expected challenge reply, got {reply.mtype.name}")
            if _unmix(reply.payload[:16], nonce) != (c1 + 1) & _MASK:
                raise HandshakeFailed("listener failed key confirmation")
            c2 = _unmix(reply.payload[16:], nonce)
            driver.send_inner(Frame(MSG_SECURE_CHALLENGE_FINISH, _mix((c2 + 1) & _MASK, nonce)))
        except (IntegrityViolation, ProtocolError, SessionClosed) as exc:
            handle._teardown(notify=False)
            raise HandshakeFailed(f"secure handshake with {target} failed: {exc}") from exc
        except BaseException:
            handle._teardown(notify=False)
            raise
        driver.transcript = [("send", "challenge", c1), ("recv", "reply", c2),
                             ("send", "finish", (c2 + 1) & _MASK)]
        handle.transition(SessionState.ESTABLISHED)
        return handle
