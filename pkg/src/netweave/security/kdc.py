"""Key distribution center: issues session keys, never relays session traffic.

One request per connection::

    node -> KDC   KEY_REQUEST  nonce_r | id_len | node_id | target_id
              or  FETCH_REQUEST nonce_r | id_len | node_id | key_id
    KDC  -> node  CHALLENGE    nonce_k | HMAC(secret, nonce_r | nonce_k | subject)
    node -> KDC   PROOF        HMAC(secret, nonce_k)
    KDC  -> node  KEY_RESPONSE record sealed under keys derived from secret and both nonces
             or   ERROR        code | message

``subject`` is the target id (text) or the 8-byte key id. Grants are sealed
with the same record format as session traffic; the wrapping keys are
``HMAC(secret, "netweave-kdc-wrap" | nonce_r | nonce_k)`` split in two.
"""

from __future__ import annotations

import hmac
import logging
import os
import threading
import time
from dataclasses import dataclass

from ..config import check_id
from ..errors import (AuthFailed, KdcUnreachable, KeyNotFound, NetweaveError, ProtocolError,
                      Refused, SessionClosed, Timeout)
from ..framing import (MSG_KDC_CHALLENGE, MSG_KDC_ERROR, MSG_KDC_FETCH_REQUEST,
                       MSG_KDC_KEY_REQUEST, MSG_KDC_KEY_RESPONSE, MSG_KDC_PROOF, Frame)
from ..tcp import FrameChannel, TcpStream, close_endpoint, tcp_accept, tcp_connect, tcp_listen
from .credentials import Credential
from .crypto import KEY_ID_LEN, NONCE_LEN, SessionKey, mac, open_record, seal

log = logging.getLogger(__name__)

ERR_AUTH = 1
ERR_NOT_FOUND = 2
_ERRORS = {ERR_AUTH: AuthFailed, ERR_NOT_FOUND: KeyNotFound}
WRAP_LABEL = b"netweave-kdc-wrap"


@dataclass
class KeyGrant:
    key: SessionKey
    requester: str
    target: str

    def pack(self) -> bytes:
        r = self.requester.encode()
        return self.key.pack() + bytes((len(r),)) + r + self.target.encode()

    @classmethod
    def unpack(cls, data: bytes) -> KeyGrant:
        n = SessionKey.PACKED_LEN
        if len(data) < n + 1:
            raise ProtocolError("short key grant")
        rlen = data[n]
        return cls(SessionKey.unpack(data[:n]), data[n + 1:n + 1 + rlen].decode(),
                   data[n + 1 + rlen:].decode())


def _wrap_keys(secret: bytes, nonce_r: bytes, nonce_k: bytes) -> tuple[bytes, bytes]:
    k = mac(secret, WRAP_LABEL, nonce_r, nonce_k)
    return k[:16], k[16:]


def _pack_request(nonce_r: bytes, node_id: str, subject: bytes) -> bytes:
    nid = node_id.encode()
    return nonce_r + bytes((len(nid),)) + nid + subject


def _unpack_request(payload: bytes) -> tuple[bytes, str, bytes]:
    if len(payload) < NONCE_LEN + 2:
        raise ProtocolError("short KDC request")
    n = payload[NONCE_LEN]
    nid = payload[NONCE_LEN + 1:NONCE_LEN + 1 + n].decode()
    return payload[:NONCE_LEN], nid, payload[NONCE_LEN + 1 + n:]


def _error_frame(code: int, msg: str) -> Frame:
    return Frame(MSG_KDC_ERROR, bytes((code,)) + msg.encode())


class KdcServer:
    """Answers key requests from registered nodes.

    ``traffic_log`` records ``(direction, type_id)`` for every frame the KDC
    sees or sends, so tests can check that only key-protocol frames pass.
    """

    def __init__(self, credentials: list[Credential], host: str = "127.0.0.1", port: int = 0):
        self.credentials = {c.node_id: c for c in credentials}
        self.host = host
        self.endpoint = tcp_listen(host, port)
        self.port = self.endpoint.getsockname()[1]
        self.issued: dict[bytes, KeyGrant] = {}
        self.traffic_log: list[tuple[str, int]] = []
        self._lock = threading.Lock()
        self._stopped = threading.Event()

    def serve_forever(self) -> None:
        while not self._stopped.is_set():
            try:
                stream = tcp_accept(self.endpoint)
            except NetweaveError:
                break
            threading.Thread(target=self._serve_one, args=(stream,), daemon=True).start()

    def start(self) -> KdcServer:
        threading.Thread(target=self.serve_forever, daemon=True, name="kdc").start()
        return self

    def stop(self) -> None:
        self._stopped.set()
        close_endpoint(self.endpoint)

    def _log(self, direction: str, frame: Frame) -> None:
        with self._lock:
            self.traffic_log.append((direction, frame.mtype.type_id))

    def _serve_one(self, stream: TcpStream) -> None:
        chan = FrameChannel(stream)

        def send(frame):
            self._log("out", frame)
            chan.send_frame(frame)

        def recv():
            frame = chan.recv_frame(10.0)
            self._log("in", frame)
            return frame

        try:
            req = recv()
            if req.mtype not in (MSG_KDC_KEY_REQUEST, MSG_KDC_FETCH_REQUEST):
                raise ProtocolError(f"KDC does not accept {req.mtype.name}")
            nonce_r, node_id, subject = _unpack_request(req.payload)
            cred = self.credentials.get(node_id)
            if cred is None:
                send(_error_frame(ERR_AUTH, f"unknown node {node_id!r}"))
                return
            nonce_k = os.urandom(NONCE_LEN)
            send(Frame(MSG_KDC_CHALLENGE, nonce_k + mac(cred.shared_secret, nonce_r, nonce_k, subject)))
            proof = recv()
            if proof.mtype is not MSG_KDC_PROOF or not _ct_eq(proof.payload, mac(cred.shared_secret, nonce_k)):
                send(_error_frame(ERR_AUTH, "bad proof"))
                return
            if req.mtype is MSG_KDC_KEY_REQUEST:
                grant = self._issue(node_id, subject.decode())
                if grant is None:
                    send(_error_frame(ERR_AUTH, "unknown target"))
                    return
            else:
                with self._lock:
                    grant = self.issued.get(bytes(subject))
                if grant is None:
                    send(_error_frame(ERR_NOT_FOUND, f"no key {subject.hex()}"))
                    return
                if grant.target != node_id:
                    send(_error_frame(ERR_AUTH, "key was not issued for this node"))
                    return
            ck, mk = _wrap_keys(cred.shared_secret, nonce_r, nonce_k)
            send(Frame(MSG_KDC_KEY_RESPONSE, seal(ck, mk, grant.pack())))
        except (NetweaveError, OSError, UnicodeDecodeError) as exc:
            log.debug("kdc request failed: %s", exc)
        finally:
            stream.shutdown()

    def _issue(self, requester: str, target: str) -> KeyGrant | None:
        try:
            check_id(target)
        except ValueError:
            return None
        if target not in self.credentials:
            return None
        with self._lock:
            key = SessionKey.generate()
            while key.key_id in self.issued:
                key = SessionKey.generate()
            grant = KeyGrant(key, requester, target)
            self.issued[bytes(key.key_id)] = grant
        return grant


def _ct_eq(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)


def _exchange(host: str, port: int, cred: Credential, req_type, subject: bytes,
              timeout: float) -> KeyGrant:
    try:
        stream = tcp_connect(host, port, timeout)
    except (Refused, Timeout, OSError) as exc:
        raise KdcUnreachable(f"KDC at {host}:{port} unreachable: {exc}") from exc
    chan = FrameChannel(stream)
    try:
        nonce_r = os.urandom(NONCE_LEN)
        chan.send_frame(Frame(req_type, _pack_request(nonce_r, cred.node_id, subject)))
        reply = _expect(chan, MSG_KDC_CHALLENGE, timeout)
        nonce_k, their_mac = reply.payload[:NONCE_LEN], reply.payload[NONCE_LEN:]
        if not _ct_eq(their_mac, mac(cred.shared_secret, nonce_r, nonce_k, subject)):
            raise AuthFailed("KDC failed to prove knowledge of our secret")
        chan.send_frame(Frame(MSG_KDC_PROOF, mac(cred.shared_secret, nonce_k)))
        reply = _expect(chan, MSG_KDC_KEY_RESPONSE, timeout)
        ck, mk = _wrap_keys(cred.shared_secret, nonce_r, nonce_k)
        return KeyGrant.unpack(open_record(ck, mk, reply.payload))
    except (Timeout, SessionClosed, OSError) as exc:
        raise KdcUnreachable(f"KDC exchange failed: {exc}") from exc
    finally:
        stream.shutdown()


def _expect(chan: FrameChannel, mtype, timeout: float) -> Frame:
    frame = chan.recv_frame(timeout)
    if frame.mtype is MSG_KDC_ERROR:
        code = frame.payload[0] if frame.payload else ERR_AUTH
        raise _ERRORS.get(code, AuthFailed)(frame.payload[1:].decode(errors="replace"))
    if frame.mtype is not mtype:
        raise ProtocolError(f"expected {mtype.name}, got {frame.mtype.name}")
    return frame


def kdc_request_key(host: str, port: int, requester: Credential, target: str,
                    timeout: float = 10.0) -> SessionKey:
    """Ask the KDC for a fresh session key shared with *target*."""
    check_id(target)
    return _exchange(host, port, requester, MSG_KDC_KEY_REQUEST, target.encode(), timeout).key


def kdc_fetch_grant(host: str, port: int, requester: Credential, key_id: bytes,
                    timeout: float = 10.0, retries: int = 2, spacing: float = 0.2) -> KeyGrant:
    """Fetch an issued key by id, retrying KeyNotFound in case issuance is still in flight."""
    if len(key_id) != KEY_ID_LEN:
        raise ProtocolError("key id must be 8 bytes")
    for attempt in range(retries + 1):
        try:
            return _exchange(host, port, requester, MSG_KDC_FETCH_REQUEST, bytes(key_id), timeout)
        except KeyNotFound:
            if attempt == retries:
                raise
            time.sleep(spacing)
    raise AssertionError("unreachable")


def kdc_fetch_by_id(host: str, port: int, requester: Credential, key_id: bytes,
                    timeout: float = 10.0) -> SessionKey:
    return kdc_fetch_grant(host, port, requester, key_id, timeout).key


def kdc_serve(port: int, registry: list[Credential], host: str = "127.0.0.1") -> None:
    server = KdcServer(registry, host, port)
    log.info("KDC listening on %s:%d with %d credentials", host, server.port, len(registry))
    try:
        server.serve_forever()
    finally:
        server.stop()
