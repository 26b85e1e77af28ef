"""Point-to-point transport over stream sockets."""

from __future__ import annotations

import logging
import socket
import threading
import time
from collections import deque

from .config import check_id
from .core import Connector, Listener, SessionState, TransportHandle, TransportKind
from .errors import (AddressInUse, HandshakeFailed, ProtocolError, Refused, SessionClosed,
                     Timeout)
from .framing import MSG_ACCEPT, MSG_JOIN, Frame, ReadState, encode, frame_text, text_frame

log = logging.getLogger(__name__)

RECV_SIZE = 65536


class TcpStream:
    """Byte-moving driver around a connected socket.

    ``bytes_sent``/``bytes_received`` count application-layer bytes (above
    the socket). ``taps`` receive ``(direction, data)`` for every transfer.
    """

    def __init__(self, sock: socket.socket):
        self.sock = sock
        try:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError:
            pass
        self.bytes_sent = 0
        self.bytes_received = 0
        self.taps: list = []
        self._shut = False

    def send(self, data: bytes) -> int:
        self.sock.sendall(data)
        self.bytes_sent += len(data)
        for tap in self.taps:
            tap("out", data)
        return len(data)

    def recv(self, max_bytes: int = RECV_SIZE) -> bytes:
        data = self.sock.recv(max_bytes)
        self.bytes_received += len(data)
        if data:
            for tap in self.taps:
                tap("in", data)
        return data

    def settimeout(self, timeout: float | None) -> None:
        self.sock.settimeout(timeout)

    def shutdown(self) -> None:
        if self._shut:
            return
        self._shut = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()

    @property
    def peername(self):
        try:
            return self.sock.getpeername()
        except OSError:
            return None


class FrameChannel:
    """Reads whole frames from a stream; used for handshakes and service loops.

    Frames that arrive behind the one asked for are kept, and can be handed
    to a :class:`TransportHandle` via :meth:`adopt_into`.
    """

    def __init__(self, stream: TcpStream):
        self.stream = stream
        self.reader = ReadState()
        self.ready: deque[Frame] = deque()

    def send_frame(self, frame: Frame) -> int:
        return self.stream.send(encode(frame))

    def recv_frame(self, timeout: float | None = None) -> Frame:
        deadline = None if timeout is None else time.monotonic() + timeout
        while not self.ready:
            if deadline is not None:
                left = deadline - time.monotonic()
                if left <= 0:
                    raise Timeout("timed out waiting for a frame")
                self.stream.settimeout(left)
            try:
                chunk = self.stream.recv()
            except socket.timeout as exc:
                raise Timeout("timed out waiting for a frame") from exc
            finally:
                if deadline is not None:
                    self.stream.settimeout(None)
            if not chunk:
                raise SessionClosed("peer closed the connection")
            self.ready.extend(self.reader.feed(chunk))
        return self.ready.popleft()

    def adopt_into(self, handle: TransportHandle) -> None:
        handle._reader = self.reader
        handle._ready = self.ready


def tcp_listen(host: str, port: int, backlog: int = 128) -> socket.socket:
    family = socket.AF_INET6 if ":" in host else socket.AF_INET
    sock = socket.socket(family, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as exc:
        sock.close()
        raise AddressInUse(f"cannot bind {host}:{port}: {exc}") from exc
    sock.listen(backlog)
    return sock


def tcp_accept(endpoint: socket.socket, timeout: float | None = None) -> TcpStream:
    endpoint.settimeout(timeout)
    try:
        conn, _ = endpoint.accept()
    except socket.timeout as exc:
        raise Timeout("no connection within timeout") from exc
    except OSError as exc:
        raise SessionClosed(f"listener closed: {exc}") from exc
    conn.settimeout(None)
    return TcpStream(conn)


def tcp_connect(host: str, port: int, timeout: float | None = 10.0) -> TcpStream:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except ConnectionRefusedError as exc:
        raise Refused(f"{host}:{port} refused the connection") from exc
    except socket.timeout as exc:
        raise Timeout(f"connecting to {host}:{port} timed out") from exc
    sock.settimeout(None)
    return TcpStream(sock)


def tcp_read_chunk(handle: TransportHandle, max_bytes: int = RECV_SIZE) -> bytes:
    data = handle.transport_state.recv(max_bytes)
    if not data:
        raise SessionClosed("peer closed the connection")
    return data


def tcp_write_all(handle: TransportHandle, data: bytes) -> None:
    handle.transport_state.send(data)


def close_endpoint(sock: socket.socket) -> None:
    # shutdown() is what wakes a thread blocked in accept() on Linux
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    sock.close()


class TcpListener(Listener):
    """Listener bound to ``coordinator_host:coordinator_port``.

    Each accepted peer first sends ``MSG_JOIN("<federation>_<connector>")``;
    the federation id is checked and ``MSG_ACCEPT(<listener>)`` returned.
    """

    kind = TransportKind.TCP

    def __init__(self, config, listener_id, host: str | None = None, port: int | None = None):
        super().__init__(config, listener_id)
        self.host = host or config.coordinator_host
        self.endpoint = tcp_listen(self.host, config.coordinator_port if port is None else port)
        self.port = self.endpoint.getsockname()[1]
        self.state = SessionState.LISTEN

    def wait_for_connection(self, timeout=None) -> TransportHandle:
        if self.closed:
            raise SessionClosed("listener closed")
        stream = tcp_accept(self.endpoint, timeout)
        if self.closed:
            stream.shutdown()
            raise SessionClosed("listener closed")
        chan = FrameChannel(stream)
        try:
            join = chan.recv_frame(self.config.connect_timeout)
            if join.mtype is not MSG_JOIN:
                raise HandshakeFailed(f"expected MSG_JOIN, got {join.mtype.name}")
            fed, _, peer = frame_text(join).partition("_")
            if fed != self.config.federation_id:
                raise HandshakeFailed(f"peer belongs to federation {fed!r}")
            check_id(peer)
            handle = TransportHandle(TransportKind.TCP, stream, local_id=self.listener_id,
                                     peer_id=peer, listening=True)
            handle.transition(SessionState.JOIN_RECEIVED)
            chan.send_frame(text_frame(MSG_ACCEPT, self.listener_id))
        except (HandshakeFailed, ProtocolError, SessionClosed, Timeout, ValueError, OSError) as exc:
            stream.shutdown()
            if isinstance(exc, HandshakeFailed):
                raise
            raise HandshakeFailed(f"malformed join: {exc}") from exc
        chan.adopt_into(handle)
        handle.transition(SessionState.ESTABLISHED)
        return handle

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self.state = SessionState.CLOSED
        close_endpoint(self.endpoint)


class TcpConnector(Connector):
    kind = TransportKind.TCP

    def __init__(self, config, connector_id, host: str | None = None, port: int | None = None):
        super().__init__(config, connector_id)
        self.host = host or config.coordinator_host
        self.port = config.coordinator_port if port is None else port
        self._lock = threading.Lock()

    def connect(self, target, timeout=None) -> TransportHandle:
        if self.closed:
            raise SessionClosed("connector closed")
        timeout = self.config.connect_timeout if timeout is None else timeout
        stream = tcp_connect(self.host, self.port, timeout)
        chan = FrameChannel(stream)
        handle = TransportHandle(TransportKind.TCP, stream, local_id=self.connector_id, peer_id=target)
        try:
            chan.send_frame(text_frame(MSG_JOIN, f"{self.config.federation_id}_{self.connector_id}"))
            handle.transition(SessionState.JOIN_SENT)
            reply = chan.recv_frame(timeout)
        except SessionClosed as exc:
            stream.shutdown()
            raise HandshakeFailed("listener rejected the join") from exc
        except Exception:
            stream.shutdown()
            raise
        if reply.mtype is not MSG_ACCEPT or frame_text(reply) != target:
            stream.shutdown()
            raise HandshakeFailed(f"unexpected reply {reply!r} from {target}")
        chan.adopt_into(handle)
        handle.transition(SessionState.ESTABLISHED)
        return handle
