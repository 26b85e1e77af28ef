"""The seven-call Listener/Connector API and the transport handle.

Lifecycle of every session::

    establishment   create_listener / wait_for_connection
                    create_connector / connect
    transfer        read / write
    termination     close

A :class:`TransportHandle` wraps a transport-specific *driver*: an object
with ``send(data) -> int`` (returns bytes pushed onto the wire),
``recv() -> bytes`` (``b""`` on end of stream) and ``shutdown()``. Frame
boundaries are always recovered here with :class:`~netweave.framing.ReadState`,
so drivers only move bytes.
"""

from __future__ import annotations

import abc
import enum
import logging
import threading
from collections import deque

from .config import FederationConfig, check_id
from .errors import ProtocolError, SessionClosed, TruncatedMessage, IntegrityViolation
from .framing import MSG_CLOSE, Frame, ReadState, encode

log = logging.getLogger(__name__)


class TransportKind(enum.Enum):
    TCP = "tcp"
    PUBSUB = "pubsub"
    SECURE = "secure"


class SessionState(enum.Enum):
    CLOSED = "CLOSED"
    LISTEN = "LISTEN"
    JOIN_SENT = "JOIN-SENT"
    JOIN_RECEIVED = "JOIN-RECEIVED"
    ESTABLISHED = "ESTABLISHED"


S = SessionState
ALLOWED_TRANSITIONS = {
    S.CLOSED: {S.LISTEN, S.JOIN_SENT},
    S.LISTEN: {S.JOIN_RECEIVED, S.CLOSED},
    S.JOIN_SENT: {S.ESTABLISHED, S.CLOSED},
    S.JOIN_RECEIVED: {S.ESTABLISHED, S.CLOSED},
    S.ESTABLISHED: {S.CLOSED},
}


def valid_state_log(log_: list[SessionState]) -> bool:
    """True if *log_* walks only allowed edges, starting from CLOSED."""
    if not log_ or log_[0] is not S.CLOSED:
        return False
    return all(b in ALLOWED_TRANSITIONS[a] for a, b in zip(log_, log_[1:]))


class TransportHandle:
    """One session, whatever transport carries it."""

    def __init__(self, kind: TransportKind, driver, *, local_id: str | None = None,
                 peer_id: str | None = None, listening: bool = False):
        self.transport_kind = kind
        self.transport_state = driver
        self.local_id = local_id
        self.peer_id = peer_id
        self.state_log = [S.CLOSED]
        if listening:
            self.state_log.append(S.LISTEN)
        self.last_write_bytes = 0
        self._reader = ReadState()
        self._ready: deque[Frame] = deque()
        self._write_lock = threading.Lock()
        self._close_lock = threading.Lock()
        self._closed = False
        self.on_close = None

    @property
    def session_state(self) -> SessionState:
        return self.state_log[-1]

    @property
    def remaining_bytes(self) -> int:
        return self._reader.remaining_bytes

    @property
    def closed(self) -> bool:
        return self._closed

    def transition(self, new: SessionState) -> None:
        cur = self.session_state
        if new not in ALLOWED_TRANSITIONS[cur]:
            raise ProtocolError(f"illegal session transition {cur.value} -> {new.value}")
        self.state_log.append(new)

    def _require_established(self):
        if self._closed or self.session_state is not S.ESTABLISHED:
            raise SessionClosed(f"session is {self.session_state.value}")

    def write(self, frame: Frame) -> None:
        self._require_established()
        data = encode(frame)
        with self._write_lock:
            try:
                self.last_write_bytes = self.transport_state.send(data)
            except OSError as exc:
                self._teardown(notify=False)
                raise SessionClosed(f"transport failure: {exc}") from exc

    def read(self) -> Frame:
        self._require_established()
        while not self._ready:
            try:
                chunk = self.transport_state.recv()
            except (IntegrityViolation, ProtocolError):
                self._teardown(notify=False)
                raise
            except OSError as exc:
                if self._closed:
                    raise SessionClosed("session closed") from exc
                self._teardown(notify=False)
                raise SessionClosed(f"transport failure: {exc}") from exc
            if not chunk:
                if self._closed:
                    raise SessionClosed("session closed")
                partial = not self._reader.idle
                self._teardown(notify=False)
                if partial:
                    raise TruncatedMessage("peer closed in the middle of a frame")
                raise SessionClosed("peer closed the connection")
            try:
                self._ready.extend(self._reader.feed(chunk))
            except ProtocolError:
                self._teardown(notify=False)
                raise
        frame = self._ready.popleft()
        if frame.mtype is MSG_CLOSE:
            self._teardown(notify=False)
            raise SessionClosed("peer closed the session")
        return frame

    def close(self) -> None:
        self._teardown(notify=True)

    def _teardown(self, notify: bool) -> None:
        with self._close_lock:
            if self._closed:
                return
            self._closed = True
        was_established = self.session_state is S.ESTABLISHED
        if notify and was_established:
            try:
                with self._write_lock:
                    self.transport_state.send(encode(Frame(MSG_CLOSE)))
            except Exception as exc:  # best effort
                log.debug("close notify failed: %s", exc)
        try:
            self.transport_state.shutdown()
        except Exception as exc:
            log.debug("driver shutdown failed: %s", exc)
        self.state_log.append(S.CLOSED)
        if self.on_close is not None:
            self.on_close(self)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __repr__(self):
        return (f"<TransportHandle {self.transport_kind.value} {self.local_id}->{self.peer_id} "
                f"{self.session_state.value}>")


class Listener(abc.ABC):
    kind: TransportKind

    def __init__(self, config: FederationConfig, listener_id: str):
        self.config = config
        self.listener_id = check_id(listener_id)
        self.closed = False

    @abc.abstractmethod
    def wait_for_connection(self, timeout: float | None = None) -> TransportHandle:
        ...

    @abc.abstractmethod
    def close(self) -> None:
        ...

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class Connector(abc.ABC):
    kind: TransportKind

    def __init__(self, config: FederationConfig, connector_id: str):
        self.config = config
        self.connector_id = check_id(connector_id)
        self.closed = False

    @abc.abstractmethod
    def connect(self, target: str, timeout: float | None = None) -> TransportHandle:
        ...

    def close(self) -> None:
        self.closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _impl(comm_type: str):
    if comm_type == "tcp":
        from . import tcp
        return tcp.TcpListener, tcp.TcpConnector
    if comm_type == "pubsub":
        from . import pubsub
        return pubsub.PubSubListener, pubsub.PubSubConnector
    from .security import transport
    return transport.SecureListener, transport.SecureConnector


def create_listener(config: FederationConfig, listener_id: str) -> Listener:
    check_id(listener_id)
    return _impl(config.comm_type)[0](config, listener_id)


def wait_for_connection(listener: Listener, timeout: float | None = None) -> TransportHandle:
    return listener.wait_for_connection(timeout)


def create_connector(config: FederationConfig, connector_id: str) -> Connector:
    check_id(connector_id)
    return _impl(config.comm_type)[1](config, connector_id)


def connect(connector: Connector, target: str, timeout: float | None = None) -> TransportHandle:
    return connector.connect(check_id(target), timeout)


def write(handle: TransportHandle, frame: Frame) -> None:
    handle.write(frame)


def read(handle: TransportHandle) -> Frame:
    return handle.read()


def close(handle) -> None:
    handle.close()
