"""netweave: one Listener/Connector API over TCP, publish-subscribe and secure transports."""

from .config import FederationConfig, check_id
from .core import (Connector, Listener, SessionState, TransportHandle, TransportKind, close,
                   connect, create_connector, create_listener, read, wait_for_connection, write)
from .errors import (AuthFailed, HandshakeFailed, IntegrityViolation, InvalidId, KdcUnreachable,
                     KeyNotFound, NetweaveError, ProtocolError, SessionClosed, Timeout,
                     TruncatedMessage)
from .framing import Frame, MessageType, ReadState, encode

__version__ = "0.1.0"

__all__ = [
    "AuthFailed", "Connector", "FederationConfig", "Frame", "HandshakeFailed",
    "IntegrityViolation", "InvalidId", "KdcUnreachable", "KeyNotFound", "Listener",
    "MessageType", "NetweaveError", "ProtocolError", "ReadState", "SessionClosed",
    "SessionState", "Timeout", "TransportHandle", "TransportKind", "TruncatedMessage",
    "check_id", "close", "connect", "create_connector", "create_listener", "encode", "read",
    "wait_for_connection", "write",
]
