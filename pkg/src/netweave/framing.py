"""Message types, wire encoding, and incremental frame reassembly.

Every frame starts with a one-byte type id. What follows depends on the
type's framing class:

* FIXED       the payload length is a property of the type alone
* STRUCTURED  a 4-byte count ``n`` then ``n`` records of ``struct_size`` bytes
* VARIABLE    an optional fixed sub-header (``prefix_len`` bytes), a 4-byte
              length ``n``, then ``n`` bytes

All integers are big-endian. Byte layouts per type are listed in FORMATS.md.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from .errors import ProtocolError

MAX_VARIABLE_LEN = 16 * 1024 * 1024
_U32 = struct.Struct(">I")


class FramingClass(enum.Enum):
    FIXED = "fixed"
    STRUCTURED = "structured"
    VARIABLE = "variable"


@dataclass(frozen=True)
class MessageType:
    type_id: int
    name: str
    framing_class: FramingClass
    fixed_payload_len: int = 0
    struct_size: int = 0
    prefix_len: int = 0

    def __post_init__(self):
        if not 0 <= self.type_id <= 255:
            raise ValueError("type_id must fit in one byte")
        if self.framing_class is FramingClass.STRUCTURED and self.struct_size <= 0:
            raise ValueError("structured types need struct_size > 0")
        if self.fixed_payload_len < 0 or self.prefix_len < 0:
            raise ValueError("lengths must be non-negative")

    def header_len(self) -> int:
        """Bytes on the wire before the counted body, including the type byte."""
        if self.framing_class is FramingClass.FIXED:
            return 1
        if self.framing_class is FramingClass.STRUCTURED:
            return 5
        return 1 + self.prefix_len + 4

    def __repr__(self):
        return f"<{self.name}:{self.type_id}>"


REGISTRY: dict[int, MessageType] = {}


def register(mtype: MessageType) -> MessageType:
    if mtype.type_id in REGISTRY and REGISTRY[mtype.type_id] != mtype:
        raise ValueError(f"type id {mtype.type_id} already registered")
    REGISTRY[mtype.type_id] = mtype
    return mtype


def _fixed(tid, name, n):
    return register(MessageType(tid, name, FramingClass.FIXED, fixed_payload_len=n))


def _variable(tid, name, prefix=0):
    return register(MessageType(tid, name, FramingClass.VARIABLE, prefix_len=prefix))


# application messages
MSG_TIMESTAMP = _fixed(1, "MSG_TIMESTAMP", 8)
MSG_ACK = _fixed(2, "MSG_ACK", 0)
MSG_NEIGHBOR_TABLE = register(
    MessageType(3, "MSG_NEIGHBOR_TABLE", FramingClass.STRUCTURED, struct_size=12))
# tag (8) + microstep (4) + destination (4) precede the length field
MSG_TAGGED_MESSAGE = _variable(4, "MSG_TAGGED_MESSAGE", prefix=16)

# session handshake
MSG_JOIN = _variable(10, "MSG_JOIN")
MSG_ACCEPT = _variable(11, "MSG_ACCEPT")
MSG_ACCEPT_ACK = _variable(12, "MSG_ACCEPT_ACK")

# broker control
MSG_SUB = _variable(20, "MSG_SUB")
MSG_UNSUB = _variable(21, "MSG_UNSUB")
MSG_PUB = _variable(22, "MSG_PUB")
MSG_PUBACK = _fixed(23, "MSG_PUBACK", 4)

# key distribution
MSG_KDC_KEY_REQUEST = _variable(30, "MSG_KDC_KEY_REQUEST")
MSG_KDC_CHALLENGE = _fixed(31, "MSG_KDC_CHALLENGE", 48)
MSG_KDC_PROOF = _fixed(32, "MSG_KDC_PROOF", 32)
MSG_KDC_KEY_RESPONSE = _variable(33, "MSG_KDC_KEY_RESPONSE")
MSG_KDC_ERROR = _variable(34, "MSG_KDC_ERROR")
MSG_KDC_FETCH_REQUEST = _variable(35, "MSG_KDC_FETCH_REQUEST")
KDC_TYPE_IDS = frozenset(range(30, 36))

# secure sessions
MSG_SECURE_HELLO = _fixed(40, "MSG_SECURE_HELLO", 8)
MSG_SECURE_RECORD = _variable(41, "MSG_SECURE_RECORD")
MSG_SECURE_CHALLENGE = _fixed(42, "MSG_SECURE_CHALLENGE", 16)
MSG_SECURE_CHALLENGE_REPLY = _fixed(43, "MSG_SECURE_CHALLENGE_REPLY", 32)
MSG_SECURE_CHALLENGE_FINISH = _fixed(44, "MSG_SECURE_CHALLENGE_FINISH", 16)

MSG_CLOSE = _fixed(255, "MSG_CLOSE", 0)

APPLICATION_TYPES = (MSG_TIMESTAMP, MSG_ACK, MSG_NEIGHBOR_TABLE, MSG_TAGGED_MESSAGE)


@dataclass(frozen=True)
class Frame:
    """One application message.

    ``payload`` excludes the type byte and any count/length field. For
    VARIABLE types with a sub-header, the sub-header bytes lead the payload.
    """

    mtype: MessageType
    payload: bytes = b""

    def __post_init__(self):
        if not isinstance(self.payload, bytes):
            object.__setattr__(self, "payload", bytes(self.payload))
        mt, n = self.mtype, len(self.payload)
        if mt.framing_class is FramingClass.FIXED:
            if n != mt.fixed_payload_len:
                raise ProtocolError(
                    f"{mt.name} payload must be {mt.fixed_payload_len} bytes, got {n}")
        elif mt.framing_class is FramingClass.STRUCTURED:
            if n % mt.struct_size:
                raise ProtocolError(f"{mt.name} payload not a multiple of {mt.struct_size}")
            if n > MAX_VARIABLE_LEN:
                raise ProtocolError(f"{mt.name} payload exceeds {MAX_VARIABLE_LEN} bytes")
        else:
            if n < mt.prefix_len:
                raise ProtocolError(f"{mt.name} payload shorter than its {mt.prefix_len}-byte sub-header")
            if n - mt.prefix_len > MAX_VARIABLE_LEN:
                raise ProtocolError(f"{mt.name} payload exceeds {MAX_VARIABLE_LEN} bytes")

    def __repr__(self):
        return f"Frame({self.mtype.name}, {len(self.payload)}B)"


def encode(frame: Frame) -> bytes:
    mt, payload = frame.mtype, frame.payload
    tid = bytes((mt.type_id,))
    if mt.framing_class is FramingClass.FIXED:
        return tid + payload
    if mt.framing_class is FramingClass.STRUCTURED:
        return tid + _U32.pack(len(payload) // mt.struct_size) + payload
    prefix, body = payload[:mt.prefix_len], payload[mt.prefix_len:]
    return b"".join((tid, prefix, _U32.pack(len(body)), body))


def encoded_len(frame: Frame) -> int:
    return frame.mtype.header_len() + len(frame.payload) - frame.mtype.prefix_len


def decode_structured(payload: bytes, struct_size: int) -> list[bytes]:
    """Split a count-prefixed structured body into its records."""
    if len(payload) < 4:
        raise ProtocolError("structured payload lacks its count field")
    (n,) = _U32.unpack_from(payload)
    if len(payload) != 4 + n * struct_size:
        raise ProtocolError(
            f"structured payload is {len(payload)} bytes, count {n} needs {4 + n * struct_size}")
    return [payload[4 + i * struct_size: 4 + (i + 1) * struct_size] for i in range(n)]


class ReadPhase(enum.Enum):
    INITIAL = "initial"
    ANALYZE_HEADER = "analyze_header"
    KEEP_READING = "keep_reading"
    READ_MESSAGE = "read_message"


class ReadState:
    """Reassembles frames from arbitrarily chunked bytes.

    Each ``feed`` starts from INITIAL and moves to ANALYZE_HEADER when no
    bytes were left over, or KEEP_READING when a partial frame is buffered.
    Once a header is understood the reader sits in READ_MESSAGE until
    ``bytes_to_read`` drops to zero. Unknown types and oversize lengths raise
    ProtocolError and discard everything buffered.
    """

    def __init__(self, registry: dict[int, MessageType] | None = None,
                 max_len: int = MAX_VARIABLE_LEN):
        self.registry = REGISTRY if registry is None else registry
        self.max_len = max_len
        self.state = ReadPhase.INITIAL
        self.bytes_to_read = 0
        self._buf = bytearray()
        self._pos = 0
        self._current: tuple[MessageType, int, int] | None = None

    @property
    def remaining_bytes(self) -> int:
        return len(self._buf) - self._pos

    @property
    def idle(self) -> bool:
        return self.remaining_bytes == 0 and self._current is None

    def reset(self) -> None:
        self._buf.clear()
        self._pos = 0
        self._current = None
        self.bytes_to_read = 0
        self.state = ReadPhase.INITIAL

    def feed(self, chunk: bytes) -> list[Frame]:
        self.state = ReadPhase.KEEP_READING if self.remaining_bytes > 0 else ReadPhase.ANALYZE_HEADER
        self._buf += chunk
        if self.state is ReadPhase.KEEP_READING:
            self.state = ReadPhase.READ_MESSAGE if self._current else ReadPhase.ANALYZE_HEADER
        frames = []
        try:
            while True:
                if self.state is ReadPhase.ANALYZE_HEADER:
                    if not self._analyze_header():
                        break
                if not self._read_message(frames):
                    break
        except ProtocolError:
            self.reset()
            raise
        if self._pos and (self._pos > 65536 or self._pos == len(self._buf)):
            del self._buf[:self._pos]
            self._pos = 0
        if self.idle:
            self.state = ReadPhase.INITIAL
        return frames

    def _analyze_header(self) -> bool:
        avail = self.remaining_bytes
        if avail == 0:
            return False
        tid = self._buf[self._pos]
        mt = self.registry.get(tid)
        if mt is None:
            raise ProtocolError(f"unknown message type id {tid}")
        hlen = mt.header_len()
        if avail < hlen:
            return False
        if mt.framing_class is FramingClass.FIXED:
            body = mt.fixed_payload_len
        else:
            (n,) = _U32.unpack_from(self._buf, self._pos + hlen - 4)
            if mt.framing_class is FramingClass.STRUCTURED:
                if n * mt.struct_size > self.max_len:
                    raise ProtocolError(f"{mt.name} with {n} records exceeds size cap")
                body = n * mt.struct_size
            else:
                if n > self.max_len:
                    raise ProtocolError(f"{mt.name} declares {n} bytes, cap is {self.max_len}")
                body = n
        self._current = (mt, hlen, body)
        self.state = ReadPhase.READ_MESSAGE
        return True

    def _read_message(self, out: list[Frame]) -> bool:
        mt, hlen, body = self._current
        have = self.remaining_bytes - hlen
        if have < body:
            self.bytes_to_read = body - have
            return False
        start = self._pos
        prefix = bytes(self._buf[start + 1: start + 1 + mt.prefix_len])
        data = bytes(self._buf[start + hlen: start + hlen + body])
        out.append(Frame(mt, prefix + data))
        self._pos = start + hlen + body
        self._current = None
        self.bytes_to_read = 0
        self.state = ReadPhase.ANALYZE_HEADER
        return True


def decode_all(data: bytes) -> list[Frame]:
    """Decode a buffer that must hold only whole frames."""
    rs = ReadState()
    frames = rs.feed(data)
    if not rs.idle:
        raise ProtocolError(f"{rs.remaining_bytes} trailing bytes after last whole frame")
    return frames


# --- typed helpers -------------------------------------------------------

_TAG = struct.Struct(">qII")
_TIMESTAMP = struct.Struct(">q")
_NODE_RECORD = struct.Struct(">IQ")


@dataclass(frozen=True)
class TaggedMessage:
    logical_time: int
    microstep: int
    destination: int
    data: bytes


def tagged_frame(logical_time: int, microstep: int, destination: int, data: bytes) -> Frame:
    return Frame(MSG_TAGGED_MESSAGE, _TAG.pack(logical_time, microstep, destination) + data)


def parse_tagged(frame: Frame) -> TaggedMessage:
    if frame.mtype is not MSG_TAGGED_MESSAGE:
        raise ProtocolError(f"expected MSG_TAGGED_MESSAGE, got {frame.mtype.name}")
    t, m, d = _TAG.unpack_from(frame.payload)
    return TaggedMessage(t, m, d, frame.payload[_TAG.size:])


def timestamp_frame(ns: int) -> Frame:
    return Frame(MSG_TIMESTAMP, _TIMESTAMP.pack(ns))


def parse_timestamp(frame: Frame) -> int:
    if frame.mtype is not MSG_TIMESTAMP:
        raise ProtocolError(f"expected MSG_TIMESTAMP, got {frame.mtype.name}")
    return _TIMESTAMP.unpack(frame.payload)[0]


def neighbor_table_frame(records: list[tuple[int, int]]) -> Frame:
    """Build a neighbor table from ``(node_index, address_hash)`` pairs."""
    return Frame(MSG_NEIGHBOR_TABLE, b"".join(_NODE_RECORD.pack(i, h) for i, h in records))


def parse_neighbor_table(frame: Frame) -> list[tuple[int, int]]:
    body = _U32.pack(len(frame.payload) // MSG_NEIGHBOR_TABLE.struct_size) + frame.payload
    return [_NODE_RECORD.unpack(r) for r in decode_structured(body, MSG_NEIGHBOR_TABLE.struct_size)]


def text_frame(mtype: MessageType, text: str) -> Frame:
    return Frame(mtype, text.encode())


def frame_text(frame: Frame) -> str:
    try:
        return frame.payload.decode()
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"{frame.mtype.name} carries non-text payload") from exc
