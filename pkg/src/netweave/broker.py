"""Embedded topic broker with exactly-once, in-order delivery per topic.

Clients speak the broker-control frames over a plain stream connection:

    MSG_SUB / MSG_UNSUB   packet_id:u32 | topic
    MSG_PUB               packet_id:u32 | topic_len:u16 | topic | data
    MSG_PUBACK            packet_id:u32

SUB, UNSUB and PUB are each answered with a PUBACK carrying the same packet
id. A PUBACK for a publish is sent only after the frame sits in every
subscriber's outbound queue, so the publisher's acknowledgment order is the
topic's delivery order. Deliveries reuse the PUB layout with the broker's
per-topic sequence number as packet id.

A publish to a topic nobody subscribes to is acknowledged and dropped. The
session handshake always subscribes before the peer can publish, so nothing
needs to be retained.
"""

from __future__ import annotations

import logging
import queue
import struct
import threading
from collections import defaultdict

from .errors import NetweaveError, ProtocolError
from .framing import MSG_PUB, MSG_PUBACK, MSG_SUB, MSG_UNSUB, Frame, encode
from .tcp import FrameChannel, TcpStream, close_endpoint, tcp_accept, tcp_listen

log = logging.getLogger(__name__)

QUEUE_DEPTH = 1024
_ID = struct.Struct(">I")
_PUB_HEAD = struct.Struct(">IH")


def pack_topic_op(packet_id: int, topic: str) -> bytes:
    return _ID.pack(packet_id) + topic.encode()


def unpack_topic_op(payload: bytes) -> tuple[int, str]:
    if len(payload) < 4:
        raise ProtocolError("topic operation too short")
    return _ID.unpack_from(payload)[0], payload[4:].decode()


def pack_pub(packet_id: int, topic: str, data: bytes) -> bytes:
    t = topic.encode()
    return _PUB_HEAD.pack(packet_id, len(t)) + t + data


def unpack_pub(payload: bytes) -> tuple[int, str, bytes]:
    if len(payload) < _PUB_HEAD.size:
        raise ProtocolError("publish frame too short")
    pid, tlen = _PUB_HEAD.unpack_from(payload)
    end = _PUB_HEAD.size + tlen
    if len(payload) < end:
        raise ProtocolError("publish topic overruns frame")
    return pid, payload[_PUB_HEAD.size:end].decode(), payload[end:]


def puback(packet_id: int) -> Frame:
    return Frame(MSG_PUBACK, _ID.pack(packet_id))


class _ClientConn:
    def __init__(self, broker: Broker, stream: TcpStream):
        self.broker = broker
        self.stream = stream
        self.outq: queue.Queue = queue.Queue(maxsize=QUEUE_DEPTH)
        self.topics: set[str] = set()
        self.alive = True

    def enqueue(self, data: bytes) -> bool:
        while self.alive:
            try:
                self.outq.put(data, timeout=0.2)
                return True
            except queue.Full:
                continue
        return False

    def writer(self):
        try:
            while True:
                data = self.outq.get()
                if data is None:
                    break
                self.stream.send(data)
        except OSError:
            pass
        finally:
            self.drop()

    def reader(self):
        chan = FrameChannel(self.stream)
        try:
            while self.alive:
                frame = chan.recv_frame()
                self.broker.handle(self, frame)
        except (NetweaveError, OSError, UnicodeDecodeError) as exc:
            log.debug("client %s gone: %s", self.stream.peername, exc)
        finally:
            self.drop()

    def drop(self):
        if not self.alive:
            return
        self.alive = False
        self.broker.forget(self)
        try:
            self.outq.put_nowait(None)
        except queue.Full:
            pass
        self.stream.shutdown()


class Broker:
    """Topic broker. ``start()`` runs it on background threads."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.host = host
        self.endpoint = tcp_listen(host, port)
        self.port = self.endpoint.getsockname()[1]
        self._subs: dict[str, set[_ClientConn]] = defaultdict(set)
        self._topic_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._seq: dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()
        self._clients: set[_ClientConn] = set()
        self._stopped = threading.Event()
        self.published = 0
        self.delivered = 0

    def serve_forever(self) -> None:
        while not self._stopped.is_set():
            try:
                stream = tcp_accept(self.endpoint)
            except NetweaveError:
                break
            client = _ClientConn(self, stream)
            with self._lock:
                self._clients.add(client)
            threading.Thread(target=client.writer, daemon=True).start()
            threading.Thread(target=client.reader, daemon=True).start()

    def start(self) -> Broker:
        threading.Thread(target=self.serve_forever, daemon=True, name="broker").start()
        return self

    def stop(self) -> None:
        self._stopped.set()
        close_endpoint(self.endpoint)
        with self._lock:
            clients = list(self._clients)
        for c in clients:
            c.drop()

    def subscribers(self, topic: str) -> int:
        with self._lock:
            return len(self._subs.get(topic, ()))

    def handle(self, client: _ClientConn, frame: Frame) -> None:
        if frame.mtype is MSG_SUB:
            pid, topic = unpack_topic_op(frame.payload)
            with self._lock:
                self._subs[topic].add(client)
            client.topics.add(topic)
            client.enqueue(encode(puback(pid)))
        elif frame.mtype is MSG_UNSUB:
            pid, topic = unpack_topic_op(frame.payload)
            self._unsubscribe(client, topic)
            client.enqueue(encode(puback(pid)))
        elif frame.mtype is MSG_PUB:
            pid, topic, data = unpack_pub(frame.payload)
            self.publish(topic, data)
            client.enqueue(encode(puback(pid)))
        else:
            raise ProtocolError(f"broker does not accept {frame.mtype.name}")

    def publish(self, topic: str, data: bytes) -> int:
        """Fan *data* out to every current subscriber; return the delivery count."""
        with self._topic_locks[topic]:
            with self._lock:
                targets = list(self._subs.get(topic, ()))
            self._seq[topic] += 1
            wire = encode(Frame(MSG_PUB, pack_pub(self._seq[topic], topic, data)))
            n = sum(1 for c in targets if c.enqueue(wire))
            self.published += 1
            self.delivered += n
        return n

    def _unsubscribe(self, client: _ClientConn, topic: str) -> None:
        with self._lock:
            subs = self._subs.get(topic)
            if subs is not None:
                subs.discard(client)
                if not subs:
                    del self._subs[topic]
        client.topics.discard(topic)

    def forget(self, client: _ClientConn) -> None:
        for topic in list(client.topics):
            self._unsubscribe(client, topic)
        with self._lock:
            self._clients.discard(client)


def broker_serve(port: int, host: str = "127.0.0.1") -> None:
    broker = Broker(host, port)
    log.info("broker listening on %s:%d", host, broker.port)
    try:
        broker.serve_forever()
    finally:
        broker.stop()
