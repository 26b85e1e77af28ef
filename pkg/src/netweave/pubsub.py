"""Publish-subscribe transport with a three-way JOIN / ACCEPT / ACCEPT-ACK handshake.

Topic names (ids never contain ``_``, so these parse unambiguously)::

    {federation}_{listener}            listen topic, carries MSG_JOIN
    {federation}_{A}_to_{B}            one-way session topic from A to B

Connector ``C`` reaching listener ``L``:

1. C subscribes ``fed_L_to_C``, publishes ``JOIN(C)`` to ``fed_L``      -> JOIN-SENT
2. L subscribes ``fed_C_to_L``, publishes ``ACCEPT(L)`` to ``fed_L_to_C`` -> JOIN-RECEIVED
3. C checks the id, publishes ``ACCEPT_ACK(C)`` to ``fed_C_to_L``       -> ESTABLISHED
4. L receives ACCEPT_ACK                                                -> ESTABLISHED
"""

from __future__ import annotations

import itertools
import logging
import queue
import threading
import time
from collections import deque

from .broker import QUEUE_DEPTH, pack_pub, pack_topic_op, unpack_pub
from .config import check_id
from .core import Connector, Listener, SessionState, TransportHandle, TransportKind
from .errors import (BrokerUnreachable, HandshakeFailed, NetweaveError, ProtocolError, Refused,
                     SessionClosed, Timeout)
from .framing import (MSG_ACCEPT, MSG_ACCEPT_ACK, MSG_JOIN, MSG_PUB, MSG_PUBACK, MSG_SUB,
                      MSG_UNSUB, Frame, decode_all, encode, frame_text, text_frame)
from .tcp import FrameChannel, tcp_connect

log = logging.getLogger(__name__)

ACK_TIMEOUT = 10.0


def listen_topic(federation: str, listener: str) -> str:
    return f"{federation}_{listener}"


def session_topic(federation: str, src: str, dst: str) -> str:
    return f"{federation}_{src}_to_{dst}"


def parse_topic(topic: str) -> tuple[str, ...]:
    """Split a topic into ``(fed, listener)`` or ``(fed, src, dst)``."""
    parts = topic.split("_")
    if len(parts) == 2:
        return tuple(check_id(p) for p in parts)
    if len(parts) == 4 and parts[2] == "to":
        return tuple(check_id(p) for p in (parts[0], parts[1], parts[3]))
    raise ProtocolError(f"not a netweave topic: {topic!r}")


class BrokerClient:
    """One stream connection to the broker, demultiplexed into per-topic queues.

    A background thread reads deliveries and acknowledgments. ``publish``
    blocks until the broker acknowledges, which is what gives the
    exactly-once, in-order contract to session writes.
    """

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        try:
            self.stream = tcp_connect(host, port, timeout)
        except (Refused, Timeout) as exc:
            raise BrokerUnreachable(f"broker at {host}:{port} unreachable: {exc}") from exc
        self._chan = FrameChannel(self.stream)
        self._queues: dict[str, queue.Queue] = {}
        self._acks: dict[int, threading.Event] = {}
        self._ids = itertools.count(1)
        self._lock = threading.Lock()
        self._send_lock = threading.Lock()
        self._users = 0
        self.closed = False
        self._rx = threading.Thread(target=self._receive_loop, daemon=True, name="broker-rx")
        self._rx.start()

    def acquire(self) -> None:
        with self._lock:
            self._users += 1

    def release(self) -> None:
        with self._lock:
            self._users -= 1
            last = self._users <= 0
        if last:
            self.close()

    def _receive_loop(self):
        try:
            while True:
                frame = self._chan.recv_frame()
                if frame.mtype is MSG_PUBACK:
                    pid = int.from_bytes(frame.payload, "big")
                    with self._lock:
                        ev = self._acks.pop(pid, None)
                    if ev is not None:
                        ev.set()
                elif frame.mtype is MSG_PUB:
                    _, topic, data = unpack_pub(frame.payload)
                    with self._lock:
                        q = self._queues.get(topic)
                    if q is not None:
                        q.put(data)
                else:
                    raise ProtocolError(f"unexpected {frame.mtype.name} from broker")
        except (NetweaveError, OSError, UnicodeDecodeError) as exc:
            if not self.closed:
                log.debug("broker connection lost: %s", exc)
        finally:
            self._fail_all()

    def _fail_all(self):
        self.closed = True
        with self._lock:
            queues = list(self._queues.values())
            acks = list(self._acks.values())
            self._acks.clear()
        for q in queues:
            try:
                q.put_nowait(None)
            except queue.Full:
                pass
        for ev in acks:
            ev.set()

    def _request(self, frame_for_id, timeout: float) -> int:
        if self.closed:
            raise SessionClosed("broker connection closed")
        pid = next(self._ids)
        ev = threading.Event()
        with self._lock:
            self._acks[pid] = ev
        frame = frame_for_id(pid)
        with self._send_lock:
            wire = self.stream.send(encode(frame))
        if not ev.wait(timeout):
            with self._lock:
                self._acks.pop(pid, None)
            raise Timeout("broker did not acknowledge")
        if self.closed:
            raise SessionClosed("broker connection closed")
        return wire

    def subscribe(self, topic: str, timeout: float = ACK_TIMEOUT) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=QUEUE_DEPTH)
        with self._lock:
            if topic in self._queues:
                raise HandshakeFailed(f"already subscribed to {topic}")
            self._queues[topic] = q
        try:
            self._request(lambda pid: Frame(MSG_SUB, pack_topic_op(pid, topic)), timeout)
        except Exception:
            with self._lock:
                self._queues.pop(topic, None)
            raise
        return q

    def unsubscribe(self, topic: str, timeout: float = ACK_TIMEOUT) -> None:
        with self._lock:
            q = self._queues.pop(topic, None)
        if q is not None:
            try:
                q.put_nowait(None)
            except queue.Full:
                pass
        if not self.closed:
            self._request(lambda pid: Frame(MSG_UNSUB, pack_topic_op(pid, topic)), timeout)

    def publish(self, topic: str, data: bytes, timeout: float = ACK_TIMEOUT) -> int:
        """Publish and wait for the broker's ack. Returns bytes written to the socket."""
        return self._request(lambda pid: Frame(MSG_PUB, pack_pub(pid, topic, data)), timeout)

    def close(self) -> None:
        if self.closed and not self._rx.is_alive():
            return
        self.closed = True
        self.stream.shutdown()
        self._rx.join(timeout=2)


class PubSubDriver:
    """Byte driver for one session: two one-way topics on a shared broker client."""

    def __init__(self, client: BrokerClient, out_topic: str, in_topic: str, inbox: queue.Queue):
        self.client = client
        self.out_topic = out_topic
        self.in_topic = in_topic
        self.inbox = inbox
        self.publishes = 0
        self._shut = False

    def send(self, data: bytes) -> int:
        try:
            n = self.client.publish(self.out_topic, data)
        except (SessionClosed, Timeout) as exc:
            raise ConnectionError(str(exc)) from exc
        self.publishes += 1
        return n

    def recv(self, timeout: float | None = None) -> bytes:
        try:
            item = self.inbox.get(timeout=timeout)
        except queue.Empty as exc:
            raise Timeout("nothing received") from exc
        if item is None:
            # keep the sentinel for any later reader
            try:
                self.inbox.put_nowait(None)
            except queue.Full:
                pass
            return b""
        return item

    def recv_frame(self, timeout: float) -> Frame:
        data = self.recv(timeout)
        if not data:
            raise SessionClosed("session topic closed")
        frames = decode_all(data)
        if len(frames) != 1:
            raise ProtocolError("a publish must carry exactly one frame")
        return frames[0]

    def shutdown(self) -> None:
        if self._shut:
            return
        self._shut = True
        try:
            self.client.unsubscribe(self.in_topic)
        except Exception as exc:
            log.debug("unsubscribe %s failed: %s", self.in_topic, exc)
        self.client.release()


class PubSubListener(Listener):
    kind = TransportKind.PUBSUB

    def __init__(self, config, listener_id):
        super().__init__(config, listener_id)
        fed = config.federation_id
        self.client = BrokerClient(config.broker_host, config.broker_port, config.connect_timeout)
        self.client.acquire()
        self.topic = listen_topic(fed, self.listener_id)
        self._joins = self.client.subscribe(self.topic)
        self._pending: deque[bytes] = deque()
        self._live: dict[str, TransportHandle] = {}
        self._live_lock = threading.Lock()
        self.state = SessionState.LISTEN

    def _forget(self, handle: TransportHandle):
        with self._live_lock:
            if self._live.get(handle.peer_id) is handle:
                del self._live[handle.peer_id]

    def wait_for_connection(self, timeout=None) -> TransportHandle:
        if self.closed:
            raise SessionClosed("listener closed")
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            left = None if deadline is None else max(0.0, deadline - time.monotonic())
            try:
                item = self._pending.popleft() if self._pending else self._joins.get(timeout=left)
            except queue.Empty as exc:
                raise Timeout("no JOIN within timeout") from exc
            if item is None or self.closed:
                raise SessionClosed("listener closed")
            try:
                (join,) = decode_all(item)
                if join.mtype is not MSG_JOIN:
                    raise ProtocolError(f"{join.mtype.name} on listen topic")
                peer = check_id(frame_text(join))
            except (ProtocolError, ValueError) as exc:
                raise HandshakeFailed(f"malformed JOIN: {exc}") from exc
            with self._live_lock:
                if peer in self._live:
                    raise HandshakeFailed(f"duplicate JOIN from {peer} after ESTABLISHED")
            return self._accept(peer)

    def _accept(self, peer: str) -> TransportHandle:
        fed, me = self.config.federation_id, self.listener_id
        in_topic = session_topic(fed, peer, me)
        out_topic = session_topic(fed, me, peer)
        inbox = self.client.subscribe(in_topic)
        self.client.acquire()
        driver = PubSubDriver(self.client, out_topic, in_topic, inbox)
        handle = TransportHandle(TransportKind.PUBSUB, driver, local_id=me, peer_id=peer,
                                 listening=True)
        handle.transition(SessionState.JOIN_RECEIVED)
        try:
            self.client.publish(out_topic, encode(text_frame(MSG_ACCEPT, me)))
            ack = driver.recv_frame(self.config.connect_timeout)
            if ack.mtype is not MSG_ACCEPT_ACK or frame_text(ack) != peer:
                raise HandshakeFailed(f"expected ACCEPT_ACK from {peer}, got {ack!r}")
        except Exception as exc:
            handle._teardown(notify=False)
            if isinstance(exc, HandshakeFailed):
                raise
            raise HandshakeFailed(f"handshake with {peer} failed: {exc}") from exc
        handle.transition(SessionState.ESTABLISHED)
        self._drop_retransmits(peer)
        handle.on_close = self._forget
        with self._live_lock:
            self._live[peer] = handle
        return handle

    def _drop_retransmits(self, peer: str) -> None:
        # The broker delivers to this client in order, so a JOIN from peer that
        # is already queued was published before its ACCEPT_ACK: a retransmission.
        while True:
            try:
                item = self._joins.get_nowait()
            except queue.Empty:
                return
            if item is not None and item == encode(text_frame(MSG_JOIN, peer)):
                log.debug("dropping retransmitted JOIN from %s", peer)
                continue
            self._pending.append(item)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self.state = SessionState.CLOSED
        try:
            self.client.unsubscribe(self.topic)
        except Exception as exc:
            log.debug("unsubscribe listen topic failed: %s", exc)
        self.client.release()


class PubSubConnector(Connector):
    kind = TransportKind.PUBSUB

    def __init__(self, config, connector_id):
        super().__init__(config, connector_id)
        self.client = BrokerClient(config.broker_host, config.broker_port, config.connect_timeout)
        self.client.acquire()

    def connect(self, target, timeout=None) -> TransportHandle:
        if self.closed:
            raise SessionClosed("connector closed")
        timeout = self.config.connect_timeout if timeout is None else timeout
        fed, me = self.config.federation_id, self.connector_id
        in_topic = session_topic(fed, target, me)
        out_topic = session_topic(fed, me, target)
        inbox = self.client.subscribe(in_topic)
        self.client.acquire()
        driver = PubSubDriver(self.client, out_topic, in_topic, inbox)
        handle = TransportHandle(TransportKind.PUBSUB, driver, local_id=me, peer_id=target)
        deadline = time.monotonic() + timeout
        try:
            self.client.publish(listen_topic(fed, target), encode(text_frame(MSG_JOIN, me)))
            handle.transition(SessionState.JOIN_SENT)
            while True:
                left = deadline - time.monotonic()
                if left <= 0:
                    raise Timeout(f"no ACCEPT from {target} within {timeout}s")
                try:
                    reply = driver.recv_frame(left)
                except Timeout:
                    continue
                if reply.mtype is MSG_ACCEPT and frame_text(reply) == target:
                    break
                log.warning("ignoring %r while waiting for ACCEPT from %s", reply, target)
            self.client.publish(out_topic, encode(text_frame(MSG_ACCEPT_ACK, me)))
        except Exception:
            handle._teardown(notify=False)
            raise
        handle.transition(SessionState.ESTABLISHED)
        return handle

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self.client.release()
