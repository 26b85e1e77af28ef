"""Centralized federation runtime: an RTI that relays tagged messages, plus
source and sink federates used for lag measurement.

The RTI listens as ``"RTI"``, waits for every node in ``config.nodes``, then
broadcasts one MSG_TIMESTAMP holding the shared start instant (wall-clock
ns). Logical time 0 is that instant. The source sends message ``i`` with
logical time ``i * period``; the sink records
``lag = (receive time - start) - logical time``.
"""

from __future__ import annotations

import csv
import logging
import queue
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .config import FederationConfig
from .core import TransportHandle, create_connector, create_listener
from .errors import HandshakeFailed, KeyNotFound, NetweaveError, ProtocolError, SessionClosed
from .framing import (MSG_TAGGED_MESSAGE, parse_tagged, parse_timestamp, tagged_frame,
                      timestamp_frame)

log = logging.getLogger(__name__)

RTI_ID = "RTI"
START_DELAY_NS = 300_000_000


@dataclass(frozen=True)
class Tag:
    logical_time: int
    microstep: int = 0

    def __lt__(self, other: Tag):
        return (self.logical_time, self.microstep) < (other.logical_time, other.microstep)


@dataclass(frozen=True)
class LagSample:
    tag: Tag
    physical_receive_time: int

    @property
    def lag(self) -> int:
        return self.physical_receive_time - self.tag.logical_time


@dataclass
class RelayStats:
    start_ns: int = 0
    received: int = 0
    forwarded: int = 0
    dropped: int = 0
    source_writes: dict[str, int] = field(default_factory=dict)

    @property
    def total_writes(self) -> int:
        """Write-path traversals: one into the RTI per sender, one out per forward."""
        return sum(self.source_writes.values()) + self.forwarded


class Rti:
    """Relay loop. ``port`` is known once the listener is bound (pass port 0 to pick one)."""

    def __init__(self, config: FederationConfig, start_delay_ns: int = START_DELAY_NS):
        self.config = config
        self.start_delay_ns = start_delay_ns
        self.listener = create_listener(config, RTI_ID)
        self.port = getattr(self.listener, "port", None)
        self.stats = RelayStats()
        self.sessions: dict[str, TransportHandle] = {}

    def _admit_all(self, timeout: float | None) -> None:
        expected = set(self.config.nodes)
        while set(self.sessions) != expected:
            try:
                h = self.listener.wait_for_connection(timeout)
            except (HandshakeFailed, KeyNotFound, ProtocolError) as exc:
                log.warning("rejected a peer: %s", exc)
                continue
            if h.peer_id not in expected or h.peer_id in self.sessions:
                log.warning("unexpected node %s, closing", h.peer_id)
                h.close()
                continue
            self.sessions[h.peer_id] = h

    def run(self, join_timeout: float | None = 60.0) -> RelayStats:
        try:
            self._admit_all(join_timeout)
            start = time.time_ns() + self.start_delay_ns
            self.stats.start_ns = start
            for h in self.sessions.values():
                h.write(timestamp_frame(start))
            self._relay()
        finally:
            for h in self.sessions.values():
                h.close()
            self.listener.close()
        return self.stats

    def _relay(self) -> None:
        relay_q: queue.Queue = queue.Queue()
        readers = [threading.Thread(target=self._pump, args=(nid, h, relay_q), daemon=True)
                   for nid, h in self.sessions.items()]
        for t in readers:
            t.start()
        live = len(readers)
        while live:
            item = relay_q.get()
            if item is None:
                live -= 1
                continue
            sender, frame = item
            self._forward(sender, frame)

    def _pump(self, node_id: str, h: TransportHandle, out: queue.Queue) -> None:
        try:
            while True:
                frame = h.read()
                if frame.mtype is MSG_TAGGED_MESSAGE:
                    out.put((node_id, frame))
                else:
                    log.debug("ignoring %r from %s", frame, node_id)
        except NetweaveError as exc:
            log.debug("session %s ended: %s", node_id, exc)
        finally:
            out.put(None)

    def _forward(self, sender: str, frame) -> None:
        st = self.stats
        st.received += 1
        st.source_writes[sender] = st.source_writes.get(sender, 0) + 1
        dest = parse_tagged(frame).destination
        if dest >= len(self.config.nodes):
            log.warning("unknown destination index %d from %s, dropped", dest, sender)
            st.dropped += 1
            return
        target = self.sessions.get(self.config.nodes[dest])
        try:
            target.write(frame)
            st.forwarded += 1
        except (SessionClosed, AttributeError):
            st.dropped += 1


def rti_run(config: FederationConfig, start_delay_ns: int = START_DELAY_NS) -> RelayStats:
    return Rti(config, start_delay_ns).run()


def _join(config: FederationConfig, node_id: str) -> tuple[TransportHandle, int]:
    connector = create_connector(config, node_id)
    h = connector.connect(RTI_ID)
    h.on_close = lambda _h: connector.close()
    return h, parse_timestamp(h.read())


def _sleep_until(ns: int) -> None:
    while True:
        left = ns - time.time_ns()
        if left <= 0:
            return
        time.sleep(left / 1e9)


def schedule(period_ms: float, count: int) -> list[int]:
    """Logical send times in ns: message ``i`` (1-based) goes out at ``i * period``."""
    period_ns = int(period_ms * 1_000_000)
    return [i * period_ns for i in range(1, count + 1)]


def source_node(config: FederationConfig, period_ms: float, count: int,
                node_id: str = "fed0", dest: str = "fed1") -> int:
    """Send ``count`` tagged messages, one per period. Returns the start instant."""
    dest_idx = config.nodes.index(dest)
    h, start = _join(config, node_id)
    try:
        for i, logical in enumerate(schedule(period_ms, count), 1):
            _sleep_until(start + logical)
            h.write(tagged_frame(logical, 0, dest_idx, struct.pack(">i", i)))
    finally:
        h.close()
    return start


def sink_node(config: FederationConfig, count: int, node_id: str = "fed1",
              csv_path: str | Path | None = None) -> list[LagSample]:
    h, start = _join(config, node_id)
    samples = []
    try:
        while len(samples) < count:
            frame = h.read()
            now = time.time_ns()
            if frame.mtype is not MSG_TAGGED_MESSAGE:
                continue
            msg = parse_tagged(frame)
            samples.append(LagSample(Tag(msg.logical_time, msg.microstep), now - start))
    finally:
        h.close()
    if csv_path is not None:
        write_lag_csv(samples, csv_path)
    return samples


def write_lag_csv(samples: list[LagSample], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tag_ns", "recv_ns", "lag_ns"])
        for s in samples:
            w.writerow([s.tag.logical_time, s.physical_receive_time, s.lag])


def read_lag_csv(path: str | Path) -> list[LagSample]:
    with open(path, newline="") as fh:
        return [LagSample(Tag(int(r["tag_ns"])), int(r["recv_ns"])) for r in csv.DictReader(fh)]


def check_samples(samples: list[LagSample], count: int) -> list[str]:
    """Return a list of invariant violations (empty when the run was clean)."""
    problems = []
    if len(samples) != count:
        problems.append(f"expected {count} messages, got {len(samples)}")
    tags = [s.tag for s in samples]
    if len(set(tags)) != len(tags):
        problems.append("duplicate tags")
    if any(not a < b for a, b in zip(tags, tags[1:])):
        problems.append("tags not strictly increasing")
    return problems
