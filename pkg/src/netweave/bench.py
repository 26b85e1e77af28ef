"""Lag and message-size benchmarks on loopback.

``bench_lag`` runs broker/KDC (when the comm type needs them), RTI, source
and sink as separate processes so that no role competes with another for
the interpreter lock. ``bench_bytes`` runs in-process: it opens one session
and reads the application-layer byte count of each write off the handle.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import multiprocessing as mp
import statistics
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .broker import Broker
from .config import FederationConfig
from .coordinator import RTI_ID, Rti, check_samples, read_lag_csv, sink_node, source_node
from .core import create_connector, create_listener
from .framing import tagged_frame
from .security import Credential, KdcServer, save_credential

log = logging.getLogger(__name__)

DEFAULT_SIZES = (4, 8, 16, 24, 32, 48)
WARMUP = 10
# average lag increase at a 500 ms period, for side-by-side reporting only
REFERENCE_DELTAS_500MS = {"tcp_vs_baseline_pct": 0.53, "secure_vs_baseline_pct": 0.80,
                      "secure_vs_tcp_pct": 0.26}
# total on-wire bytes for a 4-byte payload, TCP/IP headers included
REFERENCE_WIRE_BYTES_4B = {"tcp": 91, "pubsub": 118, "secure": 164}
REFERENCE_TCPIP_OVERHEAD = 66

_ctx = mp.get_context("spawn")


@dataclass
class LagStats:
    comm: str
    period_ms: float
    count: int
    received: int
    mean_ms: float
    p50_ms: float
    p99_ms: float
    relay_writes: int
    problems: list[str] = field(default_factory=list)
    overhead_vs_tcp_pct: float | None = None
    samples_path: str | None = None

    @property
    def ok(self) -> bool:
        return not self.problems


def summarize(lags_ns: list[int], warmup: int = WARMUP) -> tuple[float, float, float]:
    """Mean, median and 99th percentile lag in ms, skipping warm-up samples."""
    xs = sorted(lags_ns[warmup:] if len(lags_ns) > warmup else lags_ns)
    if not xs:
        return float("nan"), float("nan"), float("nan")
    p99 = xs[min(len(xs) - 1, int(round(0.99 * (len(xs) - 1))))]
    return (statistics.fmean(xs) / 1e6, statistics.median(xs) / 1e6, p99 / 1e6)


# --- child process entry points --------------------------------------------

def _broker_main(ready):
    b = Broker()
    ready.put(b.port)
    b.serve_forever()


def _kdc_main(creds, ready):
    k = KdcServer(creds)
    ready.put(k.port)
    k.serve_forever()


def _rti_main(config, ready, result):
    rti = Rti(config)
    ready.put(rti.port)
    stats = rti.run()
    result.put(dataclasses.asdict(stats))


def _source_main(config, period_ms, count):
    source_node(config, period_ms, count, node_id=config.nodes[0], dest=config.nodes[1])


def _sink_main(config, count, path):
    sink_node(config, count, node_id=config.nodes[1], csv_path=path)


class Deployment:
    """Brings up the services a comm type needs and hands out node configs."""

    def __init__(self, comm: str, workdir: Path, federation_id: str = "Fed1",
                 nodes=("fed0", "fed1")):
        self.comm = comm
        self.workdir = Path(workdir)
        self.base = FederationConfig(federation_id=federation_id, comm_type=comm,
                                     coordinator_port=0, nodes=list(nodes))
        self.procs: list = []
        self.creds: dict[str, Credential] = {}

    def __enter__(self):
        if self.comm == "pubsub":
            self.base.broker_port = self._spawn(_broker_main)
        if self.comm == "secure":
            for nid in [RTI_ID, *self.base.nodes]:
                c = Credential.generate(nid)
                save_credential(c, self.workdir / f"{nid}.cred")
                self.creds[nid] = c
            self.base.kdc_port = self._spawn(_kdc_main, list(self.creds.values()))
        return self

    def _spawn(self, target, *args, extra=()):
        ready = _ctx.Queue()
        p = _ctx.Process(target=target, args=(*args, ready, *extra), daemon=True)
        p.start()
        self.procs.append(p)
        return ready.get(timeout=30)

    def config(self, node_id: str, port: int | None = None) -> FederationConfig:
        cfg = dataclasses.replace(self.base, nodes=list(self.base.nodes))
        if self.comm == "secure":
            cfg.credential_path = str(self.workdir / f"{node_id}.cred")
        if port is not None:
            cfg.coordinator_port = port
        return cfg

    def __exit__(self, *exc):
        for p in self.procs:
            if p.is_alive():
                p.terminate()
            p.join(5)


def bench_lag(comm: str, period_ms: float = 50, count: int = 1000,
              workdir: str | Path | None = None, warmup: int = WARMUP,
              timeout: float | None = None) -> LagStats:
    """One source -> RTI -> sink run; returns lag statistics and invariant violations."""
    tmp = None
    if workdir is None:
        tmp = tempfile.TemporaryDirectory(prefix="netweave-bench-")
        workdir = tmp.name
    workdir = Path(workdir)
    samples_path = workdir / f"lag_{comm}.csv"
    timeout = timeout or (count * period_ms / 1000 + 60)
    try:
        with Deployment(comm, workdir) as dep:
            result = _ctx.Queue()
            rti_port = dep._spawn(_rti_main, dep.config(RTI_ID), extra=(result,))
            sink = _ctx.Process(target=_sink_main,
                                args=(dep.config(dep.base.nodes[1], rti_port), count, str(samples_path)))
            source = _ctx.Process(target=_source_main,
                                  args=(dep.config(dep.base.nodes[0], rti_port), period_ms, count))
            sink.start()
            source.start()
            source.join(timeout)
            sink.join(timeout)
            relay = result.get(timeout=30)
            for p in (source, sink):
                if p.is_alive():
                    p.terminate()
        samples = read_lag_csv(samples_path) if samples_path.exists() else []
        problems = check_samples(samples, count)
        writes = relay["forwarded"] + sum(relay["source_writes"].values())
        if writes != 2 * count:
            problems.append(f"expected {2 * count} write-path traversals, relay saw {writes}")
        mean, p50, p99 = summarize([s.lag for s in samples], warmup)
        return LagStats(comm, period_ms, count, len(samples), mean, p50, p99, writes, problems,
                        samples_path=None if tmp else str(samples_path))
    finally:
        if tmp is not None:
            tmp.cleanup()


def write_lag_report(rows: list[LagStats], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["comm", "period_ms", "count", "received", "mean_lag_ms", "p50_lag_ms",
                    "p99_lag_ms", "overhead_vs_tcp_pct", "relay_writes", "ok"])
        for r in rows:
            w.writerow([r.comm, r.period_ms, r.count, r.received, f"{r.mean_ms:.4f}",
                        f"{r.p50_ms:.4f}", f"{r.p99_ms:.4f}",
                        "" if r.overhead_vs_tcp_pct is None else f"{r.overhead_vs_tcp_pct:.2f}",
                        r.relay_writes, int(r.ok)])


# --- message sizes ---------------------------------------------------------

@dataclass
class ByteRow:
    comm: str
    payload_bytes: int
    frame_bytes: int
    sent_bytes: int

    @property
    def overhead_bytes(self) -> int:
        return self.sent_bytes - self.payload_bytes


def bench_bytes(comm: str, sizes=DEFAULT_SIZES, workdir: str | Path | None = None) -> list[ByteRow]:
    """Application-layer bytes pushed to the socket per tagged message.

    Uses federation ``MQTTTest`` with ``fed0`` -> ``RTI``, so the pub-sub
    session topic is ``MQTTTest_fed0_to_RTI``.
    """
    tmp = None
    if workdir is None:
        tmp = tempfile.TemporaryDirectory(prefix="netweave-bytes-")
        workdir = tmp.name
    workdir = Path(workdir)
    services = []
    try:
        cfg = FederationConfig(federation_id="MQTTTest", comm_type=comm, coordinator_port=0,
                               nodes=["fed0"])
        if comm == "pubsub":
            b = Broker().start()
            services.append(b)
            cfg.broker_port = b.port
        if comm == "secure":
            creds = [Credential.generate(n) for n in (RTI_ID, "fed0")]
            for c in creds:
                save_credential(c, workdir / f"{c.node_id}.cred")
            k = KdcServer(creds).start()
            services.append(k)
            cfg.kdc_port = k.port
        lcfg = dataclasses.replace(cfg, credential_path=str(workdir / f"{RTI_ID}.cred"))
        listener = create_listener(lcfg, RTI_ID)
        ccfg = dataclasses.replace(cfg, credential_path=str(workdir / "fed0.cred"),
                                   coordinator_port=getattr(listener, "port", 0))
        connector = create_connector(ccfg, "fed0")
        box = {}
        t = threading.Thread(target=lambda: box.setdefault("h", listener.wait_for_connection(10)))
        t.start()
        h = connector.connect(RTI_ID)
        t.join(10)
        peer = box["h"]
        rows = []
        for p in sizes:
            frame = tagged_frame(p, 0, 0, bytes(i % 256 for i in range(p)))
            h.write(frame)
            if peer.read() != frame:
                raise AssertionError("payload corrupted in transit")
            rows.append(ByteRow(comm, p, p + 21, h.last_write_bytes))
        h.close()
        peer.close()
        listener.close()
        connector.close()
        return rows
    finally:
        for s in services:
            s.stop()
        if tmp is not None:
            tmp.cleanup()


def write_bytes_report(rows: list[ByteRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["comm", "payload_bytes", "frame_bytes", "sent_bytes",
                    "sent_plus_tcpip_bytes", "reference_wire_bytes_4B"])
        for r in rows:
            ref = REFERENCE_WIRE_BYTES_4B.get(r.comm, "") if r.payload_bytes == 4 else ""
            w.writerow([r.comm, r.payload_bytes, r.frame_bytes, r.sent_bytes,
                        r.sent_bytes + REFERENCE_TCPIP_OVERHEAD, ref])
