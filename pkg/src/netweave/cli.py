"""``netweave`` command line: services, federates and benchmarks."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import FederationConfig

log = logging.getLogger("netweave")


def _sizes(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def _load_config(args) -> FederationConfig:
    cfg = FederationConfig.load(args.config)
    if getattr(args, "credential", None):
        cfg.credential_path = args.credential
    return cfg


def cmd_broker(args) -> int:
    from .broker import broker_serve
    broker_serve(args.port, args.host)
    return 0


def cmd_kdc(args) -> int:
    from .security import kdc_serve, load_registry
    kdc_serve(args.port, load_registry(args.registry), args.host)
    return 0


def cmd_keygen(args) -> int:
    from pathlib import Path

    from .security import Credential, load_registry, save_credential, save_registry
    cred = Credential.generate(args.id)
    save_credential(cred, args.out)
    if args.registry:
        existing = load_registry(args.registry) if Path(args.registry).exists() else []
        existing = [c for c in existing if c.node_id != cred.node_id]
        save_registry(existing + [cred], args.registry)
    print(f"wrote credential for {args.id} to {args.out}")
    return 0


def cmd_rti(args) -> int:
    from .coordinator import rti_run
    stats = rti_run(_load_config(args))
    print(f"relayed {stats.forwarded} of {stats.received} messages, dropped {stats.dropped}")
    return 0 if stats.dropped == 0 else 1


def cmd_source(args) -> int:
    from .coordinator import source_node
    source_node(_load_config(args), args.period, args.count, node_id=args.id, dest=args.dest)
    return 0


def cmd_sink(args) -> int:
    from .coordinator import check_samples, sink_node
    samples = sink_node(_load_config(args), args.count, node_id=args.id, csv_path=args.out)
    problems = check_samples(samples, args.count)
    for p in problems:
        print(f"invariant violated: {p}", file=sys.stderr)
    return 1 if problems else 0


def cmd_bench_lag(args) -> int:
    from .bench import REFERENCE_DELTAS_500MS, bench_lag, write_lag_report
    rows = [bench_lag(args.comm, args.period, args.count, workdir=args.workdir)]
    if args.comm != "tcp" and args.baseline:
        base = bench_lag("tcp", args.period, args.count, workdir=args.workdir)
        rows[0].overhead_vs_tcp_pct = 100 * (rows[0].mean_ms - base.mean_ms) / base.mean_ms
        rows.append(base)
    for r in rows:
        extra = "" if r.overhead_vs_tcp_pct is None else f" overhead_vs_tcp={r.overhead_vs_tcp_pct:+.2f}%"
        print(f"{r.comm:7s} n={r.received}/{r.count} mean={r.mean_ms:.3f}ms "
              f"p50={r.p50_ms:.3f}ms p99={r.p99_ms:.3f}ms{extra}")
        for p in r.problems:
            print(f"  invariant violated: {p}", file=sys.stderr)
    print("reference deltas at 500 ms period (not comparable in absolute terms): "
          + ", ".join(f"{k}={v}%" for k, v in REFERENCE_DELTAS_500MS.items()))
    if args.out:
        write_lag_report(rows, args.out)
    return 0 if all(r.ok for r in rows) else 1


def cmd_bench_bytes(args) -> int:
    from .bench import bench_bytes, write_bytes_report
    rows = bench_bytes(args.comm, args.sizes)
    for r in rows:
        print(f"{r.comm:7s} payload={r.payload_bytes:3d} frame={r.frame_bytes:3d} sent={r.sent_bytes:4d}")
    if args.out:
        write_bytes_report(rows, args.out)
    ok = all(r.frame_bytes == r.payload_bytes + 21 for r in rows)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netweave", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("broker", help="run the topic broker")
    s.add_argument("--port", type=int, default=1883)
    s.add_argument("--host", default="127.0.0.1")
    s.set_defaults(func=cmd_broker)

    s = sub.add_parser("kdc", help="run the key distribution center")
    s.add_argument("--port", type=int, default=21900)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--registry", required=True, help="file of concatenated credentials")
    s.set_defaults(func=cmd_kdc)

    s = sub.add_parser("keygen", help="create a node credential")
    s.add_argument("--id", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--registry", help="also add the credential to this KDC registry file")
    s.set_defaults(func=cmd_keygen)

    for name, func in (("rti", cmd_rti), ("source", cmd_source), ("sink", cmd_sink)):
        s = sub.add_parser(name, help=f"run the {name} role")
        s.add_argument("--config", required=True)
        s.add_argument("--credential", help="override credential_path from the config")
        if name != "rti":
            s.add_argument("--count", type=int, default=1000)
        if name == "source":
            s.add_argument("--id", default="fed0")
            s.add_argument("--dest", default="fed1")
            s.add_argument("--period", type=float, default=500, help="milliseconds")
        if name == "sink":
            s.add_argument("--id", default="fed1")
            s.add_argument("--out", default="lag.csv")
        s.set_defaults(func=func)

    bench = sub.add_parser("bench", help="benchmarks").add_subparsers(dest="suite", required=True)
    s = bench.add_parser("lag", help="source -> RTI -> sink lag on loopback")
    s.add_argument("--comm", choices=("tcp", "pubsub", "secure"), default="tcp")
    s.add_argument("--period", type=float, default=50, help="milliseconds")
    s.add_argument("--count", type=int, default=1000)
    s.add_argument("--out")
    s.add_argument("--workdir", help="keep per-message lag CSVs here")
    s.add_argument("--no-baseline", dest="baseline", action="store_false",
                   help="skip the tcp run used for the relative overhead")
    s.set_defaults(func=cmd_bench_lag)

    s = bench.add_parser("bytes", help="application-layer bytes per tagged message")
    s.add_argument("--comm", choices=("tcp", "pubsub", "secure"), default="tcp")
    s.add_argument("--sizes", type=_sizes, default=[4, 8, 16, 24, 32, 48])
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench_bytes)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
