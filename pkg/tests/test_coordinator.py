import dataclasses
import threading

from netweave.coordinator import (LagSample, Rti, Tag, check_samples, read_lag_csv, schedule,
                                  sink_node, source_node, write_lag_csv)
from netweave.framing import parse_tagged, tagged_frame


def run_federation(fed, period_ms=5, count=30, tmp_path=None):
    rti_cfg = dataclasses.replace(fed.config("RTI"), nodes=["fed0", "fed1"])
    rti = Rti(rti_cfg, start_delay_ns=50_000_000)
    port = rti.port
    out = {}
    t = threading.Thread(target=lambda: out.setdefault("stats", rti.run(10)))
    t.start()

    def node_cfg(n):
        cfg = dataclasses.replace(fed.config(n), nodes=["fed0", "fed1"])
        if port is not None:
            cfg.coordinator_port = port
        return cfg

    sink = threading.Thread(target=lambda: out.setdefault(
        "samples", sink_node(node_cfg("fed1"), count, csv_path=tmp_path / "lag.csv")))
    sink.start()
    source_node(node_cfg("fed0"), period_ms, count)
    sink.join(20)
    t.join(20)
    return out["stats"], out["samples"]


def test_schedule():
    assert schedule(500, 1000)[-1] == 500 * 10**9
    assert schedule(50, 1000)[-1] == 50 * 10**9
    assert schedule(50, 3) == [50_000_000, 100_000_000, 150_000_000]


def test_relay_end_to_end(federation, tmp_path):
    stats, samples = run_federation(federation, tmp_path=tmp_path)
    assert check_samples(samples, 30) == []
    assert [s.tag.logical_time for s in samples] == schedule(5, 30)
    assert stats.forwarded == 30 and stats.dropped == 0
    assert stats.total_writes == 60
    assert all(s.lag > 0 for s in samples)
    assert read_lag_csv(tmp_path / "lag.csv") == samples


def test_unknown_destination_is_dropped(tmp_path):
    from conftest import Federation
    fed = Federation("tcp", tmp_path)
    rti = Rti(dataclasses.replace(fed.config("RTI"), nodes=["fed0"]), start_delay_ns=0)
    fed.port = rti.port
    out = {}
    t = threading.Thread(target=lambda: out.setdefault("stats", rti.run(10)))
    t.start()
    from netweave.core import create_connector
    con = create_connector(fed.config("fed0"), "fed0")
    h = con.connect("RTI")
    h.read()  # start timestamp
    h.write(tagged_frame(1, 0, 7, b"lost"))
    h.write(tagged_frame(2, 0, 0, b"echo"))
    assert parse_tagged(h.read()).data == b"echo"
    h.close()
    con.close()
    t.join(10)
    st = out["stats"]
    assert (st.received, st.forwarded, st.dropped) == (2, 1, 1)


def test_check_samples_flags_problems():
    good = [LagSample(Tag(i), i + 5) for i in (1, 2, 3)]
    assert check_samples(good, 3) == []
    assert check_samples(good[:2], 3)
    assert any("increasing" in p for p in check_samples([good[1], good[0], good[2]], 3))
    assert any("duplicate" in p for p in check_samples([good[0], good[0], good[2]], 3))


def test_lag_csv_round_trip(tmp_path):
    s = [LagSample(Tag(10), 15), LagSample(Tag(20), 26)]
    write_lag_csv(s, tmp_path / "x.csv")
    assert (tmp_path / "x.csv").read_text().splitlines()[0] == "tag_ns,recv_ns,lag_ns"
    assert read_lag_csv(tmp_path / "x.csv") == s
    assert [x.lag for x in s] == [5, 6]


def test_tag_order():
    assert Tag(1, 5) < Tag(2, 0) and Tag(1, 0) < Tag(1, 1)
    assert not Tag(1, 1) < Tag(1, 1)
