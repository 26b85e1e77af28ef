import socket
import threading
import time

import pytest

from conftest import Federation, establish
from netweave.config import FederationConfig
from netweave.core import SessionState, create_connector
from netweave.errors import (AddressInUse, HandshakeFailed, Refused, SessionClosed,
                             TruncatedMessage)
from netweave.framing import MSG_JOIN, Frame, encode, tagged_frame, text_frame
from netweave.tcp import (FrameChannel, TcpConnector, tcp_connect, tcp_listen, tcp_read_chunk,
                          tcp_write_all)
from netutil import RechunkingProxy


@pytest.fixture
def fed(tmp_path):
    return Federation("tcp", tmp_path)


def test_loopback_round_trip_and_wire_size(fed):
    lst, con, lh, ch = establish(fed)
    f = tagged_frame(1, 0, 1, b"abc")
    ch.write(f)
    assert lh.read() == f
    ch.write(tagged_frame(2, 0, 1, b"\x00\x00\x00\x2a"))
    assert ch.last_write_bytes == 25
    assert lh.read().payload[-4:] == b"\x00\x00\x00\x2a"
    assert ch.state_log == [SessionState.CLOSED, SessionState.JOIN_SENT, SessionState.ESTABLISHED]
    for x in (ch, lh, lst, con):
        x.close()


def test_refused_when_no_server():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with pytest.raises(Refused):
        tcp_connect("127.0.0.1", port, 2)
    con = create_connector(FederationConfig(coordinator_port=port), "fed0")
    with pytest.raises(Refused):
        con.connect("RTI")


def test_address_in_use(fed):
    lst = fed.listener()
    with pytest.raises(AddressInUse):
        tcp_listen("127.0.0.1", lst.port)
    lst.close()


def test_boundaries_recovered_through_rechunking_proxy(fed):
    lst = fed.listener()
    proxy = RechunkingProxy(lst.port, seed=3)
    con = TcpConnector(fed.config("fed0"), "fed0", port=proxy.port)
    box = {}
    t = threading.Thread(target=lambda: box.setdefault("h", lst.wait_for_connection(5)))
    t.start()
    ch = con.connect("RTI")
    t.join()
    lh = box["h"]
    sent = [tagged_frame(i, 0, 0, bytes([i % 256]) * (i % 40)) for i in range(300)]
    for f in sent:
        ch.write(f)
    assert [lh.read() for _ in sent] == sent
    assert proxy.chunks > 300
    ch.close()
    with pytest.raises(SessionClosed):
        lh.read()
    proxy.close()
    lst.close()


def test_raw_chunk_ops(fed):
    lst, con, lh, ch = establish(fed)
    tcp_write_all(ch, b"\x02\x02")
    got = b""
    while len(got) < 2:
        got += tcp_read_chunk(lh)
    assert got == b"\x02\x02"
    ch.close()
    lh.close()
    lst.close()


def test_write_after_close_fails_and_close_is_idempotent(fed):
    lst, con, lh, ch = establish(fed)
    ch.close()
    ch.close()
    assert ch.session_state is SessionState.CLOSED
    with pytest.raises(SessionClosed):
        ch.write(Frame.__new__(Frame))
    with pytest.raises(SessionClosed):
        ch.read()
    with pytest.raises(SessionClosed):
        lh.read()
    lst.close()


def test_close_from_other_thread_unblocks_read(fed):
    lst, con, lh, ch = establish(fed)
    err = {}

    def reader():
        try:
            lh.read()
        except Exception as exc:
            err["e"] = exc

    t = threading.Thread(target=reader)
    t.start()
    time.sleep(0.1)
    lh.close()
    t.join(2)
    assert not t.is_alive()
    assert isinstance(err["e"], SessionClosed)
    ch.close()
    lst.close()


def test_close_unblocks_wait_for_connection(fed):
    lst = fed.listener()
    err = {}

    def waiter():
        try:
            lst.wait_for_connection()
        except Exception as exc:
            err["e"] = exc

    t = threading.Thread(target=waiter)
    t.start()
    time.sleep(0.1)
    lst.close()
    t.join(2)
    assert not t.is_alive() and isinstance(err["e"], SessionClosed)


def test_truncated_message(fed):
    lst = fed.listener()
    box = {}
    t = threading.Thread(target=lambda: box.setdefault("h", lst.wait_for_connection(5)))
    t.start()
    raw = tcp_connect("127.0.0.1", lst.port)
    chan = FrameChannel(raw)
    chan.send_frame(text_frame(MSG_JOIN, "Fed1_fed0"))
    chan.recv_frame(2)
    t.join()
    raw.send(encode(tagged_frame(1, 0, 0, b"abcdef"))[:10])
    raw.shutdown()
    with pytest.raises(TruncatedMessage):
        box["h"].read()
    lst.close()


def test_federation_mismatch_rejected(fed, tmp_path):
    lst = fed.listener()
    other = Federation("tcp", tmp_path)
    other.base.federation_id = "Fed2"
    other.port = lst.port
    box = {}

    def accept():
        try:
            lst.wait_for_connection(5)
        except Exception as exc:
            box["e"] = exc

    t = threading.Thread(target=accept)
    t.start()
    with pytest.raises(HandshakeFailed):
        other.connector("fed0").connect("RTI")
    t.join()
    assert isinstance(box["e"], HandshakeFailed)
    lst.close()
