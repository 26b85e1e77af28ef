import threading

import pytest

from conftest import establish
from netweave.core import (ALLOWED_TRANSITIONS, SessionState, TransportKind, close, connect,
                           create_connector, create_listener, read, valid_state_log,
                           wait_for_connection, write)
from netweave.errors import ProtocolError, SessionClosed
from netweave.framing import (MSG_ACK, Frame, neighbor_table_frame, tagged_frame,
                              timestamp_frame)

S = SessionState


def test_state_log_validation():
    assert valid_state_log([S.CLOSED, S.JOIN_SENT, S.ESTABLISHED, S.CLOSED])
    assert not valid_state_log([S.CLOSED, S.ESTABLISHED])
    assert S.CLOSED in ALLOWED_TRANSITIONS[S.ESTABLISHED]


def test_seven_functions(federation):
    lst = create_listener(federation.config("RTI"), "RTI")
    if federation.comm != "pubsub":
        federation.port = lst.port
    con = create_connector(federation.config("fed0"), "fed0")
    box = {}
    t = threading.Thread(target=lambda: box.setdefault("h", wait_for_connection(lst, 10)))
    t.start()
    ch = connect(con, "RTI")
    t.join(10)
    lh = box["h"]
    assert ch.transport_kind is TransportKind(federation.comm)
    assert (ch.local_id, ch.peer_id, lh.local_id, lh.peer_id) == ("fed0", "RTI", "RTI", "fed0")
    write(ch, timestamp_frame(5))
    assert read(lh) == timestamp_frame(5)
    close(ch)
    close(lh)
    lst.close()
    con.close()


def test_frames_arrive_in_order_both_ways(federation):
    lst, con, lh, ch = establish(federation)
    frames = [tagged_frame(i, 0, 1, bytes([i % 256]) * (i % 40)) for i in range(200)]
    for f in frames:
        ch.write(f)
    assert [lh.read() for _ in frames] == frames
    mixed = [Frame(MSG_ACK), neighbor_table_frame([(1, 2)]), timestamp_frame(-1)]
    for f in mixed:
        lh.write(f)
    assert [ch.read() for _ in mixed] == mixed
    for x in (ch, lh, lst, con):
        x.close()


def test_state_logs_follow_fsm(federation):
    lst, con, lh, ch = establish(federation)
    assert ch.state_log == [S.CLOSED, S.JOIN_SENT, S.ESTABLISHED]
    assert lh.state_log == [S.CLOSED, S.LISTEN, S.JOIN_RECEIVED, S.ESTABLISHED]
    ch.close()
    assert ch.session_state is S.CLOSED
    with pytest.raises(SessionClosed):
        lh.read()
    assert lh.session_state is S.CLOSED
    assert valid_state_log(ch.state_log) and valid_state_log(lh.state_log)
    lst.close()
    con.close()


def test_closed_handle_rejects_io(federation):
    lst, con, lh, ch = establish(federation)
    ch.close()
    ch.close()  # idempotent
    with pytest.raises(SessionClosed):
        ch.write(Frame(MSG_ACK))
    with pytest.raises(SessionClosed):
        ch.read()
    lh.close()
    lst.close()
    con.close()


def test_listener_accepts_several_peers(federation):
    lst = federation.listener()
    cons = {n: federation.connector(n) for n in ("fed0", "fed1", "fed2")}
    accepted = []
    t = threading.Thread(target=lambda: accepted.extend(lst.wait_for_connection(10) for _ in cons))
    t.start()
    handles = {n: c.connect("RTI") for n, c in cons.items()}
    t.join(15)
    assert sorted(h.peer_id for h in accepted) == sorted(cons)
    by_peer = {h.peer_id: h for h in accepted}
    for n, h in handles.items():
        h.write(tagged_frame(0, 0, 0, n.encode()))
        assert by_peer[n].read().payload.endswith(n.encode())
    for x in [*handles.values(), *accepted, lst, *cons.values()]:
        x.close()


def test_close_unblocks_reader(federation):
    lst, con, lh, ch = establish(federation)
    err = {}

    def reader():
        try:
            lh.read()
        except SessionClosed as exc:
            err["e"] = exc

    t = threading.Thread(target=reader)
    t.start()
    ch.close()
    t.join(5)
    assert not t.is_alive() and "e" in err
    lst.close()
    con.close()


def test_illegal_transition_raises(federation):
    lst, con, lh, ch = establish(federation)
    with pytest.raises(ProtocolError):
        ch.transition(S.JOIN_SENT)
    for x in (ch, lh, lst, con):
        x.close()
