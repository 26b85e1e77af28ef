import dataclasses
import threading

import pytest

from netweave.broker import Broker
from netweave.config import FederationConfig
from netweave.core import create_connector, create_listener
from netweave.security import Credential, KdcServer, save_credential

NODE_IDS = ["RTI", "fed0", "fed1", "fed2", "fed3", "mallory"]


@pytest.fixture
def broker():
    b = Broker().start()
    yield b
    b.stop()


@pytest.fixture
def creds(tmp_path):
    out = {}
    for nid in NODE_IDS:
        c = Credential.generate(nid)
        save_credential(c, tmp_path / f"{nid}.cred")
        out[nid] = c
    return out


@pytest.fixture
def kdc(creds):
    # mallory holds a credential file but is not registered at the KDC
    server = KdcServer([c for n, c in creds.items() if n != "mallory"]).start()
    yield server
    server.stop()


class Federation:
    """Builds matching listener/connector configs for one comm type."""

    def __init__(self, comm, tmp_path, broker=None, kdc=None):
        self.comm = comm
        self.tmp_path = tmp_path
        self.base = FederationConfig(
            federation_id="Fed1", comm_type=comm, coordinator_port=0,
            broker_port=broker.port if broker else 1883,
            kdc_port=kdc.port if kdc else 21900,
            connect_timeout=5.0)
        self.port = None

    def config(self, node_id):
        cfg = dataclasses.replace(self.base, credential_path=str(self.tmp_path / f"{node_id}.cred"))
        if self.port is not None:
            cfg.coordinator_port = self.port
        return cfg

    def listener(self, node_id="RTI"):
        lst = create_listener(self.config(node_id), node_id)
        if self.comm != "pubsub":
            self.port = lst.port
        return lst

    def connector(self, node_id):
        return create_connector(self.config(node_id), node_id)


@pytest.fixture(params=["tcp", "pubsub", "secure"])
def federation(request, tmp_path):
    comm = request.param
    b = Broker().start() if comm == "pubsub" else None
    k = None
    if comm == "secure":
        cs = []
        for nid in NODE_IDS:
            c = Credential.generate(nid)
            save_credential(c, tmp_path / f"{nid}.cred")
            if nid != "mallory":
                cs.append(c)
        k = KdcServer(cs).start()
    fed = Federation(comm, tmp_path, b, k)
    fed.broker, fed.kdc = b, k
    yield fed
    if b:
        b.stop()
    if k:
        k.stop()


def establish(fed, connector_id="fed0", listener_id="RTI"):
    """Return (listener, connector, listener-side handle, connector-side handle)."""
    lst = fed.listener(listener_id)
    con = fed.connector(connector_id)
    box = {}

    def accept():
        try:
            box["h"] = lst.wait_for_connection(10)
        except Exception as exc:  # surfaced below
            box["err"] = exc

    t = threading.Thread(target=accept)
    t.start()
    ch = con.connect(listener_id)
    t.join(10)
    if "err" in box:
        raise box["err"]
    return lst, con, box["h"], ch
