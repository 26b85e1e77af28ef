import csv
import subprocess
import sys
import time

import pytest

from netweave.cli import build_parser, main
from netweave.security import load_credential, load_registry


def test_parser_defaults():
    a = build_parser().parse_args(["bench", "lag"])
    assert (a.comm, a.period, a.count, a.baseline) == ("tcp", 50, 1000, True)
    a = build_parser().parse_args(["bench", "bytes", "--sizes", "4,8"])
    assert a.sizes == [4, 8]
    a = build_parser().parse_args(["source", "--config", "x", "--period", "500"])
    assert (a.id, a.dest, a.period) == ("fed0", "fed1", 500)


def test_missing_subcommand_exits():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


@pytest.mark.parametrize("comm,sent4", [("tcp", 25), ("pubsub", 56), ("secure", 85)])
def test_bench_bytes_csv(tmp_path, capsys, comm, sent4):
    out = tmp_path / "bytes.csv"
    assert main(["bench", "bytes", "--comm", comm, "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [int(r["payload_bytes"]) for r in rows] == [4, 8, 16, 24, 32, 48]
    assert all(int(r["frame_bytes"]) == int(r["payload_bytes"]) + 21 for r in rows)
    assert int(rows[0]["sent_bytes"]) == sent4
    assert f"payload=  4 frame= 25 sent={sent4:4d}" in capsys.readouterr().out


def test_keygen_builds_registry(tmp_path, capsys):
    reg = tmp_path / "reg"
    for n in ("RTI", "fed0", "fed0"):
        assert main(["keygen", "--id", n, "--out", str(tmp_path / f"{n}.cred"), "--registry", str(reg)]) == 0
    creds = load_registry(reg)
    assert [c.node_id for c in creds] == ["RTI", "fed0"]
    assert creds[1] == load_credential(tmp_path / "fed0.cred")


def test_roles_from_config_file(tmp_path):
    import socket
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    conf = tmp_path / "fed.conf"
    conf.write_text(f"federation_id = Fed1\ncomm_type = tcp\ncoordinator_port = {port}\nnodes = fed0, fed1\n")
    cmd = [sys.executable, "-m", "netweave"]
    rti = subprocess.Popen(cmd + ["rti", "--config", str(conf)], stdout=subprocess.PIPE, text=True)
    time.sleep(1.0)
    out = tmp_path / "lag.csv"
    sink = subprocess.Popen(cmd + ["sink", "--config", str(conf), "--count", "20", "--out", str(out)])
    src = subprocess.run(cmd + ["source", "--config", str(conf), "--count", "20", "--period", "10"],
                         timeout=60)
    assert src.returncode == 0
    assert sink.wait(60) == 0
    assert rti.wait(60) == 0
    assert "relayed 20 of 20" in rti.stdout.read()
    assert len(list(csv.DictReader(out.open()))) == 20
