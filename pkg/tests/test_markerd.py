import json
import socket
import threading
import time

import pytest

from carbonledger.epochs import EnergyLedger
from carbonledger.markerd import MarkerDaemon
from carbonledger.telemetry import PowerSample, SampleLog


class LineClient:
    def __init__(self, endpoint):
        self.sock = socket.create_connection(endpoint, timeout=2.0)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.fh = self.sock.makefile("rb")

    def send(self, payload) -> dict:
        if isinstance(payload, dict):
            payload = json.dumps(payload)
        self.sock.sendall(payload.encode() + b"\n")
        return json.loads(self.fh.readline())

    def marker(self, mtype, epoch=None, ts=0, v=1, run_id="r1"):
        msg = {"v": v, "type": mtype, "ts_ms": ts, "run_id": run_id}
        if epoch is not None:
            msg["epoch"] = epoch
        return self.send(msg)

    def close(self):
        self.fh.close()
        self.sock.close()


@pytest.fixture
def daemon():
    ledger = EnergyLedger("r1")
    log = SampleLog()
    for t in range(0, 700_001, 1000):
        log.append(PowerSample(t, "cpu:0", 100.0))
    stopped = threading.Event()
    d = MarkerDaemon(ledger, log, threading.Lock(), on_stop=stopped.set)
    d.start()
    d.test_ledger = ledger
    d.test_stopped = stopped
    yield d
    d.close()


def test_hello_ack(daemon):
    client = LineClient(daemon.endpoint)
    assert client.marker("hello") == {"ok": True}
    client.close()


def test_epoch_flow_builds_ledger(daemon):
    client = LineClient(daemon.endpoint)
    assert client.marker("hello")["ok"]
    for i in range(3):
        assert client.marker("epoch_start", epoch=i, ts=i * 100_000) == {"ok": True}
        assert client.marker("epoch_end", epoch=i, ts=i * 100_000 + 60_000) == {"ok": True}
    assert client.marker("stop") == {"ok": True}
    client.close()
    ledger = daemon.test_ledger
    assert [e.index for e in ledger.epochs] == [0, 1, 2]
    assert daemon.test_stopped.is_set()
    # 60 s at 100 W each
    for e in ledger.epochs:
        assert e.kwh_total == pytest.approx(60_000 * 100.0 / 1000 / 3_600_000, rel=1e-9)


def test_epoch_end_without_start(daemon):
    client = LineClient(daemon.endpoint)
    client.marker("hello")
    ack = client.marker("epoch_end", epoch=0, ts=100)
    assert ack == {"ok": False, "error": "no-open-epoch"}
    client.close()


def test_double_start_is_already_open(daemon):
    client = LineClient(daemon.endpoint)
    client.marker("hello")
    client.marker("epoch_start", epoch=0, ts=0)
    ack = client.marker("epoch_start", epoch=0, ts=50)
    assert ack == {"ok": False, "error": "epoch-already-open"}
    client.close()


def test_out_of_order_index_rejected(daemon):
    client = LineClient(daemon.endpoint)
    client.marker("hello")
    ack = client.marker("epoch_start", epoch=3, ts=0)
    assert ack == {"ok": False, "error": "out-of-order-marker"}
    client.close()


def test_hello_required_first(daemon):
    client = LineClient(daemon.endpoint)
    ack = client.marker("epoch_start", epoch=0, ts=0)
    assert ack == {"ok": False, "error": "hello-required"}
    client.close()


def test_version_mismatch(daemon):
    client = LineClient(daemon.endpoint)
    ack = client.marker("hello", v=2)
    assert ack == {"ok": False, "error": "unsupported-version"}
    client.close()


def test_malformed_line(daemon):
    client = LineClient(daemon.endpoint)
    assert client.send("{not json") == {"ok": False, "error": "malformed-message"}
    assert client.send({"v": 1}) == {"ok": False, "error": "malformed-message"}
    assert client.send('["list"]') == {"ok": False, "error": "malformed-message"}
    # daemon survives garbage and still serves
    assert client.marker("hello") == {"ok": True}
    client.close()


def test_stop_is_final(daemon):
    client = LineClient(daemon.endpoint)
    client.marker("hello")
    client.marker("stop")
    client.close()
    again = LineClient(daemon.endpoint)
    assert again.marker("hello") == {"ok": False, "error": "already-stopped"}
    again.close()


def test_reconnect_requires_new_hello(daemon):
    first = LineClient(daemon.endpoint)
    first.marker("hello")
    first.close()
    second = LineClient(daemon.endpoint)
    ack = second.marker("epoch_start", epoch=0, ts=0)
    assert ack == {"ok": False, "error": "hello-required"}
    second.close()


def test_ok_ack_bytes_exact(daemon):
    client = LineClient(daemon.endpoint)
    client.sock.sendall(json.dumps(
        {"v": 1, "type": "hello", "ts_ms": 0, "run_id": "r1"}).encode() + b"\n")
    assert client.fh.readline() == b'{"ok":true}\n'
    client.close()


def test_marker_round_trip_latency(daemon):
    client = LineClient(daemon.endpoint)
    client.marker("hello")
    times = []
    for i in range(200):
        t0 = time.perf_counter()
        client.marker("epoch_start", epoch=i, ts=i * 1000)
        client.marker("epoch_end", epoch=i, ts=i * 1000 + 500)
        times.append((time.perf_counter() - t0) / 2)
    client.close()
    times.sort()
    p99 = times[int(0.99 * len(times))]
    assert p99 < 0.010, f"p99 marker round trip {p99 * 1e3:.2f} ms"
