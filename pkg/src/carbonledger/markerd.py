"""Local marker intake for externally instrumented training loops.

Clients connect to a loopback TCP endpoint and send newline-delimited
JSON messages: a hello, then epoch_start/epoch_end pairs, then stop.
Every message is acked with ``{"ok":true}`` or ``{"ok":false,"error":
"<code>"}`` on its own line. The daemon validates ordering and applies
markers to the run's ledger; it must never crash on client input, and
acks must stay cheap (clients time their markers).
"""

from __future__ import annotations

import json
import socket
import threading
from typing import Callable

from .epochs import EnergyLedger
from .errors import CarbonLedgerError
from .telemetry import SampleLog

PROTOCOL_VERSION = 1

ACK_OK = b'{"ok":true}\n'


def _ack_err(code: str) -> bytes:
    return json.dumps({"ok": False, "error": code}, separators=(",", ":")).encode() + b"\n"


class MarkerDaemon:
    """Serves one run's marker stream on a loopback TCP socket.

    Markers are serialized per run: one connection is handled at a time,
    and ledger mutations take the shared ledger lock so finalization in
    the tracker never races a late epoch_end.
    """

    def __init__(
        self,
        ledger: EnergyLedger,
        samples: SampleLog,
        ledger_lock: threading.Lock,
        host: str = "127.0.0.1",
        port: int = 0,
        on_stop: Callable[[], None] | None = None,
    ):
        self.ledger = ledger
        self.samples = samples
        self.ledger_lock = ledger_lock
        self.on_stop = on_stop
        self.stopped = False
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(1)
        self._sock.settimeout(0.2)
        self._closed = threading.Event()
        self._thread = threading.Thread(target=self._serve, name="markerd", daemon=True)

    @property
    def endpoint(self) -> tuple[str, int]:
        host, port = self._sock.getsockname()[:2]
        return host, port

    def start(self) -> None:
        self._thread.start()

    def close(self) -> None:
        self._closed.set()
        self._thread.join(timeout=2.0)
        self._sock.close()

    def _serve(self) -> None:
        while not self._closed.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            with conn:
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                try:
                    self._session(conn)
                except (OSError, ValueError):
                    pass  # client went away; wait for the next one

    def _session(self, conn: socket.socket) -> None:
        hello_seen = False
        fh = conn.makefile("rb")
        while not self._closed.is_set():
            line = fh.readline()
            if not line:
                return
            try:
                msg = json.loads(line)
            except ValueError:
                conn.sendall(_ack_err("malformed-message"))
                continue
            ack, is_stop = self._handle(msg, hello_seen)
            if ack == ACK_OK and not hello_seen:
                hello_seen = True
            conn.sendall(ack)
            if is_stop:
                return

    def _handle(self, msg, hello_seen: bool) -> tuple[bytes, bool]:
        if not isinstance(msg, dict):
            return _ack_err("malformed-message"), False
        mtype = msg.get("type")
        ts = msg.get("ts_ms")
        if (
            not isinstance(mtype, str)
            or not isinstance(msg.get("run_id"), str)
            or isinstance(ts, bool)
            or not isinstance(ts, int)
        ):
            return _ack_err("malformed-message"), False
        if msg.get("v") != PROTOCOL_VERSION:
            return _ack_err("unsupported-version"), False
        if self.stopped:
            return _ack_err("already-stopped"), False

        if mtype == "hello":
            return ACK_OK, False
        if not hello_seen:
            return _ack_err("hello-required"), False

        if mtype == "stop":
            self.stopped = True
            if self.on_stop is not None:
                self.on_stop()
            return ACK_OK, True

        if mtype in ("epoch_start", "epoch_end"):
            epoch = msg.get("epoch")
            if isinstance(epoch, bool) or not isinstance(epoch, int) or epoch < 0:
                return _ack_err("malformed-message"), False
            try:
                with self.ledger_lock:
                    if mtype == "epoch_start":
                        if epoch != self.ledger.next_index:
                            return _ack_err("out-of-order-marker"), False
                        self.ledger.epoch_start(ts)
                    else:
                        open_epoch = self.ledger.open_epoch
                        if open_epoch is not None and epoch != open_epoch[0]:
                            return _ack_err("out-of-order-marker"), False
                        self.ledger.epoch_end(ts, self.samples)
            except CarbonLedgerError as e:
                return _ack_err(e.code), False
            except ValueError:
                return _ack_err("out-of-order-marker"), False
            return ACK_OK, False

        return _ack_err("malformed-message"), False
