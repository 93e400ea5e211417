import http.server
import json
import socket
import threading
import time

import pytest


class StubIntensityServer:
    """Configurable one-endpoint HTTP stub for realtime intensity tests."""

    def __init__(self):
        self.status = 200
        self.body = {"g_per_kwh": 266.0, "ts_ms": int(time.time() * 1000)}
        self.delay_s = 0.0
        self.request_count = 0
        stub = self

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_GET(self):
                stub.request_count += 1
                if stub.delay_s:
                    time.sleep(stub.delay_s)
                payload = stub.body
                data = payload.encode() if isinstance(payload, str) else json.dumps(payload).encode()
                self.send_response(stub.status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        class Server(http.server.ThreadingHTTPServer):
            daemon_threads = True
            block_on_close = False

        self._server = Server(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(
            target=lambda: self._server.serve_forever(poll_interval=0.02), daemon=True
        )
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}/intensity?region={{region}}"

    def close(self):
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def stub_server():
    server = StubIntensityServer()
    yield server
    server.close()


@pytest.fixture
def dead_endpoint():
    """A loopback URL nothing is listening on (connection refused, fast)."""
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return f"http://127.0.0.1:{port}/intensity?region={{region}}"


def write_replay(path, rows):
    """rows: iterable of (ts_ms, component, watts)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("ts_ms,component,watts\n")
        for ts, comp, w in rows:
            fh.write(f"{ts},{comp},{w}\n")
    return str(path)
