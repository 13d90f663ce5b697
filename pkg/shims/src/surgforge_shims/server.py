"""Shim transports: stdio line protocol and a threaded HTTP server.

Both hand every request line to wire.handle_line, so behavior is identical
across transports. The HTTP server optionally requires a bearer token and
bounds concurrent in-flight requests with a semaphore.
"""

import logging
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from surgforge_shims.wire import handle_line

logger = logging.getLogger(__name__)


def serve_stdio(kind: str, engine, stdin=None, stdout=None) -> None:
    """One JSON message per line on stdin/stdout; runs until EOF."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(handle_line(line, kind, engine) + "\n")
        stdout.flush()


class ShimHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, kind: str, engine, token: str = "",
                 max_concurrency: int = 8):
        self.kind = kind
        self.engine = engine
        self.token = token
        self.gate = threading.BoundedSemaphore(max_concurrency)
        super().__init__(address, _Handler)


class _Handler(BaseHTTPRequestHandler):
    server: ShimHTTPServer

    def do_POST(self):  # noqa: N802 (http.server naming)
        if self.server.token:
            expected = f"Bearer {self.server.token}"
            if self.headers.get("Authorization") != expected:
                self.send_error(401, "missing or wrong bearer token")
                return
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length).decode("utf-8", errors="replace")
        with self.server.gate:
            response = handle_line(body, self.server.kind, self.server.engine)
        payload = response.encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, fmt, *args):
        logger.debug("http: " + fmt, *args)


def serve_http(kind: str, engine, host: str = "127.0.0.1", port: int = 8701,
               token: str = "", max_concurrency: int = 8) -> ShimHTTPServer:
    """Build the server (caller decides whether to block on serve_forever)."""
    return ShimHTTPServer((host, port), kind, engine, token, max_concurrency)
