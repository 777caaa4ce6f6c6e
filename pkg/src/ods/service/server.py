from __future__ import annotations

import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .api import Api
from .app import OdsService
from .config import Config

log = logging.getLogger(__name__)
MAX_BODY = 64 * 1024 * 1024


class _Handler(BaseHTTPRequestHandler):
    api: Api
    protocol_version = "HTTP/1.1"

    def _serve(self) -> None:
        n = int(self.headers.get("Content-Length") or 0)
        if n > MAX_BODY:
            self.send_error(413)
            return
        body = self.rfile.read(n) if n else b""
        resp = self.api.handle(self.command, self.path, dict(self.headers.items()), body)
        out = resp.encode()
        self.send_response(resp.status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(out)))
        for k, v in resp.headers.items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(out)

    do_GET = do_POST = _serve

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.address_string(), fmt % args)


class OdsHttpServer:
    """The JSON API on a stdlib threading HTTP server."""

    def __init__(self, config: Config | None = None, service: OdsService | None = None):
        self.config = config or Config()
        self.service = service or OdsService(self.config)
        handler = type("Handler", (_Handler,), {"api": Api(self.service)})
        self.httpd = ThreadingHTTPServer((self.config.host, self.config.port), handler)
        self.httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "OdsHttpServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        try:
            self.httpd.serve_forever()
        finally:
            self.stop()

    def stop(self) -> None:
        if self._thread is not None:
            self.httpd.shutdown()
            self._thread = None
        self.httpd.server_close()
        self.service.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
