"""Static chunk server with HTTP Range support for the octree store.

Any static file server with Range support works; this one exists so the
pipeline is self-contained. Requests resolving outside the store directory
are refused.
"""

from __future__ import annotations

import threading
from functools import partial
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path


class _RangeHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def __init__(self, *args, root: Path, quiet: bool = True, **kwargs):
        self.root = root
        self.quiet = quiet
        super().__init__(*args, **kwargs)

    def log_message(self, fmt, *args):
        if not self.quiet:
            super().log_message(fmt, *args)

    def _resolve(self) -> Path | None:
        rel = self.path.split("?", 1)[0].lstrip("/")
        target = (self.root / rel).resolve()
        if not str(target).startswith(str(self.root.resolve()) + "/") and target != self.root.resolve():
            return None
        return target

    def do_GET(self):
        target = self._resolve()
        if target is None:
            self.send_error(403, "path escapes the store directory")
            return
        if not target.is_file():
            self.send_error(404)
            return
        data = target.read_bytes()
        rng = self.headers.get("Range")
        if rng:
            try:
                unit, _, spec = rng.partition("=")
                start_s, _, end_s = spec.partition("-")
                if unit.strip() != "bytes":
                    raise ValueError
                start = int(start_s)
                end = int(end_s) if end_s else len(data) - 1
            except ValueError:
                self.send_error(416, "malformed Range header")
                return
            if start >= len(data):
                self.send_error(416, "range start beyond end of file")
                return
            end = min(end, len(data) - 1)
            chunk = data[start : end + 1]
            self.send_response(206)
            self.send_header("Content-Range", f"bytes {start}-{end}/{len(data)}")
        else:
            chunk = data
            self.send_response(200)
        self.send_header("Accept-Ranges", "bytes")
        self.send_header("Content-Length", str(len(chunk)))
        self.send_header("Content-Type", "application/octet-stream")
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(chunk)


def make_server(root, port: int = 0, quiet: bool = True) -> ThreadingHTTPServer:
    handler = partial(_RangeHandler, root=Path(root), quiet=quiet)
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


class StoreServer:
    """Context manager running the range server on a background thread."""

    def __init__(self, root, port: int = 0):
        self.httpd = make_server(root, port)
        self.port = self.httpd.server_address[1]
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self) -> "StoreServer":
        self._thread.start()
        return self

    def url(self, name: str) -> str:
        return f"http://127.0.0.1:{self.port}/{name}"

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()
