"""Minimal threaded HTTP/JSON server used by the archive, annotation store
and model registry read APIs."""
from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional
from urllib.parse import parse_qs, urlparse


class HttpError(Exception):
    def __init__(self, status: int, message: str, extra: Optional[dict] = None):
        super().__init__(message)
        self.status = status
        self.message = message
        self.extra = extra or {}


class Response:
    def __init__(self, body: bytes, content_type: str = "application/json",
                 status: int = 200, headers: Optional[dict] = None):
        self.body = body
        self.content_type = content_type
        self.status = status
        self.headers = headers or {}

    @classmethod
    def json(cls, obj, status: int = 200, headers: Optional[dict] = None) -> "Response":
        return cls(json.dumps(obj).encode(), "application/json", status, headers)


# route handler: (match groups, query dict, json body or None) -> Response
RouteHandler = Callable[[tuple, dict, Optional[dict]], Response]


class JsonHttpServer:
    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._routes: list[tuple[str, re.Pattern, RouteHandler]] = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"
            disable_nagle_algorithm = True  # lockstep request/response traffic

            def log_message(self, fmt, *args):
                pass

            def _dispatch(self, method: str):
                parsed = urlparse(self.path)
                query = {k: v[0] for k, v in parse_qs(parsed.query).items()}
                body = None
                length = int(self.headers.get("Content-Length") or 0)
                if length:
                    raw = self.rfile.read(length)
                    try:
                        body = json.loads(raw)
                    except ValueError:
                        self._send(Response.json({"error": "bad json"}, 400))
                        return
                for m, pattern, fn in outer._routes:
                    if m != method:
                        continue
                    match = pattern.fullmatch(parsed.path)
                    if match:
                        try:
                            rsp = fn(match.groups(), query, body)
                        except HttpError as exc:
                            rsp = Response.json(
                                {"error": exc.message, **exc.extra}, exc.status
                            )
                        except Exception as exc:  # noqa: BLE001
                            rsp = Response.json({"error": repr(exc)}, 500)
                        self._send(rsp)
                        return
                self._send(Response.json({"error": "not found"}, 404))

            def _send(self, rsp: Response):
                self.send_response(rsp.status)
                self.send_header("Content-Type", rsp.content_type)
                self.send_header("Content-Length", str(len(rsp.body)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.send_header(
                    "Access-Control-Allow-Headers", "Content-Type"
                )
                for k, v in rsp.headers.items():
                    self.send_header(k, v)
                self.end_headers()
                self.wfile.write(rsp.body)

            def do_GET(self):
                self._dispatch("GET")

            def do_POST(self):
                self._dispatch("POST")

            def do_OPTIONS(self):
                self._send(Response(b"", status=204))

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._server.daemon_threads = True
        self._thread: Optional[threading.Thread] = None

    def route(self, method: str, pattern: str, handler: RouteHandler) -> None:
        self._routes.append((method, re.compile(pattern), handler))

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "JsonHttpServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=5)
