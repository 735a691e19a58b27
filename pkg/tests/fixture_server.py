"""Deterministic local HTTP server for probe/archive tests.

Routes (all paths are interpreted identically for HEAD and GET unless noted):

  /status/<code>[/...]         respond <code>
  /split/<head>/<get>[/...]    HEAD gets <head>, GET gets <get>
  /redirect/<n>/<code>         n hops of 302, then <code>
  /loop                        302 to itself forever
  /hold/<ms>/<code>[/...]      sleep <ms> before responding
  /ratelimit/<key>/<n>         429 for the first n requests per key, then 200
  /wayback/available?url=U     availability API: a snapshot exists iff U
                               contains "archived"; U containing "archfail"
                               gets a 503
"""

from __future__ import annotations

import json
import threading
import time
from collections import Counter
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit


class FixtureState:
    def __init__(self) -> None:
        self.lock = threading.Lock()
        self.inflight = 0
        self.peak = 0
        self.requests: list[tuple[str, str]] = []
        self.counters: Counter = Counter()
        self.archive_calls: Counter = Counter()

    def reset(self) -> None:
        with self.lock:
            self.inflight = self.peak = 0
            self.requests.clear()
            self.counters.clear()
            self.archive_calls.clear()


class Handler(BaseHTTPRequestHandler):
    state: FixtureState

    def log_message(self, *args) -> None:  # silence
        pass

    def do_HEAD(self) -> None:
        self._handle("HEAD")

    def do_GET(self) -> None:
        self._handle("GET")

    def _send(self, code: int, body: bytes = b"", headers: dict | None = None) -> None:
        self.send_response(code)
        for k, v in (headers or {}).items():
            self.send_header(k, v)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if self.command != "HEAD" and body:
            self.wfile.write(body)

    def _handle(self, method: str) -> None:
        st = self.state
        with st.lock:
            st.inflight += 1
            st.peak = max(st.peak, st.inflight)
            st.requests.append((method, self.path))
        try:
            self._route(method)
        finally:
            with st.lock:
                st.inflight -= 1

    def _route(self, method: str) -> None:
        parts = urlsplit(self.path)
        seg = [s for s in parts.path.split("/") if s]
        if not seg:
            return self._send(200, b"root")
        head, rest = seg[0], seg[1:]
        if head == "status":
            return self._send(int(rest[0]), b"x")
        if head == "split":
            return self._send(int(rest[0] if method == "HEAD" else rest[1]), b"x")
        if head == "redirect":
            n, code = int(rest[0]), int(rest[1])
            if n == 0:
                return self._send(code, b"x")
            return self._send(302, headers={"Location": f"/redirect/{n - 1}/{code}"})
        if head == "loop":
            return self._send(302, headers={"Location": "/loop"})
        if head == "hold":
            time.sleep(int(rest[0]) / 1000)
            return self._send(int(rest[1]), b"x")
        if head == "ratelimit":
            key, n = rest[0], int(rest[1])
            with self.state.lock:
                self.state.counters[key] += 1
                seen = self.state.counters[key]
            return self._send(429 if seen <= n else 200, b"x")
        if head == "wayback":
            target = parse_qs(parts.query).get("url", [""])[0]
            with self.state.lock:
                self.state.archive_calls[target] += 1
            if "archfail" in target:
                return self._send(503, b"down")
            if "archived" in target:
                body = {
                    "url": target,
                    "archived_snapshots": {
                        "closest": {
                            "available": True,
                            "status": "200",
                            "timestamp": "20200101000000",
                            "url": f"http://web.archive.org/web/20200101000000/{target}",
                        }
                    },
                }
            else:
                body = {"url": target, "archived_snapshots": {}}
            return self._send(200, json.dumps(body).encode(), {"Content-Type": "application/json"})
        return self._send(404, b"not found")


class FixtureServer:
    def __init__(self) -> None:
        self.state = FixtureState()
        handler = type("BoundHandler", (Handler,), {"state": self.state})
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), handler)
        self.httpd.daemon_threads = True
        self.httpd.request_queue_size = 256
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def base(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def archive_endpoint(self) -> str:
        return f"{self.base}/wayback/available"

    def url(self, path: str) -> str:
        return f"{self.base}/{path.lstrip('/')}"

    def __enter__(self) -> FixtureServer:
        self.thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()


if __name__ == "__main__":
    import sys

    with FixtureServer() as srv:
        print(srv.base, flush=True)
        try:
            sys.stdin.read()
        except KeyboardInterrupt:
            pass
