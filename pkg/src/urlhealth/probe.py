"""HTTP liveness probing: HEAD with GET fallback, bounded and per-host polite."""

from __future__ import annotations

import ipaddress
import socket
import ssl
import threading
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Callable, Mapping, Sequence
from urllib.parse import urlsplit

import httpx

DEFAULT_USER_AGENT = (
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 "
    "(KHTML, like Gecko) Chrome/124.0.0.0 Safari/537.36"
)

# HEAD statuses that commonly mean "HEAD not supported" or bot-filtering of HEAD.
FALLBACK_STATUSES = frozenset({403, 405, 501})


class ErrorKind(str, Enum):
    DNS_FAILURE = "dns_failure"
    CONNECT_FAILURE = "connect_failure"
    TLS_FAILURE = "tls_failure"
    TIMEOUT = "timeout"
    REDIRECT_LOOP = "redirect_loop"
    PROTOCOL_ERROR = "protocol_error"


class Method(str, Enum):
    HEAD = "HEAD"
    GET = "GET"


@dataclass(frozen=True)
class ProbeConfig:
    connect_timeout: float = 15.0
    total_timeout: float = 30.0
    max_redirects: int = 10
    workers: int = 60
    per_host_max_inflight: int = 4
    retry_on_429: int = 2
    retry_backoff: float = 2.0
    user_agent: str = DEFAULT_USER_AGENT

    def __post_init__(self) -> None:
        if self.workers < 1 or self.per_host_max_inflight < 1:
            raise ValueError("workers and per_host_max_inflight must be >= 1")
        if self.connect_timeout <= 0 or self.total_timeout <= 0:
            raise ValueError("timeouts must be positive")
        if self.max_redirects < 0 or self.retry_on_429 < 0 or self.retry_backoff < 0:
            raise ValueError("max_redirects, retry_on_429 and retry_backoff must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class ProbeResult:
    url: str
    status: int | None
    error_kind: ErrorKind | None
    method_used: Method
    fallback_applied: bool
    final_url: str
    elapsed: float
    checked_at: str
    attempts: int = 1

    def __post_init__(self) -> None:
        if (self.status is None) == (self.error_kind is None):
            raise ValueError("exactly one of status / error_kind must be set")
        if self.fallback_applied and self.method_used is not Method.GET:
            raise ValueError("fallback_applied implies method_used=GET")
        if self.attempts < 1:
            raise ValueError("attempts must be >= 1")

    @property
    def outcome(self) -> int | str:
        """Status code, or the error kind's value for failed connections."""
        return self.status if self.status is not None else self.error_kind.value

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["error_kind"] = self.error_kind.value if self.error_kind else None
        d["method_used"] = self.method_used.value
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ProbeResult:
        return cls(
            url=d["url"],
            status=d.get("status"),
            error_kind=ErrorKind(d["error_kind"]) if d.get("error_kind") else None,
            method_used=Method(d.get("method_used", "HEAD")),
            fallback_applied=bool(d.get("fallback_applied", False)),
            final_url=d.get("final_url", d["url"]),
            elapsed=float(d.get("elapsed", 0.0)),
            checked_at=d.get("checked_at", ""),
            attempts=int(d.get("attempts", 1)),
        )


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z")


def _error_kind(exc: BaseException) -> ErrorKind:
    if isinstance(exc, httpx.TooManyRedirects):
        return ErrorKind.REDIRECT_LOOP
    if isinstance(exc, httpx.TimeoutException):
        return ErrorKind.TIMEOUT
    # httpx wraps the socket-level error; walk the chain to find out what failed.
    e: BaseException | None = exc
    while e is not None:
        if isinstance(e, socket.gaierror):
            return ErrorKind.DNS_FAILURE
        if isinstance(e, ssl.SSLError):
            return ErrorKind.TLS_FAILURE
        if isinstance(e, (socket.timeout, TimeoutError)):
            return ErrorKind.TIMEOUT
        e = e.__cause__ or e.__context__
    if isinstance(exc, httpx.ConnectError):
        return ErrorKind.CONNECT_FAILURE
    return ErrorKind.PROTOCOL_ERROR


def make_client(config: ProbeConfig, **kwargs: Any) -> httpx.Client:
    limits = httpx.Limits(max_connections=config.workers, max_keepalive_connections=config.workers)
    return httpx.Client(
        follow_redirects=True,
        max_redirects=config.max_redirects,
        timeout=httpx.Timeout(config.total_timeout, connect=config.connect_timeout),
        headers={"User-Agent": config.user_agent, "Accept": "*/*"},
        limits=limits,
        **kwargs,
    )


def _request(client: httpx.Client, method: str, url: str) -> httpx.Response:
    # Streaming so GET fallbacks never download the body.
    with client.stream(method, url) as resp:
        return resp


def probe_one(
    url: str,
    config: ProbeConfig = ProbeConfig(),
    client: httpx.Client | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> ProbeResult:
    """Probe one URL. Network failures are reported in ``error_kind``, never raised."""
    parts = urlsplit(url)
    if parts.scheme not in ("http", "https") or not parts.netloc:
        raise ValueError(f"not an http(s) URL: {url!r}")

    own_client = client is None
    if own_client:
        client = make_client(config)
    start = time.monotonic()
    attempts = 0
    try:
        for retry in range(config.retry_on_429 + 1):
            attempts += 1
            method, fallback = Method.HEAD, False
            try:
                resp = _request(client, "HEAD", url)
                if resp.status_code in FALLBACK_STATUSES:
                    method, fallback = Method.GET, True
                    resp = _request(client, "GET", url)
            except (httpx.HTTPError, OSError) as exc:
                return ProbeResult(
                    url=url,
                    status=None,
                    error_kind=_error_kind(exc),
                    method_used=method,
                    fallback_applied=fallback,
                    final_url=url,
                    elapsed=time.monotonic() - start,
                    checked_at=utc_now(),
                    attempts=attempts,
                )
            if resp.status_code == 429 and retry < config.retry_on_429:
                sleep(config.retry_backoff * 2**retry)
                continue
            return ProbeResult(
                url=url,
                status=resp.status_code,
                error_kind=None,
                method_used=method,
                fallback_applied=fallback,
                final_url=str(resp.url),
                elapsed=time.monotonic() - start,
                checked_at=utc_now(),
                attempts=attempts,
            )
        raise AssertionError("unreachable")
    finally:
        if own_client:
            client.close()


def registrable_host(url: str) -> str:
    """Approximate registrable domain used as the politeness key.

    No public-suffix list is bundled: the last two labels are used, or three when
    the name looks like ``example.co.uk``. IP literals and single-label hosts are
    returned unchanged.
    """
    host = (urlsplit(url).hostname or "").lower().rstrip(".")
    try:
        ipaddress.ip_address(host)
        return host
    except ValueError:
        pass
    labels = host.split(".")
    if len(labels) <= 2:
        return host
    if len(labels[-1]) == 2 and len(labels[-2]) <= 3:
        return ".".join(labels[-3:])
    return ".".join(labels[-2:])


class HostLimiter:
    """Per-host semaphores, created lazily."""

    def __init__(self, limit: int) -> None:
        self._limit = limit
        self._lock = threading.Lock()
        self._sems: dict[str, threading.BoundedSemaphore] = defaultdict(
            lambda: threading.BoundedSemaphore(self._limit)
        )

    def slot(self, host: str) -> threading.BoundedSemaphore:
        with self._lock:
            return self._sems[host]


ProgressSink = Callable[[int, int, ProbeResult], None]


def probe_batch(
    urls: Sequence[str],
    config: ProbeConfig = ProbeConfig(),
    progress_sink: ProgressSink | None = None,
    client: httpx.Client | None = None,
) -> list[ProbeResult]:
    """Probe ``urls`` concurrently; results come back in input order.

    At most ``config.workers`` probes run at once overall and at most
    ``config.per_host_max_inflight`` against any one registrable host.
    ``progress_sink(done, total, result)`` is called from worker threads as each
    probe completes.
    """
    if not urls:
        raise ValueError("urls must be non-empty")
    total = len(urls)
    limiter = HostLimiter(config.per_host_max_inflight)
    done = 0
    done_lock = threading.Lock()
    own_client = client is None
    if own_client:
        client = make_client(config)

    def work(url: str) -> ProbeResult:
        nonlocal done
        with limiter.slot(registrable_host(url)):
            result = probe_one(url, config, client)
        if progress_sink is not None:
            with done_lock:
                done += 1
                n = done
            progress_sink(n, total, result)
        return result

    try:
        with ThreadPoolExecutor(max_workers=min(config.workers, total)) as pool:
            return list(pool.map(work, urls))
    finally:
        if own_client:
            client.close()

