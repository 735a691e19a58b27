"""Wayback Machine availability lookups with caching and a request-rate limit."""

from __future__ import annotations

import threading
import time
from dataclasses import asdict, dataclass
from typing import Any, Callable, Mapping, MutableMapping, Sequence

import httpx

from .probe import DEFAULT_USER_AGENT, utc_now

AVAILABILITY_ENDPOINT = "https://archive.org/wayback/available"

# transport(url) -> decoded JSON body of the availability endpoint
Transport = Callable[[str], Mapping[str, Any]]


class ArchiveUnavailable(Exception):
    """The archive could not be asked. Never evidence that a URL is unarchived."""

    def __init__(self, url: str, reason: str) -> None:
        super().__init__(f"archive unavailable for {url}: {reason}")
        self.url = url
        self.reason = reason


@dataclass(frozen=True)
class ArchiveResult:
    url: str
    snapshot_exists: bool
    closest_timestamp: str | None
    snapshot_url: str | None
    queried_at: str

    def __post_init__(self) -> None:
        has_meta = self.closest_timestamp is not None and self.snapshot_url is not None
        if self.snapshot_exists != has_meta:
            raise ValueError("snapshot_exists must match presence of timestamp and snapshot_url")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ArchiveResult:
        return cls(
            url=d["url"],
            snapshot_exists=bool(d["snapshot_exists"]),
            closest_timestamp=d.get("closest_timestamp"),
            snapshot_url=d.get("snapshot_url"),
            queried_at=d.get("queried_at", ""),
        )


def parse_availability(url: str, body: Mapping[str, Any]) -> ArchiveResult:
    """Interpret an availability-API response body.

    An empty ``archived_snapshots`` object means no snapshot at any timestamp.
    """
    if not isinstance(body, Mapping) or "archived_snapshots" not in body:
        raise ArchiveUnavailable(url, "response lacks archived_snapshots")
    closest = (body.get("archived_snapshots") or {}).get("closest") or {}
    if closest.get("available") is True and closest.get("timestamp") and closest.get("url"):
        return ArchiveResult(url, True, str(closest["timestamp"]), str(closest["url"]), utc_now())
    return ArchiveResult(url, False, None, None, utc_now())


class HttpTransport:
    """GET the availability endpoint, retrying connection errors and 5xx/429."""

    def __init__(
        self,
        endpoint: str = AVAILABILITY_ENDPOINT,
        retries: int = 3,
        backoff: float = 2.0,
        timeout: float = 30.0,
        user_agent: str = DEFAULT_USER_AGENT,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.endpoint = endpoint
        self.retries = retries
        self.backoff = backoff
        self.sleep = sleep
        self.client = client or httpx.Client(
            timeout=timeout, headers={"User-Agent": user_agent}, follow_redirects=True
        )

    def __call__(self, url: str) -> Mapping[str, Any]:
        reason = "no attempt made"
        for attempt in range(self.retries + 1):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self.client.get(self.endpoint, params={"url": url})
            except httpx.HTTPError as exc:
                reason = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                reason = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise ArchiveUnavailable(url, f"HTTP {resp.status_code}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ArchiveUnavailable(url, f"bad JSON: {exc}") from exc
        raise ArchiveUnavailable(url, reason)

    def close(self) -> None:
        self.client.close()


class RateLimiter:
    """Spaces calls at least ``1/qps`` seconds apart across threads."""

    def __init__(
        self,
        qps: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if qps <= 0:
            raise ValueError("qps must be positive")
        self.interval = 1.0 / qps
        self._clock = clock
        self._sleep = sleep
        self._next = float("-inf")
        self._lock = threading.Lock()

    def wait(self) -> None:
        with self._lock:
            now = self._clock()
            if now < self._next:
                self._sleep(self._next - now)
                now = self._next
            self._next = now + self.interval


class ArchiveClient:
    """Cached, rate-limited availability lookups.

    ``cache`` may be any mutable mapping from normalized URL to ArchiveResult,
    e.g. a dict or the ledger-backed cache from :mod:`urlhealth.store`.
    Failures are never cached.
    """

    def __init__(
        self,
        transport: Transport | None = None,
        cache: MutableMapping[str, ArchiveResult] | None = None,
        qps: float = 1.0,
    ) -> None:
        self.transport = transport if transport is not None else HttpTransport()
        self.cache = cache if cache is not None else {}
        self.limiter = RateLimiter(qps)
        self._lock = threading.Lock()
        self._inflight: dict[str, threading.Lock] = {}

    def _cached(self, url: str) -> ArchiveResult | None:
        with self._lock:
            return self.cache.get(url)

    def lookup(self, url: str) -> ArchiveResult:
        hit = self._cached(url)
        if hit is not None:
            return hit
        # One network call per URL even under concurrent callers.
        with self._lock:
            url_lock = self._inflight.setdefault(url, threading.Lock())
        with url_lock:
            hit = self._cached(url)
            if hit is not None:
                return hit
            self.limiter.wait()
            try:
                body = self.transport(url)
                result = parse_availability(url, body)
                with self._lock:
                    self.cache[url] = result
            except ArchiveUnavailable:
                raise
            except Exception as exc:  # network errors or bugs in injected transports
                raise ArchiveUnavailable(url, f"{type(exc).__name__}: {exc}") from exc
            finally:
                with self._lock:
                    self._inflight.pop(url, None)
            return result

    __call__ = lookup

    def lookup_batch(self, urls: Sequence[str]) -> list[ArchiveResult | ArchiveUnavailable]:
        """Serial lookups in input order; failures are returned in place, not raised."""
        if not urls:
            raise ValueError("urls must be non-empty")
        out: list[ArchiveResult | ArchiveUnavailable] = []
        for url in urls:
            try:
                out.append(self.lookup(url))
            except ArchiveUnavailable as exc:
                out.append(exc)
        return out


def lookup_batch(
    urls: Sequence[str], qps_limit: float = 1.0, client: ArchiveClient | None = None
) -> list[ArchiveResult | ArchiveUnavailable]:
    client = client or ArchiveClient(qps=qps_limit)
    return client.lookup_batch(urls)
