"""Citation URL extraction from free text and neutral citation records."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

# Closing CJK brackets/quotes that commonly trail URLs in Chinese/Japanese prose.
CJK_CLOSERS = "）】」』〕〉》〗〙〛＞｝］。，、；：！？"
DEFAULT_STRIP_SET = frozenset(".,;:!?)]}»\"'" + CJK_CLOSERS)

# RFC 3986 unreserved + reserved + "%". ASCII only: in CJK prose a URL is often
# followed directly by text with no separating space.
URL_CHARS = "A-Za-z0-9\\-._~:/?#\\[\\]@!$&'()*+,;=%"
_URL_RE = re.compile(f"https?://[{URL_CHARS}]+")
_SCHEME_RE = re.compile(r"^https?://.")


class NormalizationError(ValueError):
    pass


@dataclass(frozen=True)
class UrlRecord:
    raw: str
    normalized: str
    source_id: str
    group_labels: Mapping[str, str] = field(default_factory=dict)
    char_span: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if not self.normalized.startswith(("http://", "https://")):
            raise ValueError(f"not an http(s) URL: {self.normalized!r}")
        if self.char_span is not None and not 0 <= self.char_span[0] < self.char_span[1]:
            raise ValueError(f"bad char_span {self.char_span}")

    def label_key(self) -> tuple[tuple[str, str], ...]:
        return tuple(sorted(self.group_labels.items()))

    def to_dict(self) -> dict[str, Any]:
        return {
            "raw": self.raw,
            "normalized": self.normalized,
            "source_id": self.source_id,
            "group_labels": dict(self.group_labels),
            "char_span": list(self.char_span) if self.char_span else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> UrlRecord:
        span = d.get("char_span")
        return cls(
            raw=d["raw"],
            normalized=d["normalized"],
            source_id=d.get("source_id", ""),
            group_labels=dict(d.get("group_labels") or {}),
            char_span=tuple(span) if span else None,
        )


@dataclass(frozen=True)
class Rejection:
    index: int
    url: Any
    reason: str


def normalize(raw: str, strip_set: Iterable[str] = DEFAULT_STRIP_SET) -> str:
    """Canonical form used for counting and deduplication.

    Only surrounding whitespace and trailing punctuation are removed; host case,
    percent-escapes, query order and fragment are left exactly as given so that
    uniqueness stays a literal-string notion.
    """
    strip_chars = "".join(strip_set)
    url = raw.strip()
    while True:
        stripped = url.rstrip(strip_chars).rstrip()
        if stripped == url:
            break
        url = stripped
    if not _SCHEME_RE.match(url):
        raise NormalizationError(f"no http(s) URL left after normalizing {raw!r}")
    return url


def extract_from_text(
    text: str,
    source_id: str = "",
    labels: Mapping[str, str] | None = None,
    strip_set: Iterable[str] = DEFAULT_STRIP_SET,
) -> list[UrlRecord]:
    labels = dict(labels or {})
    records = []
    for m in _URL_RE.finditer(text):
        try:
            normalized = normalize(m.group(0), strip_set)
        except NormalizationError:
            continue
        records.append(
            UrlRecord(
                raw=m.group(0),
                normalized=normalized,
                source_id=source_id,
                group_labels=labels,
                char_span=(m.start(), m.end()),
            )
        )
    return records


def extract_from_citations(
    citations: Iterable[Mapping[str, Any]],
    strip_set: Iterable[str] = DEFAULT_STRIP_SET,
) -> tuple[list[UrlRecord], list[Rejection]]:
    """Map neutral ``{url, source_id, labels}`` objects to records.

    Bad entries are reported individually and never abort the batch.
    """
    records: list[UrlRecord] = []
    rejected: list[Rejection] = []
    for i, obj in enumerate(citations):
        url = obj.get("url") if isinstance(obj, Mapping) else None
        if not isinstance(url, str) or not url.strip():
            rejected.append(Rejection(i, url, "missing or empty url"))
            continue
        try:
            normalized = normalize(url, strip_set)
        except NormalizationError as exc:
            rejected.append(Rejection(i, url, str(exc)))
            continue
        labels = obj.get("labels") or {}
        records.append(
            UrlRecord(
                raw=url,
                normalized=normalized,
                source_id=str(obj.get("source_id", "")),
                group_labels={str(k): str(v) for k, v in labels.items()},
            )
        )
    return records, rejected


def read_citations_jsonl(lines: Iterable[str]) -> tuple[list[UrlRecord], list[Rejection]]:
    objs: list[Any] = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            objs.append(json.loads(line))
        except json.JSONDecodeError:
            objs.append({"url": None, "_line": line})
    return extract_from_citations(objs)


def dedup(records: Iterable[UrlRecord], key: str = "labels") -> list[UrlRecord]:
    """Keep the first record per key, preserving input order.

    ``key="labels"`` dedups on (normalized URL, group labels) so the same URL
    cited by two models is counted once per model; ``key="url"`` ignores labels.
    """
    if key not in ("labels", "url"):
        raise ValueError(f"unknown dedup key {key!r}")
    seen: set = set()
    out = []
    for rec in records:
        k = rec.normalized if key == "url" else (rec.normalized, rec.label_key())
        if k in seen:
            continue
        seen.add(k)
        out.append(rec)
    return out
