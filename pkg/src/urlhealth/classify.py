"""Verdicts under the two classification regimes.

URLHEALTH is the four-way tool taxonomy: only a 404 triggers an archive lookup,
everything that is neither 200 nor 404 is UNKNOWN. PIPELINE is the measurement
taxonomy: every non-403 4xx/5xx and every connection failure is non-resolving
and is split into STALE or HALLUCINATED by the archive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping
from urllib.parse import urlsplit

from .archive import ArchiveResult, ArchiveUnavailable
from .probe import ProbeResult, utc_now

ArchiveLookup = Callable[[str], ArchiveResult]


class Mode(str, Enum):
    URLHEALTH = "URLHEALTH"
    PIPELINE = "PIPELINE"


class Label(str, Enum):
    # URLHEALTH
    LIVE = "LIVE"
    DEAD = "DEAD"
    LIKELY_HALLUCINATED = "LIKELY_HALLUCINATED"
    UNKNOWN = "UNKNOWN"
    # PIPELINE
    ALIVE = "ALIVE"
    STALE = "STALE"
    HALLUCINATED = "HALLUCINATED"
    EXCLUDED_403 = "EXCLUDED_403"
    FORCED_ALIVE = "FORCED_ALIVE"


URLHEALTH_LABELS = (Label.LIVE, Label.DEAD, Label.LIKELY_HALLUCINATED, Label.UNKNOWN)
PIPELINE_LABELS = (
    Label.ALIVE,
    Label.STALE,
    Label.HALLUCINATED,
    Label.EXCLUDED_403,
    Label.FORCED_ALIVE,
)
MODE_LABELS = {Mode.URLHEALTH: URLHEALTH_LABELS, Mode.PIPELINE: PIPELINE_LABELS}
NON_RESOLVING = frozenset({Label.STALE, Label.HALLUCINATED})


@dataclass(frozen=True)
class SpecialCasePolicy:
    classify_as_alive_hosts: tuple[str, ...] = ("reddit.com",)
    exclude_403: bool = True

    def __post_init__(self) -> None:
        for h in self.classify_as_alive_hosts:
            if h != h.lower() or "://" in h or not h:
                raise ValueError(f"host suffix must be lowercase without scheme: {h!r}")

    def forced_alive_rule(self, url: str) -> str | None:
        host = (urlsplit(url).hostname or "").lower().rstrip(".")
        for suffix in self.classify_as_alive_hosts:
            s = suffix.lstrip(".")
            if host == s or host.endswith("." + s):
                return f"classify_as_alive:{s}"
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "classify_as_alive_hosts": list(self.classify_as_alive_hosts),
            "exclude_403": self.exclude_403,
        }


@dataclass(frozen=True)
class Verdict:
    url: str
    mode: Mode
    label: Label | None
    basis: Mapping[str, Any] = field(default_factory=dict)
    checked_at: str = ""

    def __post_init__(self) -> None:
        if self.label is not None and self.label not in MODE_LABELS[self.mode]:
            raise ValueError(f"{self.label} is not a {self.mode.value} label")
        if self.label is None and self.mode is not Mode.PIPELINE:
            raise ValueError("only PIPELINE verdicts may be pending")

    @property
    def pending(self) -> bool:
        return self.label is None

    @property
    def status(self) -> int | None:
        return self.basis.get("status")

    @property
    def error_kind(self) -> str | None:
        return self.basis.get("error_kind")

    def to_dict(self) -> dict[str, Any]:
        return {
            "url": self.url,
            "mode": self.mode.value,
            "label": self.label.value if self.label else None,
            "pending": self.pending,
            "basis": dict(self.basis),
            "checked_at": self.checked_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Verdict:
        return cls(
            url=d["url"],
            mode=Mode(d["mode"]),
            label=Label(d["label"]) if d.get("label") else None,
            basis=dict(d.get("basis") or {}),
            checked_at=d.get("checked_at", ""),
        )


def _basis(probe: ProbeResult, **extra: Any) -> dict[str, Any]:
    return {
        "status": probe.status,
        "error_kind": probe.error_kind.value if probe.error_kind else None,
        **extra,
    }


def classify_urlhealth(probe: ProbeResult, archive_lookup: ArchiveLookup) -> Verdict:
    if probe.status == 200:
        label, basis = Label.LIVE, _basis(probe, archive_consulted=False)
    elif probe.status == 404:
        try:
            snap = archive_lookup(probe.url)
        except ArchiveUnavailable as exc:
            label = Label.UNKNOWN
            basis = _basis(probe, archive_consulted=True, archive_error=exc.reason)
        else:
            label = Label.DEAD if snap.snapshot_exists else Label.LIKELY_HALLUCINATED
            basis = _basis(
                probe,
                archive_consulted=True,
                snapshot_exists=snap.snapshot_exists,
                snapshot_url=snap.snapshot_url,
            )
    else:
        label, basis = Label.UNKNOWN, _basis(probe, archive_consulted=False)
    return Verdict(probe.url, Mode.URLHEALTH, label, basis, utc_now())


def is_non_resolving(probe: ProbeResult, exclude_403: bool = True) -> bool:
    if probe.status is None:
        return True
    if probe.status == 403 and exclude_403:
        return False
    return probe.status >= 400


def classify_pipeline(
    probe: ProbeResult,
    archive_lookup: ArchiveLookup,
    policy: SpecialCasePolicy = SpecialCasePolicy(),
) -> Verdict:
    """PIPELINE verdict. An archive outage yields a pending verdict (label None)."""
    rule = policy.forced_alive_rule(probe.url)
    if rule is not None:
        return Verdict(
            probe.url, Mode.PIPELINE, Label.FORCED_ALIVE, _basis(probe, special_case=rule), utc_now()
        )
    if probe.status == 403 and policy.exclude_403:
        label, basis = Label.EXCLUDED_403, _basis(probe, special_case="exclude_403")
    elif not is_non_resolving(probe, policy.exclude_403):
        # 1xx/2xx/3xx final statuses all resolve.
        label, basis = Label.ALIVE, _basis(probe)
    else:
        try:
            snap = archive_lookup(probe.url)
        except ArchiveUnavailable as exc:
            label = None
            basis = _basis(probe, archive_consulted=True, archive_error=exc.reason)
        else:
            label = Label.STALE if snap.snapshot_exists else Label.HALLUCINATED
            basis = _basis(
                probe,
                archive_consulted=True,
                snapshot_exists=snap.snapshot_exists,
                snapshot_url=snap.snapshot_url,
            )
    return Verdict(probe.url, Mode.PIPELINE, label, basis, utc_now())


# Pipeline labels compatible with each URLHEALTH label for the same probe.
# None stands for a pending pipeline verdict.
_COMPATIBLE: dict[Label, frozenset] = {
    Label.LIVE: frozenset({Label.ALIVE, Label.FORCED_ALIVE}),
    Label.DEAD: frozenset({Label.STALE, Label.FORCED_ALIVE, None}),
    Label.LIKELY_HALLUCINATED: frozenset({Label.HALLUCINATED, Label.FORCED_ALIVE, None}),
    Label.UNKNOWN: frozenset({*PIPELINE_LABELS, None}),
}


@dataclass(frozen=True)
class Reconciliation:
    ok: bool
    explanation: str


def reconcile_modes(urlhealth: Verdict, pipeline: Verdict) -> Reconciliation:
    """Check that two verdicts for one probe respect the regimes' containment.

    URLHEALTH is the narrower regime: whatever it calls LIKELY_HALLUCINATED or
    DEAD, PIPELINE must call HALLUCINATED or STALE respectively, unless a
    special-case host rule fired or the archive was unavailable.
    """
    if urlhealth.mode is not Mode.URLHEALTH or pipeline.mode is not Mode.PIPELINE:
        return Reconciliation(False, "expected one URLHEALTH and one PIPELINE verdict")
    if urlhealth.url != pipeline.url:
        return Reconciliation(False, f"different URLs: {urlhealth.url} vs {pipeline.url}")
    for key in ("status", "error_kind"):
        if urlhealth.basis.get(key) != pipeline.basis.get(key):
            return Reconciliation(
                False,
                f"verdicts come from different probes ({key}: "
                f"{urlhealth.basis.get(key)!r} vs {pipeline.basis.get(key)!r})",
            )
    if pipeline.label not in _COMPATIBLE[urlhealth.label]:
        got = pipeline.label.value if pipeline.label else "pending"
        return Reconciliation(
            False, f"{urlhealth.label.value} in URLHEALTH mode cannot pair with {got} in PIPELINE mode"
        )
    if urlhealth.label is Label.UNKNOWN and pipeline.label in NON_RESOLVING:
        return Reconciliation(True, "PIPELINE treats this failure as non-resolving; URLHEALTH defers")
    return Reconciliation(True, "consistent")
