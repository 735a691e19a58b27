"""Citation URL verification: liveness probing, link-rot vs hallucination
classification, and the statistics around it."""

__version__ = "0.1.0"

from .archive import ArchiveClient, ArchiveResult, ArchiveUnavailable
from .classify import (
    Label,
    Mode,
    SpecialCasePolicy,
    Verdict,
    classify_pipeline,
    classify_urlhealth,
    reconcile_modes,
)
from .extract import UrlRecord, dedup, extract_from_citations, extract_from_text, normalize
from .probe import ErrorKind, ProbeConfig, ProbeResult, probe_batch, probe_one

__all__ = [
    "ArchiveClient",
    "ArchiveResult",
    "ArchiveUnavailable",
    "ErrorKind",
    "Label",
    "Mode",
    "ProbeConfig",
    "ProbeResult",
    "SpecialCasePolicy",
    "UrlRecord",
    "Verdict",
    "classify_pipeline",
    "classify_urlhealth",
    "dedup",
    "extract_from_citations",
    "extract_from_text",
    "normalize",
    "probe_batch",
    "probe_one",
    "reconcile_modes",
]
