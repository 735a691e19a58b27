"""Probe -> archive -> classify workflows over a run ledger."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

from .archive import ArchiveClient
from .classify import (
    Mode,
    SpecialCasePolicy,
    Verdict,
    classify_pipeline,
    classify_urlhealth,
)
from .extract import UrlRecord
from .probe import ProbeConfig, ProbeResult, probe_batch
from .store import RunLedger

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Checked:
    probe: ProbeResult
    urlhealth: Verdict
    pipeline: Verdict


def classify_both(probe: ProbeResult, archive: ArchiveClient, policy: SpecialCasePolicy) -> Checked:
    return Checked(
        probe,
        classify_urlhealth(probe, archive.lookup),
        classify_pipeline(probe, archive.lookup, policy),
    )


def check_urls(
    urls: Sequence[str],
    probe_config: ProbeConfig,
    archive: ArchiveClient,
    policy: SpecialCasePolicy = SpecialCasePolicy(),
) -> list[Checked]:
    probes = probe_batch(list(urls), probe_config)
    return [classify_both(p, archive, policy) for p in probes]


def run_config(probe_config: ProbeConfig, policy: SpecialCasePolicy) -> dict[str, Any]:
    """The settings that make two runs comparable (hashed into the ledger meta)."""
    return {"probe": probe_config.to_dict(), "policy": policy.to_dict()}


def record_key(rec: UrlRecord) -> str:
    return json.dumps([rec.normalized, rec.source_id, rec.label_key()], separators=(",", ":"))


def _verdict_done(payload: dict[str, Any] | None) -> bool:
    if not payload:
        return False
    uh = payload.get(Mode.URLHEALTH.value) or {}
    pl = payload.get(Mode.PIPELINE.value) or {}
    return bool(pl.get("label")) and "archive_error" not in (uh.get("basis") or {})


def run_batch(
    records: Sequence[UrlRecord],
    ledger: RunLedger,
    probe_config: ProbeConfig,
    archive: ArchiveClient,
    policy: SpecialCasePolicy = SpecialCasePolicy(),
    progress: Callable[[int, int, ProbeResult], None] | None = None,
) -> list[Checked]:
    """Probe, look up and classify every distinct URL, skipping finished work.

    Probe results are written to the ledger as they complete, so an interrupted
    run resumes with only the missing probes. Verdicts whose archive lookup
    failed are retried on the next run.
    """
    new_records = [(record_key(r), r.to_dict()) for r in records if ("record", record_key(r)) not in ledger]
    ledger.upsert_many("record", new_records)

    urls = list(dict.fromkeys(r.normalized for r in records))
    todo = [u for u in urls if ("probe", u) not in ledger]
    log.info("%d distinct URLs, %d already probed", len(urls), len(urls) - len(todo))

    def sink(done: int, total: int, result: ProbeResult) -> None:
        ledger.upsert("probe", result.url, result.to_dict())
        if progress is not None:
            progress(done, total, result)

    if todo:
        probe_batch(todo, probe_config, progress_sink=sink)

    out = []
    for url in urls:
        probe = ProbeResult.from_dict(ledger.get("probe", url))
        payload = ledger.get("verdict", url)
        if _verdict_done(payload):
            out.append(
                Checked(
                    probe,
                    Verdict.from_dict(payload[Mode.URLHEALTH.value]),
                    Verdict.from_dict(payload[Mode.PIPELINE.value]),
                )
            )
            continue
        checked = classify_both(probe, archive, policy)
        ledger.upsert(
            "verdict",
            url,
            {
                Mode.URLHEALTH.value: checked.urlhealth.to_dict(),
                Mode.PIPELINE.value: checked.pipeline.to_dict(),
            },
        )
        out.append(checked)
    return out


def ledger_verdicts(ledger: RunLedger, mode: Mode) -> list[tuple[Verdict, UrlRecord]]:
    """Join stored records with their verdicts; one pair per record.

    Records whose URL has no verdict yet are skipped.
    """
    pairs = []
    for _, rec_d in ledger.iterate("record"):
        rec = UrlRecord.from_dict(rec_d)
        payload = ledger.get("verdict", rec.normalized)
        if not payload or mode.value not in payload:
            continue
        pairs.append((Verdict.from_dict(payload[mode.value]), rec))
    return pairs


def verdict_lines(checked: Iterable[Checked], modes: Sequence[Mode]) -> Iterable[dict[str, Any]]:
    for c in checked:
        for m in modes:
            yield (c.urlhealth if m is Mode.URLHEALTH else c.pipeline).to_dict()
