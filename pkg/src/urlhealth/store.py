"""Append-only JSONL run ledger with a sidecar meta file."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import uuid
from pathlib import Path
from typing import Any, Iterator, Mapping, MutableMapping

from .archive import ArchiveResult
from .probe import utc_now

log = logging.getLogger(__name__)

KINDS = ("record", "probe", "archive", "verdict")


class LedgerError(Exception):
    pass


class ConfigMismatch(LedgerError):
    def __init__(self, differing: Mapping[str, tuple[Any, Any]]) -> None:
        self.differing = dict(differing)
        fields = ", ".join(f"{k}: {a!r} -> {b!r}" for k, (a, b) in sorted(self.differing.items()))
        super().__init__(f"ledger was created with a different config ({fields}); use --force")


def _flatten(d: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in d.items():
        name = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(_flatten(v, name + "."))
        else:
            out[name] = v
    return out


def config_digest(config: Mapping[str, Any]) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(canon.encode()).hexdigest()


def meta_path(path: str | os.PathLike) -> Path:
    return Path(f"{path}.meta.json")


class RunLedger:
    """Keyed store of run results backed by one JSONL file.

    Every write is one appended line ``{kind, key, payload, ts}``; reading
    replays the file with last-write-wins per ``(kind, key)``. A line cut off
    by a crash is skipped on the next open, so at most that record is lost.
    Use :func:`open_run` rather than constructing this directly.
    """

    def __init__(self, path: str | os.PathLike, meta: dict[str, Any], durable: bool = False) -> None:
        self.path = Path(path)
        self.meta = meta
        self.durable = durable
        self.corrupt_lines = 0
        self._entries: dict[str, dict[str, Any]] = {k: {} for k in KINDS}
        self._lock = threading.Lock()
        self._load()
        self._fh = open(self.path, "a", encoding="utf-8")

    @property
    def run_id(self) -> str:
        return self.meta["run_id"]

    @property
    def config_digest(self) -> str:
        return self.meta["config_digest"]

    def _load(self) -> None:
        if not self.path.exists():
            self.path.touch()
            return
        with open(self.path, "rb") as fh:
            data = fh.read()
        for lineno, raw in enumerate(data.split(b"\n"), 1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
                kind, key, payload = rec["kind"], rec["key"], rec["payload"]
                self._entries[kind][key] = payload
            except (ValueError, KeyError, TypeError) as exc:
                self.corrupt_lines += 1
                log.warning("%s:%d: skipping corrupt ledger line (%s)", self.path, lineno, exc)
        if data and not data.endswith(b"\n"):
            # Start the next append on a fresh line after a torn write.
            with open(self.path, "ab") as fh:
                fh.write(b"\n")

    def _write(self, lines: list[str]) -> None:
        self._fh.write("".join(lines))
        self._fh.flush()
        if self.durable:
            os.fsync(self._fh.fileno())

    def upsert(self, kind: str, key: str, payload: Any) -> None:
        self.upsert_many(kind, [(key, payload)])

    def upsert_many(self, kind: str, items: Any) -> None:
        if kind not in KINDS:
            raise LedgerError(f"unknown record kind {kind!r}")
        ts = utc_now()
        lines = []
        with self._lock:
            for key, payload in items:
                lines.append(
                    json.dumps(
                        {"kind": kind, "key": key, "payload": payload, "ts": ts},
                        ensure_ascii=False,
                        separators=(",", ":"),
                    )
                    + "\n"
                )
                self._entries[kind][key] = payload
            if lines:
                self._write(lines)
                self.meta["updated_at"] = ts

    def get(self, kind: str, key: str, default: Any = None) -> Any:
        return self._entries[kind].get(key, default)

    def __contains__(self, item: tuple[str, str]) -> bool:
        kind, key = item
        return key in self._entries[kind]

    def iterate(self, kind: str) -> Iterator[tuple[str, Any]]:
        """``(key, payload)`` pairs in first-insertion order."""
        with self._lock:
            items = list(self._entries[kind].items())
        return iter(items)

    def count(self, kind: str) -> int:
        return len(self._entries[kind])

    def compact(self) -> None:
        """Rewrite the file with one line per live entry (atomic replace)."""
        with self._lock:
            tmp = self.path.with_name(self.path.name + ".tmp")
            ts = utc_now()
            with open(tmp, "w", encoding="utf-8") as fh:
                for kind in KINDS:
                    for key, payload in self._entries[kind].items():
                        fh.write(
                            json.dumps(
                                {"kind": kind, "key": key, "payload": payload, "ts": ts},
                                ensure_ascii=False,
                                separators=(",", ":"),
                            )
                            + "\n"
                        )
                fh.flush()
                os.fsync(fh.fileno())
            self._fh.close()
            os.replace(tmp, self.path)
            self._fh = open(self.path, "a", encoding="utf-8")
            self.corrupt_lines = 0

    def close(self) -> None:
        self._write_meta()
        self._fh.close()

    def _write_meta(self) -> None:
        mp = meta_path(self.path)
        tmp = mp.with_name(mp.name + ".tmp")
        tmp.write_text(json.dumps(self.meta, indent=2, sort_keys=True))
        os.replace(tmp, mp)

    def __enter__(self) -> RunLedger:
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def archive_cache(self) -> LedgerArchiveCache:
        return LedgerArchiveCache(self)


def open_run(
    path: str | os.PathLike,
    config: Mapping[str, Any],
    force: bool = False,
    durable: bool = False,
) -> RunLedger:
    """Create a ledger or resume an existing one.

    Resuming with a config whose digest differs from the stored one raises
    :class:`ConfigMismatch` unless ``force`` is set, in which case the new
    config is recorded.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    digest = config_digest(config)
    mp = meta_path(path)
    now = utc_now()
    if mp.exists():
        meta = json.loads(mp.read_text())
        if meta["config_digest"] != digest:
            old, new = _flatten(meta.get("config", {})), _flatten(config)
            differing = {
                k: (old.get(k), new.get(k)) for k in sorted(set(old) | set(new)) if old.get(k) != new.get(k)
            }
            if not force:
                raise ConfigMismatch(differing)
            log.warning("resuming despite config change: %s", sorted(differing))
            meta.update(config_digest=digest, config=dict(config))
    else:
        meta = {
            "run_id": uuid.uuid4().hex,
            "config_digest": digest,
            "config": json.loads(json.dumps(config, default=list)),
            "created_at": now,
            "updated_at": now,
        }
    ledger = RunLedger(path, meta, durable=durable)
    ledger._write_meta()
    return ledger


def read_ledger(path: str | os.PathLike) -> RunLedger:
    """Open an existing ledger for reading without checking its config."""
    mp = meta_path(path)
    if not Path(path).exists():
        raise LedgerError(f"no ledger at {path}")
    meta = json.loads(mp.read_text()) if mp.exists() else {"run_id": "", "config_digest": ""}
    return RunLedger(path, meta)


class LedgerArchiveCache(MutableMapping):
    """Persistent archive-lookup cache stored as ``archive`` records."""

    def __init__(self, ledger: RunLedger) -> None:
        self.ledger = ledger

    def __getitem__(self, url: str) -> ArchiveResult:
        payload = self.ledger.get("archive", url)
        if payload is None:
            raise KeyError(url)
        return ArchiveResult.from_dict(payload)

    def __setitem__(self, url: str, result: ArchiveResult) -> None:
        self.ledger.upsert("archive", url, result.to_dict())

    def __delitem__(self, url: str) -> None:
        raise TypeError("archive cache entries are never deleted")

    def __iter__(self) -> Iterator[str]:
        return (k for k, _ in self.ledger.iterate("archive"))

    def __len__(self) -> int:
        return self.ledger.count("archive")
