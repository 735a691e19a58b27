"""Command-line interface.

Exit codes: 0 = every checked URL is live, 1 = at least one is not,
2 = operational error (bad input, unreadable ledger, config mismatch, ...).
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from collections import Counter, defaultdict
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Iterable, Sequence, TextIO

from . import __version__
from .archive import AVAILABILITY_ENDPOINT, ArchiveClient, HttpTransport
from .classify import Label, Mode, SpecialCasePolicy, Verdict
from .extract import (
    UrlRecord,
    dedup,
    extract_from_text,
    normalize,
    read_citations_jsonl,
)
from .probe import DEFAULT_USER_AGENT, ProbeConfig
from .report import (
    Format,
    Layout,
    ReportSpec,
    SummaryColumn,
    render,
    render_audit,
    render_sensitivity,
    render_urlhealth_summary,
)
from .runner import check_urls, ledger_verdicts, run_batch, run_config
from .selfcorrect import evaluate_run, load_generator, make_verifier
from .stats import (
    AuditAllocation,
    Scenario,
    aggregate,
    apply_sensitivity,
    status_stratum,
    stratified_sample,
    summarize_audit,
)
from .store import LedgerError, meta_path, open_run, read_ledger

log = logging.getLogger("urlhealth")

ENV_PREFIX = "URLHEALTH_"


class CliError(Exception):
    pass


@dataclass
class Settings:
    user_agent: str = DEFAULT_USER_AGENT
    workers: int = 60
    archive_qps: float = 1.0
    archive_endpoint: str = AVAILABILITY_ENDPOINT
    archive_retries: int = 3
    connect_timeout: float = 15.0
    total_timeout: float = 30.0
    max_redirects: int = 10
    per_host_max_inflight: int = 4
    retry_on_429: int = 2
    retry_backoff: float = 2.0
    classify_as_alive_hosts: str = "reddit.com"
    exclude_403: bool = True

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(
            connect_timeout=self.connect_timeout,
            total_timeout=self.total_timeout,
            max_redirects=self.max_redirects,
            workers=self.workers,
            per_host_max_inflight=self.per_host_max_inflight,
            retry_on_429=self.retry_on_429,
            retry_backoff=self.retry_backoff,
            user_agent=self.user_agent,
        )

    def policy(self) -> SpecialCasePolicy:
        hosts = tuple(h.strip().lower() for h in self.classify_as_alive_hosts.split(",") if h.strip())
        return SpecialCasePolicy(hosts, self.exclude_403)

    def archive_client(self, cache: Any = None) -> ArchiveClient:
        transport = HttpTransport(
            endpoint=self.archive_endpoint,
            retries=self.archive_retries,
            user_agent=self.user_agent,
            timeout=self.total_timeout,
        )
        return ArchiveClient(transport, cache=cache, qps=self.archive_qps)


def _coerce(name: str, value: str) -> Any:
    kind = {f.name: f.type for f in fields(Settings)}[name]
    value = value.strip().strip('"').strip("'")
    if kind == "bool":
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise CliError(f"{name}: not a boolean: {value!r}")
    try:
        return {"int": int, "float": float}.get(kind, str)(value)
    except ValueError as exc:
        raise CliError(f"{name}: {exc}") from exc


def read_config_file(path: str) -> dict[str, str]:
    """``key = value`` pairs, with or without an INI/TOML section header."""
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[urlhealth]\n" + text
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise CliError(f"bad config file {path}: {exc}") from exc
    out: dict[str, str] = {}
    for section in parser.sections():
        out.update(parser[section])
    return out


def resolve_settings(args: argparse.Namespace, environ: dict[str, str] | None = None) -> Settings:
    environ = os.environ if environ is None else environ
    names = {f.name for f in fields(Settings)}
    values: dict[str, Any] = {}
    for name in names:
        env = environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            values[name] = _coerce(name, env)
    if getattr(args, "config", None):
        for k, v in read_config_file(args.config).items():
            k = k.replace("-", "_")
            if k not in names:
                raise CliError(f"unknown config key {k!r}")
            values[k] = _coerce(k, v)
    for name in names:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return Settings(**values)


# --- io helpers ---------------------------------------------------------------


def _open_out(path: str | None) -> TextIO:
    return open(path, "w", encoding="utf-8") if path and path != "-" else sys.stdout


def _write_jsonl(rows: Iterable[dict[str, Any]], out: TextIO) -> None:
    for row in rows:
        out.write(json.dumps(row, ensure_ascii=False) + "\n")


def _parse_labels(pairs: Sequence[str] | None) -> dict[str, str]:
    labels = {}
    for p in pairs or ():
        k, sep, v = p.partition("=")
        if not sep:
            raise CliError(f"--label expects key=value, got {p!r}")
        labels[k] = v
    return labels


def load_records(path: str, fmt: str = "auto", labels: dict[str, str] | None = None) -> list[UrlRecord]:
    """Read URL records from a citation JSONL file or from free text."""
    text = sys.stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")
    if fmt == "auto":
        fmt = "jsonl" if path.endswith(".jsonl") else "text"
    if fmt == "jsonl":
        records, rejected = read_citations_jsonl(text.splitlines())
        for r in rejected:
            log.warning("rejected citation #%d (%r): %s", r.index, r.url, r.reason)
        return records
    return extract_from_text(text, source_id=Path(path).name, labels=labels)


def _urls_from_args(args: argparse.Namespace) -> list[str]:
    urls = []
    for u in args.urls or ():
        urls.append(normalize(u))
    if args.input:
        urls.extend(r.normalized for r in load_records(args.input))
    urls = list(dict.fromkeys(urls))
    if not urls:
        raise CliError("no URLs given")
    return urls


# --- commands -------------------------------------------------------------------


def _modes(choice: str) -> list[Mode]:
    return {
        "both": [Mode.URLHEALTH, Mode.PIPELINE],
        "urlhealth": [Mode.URLHEALTH],
        "pipeline": [Mode.PIPELINE],
    }[choice]


_PASSING = {Label.LIVE, Label.ALIVE, Label.FORCED_ALIVE, Label.EXCLUDED_403}


def cmd_check(args: argparse.Namespace, settings: Settings) -> int:
    urls = _urls_from_args(args)
    checked = check_urls(urls, settings.probe_config(), settings.archive_client(), settings.policy())
    modes = _modes(args.mode)
    gate = Mode.PIPELINE if args.mode == "pipeline" else Mode.URLHEALTH
    out = _open_out(args.output)
    failing = 0
    try:
        for c in checked:
            row: dict[str, Any] = {"url": c.probe.url, "probe": c.probe.to_dict()}
            for m in modes:
                row[m.value.lower()] = (c.urlhealth if m is Mode.URLHEALTH else c.pipeline).to_dict()
            out.write(json.dumps(row, ensure_ascii=False) + "\n")
            v = c.urlhealth if gate is Mode.URLHEALTH else c.pipeline
            failing += v.label not in _PASSING
    finally:
        if out is not sys.stdout:
            out.close()
    return 1 if failing else 0


def cmd_extract(args: argparse.Namespace, settings: Settings) -> int:
    records = load_records(args.input, args.format, _parse_labels(args.label))
    if args.source_id:
        records = [
            UrlRecord(r.raw, r.normalized, args.source_id, r.group_labels, r.char_span) for r in records
        ]
    if args.dedup != "none":
        records = dedup(records, key=args.dedup)
    out = _open_out(args.output)
    try:
        _write_jsonl((r.to_dict() for r in records), out)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_batch(args: argparse.Namespace, settings: Settings) -> int:
    records = load_records(args.input, args.format, _parse_labels(args.label))
    if not records:
        raise CliError(f"no URLs found in {args.input}")
    if Path(args.ledger).exists() and meta_path(args.ledger).exists() and not args.resume:
        raise CliError(f"ledger {args.ledger} exists; pass --resume to continue it")
    probe_config, policy = settings.probe_config(), settings.policy()
    ledger = open_run(args.ledger, run_config(probe_config, policy), force=args.force)
    try:
        if ledger.corrupt_lines:
            log.warning("skipped %d corrupt ledger lines", ledger.corrupt_lines)

        def progress(done: int, total: int, _: Any) -> None:
            if done % 100 == 0 or done == total:
                log.info("probed %d/%d", done, total)

        checked = run_batch(
            records,
            ledger,
            probe_config,
            settings.archive_client(ledger.archive_cache()),
            policy,
            progress,
        )
    finally:
        ledger.close()
    if args.output:
        with open(args.output, "w", encoding="utf-8") as out:
            for c in checked:
                _write_jsonl([c.urlhealth.to_dict(), c.pipeline.to_dict()], out)
    counts = Counter((c.pipeline.label.value if c.pipeline.label else "PENDING") for c in checked)
    print(json.dumps({"urls": len(checked), "pipeline": dict(sorted(counts.items()))}))
    return 0


def _group_by(value: str | None) -> list[str]:
    return [g.strip() for g in (value or "").split(",") if g.strip()]


def cmd_report(args: argparse.Namespace, settings: Settings) -> int:
    ledger = read_ledger(args.ledger)
    mode = Mode(args.mode.upper())
    pairs = ledger_verdicts(ledger, mode)
    if not pairs:
        raise CliError(f"no {mode.value} verdicts in {args.ledger}")
    stats = aggregate(pairs, _group_by(args.group_by), level=args.level, resamples=args.bootstrap, seed=args.seed)
    spec = ReportSpec(Layout(args.layout.upper()), args.sort_by, Format(args.format))
    if spec.layout not in (Layout.PER_MODEL_TABLE, Layout.FIELD_HEATMAP_DATA):
        raise CliError(f"report renders PER_MODEL_TABLE or FIELD_HEATMAP_DATA, not {spec.layout.value}")
    _emit(render(stats, spec), args.output)
    return 0


def _emit(text: str, path: str | None) -> None:
    out = _open_out(path)
    try:
        out.write(text)
    finally:
        if out is not sys.stdout:
            out.close()


def _by_group(pairs: Sequence[tuple[Verdict, UrlRecord]], group_by: Sequence[str]) -> dict[str, list[Verdict]]:
    groups: dict[str, list[Verdict]] = defaultdict(list)
    for v, rec in pairs:
        name = "/".join(str(rec.group_labels.get(g, "")) for g in group_by) or "all"
        groups[name].append(v)
    return dict(sorted(groups.items()))


def cmd_sensitivity(args: argparse.Namespace, settings: Settings) -> int:
    ledger = read_ledger(args.ledger)
    pairs = ledger_verdicts(ledger, Mode.PIPELINE)
    if not pairs:
        raise CliError(f"no PIPELINE verdicts in {args.ledger}")
    scenarios = [Scenario(s.upper()) for s in args.scenario] if args.scenario else list(Scenario)
    groups = _by_group(pairs, _group_by(args.group_by))
    results = {g: [apply_sensitivity(vs, sc) for sc in scenarios] for g, vs in groups.items()}
    special = {
        g: (sum(v.label is Label.FORCED_ALIVE for v in vs), len(vs)) for g, vs in groups.items()
    }
    _emit(render_sensitivity(results, Format(args.format), special), args.output)
    return 0


def _allocation_table(allocs: Sequence[AuditAllocation]) -> str:
    lines = ["group\tstratum\tpopulation\tallocated"]
    for a in allocs:
        group = "/".join(v for _, v in a.group_key) or "all"
        lines.append(f"{group}\t{a.stratum}\t{a.population}\t{a.allocated}")
    return "\n".join(lines) + "\n"


def cmd_audit_sample(args: argparse.Namespace, settings: Settings) -> int:
    ledger = read_ledger(args.ledger)
    pairs = [(v, r) for v, r in ledger_verdicts(ledger, Mode.URLHEALTH) if v.label is Label.UNKNOWN]
    if not pairs:
        raise CliError("no UNKNOWN verdicts to sample")
    group = args.group_by or None
    sample = stratified_sample(
        pairs,
        group,
        stratum_of=lambda p: status_stratum(p[0]),
        per_group=args.per_group,
        seed=args.seed,
        labels_of=lambda p: p[1].group_labels,
    )
    rows = [
        {
            "url": v.url,
            "group_labels": dict(r.group_labels),
            "stratum": status_stratum(v),
            "status": v.basis.get("status"),
            "error_kind": v.basis.get("error_kind"),
        }
        for v, r in sample.records
    ]
    out = _open_out(args.output)
    try:
        _write_jsonl(rows, out)
    finally:
        if out is not sys.stdout:
            out.close()
    table = _allocation_table(sample.allocations)
    for key in sample.short_groups:
        table += f"# short group: {'/'.join(v for _, v in key) or 'all'}\n"
    (sys.stderr if out is sys.stdout else sys.stdout).write(table)
    return 0


def cmd_audit_summary(args: argparse.Namespace, settings: Settings) -> int:
    sample = [json.loads(line) for line in Path(args.sample).read_text().splitlines() if line.strip()]
    verdicts = {}
    for line in Path(args.verdicts).read_text().splitlines():
        if line.strip():
            d = json.loads(line)
            verdicts[d["url"]] = d["verdict"]
    missing = [s["url"] for s in sample if s["url"] not in verdicts]
    if missing:
        raise CliError(f"{len(missing)} sampled URLs have no external verdict, e.g. {missing[0]}")
    by_group: dict[str, list[str]] = defaultdict(list)
    by_stratum: dict[str, list[str]] = defaultdict(list)
    for s in sample:
        g = "/".join(str(s["group_labels"].get(k, "")) for k in _group_by(args.group_by)) or "all"
        by_group[g].append(verdicts[s["url"]])
        by_stratum[s["stratum"]].append(verdicts[s["url"]])
    summaries = [summarize_audit(vs, g, args.bootstrap, args.seed) for g, vs in sorted(by_group.items())]
    summaries += [summarize_audit(vs, st, args.bootstrap, args.seed) for st, vs in sorted(by_stratum.items())]
    summaries.append(summarize_audit([verdicts[s["url"]] for s in sample], "Overall", args.bootstrap, args.seed))
    _emit(render_audit(summaries, Format(args.format)), args.output)
    return 0


def _read_questions(path: str) -> list[str]:
    lines = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    if path.endswith(".jsonl"):
        return [json.loads(line)["question"] for line in lines]
    return lines


def cmd_selfcorrect(args: argparse.Namespace, settings: Settings) -> int:
    questions = _read_questions(args.questions)
    if not questions:
        raise CliError("no questions")
    factory = load_generator(args.generator)
    verifier = make_verifier(settings.archive_client(), settings.probe_config())
    report = evaluate_run(
        questions,
        factory,
        verifier,
        round_cap=args.round_cap,
        strict_unknown=args.strict_unknown,
        workers=args.question_workers,
        resamples=args.bootstrap,
        seed=args.seed,
    )
    fmt = Format(args.format)
    cols = [
        SummaryColumn("before", report.initial_stats, report.n_questions),
        SummaryColumn("after", report.final_stats, report.n_questions, report.metrics.rounds_used),
    ]
    text = render_urlhealth_summary(cols, fmt)
    if fmt is Format.TEXT:
        text += (
            f"NOT_LIVE before: {100 * report.not_live_before:.1f}%  "
            f"after: {100 * report.not_live_after:.1f}%  "
            f"questions with errors: {report.n_errors}\n"
        )
    _emit(text, args.output)
    return 0


# --- parser -------------------------------------------------------------------


def _add_network_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("network")
    g.add_argument("--workers", type=int)
    g.add_argument("--user-agent", dest="user_agent")
    g.add_argument("--archive-qps", dest="archive_qps", type=float)
    g.add_argument("--archive-endpoint", dest="archive_endpoint")
    g.add_argument("--archive-retries", dest="archive_retries", type=int)
    g.add_argument("--connect-timeout", dest="connect_timeout", type=float)
    g.add_argument("--total-timeout", dest="total_timeout", type=float)
    g.add_argument("--max-redirects", dest="max_redirects", type=int)
    g.add_argument("--per-host", dest="per_host_max_inflight", type=int)
    g.add_argument("--retry-429", dest="retry_on_429", type=int)
    g.add_argument("--retry-backoff", dest="retry_backoff", type=float)
    g.add_argument("--alive-hosts", dest="classify_as_alive_hosts", help="comma-separated host suffixes")
    g.add_argument(
        "--include-403", dest="exclude_403", action="store_const", const=False,
        help="count 403 as non-resolving in pipeline mode",
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="urlhealth", description="Citation URL liveness and hallucination checks.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", parents=[common], help="classify URLs in both modes")
    p.add_argument("urls", nargs="*")
    p.add_argument("--input")
    p.add_argument("--mode", choices=["both", "urlhealth", "pipeline"], default="both")
    p.add_argument("--output")
    _add_network_flags(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("extract", parents=[common], help="extract URL records")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["auto", "text", "jsonl"], default="auto")
    p.add_argument("--source-id")
    p.add_argument("--label", action="append", help="key=value group label for text input")
    p.add_argument("--dedup", choices=["none", "labels", "url"], default="none")
    p.add_argument("--output")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("batch", parents=[common], help="resumable probe + classify run")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["auto", "text", "jsonl"], default="auto")
    p.add_argument("--label", action="append")
    p.add_argument("--ledger", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--force", action="store_true", help="resume even if the config changed")
    p.add_argument("--output", help="verdict JSONL")
    _add_network_flags(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("report", parents=[common], help="per-group rate tables")
    p.add_argument("--ledger", required=True)
    p.add_argument("--group-by", default="")
    p.add_argument("--layout", default="PER_MODEL_TABLE", choices=["PER_MODEL_TABLE", "FIELD_HEATMAP_DATA"], type=str.upper)
    p.add_argument("--mode", default="pipeline", choices=["pipeline", "urlhealth"], type=str.lower)
    p.add_argument("--sort-by")
    p.add_argument("--bootstrap", type=int, default=10_000)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--format", choices=[f.value for f in Format], default="text")
    p.add_argument("--output")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sensitivity", parents=[common], help="special-case and 403 re-bucketing")
    p.add_argument("--ledger", required=True)
    p.add_argument("--scenario", action="append", choices=[s.value for s in Scenario], type=str.upper)
    p.add_argument("--group-by", default="model")
    p.add_argument("--format", choices=[f.value for f in Format], default="text")
    p.add_argument("--output")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("audit-sample", parents=[common], help="stratified sample of UNKNOWN URLs")
    p.add_argument("--ledger", required=True)
    p.add_argument("--per-group", type=int, default=200)
    p.add_argument("--group-by", default="model")
    p.add_argument("--output", help="sample JSONL (default stdout; allocation table then goes to stderr)")
    p.set_defaults(func=cmd_audit_sample)

    p = sub.add_parser("audit-summary", parents=[common], help="summarize externally rendered audit verdicts")
    p.add_argument("--sample", required=True)
    p.add_argument("--verdicts", required=True, help="JSONL {url, verdict: true_live|blocked|dead}")
    p.add_argument("--group-by", default="model")
    p.add_argument("--bootstrap", type=int, default=10_000)
    p.add_argument("--format", choices=[f.value for f in Format], default="text")
    p.add_argument("--output")
    p.set_defaults(func=cmd_audit_summary)

    p = sub.add_parser("selfcorrect", parents=[common], help="run the self-correction loop")
    p.add_argument("--questions", required=True)
    p.add_argument("--generator", required=True, help="scripted:<path>")
    p.add_argument("--round-cap", type=int, default=8)
    p.add_argument("--strict-unknown", action="store_true")
    p.add_argument("--question-workers", type=int, default=1)
    p.add_argument("--bootstrap", type=int, default=10_000)
    p.add_argument("--format", choices=[f.value for f in Format], default="text")
    p.add_argument("--output")
    _add_network_flags(p)
    p.set_defaults(func=cmd_selfcorrect)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        settings = resolve_settings(args)
        return args.func(args, settings)
    except (CliError, LedgerError, ValueError, OSError, KeyError) as exc:
        print(f"urlhealth: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
