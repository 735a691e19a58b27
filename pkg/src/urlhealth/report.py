"""Table and plot-data rendering for group statistics."""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping, Sequence

from .classify import Label, Mode
from .stats import (
    DERIVED,
    NON_RESOLVING,
    AuditSummary,
    GroupStats,
    Scenario,
    SensitivityResult,
)


class ReportError(ValueError):
    pass


class Layout(str, Enum):
    PER_MODEL_TABLE = "PER_MODEL_TABLE"
    FIELD_HEATMAP_DATA = "FIELD_HEATMAP_DATA"
    SENSITIVITY_TABLE = "SENSITIVITY_TABLE"
    AUDIT_TABLE = "AUDIT_TABLE"
    URLHEALTH_SUMMARY = "URLHEALTH_SUMMARY"


class Format(str, Enum):
    TEXT = "text"
    CSV = "csv"
    JSON = "json"


@dataclass(frozen=True)
class ReportSpec:
    layout: Layout = Layout.PER_MODEL_TABLE
    sort_by: str | None = None
    format: Format = Format.TEXT


# Column sets for the per-group table. Stale carries no interval, as in the
# published per-model table.
_TABLE_COLUMNS = {
    Mode.PIPELINE: [
        (NON_RESOLVING, "% Non-resolving", True),
        (Label.HALLUCINATED.value, "% Hallucinated", True),
        (Label.STALE.value, "% Stale", False),
    ],
    Mode.URLHEALTH: [
        (Label.LIVE.value, "LIVE (%)", True),
        (Label.DEAD.value, "DEAD (%)", True),
        (Label.LIKELY_HALLUCINATED.value, "LIKELY_HALL. (%)", True),
        (Label.UNKNOWN.value, "UNKNOWN (%)", True),
    ],
}
_DEFAULT_SORT = {Mode.PIPELINE: Label.HALLUCINATED.value, Mode.URLHEALTH: Label.LIVE.value}


def pct(x: float | None, digits: int = 1) -> str:
    return "n/a" if x is None else f"{100 * x:.{digits}f}"


def ci_text(ci: tuple[float, float] | None, digits: int = 1) -> str:
    if ci is None:
        return "[n/a]"
    return f"[{pct(ci[0], digits)}, {pct(ci[1], digits)}]"


def _check_shape(stats: Sequence[GroupStats], label: str) -> Mode:
    if not stats:
        raise ReportError("no stats to render")
    modes = {s.mode for s in stats}
    if len(modes) != 1:
        raise ReportError("stats mix verdict modes")
    mode = modes.pop()
    if label not in stats[0].labels():
        raise ReportError(f"label {label!r} is not available for {mode.value} stats")
    for s in stats:
        if s.n_classified and label not in s.rate_by_label:
            raise ReportError(f"group {s.name()} has no rate for label {label!r}")
    return mode


def _rate(s: GroupStats, label: str) -> float:
    return s.rate_by_label.get(label, float("nan"))


def _sort(stats: Sequence[GroupStats], label: str, descending: bool) -> list[GroupStats]:
    sign = -1 if descending else 1
    return sorted(stats, key=lambda s: (sign * _rate(s, label), s.group_key))


def _text_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    fmt = lambda r: "  ".join(  # noqa: E731
        c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))
    )
    lines = [fmt(header), "  ".join("-" * w for w in widths)]
    lines.extend(fmt(r) for r in rows)
    return "\n".join(lines) + "\n"


# --- long-format csv / json shared by the GroupStats layouts ----------------

CSV_FIELDS = ["group", "mode", "label", "n", "n_total", "n_pending", "rate", "ci_lo", "ci_hi"]


def stats_to_rows(stats: Sequence[GroupStats]) -> list[dict[str, Any]]:
    rows = []
    for s in stats:
        for label in s.labels():
            ci = s.ci_by_label.get(label)
            rows.append(
                {
                    "group": json.dumps(dict(s.group_key), sort_keys=False),
                    "mode": s.mode.value,
                    "label": label,
                    "n": s.count(label),
                    "n_total": s.n_total,
                    "n_pending": s.n_pending,
                    "rate": s.rate_by_label.get(label),
                    "ci_lo": ci[0] if ci else None,
                    "ci_hi": ci[1] if ci else None,
                }
            )
    return rows


def stats_to_csv(stats: Sequence[GroupStats]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in stats_to_rows(stats):
        # repr() of a float round-trips exactly.
        w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def parse_stats_csv(text: str) -> list[GroupStats]:
    """Inverse of :func:`stats_to_csv`."""
    groups: dict[tuple[str, str], dict[str, Any]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        key = (row["group"], row["mode"])
        g = groups.setdefault(
            key,
            {
                "group_key": tuple(json.loads(row["group"]).items()),
                "mode": Mode(row["mode"]),
                "n_total": int(row["n_total"]),
                "n_pending": int(row["n_pending"]),
                "n": {},
                "rate": {},
                "ci": {},
            },
        )
        label = row["label"]
        if label not in DERIVED[g["mode"]]:
            g["n"][label] = int(row["n"])
        if row["rate"]:
            g["rate"][label] = float(row["rate"])
            g["ci"][label] = (float(row["ci_lo"]), float(row["ci_hi"]))
    return [
        GroupStats(g["group_key"], g["mode"], g["n_total"], g["n"], g["rate"], g["ci"], g["n_pending"])
        for g in groups.values()
    ]


def stats_to_json(stats: Sequence[GroupStats]) -> str:
    out = []
    for s in stats:
        out.append(
            {
                "group": dict(s.group_key),
                "mode": s.mode.value,
                "n_total": s.n_total,
                "n_pending": s.n_pending,
                "n_by_label": dict(s.n_by_label),
                "rate_by_label": dict(s.rate_by_label),
                "ci_by_label": {k: list(v) for k, v in s.ci_by_label.items()},
            }
        )
    return json.dumps(out, indent=2) + "\n"


# --- layouts ----------------------------------------------------------------


def render_per_model(stats: Sequence[GroupStats], sort_by: str | None, fmt: Format) -> str:
    mode = stats[0].mode if stats else Mode.PIPELINE
    label = sort_by or _DEFAULT_SORT[mode]
    _check_shape(stats, label)
    ordered = _sort(stats, label, descending=False)
    if fmt is Format.CSV:
        return stats_to_csv(ordered)
    if fmt is Format.JSON:
        return stats_to_json(ordered)
    cols = _TABLE_COLUMNS[mode]
    header = ["Group", "URLs"] + [title for _, title, _ in cols]
    rows = []
    for s in ordered:
        row = [s.name(), f"{s.n_total:,}"]
        for lab, _, with_ci in cols:
            r = s.rate_by_label.get(lab)
            row.append(f"{pct(r)} {ci_text(s.ci_by_label.get(lab))}" if with_ci else pct(r))
        rows.append(row)
    text = _text_table(header, rows)
    pending = sum(s.n_pending for s in stats)
    if pending:
        text += f"({pending} URLs pending archive lookup, excluded from rates)\n"
    return text


def render_heatmap(stats: Sequence[GroupStats], sort_by: str | None, fmt: Format) -> str:
    """One row per group, rows ordered by descending rate of ``sort_by``.

    With two-level groups (e.g. field, model) rows are ordered by the pooled
    rate of their first key, so all models of the worst field come first.
    """
    label = sort_by or NON_RESOLVING
    _check_shape(stats, label)
    pooled: dict[tuple, list[int]] = {}
    for s in stats:
        k = s.group_key[:1]
        acc = pooled.setdefault(k, [0, 0])
        acc[0] += s.count(label)
        acc[1] += s.n_classified
    outer = lambda s: pooled[s.group_key[:1]][0] / max(pooled[s.group_key[:1]][1], 1)  # noqa: E731
    ordered = sorted(stats, key=lambda s: (-outer(s), s.group_key[:1], -_rate(s, label), s.group_key))
    keys = [k for k, _ in ordered[0].group_key]
    rows = []
    for s in ordered:
        ci = s.ci_by_label.get(label, (None, None))
        rows.append(
            {
                **dict(s.group_key),
                "n_total": s.n_total,
                "n": s.count(label),
                "rate": s.rate_by_label.get(label),
                "ci_lo": ci[0],
                "ci_hi": ci[1],
            }
        )
    if fmt is Format.JSON:
        return json.dumps({"label": label, "rows": rows}, indent=2) + "\n"
    if fmt is Format.CSV:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=keys + ["n_total", "n", "rate", "ci_lo", "ci_hi"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()
    header = keys + ["URLs", f"% {label}"]
    body = [
        [str(r[k]) for k in keys] + [f"{r['n_total']:,}", f"{pct(r['rate'])} {ci_text((r['ci_lo'], r['ci_hi']) if r['ci_lo'] is not None else None)}"]
        for r in rows
    ]
    return _text_table(header, body)


def render_sensitivity(
    results: Mapping[str, Sequence[SensitivityResult]],
    fmt: Format = Format.TEXT,
    special_counts: Mapping[str, tuple[int, int]] | None = None,
) -> str:
    """Scenario x group table of non-resolving rates (two decimals in text).

    ``special_counts`` maps group name to (special-case URLs, total URLs) for the
    footer rows.
    """
    if not results:
        raise ReportError("no sensitivity results to render")
    for name, rs in results.items():
        for r in rs:
            if not isinstance(r, SensitivityResult):
                raise ReportError(f"group {name}: expected SensitivityResult, got {type(r).__name__}")
    groups = list(results)
    scenarios = [r.scenario for r in results[groups[0]]]
    if fmt is not Format.TEXT:
        rows = [
            {
                "group": g,
                "scenario": r.scenario.value,
                "non_resolving": r.non_resolving,
                "denominator": r.denominator,
                "n_pending": r.n_pending,
                "rate": r.rate,
            }
            for g in groups
            for r in results[g]
        ]
        if fmt is Format.JSON:
            return json.dumps(rows, indent=2) + "\n"
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()
    by = {g: {r.scenario: r for r in results[g]} for g in groups}
    body = []
    for sc in scenarios:
        row = [sc.value]
        for g in groups:
            r = by[g].get(sc)
            row.append("n/a" if r is None or r.rate is None else f"{pct(r.rate, 2)}%")
        body.append(row)
    if special_counts:
        body.append(["Special-case URLs"] + [f"{special_counts[g][0]:,}" for g in groups])
        body.append(
            ["Special-case % of total"]
            + [f"{pct(special_counts[g][0] / special_counts[g][1] if special_counts[g][1] else None)}%" for g in groups]
        )
    return _text_table(["Scenario"] + groups, body)


def render_audit(summaries: Sequence[AuditSummary], fmt: Format = Format.TEXT) -> str:
    if not summaries or not all(isinstance(s, AuditSummary) for s in summaries):
        raise ReportError("AUDIT_TABLE needs a non-empty list of AuditSummary")
    rows = [
        {
            "group": s.name,
            "n": s.n,
            "true_live": s.rate("true_live"),
            "blocked": s.rate("blocked"),
            "dead": s.rate("dead"),
            "dead_ci_lo": s.dead_ci[0],
            "dead_ci_hi": s.dead_ci[1],
            "not_dead": s.rate("not_dead"),
            "not_dead_ci_lo": s.not_dead_ci[0],
            "not_dead_ci_hi": s.not_dead_ci[1],
        }
        for s in summaries
    ]
    if fmt is Format.JSON:
        return json.dumps(rows, indent=2) + "\n"
    if fmt is Format.CSV:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        return buf.getvalue()
    body = [
        [
            f"{s.name} (n={s.n})",
            f"{pct(s.rate('true_live'))}%",
            f"{pct(s.rate('blocked'))}%",
            f"{pct(s.rate('dead'))}% {ci_text(s.dead_ci)}",
            f"{pct(s.rate('not_dead'))}% {ci_text(s.not_dead_ci)}",
        ]
        for s in summaries
    ]
    return _text_table(["", "True live", "Blocked", "Dead", "Not dead"], body)


@dataclass(frozen=True)
class SummaryColumn:
    """One model's column in the URL-health summary."""

    name: str
    stats: GroupStats
    n_questions: int
    rounds: Sequence[int] = ()


def render_urlhealth_summary(columns: Sequence[SummaryColumn], fmt: Format = Format.TEXT) -> str:
    if not columns:
        raise ReportError("no columns to render")
    cells: dict[str, dict[str, Any]] = {}
    for col in columns:
        if col.stats.mode is not Mode.URLHEALTH:
            raise ReportError(f"{col.name}: URLHEALTH stats required")
        if col.n_questions <= 0:
            raise ReportError(f"{col.name}: number of questions must be positive")
        s = col.stats
        c: dict[str, Any] = {
            "total_urls": s.n_total,
            "urls_per_question": s.n_total / col.n_questions,
            "live_urls_per_question": s.count(Label.LIVE.value) / col.n_questions,
        }
        for lab in (Label.LIVE, Label.DEAD, Label.LIKELY_HALLUCINATED, Label.UNKNOWN):
            c[lab.value] = s.rate_by_label.get(lab.value)
            c[lab.value + "_ci"] = s.ci_by_label.get(lab.value)
        if col.rounds:
            c["rounds_mean"] = statistics.fmean(col.rounds)
            c["rounds_median"] = statistics.median(col.rounds)
            c["rounds_max"] = max(col.rounds)
        cells[col.name] = c
    if fmt is Format.JSON:
        return json.dumps(cells, indent=2) + "\n"
    if fmt is Format.CSV:
        keys = sorted({k for c in cells.values() for k in c if not k.endswith("_ci")})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric"] + list(cells))
        for k in keys:
            w.writerow([k] + ["" if cells[n].get(k) is None else repr(cells[n][k]) if isinstance(cells[n][k], float) else cells[n][k] for n in cells])
        return buf.getvalue()

    names = list(cells)
    body = [
        ["Total URLs"] + [f"{cells[n]['total_urls']:,}" for n in names],
        ["URLs / question"] + [f"{cells[n]['urls_per_question']:.1f}" for n in names],
    ]
    for lab, title in (
        ("LIVE", "LIVE (%)"),
        ("DEAD", "DEAD (%)"),
        ("LIKELY_HALLUCINATED", "LIKELY_HALL. (%)"),
        ("UNKNOWN", "UNKNOWN (%)"),
    ):
        body.append([title] + [f"{pct(cells[n][lab])} {ci_text(cells[n][lab + '_ci'])}" for n in names])
    body.append(["Live URLs / question"] + [f"{cells[n]['live_urls_per_question']:.1f}" for n in names])
    if any("rounds_mean" in cells[n] for n in names):
        get = lambda n, k, f: f.format(cells[n][k]) if k in cells[n] else "n/a"  # noqa: E731
        body.append(["Rounds mean"] + [get(n, "rounds_mean", "{:.2f}") for n in names])
        body.append(["Rounds median"] + [get(n, "rounds_median", "{:g}") for n in names])
        body.append(["Rounds max"] + [get(n, "rounds_max", "{}") for n in names])
    return _text_table([""] + names, body)


def render(stats: Sequence[Any], spec: ReportSpec = ReportSpec()) -> str:
    """Render ``stats`` in the requested layout.

    The GroupStats layouts take a list of GroupStats; SENSITIVITY_TABLE takes a
    mapping of group name to SensitivityResult list, AUDIT_TABLE a list of
    AuditSummary and URLHEALTH_SUMMARY a list of SummaryColumn.
    """
    fmt = Format(spec.format)
    layout = Layout(spec.layout)
    if layout is Layout.SENSITIVITY_TABLE:
        if not isinstance(stats, Mapping):
            raise ReportError("SENSITIVITY_TABLE needs a mapping of group -> SensitivityResult list")
        return render_sensitivity(stats, fmt)
    if layout is Layout.AUDIT_TABLE:
        return render_audit(stats, fmt)
    if layout is Layout.URLHEALTH_SUMMARY:
        if not all(isinstance(c, SummaryColumn) for c in stats):
            raise ReportError("URLHEALTH_SUMMARY needs SummaryColumn entries")
        return render_urlhealth_summary(stats, fmt)
    if not stats or not all(isinstance(s, GroupStats) for s in stats):
        raise ReportError(f"{layout.value} needs a non-empty list of GroupStats")
    if layout is Layout.PER_MODEL_TABLE:
        return render_per_model(stats, spec.sort_by, fmt)
    return render_heatmap(stats, spec.sort_by, fmt)


__all__ = [
    "Format",
    "Layout",
    "ReportError",
    "ReportSpec",
    "Scenario",
    "SummaryColumn",
    "parse_stats_csv",
    "render",
    "render_audit",
    "render_sensitivity",
    "render_urlhealth_summary",
    "stats_to_csv",
]
