"""Rates, bootstrap intervals, z-tests, sensitivity scenarios and audit sampling."""

from __future__ import annotations

import math
import random
import zlib
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .classify import MODE_LABELS, Label, Mode, Verdict

# Derived labels reported next to the raw verdict labels.
NON_RESOLVING = "NON_RESOLVING"  # PIPELINE: STALE + HALLUCINATED
NOT_LIVE = "NOT_LIVE"  # URLHEALTH: DEAD + LIKELY_HALLUCINATED
DERIVED = {
    Mode.PIPELINE: {NON_RESOLVING: (Label.STALE, Label.HALLUCINATED)},
    Mode.URLHEALTH: {NOT_LIVE: (Label.DEAD, Label.LIKELY_HALLUCINATED)},
}

DEFAULT_RESAMPLES = 10_000


class StatsError(ValueError):
    pass


GroupKey = tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class GroupStats:
    group_key: GroupKey
    mode: Mode
    n_total: int
    n_by_label: Mapping[str, int]
    rate_by_label: Mapping[str, float]
    ci_by_label: Mapping[str, tuple[float, float]]
    n_pending: int = 0

    @property
    def n_classified(self) -> int:
        return self.n_total - self.n_pending

    @property
    def group(self) -> dict[str, str]:
        return dict(self.group_key)

    def name(self, sep: str = "/") -> str:
        return sep.join(v for _, v in self.group_key) or "all"

    def count(self, label: str) -> int:
        """Count for a raw or derived label."""
        parts = DERIVED[self.mode].get(label)
        if parts is not None:
            return sum(self.n_by_label.get(p.value, 0) for p in parts)
        return self.n_by_label.get(label, 0)

    def labels(self) -> list[str]:
        return [lab.value for lab in MODE_LABELS[self.mode]] + list(DERIVED[self.mode])


def bootstrap_ci(
    successes: int,
    n: int,
    level: float = 0.95,
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval for a proportion.

    Resampling the 0/1 indicator vector with replacement is the same as drawing
    the resampled success count from Binomial(n, successes/n), which is what is
    done here; the result is deterministic for a given seed.
    """
    if n < 1:
        raise StatsError("n must be >= 1")
    if not 0 <= successes <= n:
        raise StatsError("need 0 <= successes <= n")
    if resamples < 1000:
        raise StatsError("resamples must be >= 1000")
    if not 0 < level < 1:
        raise StatsError("level must be in (0, 1)")
    rng = np.random.default_rng(seed)
    draws = rng.binomial(n, successes / n, size=resamples) / n
    alpha = (1 - level) / 2
    lo, hi = np.quantile(draws, [alpha, 1 - alpha])
    return float(lo), float(hi)


def _subseed(seed: int, *parts: Any) -> int:
    return zlib.crc32(repr((seed, parts)).encode()) ^ (seed & 0xFFFFFFFF)


def summarize_labels(
    labels: Iterable[Label | str | None],
    mode: Mode,
    group_key: GroupKey = (),
    level: float = 0.95,
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
) -> GroupStats:
    """GroupStats for one group. ``None`` entries are pending verdicts."""
    counts: Counter = Counter()
    n_pending = 0
    n_total = 0
    valid = {lab.value for lab in MODE_LABELS[mode]}
    for lab in labels:
        n_total += 1
        if lab is None:
            n_pending += 1
            continue
        value = lab.value if isinstance(lab, Label) else str(lab)
        if value not in valid:
            raise StatsError(f"{value} is not a {mode.value} label")
        counts[value] += 1
    n_by_label = {lab.value: counts.get(lab.value, 0) for lab in MODE_LABELS[mode]}
    for name, parts in DERIVED[mode].items():
        counts[name] = sum(counts.get(p.value, 0) for p in parts)

    denom = n_total - n_pending
    rates: dict[str, float] = {}
    cis: dict[str, tuple[float, float]] = {}
    if denom > 0:
        for name in list(n_by_label) + list(DERIVED[mode]):
            k = counts.get(name, 0)
            rate = k / denom
            lo, hi = bootstrap_ci(k, denom, level, resamples, _subseed(seed, group_key, name))
            rates[name] = rate
            cis[name] = (min(lo, rate), max(hi, rate))
    return GroupStats(group_key, mode, n_total, n_by_label, rates, cis, n_pending)


def _labels_of(item: Any) -> Mapping[str, str]:
    if hasattr(item, "group_labels"):
        return item.group_labels
    return item or {}


def aggregate(
    items: Iterable[tuple[Verdict, Any]],
    group_by: Sequence[str] = (),
    level: float = 0.95,
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
) -> list[GroupStats]:
    """Per-group stats over ``(verdict, record-or-label-map)`` pairs.

    Groups appear in order of first occurrence. A label missing from a record
    groups under the empty string.
    """
    groups: dict[GroupKey, list] = defaultdict(list)
    mode: Mode | None = None
    for verdict, rec in items:
        if mode is None:
            mode = verdict.mode
        elif verdict.mode is not mode:
            raise StatsError("cannot aggregate verdicts from different modes")
        labels = _labels_of(rec)
        key = tuple((g, str(labels.get(g, ""))) for g in group_by)
        groups[key].append(verdict.label)
    if mode is None:
        return []
    return [
        summarize_labels(labs, mode, key, level, resamples, seed) for key, labs in groups.items()
    ]


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2))


def two_prop_z(x1: int, n1: int, x2: int, n2: int) -> tuple[float, float]:
    """Pooled two-proportion z statistic and two-sided p-value."""
    if n1 < 1 or n2 < 1:
        raise StatsError("n1 and n2 must be >= 1")
    if not (0 <= x1 <= n1 and 0 <= x2 <= n2):
        raise StatsError("need 0 <= x <= n")
    pooled = (x1 + x2) / (n1 + n2)
    if pooled in (0.0, 1.0):
        raise StatsError("pooled proportion is 0 or 1; z is undefined")
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    z = (x1 / n1 - x2 / n2) / se
    return z, min(1.0, 2 * _norm_sf(abs(z)))


# --- sensitivity -----------------------------------------------------------


class Scenario(str, Enum):
    BASELINE = "BASELINE"
    SPECIAL_EXCLUDED = "SPECIAL_EXCLUDED"
    SPECIAL_AS_NONRESOLVING = "SPECIAL_AS_NONRESOLVING"
    F403_AS_NONRESOLVING = "F403_AS_NONRESOLVING"

    @property
    def description(self) -> str:
        return _SCENARIO_TEXT[self]


_SCENARIO_TEXT = {
    Scenario.BASELINE: "special-case hosts counted as alive",
    Scenario.SPECIAL_EXCLUDED: "special-case hosts removed from numerator and denominator",
    Scenario.SPECIAL_AS_NONRESOLVING: "special-case hosts counted as non-resolving",
    Scenario.F403_AS_NONRESOLVING: "403 responses counted as non-resolving",
}


@dataclass(frozen=True)
class SensitivityResult:
    scenario: Scenario
    non_resolving: int
    denominator: int
    n_pending: int = 0

    @property
    def rate(self) -> float | None:
        """None when the denominator is empty."""
        return self.non_resolving / self.denominator if self.denominator else None


def sensitivity_from_counts(
    counts: Mapping[Label | str, int], scenario: Scenario, n_pending: int = 0
) -> SensitivityResult:
    """Re-bucket PIPELINE label counts under one scenario (exact integers)."""
    c = {(k.value if isinstance(k, Label) else str(k)): int(v) for k, v in counts.items()}
    unknown = set(c) - {lab.value for lab in MODE_LABELS[Mode.PIPELINE]}
    if unknown:
        raise StatsError(f"not PIPELINE labels: {sorted(unknown)}")
    total = sum(c.values())
    nr = c.get("STALE", 0) + c.get("HALLUCINATED", 0)
    forced = c.get("FORCED_ALIVE", 0)
    if scenario is Scenario.SPECIAL_EXCLUDED:
        return SensitivityResult(scenario, nr, total - forced, n_pending)
    if scenario is Scenario.SPECIAL_AS_NONRESOLVING:
        nr += forced
    elif scenario is Scenario.F403_AS_NONRESOLVING:
        nr += c.get("EXCLUDED_403", 0)
    return SensitivityResult(scenario, nr, total, n_pending)


def apply_sensitivity(verdicts: Iterable[Verdict], scenario: Scenario) -> SensitivityResult:
    counts: Counter = Counter()
    pending = 0
    for v in verdicts:
        if v.mode is not Mode.PIPELINE:
            raise StatsError("sensitivity analysis needs PIPELINE verdicts")
        if v.label is None:
            pending += 1
        else:
            counts[v.label] += 1
    return sensitivity_from_counts(counts, scenario, pending)


# --- stratified audit sampling --------------------------------------------


@dataclass(frozen=True)
class AuditAllocation:
    group_key: GroupKey
    stratum: str
    population: int
    allocated: int


@dataclass
class AuditSample:
    records: list = field(default_factory=list)
    allocations: list[AuditAllocation] = field(default_factory=list)
    short_groups: list[GroupKey] = field(default_factory=list)


def largest_remainder(populations: Mapping[Hashable, int], total: int) -> dict[Hashable, int]:
    """Split ``total`` proportionally to ``populations`` (Hamilton's method).

    Quotas are exact fractions; leftover units go to the largest remainders,
    ties broken by larger population and then by stratum order as given.
    """
    pop_total = sum(populations.values())
    if total < 0:
        raise StatsError("total must be >= 0")
    if pop_total == 0:
        if total:
            raise StatsError("cannot allocate into empty populations")
        return {k: 0 for k in populations}
    quotas = {k: Fraction(total * p, pop_total) for k, p in populations.items()}
    alloc = {k: math.floor(q) for k, q in quotas.items()}
    leftover = total - sum(alloc.values())
    order = list(populations)
    ranked = sorted(
        order, key=lambda k: (-(quotas[k] - alloc[k]), -populations[k], order.index(k))
    )
    for k in ranked[:leftover]:
        alloc[k] += 1
    return alloc


def capped_allocation(populations: Mapping[Hashable, int], total: int) -> dict[Hashable, int]:
    """Largest-remainder allocation that never exceeds a stratum's population.

    Any deficit from a too-small stratum is redistributed over the remaining
    strata by the same rule.
    """
    total = min(total, sum(populations.values()))
    fixed: dict[Hashable, int] = {}
    open_ = dict(populations)
    remaining = total
    while True:
        alloc = largest_remainder(open_, remaining)
        over = [k for k, a in alloc.items() if a > open_[k]]
        if not over:
            fixed.update(alloc)
            break
        for k in over:
            fixed[k] = open_.pop(k)
            remaining -= fixed[k]
    return {k: fixed[k] for k in populations}


def status_stratum(verdict: Verdict) -> str:
    """Audit stratum from the original probe outcome: 403, 429, connection error or other."""
    status = verdict.basis.get("status")
    if status is None:
        return "connection_error"
    if status in (403, 429):
        return str(status)
    return "other"


def stratified_sample(
    records: Sequence[Any],
    group_by: str | None,
    stratum_of: Callable[[Any], str],
    per_group: int,
    seed: int = 0,
    labels_of: Callable[[Any], Mapping[str, str]] = lambda r: getattr(r, "group_labels", {}),
) -> AuditSample:
    """Proportionally allocated stratified sample of ``per_group`` records per group.

    Within each stratum records are drawn without replacement; the returned
    records keep their input order. Groups smaller than ``per_group`` are taken
    whole and listed in ``short_groups``.
    """
    if per_group < 1:
        raise StatsError("per_group must be >= 1")
    groups: dict[GroupKey, dict[str, list[int]]] = defaultdict(lambda: defaultdict(list))
    for i, rec in enumerate(records):
        key: GroupKey = ((group_by, str(labels_of(rec).get(group_by, ""))),) if group_by else ()
        groups[key][stratum_of(rec)].append(i)

    out = AuditSample()
    chosen: list[int] = []
    for key, strata in groups.items():
        pops = {s: len(idx) for s, idx in sorted(strata.items())}
        if sum(pops.values()) < per_group:
            out.short_groups.append(key)
        alloc = capped_allocation(pops, per_group)
        rng = random.Random(f"{seed}:{key!r}")
        for stratum, idx in sorted(strata.items()):
            out.allocations.append(AuditAllocation(key, stratum, pops[stratum], alloc[stratum]))
            chosen.extend(rng.sample(idx, alloc[stratum]))
    out.records = [records[i] for i in sorted(chosen)]
    return out


# --- external audit verdicts ----------------------------------------------

AUDIT_VERDICTS = ("true_live", "blocked", "dead")


@dataclass(frozen=True)
class AuditSummary:
    name: str
    n: int
    counts: Mapping[str, int]
    dead_ci: tuple[float, float]
    not_dead_ci: tuple[float, float]

    def rate(self, verdict: str) -> float:
        if verdict == "not_dead":
            return (self.n - self.counts.get("dead", 0)) / self.n
        return self.counts.get(verdict, 0) / self.n


def summarize_audit(
    verdicts: Iterable[str],
    name: str,
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
) -> AuditSummary:
    """Rates of externally rendered verdicts (true_live / blocked / dead)."""
    counts = Counter()
    for v in verdicts:
        if v not in AUDIT_VERDICTS:
            raise StatsError(f"unknown audit verdict {v!r}")
        counts[v] += 1
    n = sum(counts.values())
    if n == 0:
        raise StatsError(f"no audit verdicts for {name}")
    dead = counts.get("dead", 0)
    dead_ci = bootstrap_ci(dead, n, resamples=resamples, seed=_subseed(seed, name, "dead"))
    nd_ci = bootstrap_ci(n - dead, n, resamples=resamples, seed=_subseed(seed, name, "not_dead"))
    return AuditSummary(name, n, dict(counts), dead_ci, nd_ci)
