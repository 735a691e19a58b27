"""Agentic self-correction: generate, verify citations, feed back, repeat."""

from __future__ import annotations

import json
import logging
import statistics
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

from .archive import ArchiveClient
from .classify import Label, Mode, classify_urlhealth
from .probe import ProbeConfig, make_client, probe_batch
from .stats import GroupStats, summarize_labels

log = logging.getLogger(__name__)

DEFAULT_ROUND_CAP = 8


@dataclass(frozen=True)
class ToolRequest:
    urls: tuple[str, ...]

    def to_json(self) -> str:
        return json.dumps({"urls": list(self.urls)})

    @classmethod
    def from_json(cls, text: str) -> ToolRequest:
        return cls(tuple(json.loads(text)["urls"]))


@dataclass(frozen=True)
class ToolResult:
    url: str
    label: Label
    snapshot_url: str | None = None


@dataclass(frozen=True)
class ToolResponse:
    results: tuple[ToolResult, ...]

    def to_json(self) -> str:
        return json.dumps(
            [{"url": r.url, "label": r.label.value, "snapshot_url": r.snapshot_url} for r in self.results]
        )

    @classmethod
    def from_json(cls, text: str) -> ToolResponse:
        return cls(
            tuple(ToolResult(d["url"], Label(d["label"]), d.get("snapshot_url")) for d in json.loads(text))
        )

    def labels(self) -> dict[str, Label]:
        return {r.url: r.label for r in self.results}


Verifier = Callable[[ToolRequest], ToolResponse]


class Style(str, Enum):
    INTERLEAVED = "INTERLEAVED"
    TWO_PHASE = "TWO_PHASE"


@dataclass(frozen=True)
class Generation:
    answer_text: str
    citations: tuple[str, ...]


class GeneratorPort(Protocol):
    style: Style

    def generate(self, question: str, feedback: ToolResponse | None) -> Generation: ...


class VerifierError(RuntimeError):
    pass


def make_verifier(
    archive: ArchiveClient,
    probe_config: ProbeConfig = ProbeConfig(),
) -> Verifier:
    """Verifier backed by live probing plus URLHEALTH classification."""
    client = make_client(probe_config)

    def verify(request: ToolRequest) -> ToolResponse:
        if not request.urls:
            return ToolResponse(())
        probes = probe_batch(list(request.urls), probe_config, client=client)
        results = []
        for p in probes:
            v = classify_urlhealth(p, archive.lookup)
            results.append(ToolResult(p.url, v.label, v.basis.get("snapshot_url")))
        return ToolResponse(tuple(results))

    return verify


def _check_response(request: ToolRequest, response: ToolResponse) -> None:
    if tuple(r.url for r in response.results) != request.urls:
        raise VerifierError("verifier response does not cover the requested URLs in order")


def not_live(label: Label, strict_unknown: bool = False) -> bool:
    if label is Label.UNKNOWN:
        return strict_unknown
    return label is not Label.LIVE


@dataclass
class LoopResult:
    question: str
    answer_text: str = ""
    citations: tuple[str, ...] = ()
    rounds_used: int = 0
    initial: ToolResponse | None = None
    final: ToolResponse | None = None
    error: str | None = None
    inconclusive_rounds: int = 0
    not_live_per_round: list[int] = field(default_factory=list)

    @property
    def final_not_live(self) -> int:
        return self.not_live_per_round[-1] if self.not_live_per_round else 0


def run_loop(
    question: str,
    generator: GeneratorPort,
    verifier: Verifier,
    round_cap: int = DEFAULT_ROUND_CAP,
    strict_unknown: bool = False,
) -> LoopResult:
    """Drive one question until its citations verify or the round cap is hit.

    Each round makes exactly one verification request (re-sent once if the
    verifier raises). TWO_PHASE generators get feedback at most once, so they
    use at most two rounds. UNKNOWN verdicts only force another round with
    ``strict_unknown``.
    """
    if round_cap < 1:
        raise ValueError("round_cap must be >= 1")
    cap = min(round_cap, 2) if Style(generator.style) is Style.TWO_PHASE else round_cap
    result = LoopResult(question)
    feedback: ToolResponse | None = None
    for rnd in range(1, cap + 1):
        result.rounds_used = rnd
        try:
            gen = generator.generate(question, feedback)
        except Exception as exc:
            result.error = f"generator failed in round {rnd}: {exc}"
            log.warning("%s", result.error)
            return result
        result.answer_text, result.citations = gen.answer_text, tuple(gen.citations)
        request = ToolRequest(result.citations)
        response = None
        for attempt in range(2):
            try:
                response = verifier(request)
                _check_response(request, response)
                break
            except Exception as exc:
                response = None
                log.warning("verifier failed (round %d, attempt %d): %s", rnd, attempt + 1, exc)
        if response is None:
            result.inconclusive_rounds += 1
            feedback = None
            continue
        if result.initial is None:
            result.initial = response
        result.final = response
        flagged = sum(not_live(r.label, strict_unknown) for r in response.results)
        result.not_live_per_round.append(flagged)
        if flagged == 0:
            break
        feedback = response
    return result


@dataclass(frozen=True)
class RoundMetrics:
    rounds_used: tuple[int, ...]
    final_counts: Mapping[str, int]
    initial_counts: Mapping[str, int]

    @property
    def mean(self) -> float:
        return statistics.fmean(self.rounds_used) if self.rounds_used else 0.0

    @property
    def median(self) -> float:
        return statistics.median(self.rounds_used) if self.rounds_used else 0.0

    @property
    def max(self) -> int:
        return max(self.rounds_used, default=0)


@dataclass
class RunReport:
    results: list[LoopResult]
    metrics: RoundMetrics
    initial_stats: GroupStats
    final_stats: GroupStats
    n_errors: int

    @property
    def n_questions(self) -> int:
        return len(self.results)

    @staticmethod
    def _not_live_rate(stats: GroupStats) -> float:
        n = stats.n_classified
        return (stats.count("NOT_LIVE") / n) if n else 0.0

    @property
    def not_live_before(self) -> float:
        return self._not_live_rate(self.initial_stats)

    @property
    def not_live_after(self) -> float:
        return self._not_live_rate(self.final_stats)


def evaluate_run(
    questions: Sequence[str],
    generator: GeneratorPort | Callable[[], GeneratorPort],
    verifier: Verifier,
    round_cap: int = DEFAULT_ROUND_CAP,
    strict_unknown: bool = False,
    workers: int = 1,
    resamples: int = 10_000,
    seed: int = 0,
) -> RunReport:
    """Run the loop over ``questions`` and summarize it in URL-health terms.

    ``generator`` may be a shared generator or a zero-argument factory called
    once per question. Errors are isolated per question.
    """
    if not questions:
        raise ValueError("questions must be non-empty")
    factory = generator if not hasattr(generator, "generate") else (lambda: generator)

    def one(q: str) -> LoopResult:
        try:
            return run_loop(q, factory(), verifier, round_cap, strict_unknown)
        except Exception as exc:
            return LoopResult(q, rounds_used=1, error=f"{type(exc).__name__}: {exc}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, questions))
    else:
        results = [one(q) for q in questions]

    initial = [r.label for res in results if res.initial for r in res.initial.results]
    final = [r.label for res in results if res.final for r in res.final.results]
    metrics = RoundMetrics(
        rounds_used=tuple(r.rounds_used for r in results if r.error is None),
        final_counts=dict(Counter(lab.value for lab in final)),
        initial_counts=dict(Counter(lab.value for lab in initial)),
    )
    return RunReport(
        results=results,
        metrics=metrics,
        initial_stats=summarize_labels(initial, Mode.URLHEALTH, (("phase", "initial"),), resamples=resamples, seed=seed),
        final_stats=summarize_labels(final, Mode.URLHEALTH, (("phase", "final"),), resamples=resamples, seed=seed),
        n_errors=sum(r.error is not None for r in results),
    )


# --- scripted generators ---------------------------------------------------


class ScriptedGenerator:
    """Replays fixed citation lists per round, ignoring feedback content.

    ``script`` maps question -> list of rounds, each a list of URLs; the last
    round repeats once the script runs out. A one-round script therefore
    models an agent that calls the tool but never acts on it.
    """

    def __init__(self, script: Mapping[str, Sequence[Sequence[str]]], style: Style = Style.INTERLEAVED) -> None:
        self.script = {q: [list(r) for r in rounds] for q, rounds in script.items()}
        self.style = Style(style)
        self._calls: Counter = Counter()

    def generate(self, question: str, feedback: ToolResponse | None) -> Generation:
        rounds = self.script[question]
        i = min(self._calls[question], len(rounds) - 1)
        self._calls[question] += 1
        urls = tuple(rounds[i])
        return Generation(f"Answer to {question!r} citing {len(urls)} sources.", urls)


class CooperativeGenerator:
    """Emits initial citations and swaps each flagged URL for its replacement.

    A flagged URL with no replacement is dropped, so a flagged URL is never
    re-emitted.
    """

    def __init__(
        self,
        initial: Mapping[str, Sequence[str]],
        replacements: Mapping[str, str] | None = None,
        style: Style = Style.INTERLEAVED,
        strict_unknown: bool = False,
    ) -> None:
        self.initial = {q: tuple(u) for q, u in initial.items()}
        self.replacements = dict(replacements or {})
        self.style = Style(style)
        self.strict_unknown = strict_unknown
        self._current: dict[str, tuple[str, ...]] = {}

    def generate(self, question: str, feedback: ToolResponse | None) -> Generation:
        urls = self._current.get(question, self.initial[question])
        if feedback is not None:
            flagged = {r.url for r in feedback.results if not_live(r.label, self.strict_unknown)}
            new = []
            for u in urls:
                if u not in flagged:
                    new.append(u)
                elif u in self.replacements:
                    new.append(self.replacements[u])
            urls = tuple(new)
        self._current[question] = urls
        return Generation(f"Answer to {question!r} citing {len(urls)} sources.", urls)


def load_generator(spec: str) -> Callable[[], GeneratorPort]:
    """Build a generator factory from ``scripted:<path>``.

    The JSON file holds ``{"style": ..., "questions": {q: {...}}}`` where each
    question has either ``"rounds": [[url, ...], ...]`` (replayed) or
    ``"citations": [...]`` plus an optional top-level ``"replacements"`` map
    (cooperative).
    """
    kind, _, path = spec.partition(":")
    if kind != "scripted" or not path:
        raise ValueError(f"unsupported generator spec {spec!r}; expected scripted:<path>")
    data = json.loads(Path(path).read_text())
    return generator_from_script(data)


def generator_from_script(data: Mapping[str, Any]) -> Callable[[], GeneratorPort]:
    style = Style(data.get("style", "INTERLEAVED"))
    questions = data["questions"]
    if all("rounds" in q for q in questions.values()):
        script = {name: q["rounds"] for name, q in questions.items()}
        return lambda: ScriptedGenerator(script, style)
    initial = {name: q.get("citations", q.get("rounds", [[]])[0]) for name, q in questions.items()}
    replacements = data.get("replacements", {})
    strict = bool(data.get("strict_unknown", False))
    return lambda: CooperativeGenerator(initial, replacements, style, strict)
