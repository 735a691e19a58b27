#!/usr/bin/env python3
"""Template for wiring a real answer generator into the self-correction loop.

Fill in ``call_model`` with a provider client. The loop only needs
``generate(question, feedback)`` and a ``style``; citations are extracted from
the answer text here, so the model does not have to return them separately.

    python scripts/adapter_template.py questions.txt --round-cap 8
"""

from __future__ import annotations

import argparse
from pathlib import Path

from urlhealth.archive import ArchiveClient
from urlhealth.extract import extract_from_text
from urlhealth.probe import ProbeConfig
from urlhealth.report import Format, SummaryColumn, render_urlhealth_summary
from urlhealth.selfcorrect import Generation, Style, ToolResponse, evaluate_run, make_verifier

TOOL_NOTE = (
    "A citation checker reported these results as JSON "
    '([{"url", "label", "snapshot_url"}]). Replace every citation whose label '
    "is DEAD or LIKELY_HALLUCINATED and answer again.\n"
)


def call_model(prompt: str) -> str:
    raise NotImplementedError("plug a provider client in here")


class PromptGenerator:
    style = Style.INTERLEAVED

    def __init__(self) -> None:
        self.history: dict[str, str] = {}

    def generate(self, question: str, feedback: ToolResponse | None) -> Generation:
        prompt = f"Answer with cited URLs.\n\nQuestion: {question}\n"
        if feedback is not None:
            prompt += f"\nPrevious answer:\n{self.history[question]}\n\n{TOOL_NOTE}{feedback.to_json()}\n"
        text = call_model(prompt)
        self.history[question] = text
        urls = tuple(dict.fromkeys(r.normalized for r in extract_from_text(text)))
        return Generation(text, urls)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("questions")
    ap.add_argument("--round-cap", type=int, default=8)
    args = ap.parse_args()
    questions = [q for q in Path(args.questions).read_text().splitlines() if q.strip()]
    verifier = make_verifier(ArchiveClient(), ProbeConfig())
    report = evaluate_run(questions, PromptGenerator, verifier, round_cap=args.round_cap)
    cols = [
        SummaryColumn("before", report.initial_stats, report.n_questions),
        SummaryColumn("after", report.final_stats, report.n_questions, report.metrics.rounds_used),
    ]
    print(render_urlhealth_summary(cols, Format.TEXT))


if __name__ == "__main__":
    main()
