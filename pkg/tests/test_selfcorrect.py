import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urlhealth.classify import Label
from urlhealth.selfcorrect import (
    CooperativeGenerator,
    ScriptedGenerator,
    Style,
    ToolRequest,
    ToolResponse,
    ToolResult,
    evaluate_run,
    load_generator,
    make_verifier,
    run_loop,
)


class TableVerifier:
    """Labels URLs from a lookup table (default LIVE) and counts requests."""

    def __init__(self, labels=None, fail_times=0):
        self.labels = labels or {}
        self.requests = []
        self.fail_times = fail_times

    def __call__(self, request):
        self.requests.append(request)
        if self.fail_times:
            self.fail_times -= 1
            raise ConnectionError("verifier down")
        return ToolResponse(tuple(ToolResult(u, self.labels.get(u, Label.LIVE)) for u in request.urls))


def test_all_live_terminates_round_one():
    gen = ScriptedGenerator({"q": [["https://a/1", "https://a/2", "https://a/3"]]})
    v = TableVerifier()
    res = run_loop("q", gen, v)
    assert res.rounds_used == 1 and res.final_not_live == 0 and len(v.requests) == 1


def test_replacement_terminates_round_two():
    bad = "https://fake/x"
    gen = CooperativeGenerator({"q": ["https://a/1", bad]}, {bad: "https://a/2"})
    res = run_loop("q", gen, TableVerifier({bad: Label.LIKELY_HALLUCINATED}))
    assert res.rounds_used == 2 and res.final_not_live == 0
    assert res.citations == ("https://a/1", "https://a/2")
    assert res.not_live_per_round == [1, 0]


def test_ignoring_generator_hits_cap():
    bad = "https://fake/x"
    gen = ScriptedGenerator({"q": [[bad]]})
    v = TableVerifier({bad: Label.LIKELY_HALLUCINATED})
    res = run_loop("q", gen, v, round_cap=8)
    assert res.rounds_used == 8 and res.final_not_live == 1
    assert len(v.requests) == 8


def test_two_phase_at_most_two_rounds():
    bad = "https://fake/x"
    gen = ScriptedGenerator({"q": [[bad]]}, style=Style.TWO_PHASE)
    res = run_loop("q", gen, TableVerifier({bad: Label.DEAD}), round_cap=8)
    assert res.rounds_used == 2


def test_unknown_tolerated_unless_strict():
    u = "https://blocked/x"
    v = TableVerifier({u: Label.UNKNOWN})
    assert run_loop("q", ScriptedGenerator({"q": [[u]]}), v).rounds_used == 1
    assert run_loop("q", ScriptedGenerator({"q": [[u]]}), v, round_cap=3, strict_unknown=True).rounds_used == 3


def test_verifier_retried_once_per_round():
    gen = ScriptedGenerator({"q": [["https://a/1"]]})
    v = TableVerifier(fail_times=1)
    res = run_loop("q", gen, v)
    assert res.rounds_used == 1 and res.inconclusive_rounds == 0 and len(v.requests) == 2


def test_verifier_down_round_inconclusive():
    gen = ScriptedGenerator({"q": [["https://a/1"]]})
    v = TableVerifier(fail_times=2)
    res = run_loop("q", gen, v, round_cap=3)
    assert res.inconclusive_rounds == 1 and res.rounds_used == 2 and res.final_not_live == 0


def test_generator_failure_aborts_question():
    class Boom:
        style = Style.INTERLEAVED

        def generate(self, q, fb):
            raise RuntimeError("no tokens")

    res = run_loop("q", Boom(), TableVerifier())
    assert res.error and "no tokens" in res.error


def test_round_cap_validation():
    with pytest.raises(ValueError):
        run_loop("q", ScriptedGenerator({"q": [[]]}), TableVerifier(), round_cap=0)


def test_tool_schema_round_trip():
    req = ToolRequest(("https://a", "https://b"))
    assert json.loads(req.to_json()) == {"urls": ["https://a", "https://b"]}
    assert ToolRequest.from_json(req.to_json()) == req
    resp = ToolResponse((ToolResult("https://a", Label.DEAD, "http://web.archive.org/x"),))
    assert json.loads(resp.to_json()) == [{"url": "https://a", "label": "DEAD", "snapshot_url": "http://web.archive.org/x"}]
    assert ToolResponse.from_json(resp.to_json()) == resp


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["live", "bad_fixed", "bad_dropped"]), min_size=1, max_size=10), st.integers(1, 10))
def test_cooperative_monotone(kinds, cap):
    urls = [f"https://h/{i}" for i in range(len(kinds))]
    labels = {u: Label.LIKELY_HALLUCINATED for u, k in zip(urls, kinds) if k != "live"}
    repl = {u: f"https://ok/{i}" for i, (u, k) in enumerate(zip(urls, kinds)) if k == "bad_fixed"}
    v = TableVerifier(labels)
    res = run_loop("q", CooperativeGenerator({"q": urls}, repl), v, round_cap=cap)
    counts = res.not_live_per_round
    assert all(a > b for a, b in zip(counts, counts[1:]))
    assert 1 <= res.rounds_used <= cap and len(v.requests) == res.rounds_used
    flagged = set()
    for req in v.requests:
        assert not flagged & set(req.urls)
        flagged |= {u for u in req.urls if u in labels}


def test_evaluate_run_cooperative():
    bad = {f"https://bad/{i}" for i in range(2)}
    initial = {f"q{i}": [f"https://ok/{i}/{j}" for j in range(4)] + ([f"https://bad/{i}"] if i < 2 else []) for i in range(5)}
    v = TableVerifier({u: Label.LIKELY_HALLUCINATED for u in bad})
    factory = lambda: CooperativeGenerator(initial, {u: u.replace("bad", "fixed") for u in bad})  # noqa: E731
    rep = evaluate_run(list(initial), factory, v, resamples=1000, workers=3)
    assert rep.n_questions == 5 and rep.n_errors == 0
    assert rep.not_live_before == pytest.approx(2 / 22) and rep.not_live_after == 0
    assert sorted(rep.metrics.rounds_used) == [1, 1, 1, 2, 2]
    assert rep.metrics.mean == 1.4 and rep.metrics.max == 2


def test_round_cap_one_no_correction():
    bad = "https://bad/1"
    initial = {"q": ["https://ok/1", bad]}
    rep = evaluate_run(["q"], lambda: CooperativeGenerator(initial, {bad: "https://ok/2"}),
                       TableVerifier({bad: Label.DEAD}), round_cap=1, resamples=1000)
    assert rep.not_live_before == rep.not_live_after == 0.5


def test_evaluate_requires_questions():
    with pytest.raises(ValueError):
        evaluate_run([], lambda: ScriptedGenerator({}), TableVerifier())


def test_load_generator(tmp_path):
    p = tmp_path / "g.json"
    p.write_text(json.dumps({"style": "TWO_PHASE", "questions": {"q": {"rounds": [["https://a"], ["https://b"]]}}}))
    gen = load_generator(f"scripted:{p}")()
    assert gen.style is Style.TWO_PHASE
    assert gen.generate("q", None).citations == ("https://a",)
    assert gen.generate("q", None).citations == ("https://b",)
    assert gen.generate("q", None).citations == ("https://b",)
    with pytest.raises(ValueError):
        load_generator("openai:gpt")


def test_fixture_backed_verifier(server, fast_config, fixture_archive):
    live = server.url("status/200/a")
    gone = server.url("status/404/never")
    old = server.url("status/404/archived/p")
    verify = make_verifier(fixture_archive, fast_config)
    resp = verify(ToolRequest((live, gone, old)))
    assert [r.label for r in resp.results] == [Label.LIVE, Label.LIKELY_HALLUCINATED, Label.DEAD]
    assert resp.results[2].snapshot_url
    gen = CooperativeGenerator({"q": [live, gone]}, {gone: server.url("status/200/b")})
    res = run_loop("q", gen, verify)
    assert res.rounds_used == 2 and res.final_not_live == 0
