"""Acceptance criteria 1-9, one test each.

Each test records PASS/FAIL under its criterion number; the lines are printed
at the end of the session (and immediately, when run with ``-s``).
"""

import contextlib
import json
import math
import os
import random
import signal
import subprocess
import sys
import time
from pathlib import Path
from statistics import NormalDist

import numpy as np
import pytest
from statsmodels.stats.proportion import proportions_ztest
from test_stats import TABLE2, TABLE2_COUNTS, consistent_counts

from urlhealth.archive import ArchiveResult
from urlhealth.classify import (
    Label,
    Mode,
    SpecialCasePolicy,
    Verdict,
    classify_pipeline,
    classify_urlhealth,
)
from urlhealth.probe import (
    FALLBACK_STATUSES,
    ErrorKind,
    Method,
    ProbeConfig,
    ProbeResult,
    probe_batch,
    probe_one,
)
from urlhealth.selfcorrect import (
    CooperativeGenerator,
    ScriptedGenerator,
    Style,
    evaluate_run,
    make_verifier,
)
from urlhealth.stats import (
    NON_RESOLVING,
    Scenario,
    aggregate,
    apply_sensitivity,
    bootstrap_ci,
    largest_remainder,
    sensitivity_from_counts,
    stratified_sample,
    summarize_labels,
    two_prop_z,
)

RESULTS = {}


@contextlib.contextmanager
def criterion(n, desc):
    try:
        yield
    except BaseException:
        RESULTS[n] = (False, desc)
        print(f"\ncriterion {n}: FAIL  {desc}")
        raise
    RESULTS[n] = (True, desc)
    print(f"\ncriterion {n}: PASS  {desc}")


# --- 1 ------------------------------------------------------------------------

def test_criterion_1_classification_exhaustive():
    with criterion(1, "classification exhaustive over 100-599 x snapshot x error kinds; containment; < 1 s"):
        start = time.perf_counter()
        url = "https://ex.org/p"
        no_special = SpecialCasePolicy(classify_as_alive_hosts=())
        n = 0
        for snap in (True, False):
            res = ArchiveResult(url, snap, "2020" if snap else None, "s" if snap else None, "")
            lookup = lambda u, r=res: r  # noqa: E731
            cases = [(s, None) for s in range(100, 600)] + [(None, k) for k in ErrorKind]
            for status, kind in cases:
                p = ProbeResult(url, status, kind, Method.HEAD, False, url, 0.0, "")
                uh = classify_urlhealth(p, lookup)
                pl = classify_pipeline(p, lookup, no_special)
                assert isinstance(uh.label, Label) and isinstance(pl.label, Label)
                if uh.label is Label.LIKELY_HALLUCINATED:
                    assert pl.label is Label.HALLUCINATED
                if uh.label is Label.DEAD:
                    assert pl.label is Label.STALE
                n += 1
        elapsed = time.perf_counter() - start
        assert n == 2 * (500 + len(ErrorKind))
        assert elapsed < 1.0, elapsed


# --- 2 ------------------------------------------------------------------------

def test_criterion_2_stale_identity():
    with criterion(2, "hallucinated = non_resolving - stale exactly; 1,000 corpora + 10 table rows"):
        rng = random.Random(2)
        pipeline_labels = [Label.ALIVE, Label.STALE, Label.HALLUCINATED, Label.EXCLUDED_403, Label.FORCED_ALIVE, None]
        for _ in range(1000):
            labels = [rng.choice(pipeline_labels) for _ in range(rng.randint(1, 200))]
            if all(lab is None for lab in labels):
                labels.append(Label.ALIVE)
            gs = summarize_labels(labels, Mode.PIPELINE, resamples=1000)
            assert gs.count("HALLUCINATED") == gs.count(NON_RESOLVING) - gs.count("STALE")
        from test_stats import pipeline_items

        for model, n, nr_pct, h_pct, s_pct in TABLE2:
            nr, h = TABLE2_COUNTS[model]
            assert (nr, h) in consistent_counts(n, nr_pct, h_pct, s_pct)
            (gs,) = aggregate(pipeline_items(model, n, nr, h), ["model"], resamples=1000)
            assert gs.count("HALLUCINATED") == gs.count(NON_RESOLVING) - gs.count("STALE")
            shown = [f"{100 * gs.rate_by_label[k]:.1f}" for k in (NON_RESOLVING, "HALLUCINATED", "STALE")]
            assert shown == [f"{nr_pct:.1f}", f"{h_pct:.1f}", f"{s_pct:.1f}"], model


# --- 3 ------------------------------------------------------------------------

def test_criterion_3_sensitivity():
    with criterion(3, "sensitivity 8.47 / 10.36 / 26.71; forced-alive=0 column scenario-invariant"):
        gpt = {"FORCED_ALIVE": 15273, "STALE": 7092, "ALIVE": 83736 - 15273 - 7092}
        got = [f"{100 * sensitivity_from_counts(gpt, s).rate:.2f}" for s in list(Scenario)[:3]]
        assert got == ["8.47", "10.36", "26.71"]
        # the same through verdict objects
        vs = [Verdict(f"u{i}", Mode.PIPELINE, Label(lab)) for lab, k in gpt.items() for i in range(k)]
        assert [apply_sensitivity(vs, s).non_resolving for s in list(Scenario)[:3]] == [7092, 7092, 22365]
        claude = {"STALE": 3000, "HALLUCINATED": 2760, "ALIVE": 61407 - 5760}
        rates = {f"{100 * sensitivity_from_counts(claude, s).rate:.2f}" for s in list(Scenario)[:3]}
        assert rates == {"9.38"}


# --- 4 ------------------------------------------------------------------------

def test_criterion_4_probe_discipline(server):
    with criterion(4, "GET fallback exactly {403,405,501}; per-host cap honoured; batch == sequential; < 30 s"):
        start = time.perf_counter()
        cfg = ProbeConfig(connect_timeout=2, total_timeout=5, workers=16, per_host_max_inflight=3)
        fired = set()
        codes = [c for c in range(200, 600) if c not in (204, 304) and not 300 <= c < 400]
        for c in codes:
            if probe_one(server.url(f"split/{c}/299"), cfg).fallback_applied:
                fired.add(c)
        assert fired == {403, 405, 501} == set(FALLBACK_STATUSES)

        server.state.reset()
        urls = [server.url(f"hold/50/{[200, 404, 500, 410][i % 4]}/{i}") for i in range(40)]
        urls += [server.url(f"split/{c}/200/{c}") for c in (403, 405, 501)]
        batch = probe_batch(urls, cfg)
        assert 1 <= server.state.peak <= 3
        seq = [probe_one(u, cfg) for u in urls]
        key = lambda r: (r.url, r.status, r.error_kind, r.method_used, r.fallback_applied)  # noqa: E731
        assert list(map(key, batch)) == list(map(key, seq))
        assert time.perf_counter() - start < 30


# --- 5 ------------------------------------------------------------------------

def test_criterion_5_bootstrap():
    with criterion(5, "bootstrap coverage in [93%, 97%] over 500 sims; Claude interval within 0.15 pp; < 60 s"):
        start = time.perf_counter()
        rng = np.random.default_rng(5)
        covered = 0
        for i in range(500):
            k = int(rng.binomial(1000, 0.1))
            lo, hi = bootstrap_ci(k, 1000, seed=i)
            covered += lo <= 0.1 <= hi
        assert 0.93 <= covered / 500 <= 0.97, covered / 500

        k = round(0.0938 * 61407)
        p = k / 61407
        half = NormalDist().inv_cdf(0.975) * math.sqrt(p * (1 - p) / 61407)
        assert abs(p - half - 0.0916) <= 0.0015 and abs(p + half - 0.0962) <= 0.0015
        lo, hi = bootstrap_ci(k, 61407)
        assert abs(lo - 0.0916) <= 0.0015 and abs(hi - 0.0962) <= 0.0015
        assert time.perf_counter() - start < 60


# --- 6 ------------------------------------------------------------------------

def test_criterion_6_z_test():
    with criterion(6, "z = 15.15 +/- 0.3 from reconstructed counts; z = 0 on equal rates; statsmodels agreement 1e-9"):
        x1, n1, x2, n2 = 1651, 15430, 376, 7839
        assert (f"{100 * x1 / n1:.1f}", f"{100 * x2 / n2:.1f}") == ("10.7", "4.8")
        z, _ = two_prop_z(x1, n1, x2, n2)
        assert abs(z - 15.15) <= 0.3
        assert two_prop_z(50, 500, 5, 50)[0] == 0.0
        rng = random.Random(6)
        for _ in range(100):
            n1, n2 = rng.randint(10, 10000), rng.randint(10, 10000)
            x1, x2 = rng.randint(1, n1 - 1), rng.randint(1, n2 - 1)
            z, p = two_prop_z(x1, n1, x2, n2)
            zo, po = proportions_ztest([x1, x2], [n1, n2])
            assert abs(z - zo) <= 1e-9 and abs(p - po) <= 1e-9


# --- 7 ------------------------------------------------------------------------

def test_criterion_7_stratified_sampler():
    with criterion(7, "allocations sum to per-group, within 1 of share, seed-deterministic; {113,53,24,10}"):
        assert largest_remainder({"403": 563, "429": 263, "conn": 121, "other": 53}, 200) == {
            "403": 113, "429": 53, "conn": 24, "other": 10,
        }
        rng = random.Random(7)
        for _ in range(200):
            pops = {f"s{i}": rng.randint(1, 1000) for i in range(rng.randint(1, 6))}
            total = rng.randint(1, sum(pops.values()))
            alloc = largest_remainder(pops, total)
            assert sum(alloc.values()) == total
            share = {k: total * p / sum(pops.values()) for k, p in pops.items()}
            assert all(abs(alloc[k] - share[k]) < 1 for k in pops)
        records = [(i, s) for s, n in (("403", 563), ("429", 263), ("conn", 121), ("other", 53)) for i in range(n)]
        a = stratified_sample(records, None, lambda r: r[1], 200, seed=42)
        b = stratified_sample(records, None, lambda r: r[1], 200, seed=42)
        assert a.records == b.records and len(a.records) == 200
        assert {x.stratum: x.allocated for x in a.allocations} == {"403": 113, "429": 53, "conn": 24, "other": 10}


# --- 8 ------------------------------------------------------------------------

def _selfcorrect_corpus(server):
    """25 questions x 4 citations, 16 of the 100 NOT-LIVE (404s, half archived)."""
    initial, replacements = {}, {}
    for q in range(25):
        cites = []
        for j in range(4):
            k = 4 * q + j
            if k < 16:
                bad = server.url(f"status/404/{'archived' if k % 2 else 'gone'}/{q}/{j}")
                cites.append(bad)
                replacements[bad] = server.url(f"status/200/fix/{q}/{j}")
            else:
                cites.append(server.url(f"status/200/{q}/{j}"))
        initial[f"q{q}"] = cites
    return initial, replacements


def test_criterion_8_selfcorrect_loop(server, fixture_archive):
    with criterion(8, "cooperative loop: 16% -> 0% NOT-LIVE in <= 2 rounds; ignoring generator hits cap; TWO_PHASE <= 2"):
        cfg = ProbeConfig(connect_timeout=2, total_timeout=5, workers=8, per_host_max_inflight=8)
        verify = make_verifier(fixture_archive, cfg)
        initial, repl = _selfcorrect_corpus(server)
        n_bad = sum(u in repl for cites in initial.values() for u in cites)
        n_all = sum(len(c) for c in initial.values())
        assert n_bad / n_all == 0.16
        rep = evaluate_run(list(initial), lambda: CooperativeGenerator(initial, repl), verify, resamples=1000)
        assert rep.n_errors == 0
        assert rep.not_live_before == pytest.approx(0.16)
        assert rep.not_live_after == 0.0
        assert rep.metrics.max <= 2

        script = {q: [cites] for q, cites in initial.items()}
        ignoring = evaluate_run(list(initial)[:4], lambda: ScriptedGenerator(script), verify, round_cap=5, resamples=1000)
        flagged = [r for r in ignoring.results if r.final_not_live > 0]
        assert flagged and all(r.rounds_used == 5 for r in flagged)
        assert ignoring.not_live_after > 0

        two = evaluate_run(list(initial)[:4], lambda: ScriptedGenerator(script, Style.TWO_PHASE), verify, round_cap=8, resamples=1000)
        assert two.metrics.max <= 2


# --- 9 ------------------------------------------------------------------------

def _batch_argv(server, inp, ledger, out, *extra):
    return [
        sys.executable, "-m", "urlhealth", "batch", "--input", str(inp), "--ledger", str(ledger),
        "--output", str(out), "--archive-endpoint", server.archive_endpoint, "--archive-qps", "1000",
        "--archive-retries", "0", "--workers", "8", "--per-host", "8", "--connect-timeout", "2",
        "--total-timeout", "5", *extra,
    ]


def _verdict_set(path):
    return {(d["url"], d["mode"], d["label"]) for d in map(json.loads, Path(path).read_text().splitlines())}


def _probe_lines(ledger):
    if not Path(ledger).exists():
        return 0
    return sum('"kind":"probe"' in line for line in Path(ledger).read_text().splitlines())


@pytest.mark.slow
def test_criterion_9_resume_after_kill(server, tmp_path):
    with criterion(9, "batch killed mid-run then resumed == uninterrupted run (500 URLs)"):
        codes = [200, 404, 500, 403, 410, 503]
        urls = []
        for i in range(500):
            c = codes[i % len(codes)]
            tag = "archived" if i % 4 == 0 else "x"
            urls.append(server.url(f"hold/40/{c}/{tag}/{i}"))
        inp = tmp_path / "corpus.jsonl"
        inp.write_text("".join(json.dumps({"url": u, "source_id": f"q{i % 50}", "labels": {"model": f"m{i % 3}"}}) + "\n"
                               for i, u in enumerate(urls)))
        env = {**os.environ, "PYTHONUNBUFFERED": "1"}

        full_out = tmp_path / "full.jsonl"
        subprocess.run(_batch_argv(server, inp, tmp_path / "full.ledger", full_out), check=True, env=env,
                       capture_output=True, timeout=120)

        ledger = tmp_path / "killed.ledger"
        out = tmp_path / "killed.jsonl"
        proc = subprocess.Popen(_batch_argv(server, inp, ledger, out), env=env,
                                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        deadline = time.monotonic() + 60
        while _probe_lines(ledger) < 150 and time.monotonic() < deadline and proc.poll() is None:
            time.sleep(0.02)
        proc.send_signal(signal.SIGKILL)
        proc.wait()
        done_at_kill = _probe_lines(ledger)
        assert 0 < done_at_kill < 500, done_at_kill
        assert not out.exists()

        server.state.reset()
        subprocess.run(_batch_argv(server, inp, ledger, out, "--resume"), check=True, env=env,
                       capture_output=True, timeout=120)
        reprobed = {path for m, path in server.state.requests if "/wayback/" not in path}
        assert len(reprobed) <= 500 - done_at_kill + 8  # at most the in-flight probes are redone
        assert _verdict_set(out) == _verdict_set(full_out)
        assert len(_verdict_set(out)) == 1000
