"""Prompt rendering, completion backends, and the supervisor report."""
import numpy as np
import pytest

from tsdiag.agents import (
    HttpCompletionBackend,
    MockCompletionBackend,
    ScriptedBackend,
    global_rules,
    prompt_key,
    render_prompt,
    severity_for,
    supervise,
)
from tsdiag.analyzers import Candidate, EvidenceBundle
from tsdiag.core import AnomalyFamily, AnomalyRecord, AnomalyType, Interval
from tsdiag.errors import BackendUnavailable, UnparseableResponse
from tsdiag.icl import IclReference
from tsdiag.represent import summarize
from tsdiag.tools import statistics


def empty_bundles():
    return tuple(
        EvidenceBundle(family=f, candidates=(), tool_summaries={},
                       summary="no candidates")
        for f in (AnomalyFamily.POINT, AnomalyFamily.STRUCTURAL,
                  AnomalyFamily.SEASONAL, AnomalyFamily.PATTERN)
    )


def record(start, end, raw, types=(AnomalyType.GLOBAL_POINT,)):
    return AnomalyRecord(start=start, end=end, raw_score=raw,
                         types=frozenset(types), evidence="")


SUMMARY = summarize(np.sin(np.arange(200) / 5.0), 400)


# ---------------------------------------------------------------------------
# prompt rendering


def test_detector_prompt_contains_rubric_with_empty_bundles():
    prompt = render_prompt("detector", SUMMARY, empty_bundles(), candidates=[])
    assert "Scoring rubric" in prompt.system
    assert "Do NOT output anomalies scoring below 50" in prompt.system
    assert prompt.role == "Detector"


def test_detector_prompt_embeds_global_rules_verbatim():
    prompt = render_prompt("detector", SUMMARY, empty_bundles(), candidates=[])
    rules = global_rules()
    assert rules in prompt.system
    assert "{GLOBAL_RULES}" not in prompt.system


def test_render_prompt_deterministic():
    bundles = empty_bundles()
    a = render_prompt("detector", SUMMARY, bundles, candidates=[])
    b = render_prompt("detector", SUMMARY, bundles, candidates=[])
    assert a.text == b.text
    assert a.estimated_tokens == b.estimated_tokens


def test_render_prompt_includes_both_reference_excerpts():
    refs = [
        IclReference(
            normal=np.zeros(40), anomalous=np.ones(40),
            type=AnomalyType.MEAN_CHANGE_POINT,
            evidence=f"shifted by {i} sigma", distance=float(i),
            source_id=f"src-{i}",
        )
        for i in (1, 2)
    ]
    prompt = render_prompt("detector", SUMMARY, empty_bundles(),
                           references=refs, candidates=[])
    assert prompt.user.count("normal excerpt") == 2
    assert prompt.user.count("anomalous excerpt") == 2
    assert "shifted by 1 sigma" in prompt.user
    assert "shifted by 2 sigma" in prompt.user


def test_render_prompt_candidate_lines():
    cands = [Candidate(Interval(10, 12), frozenset({AnomalyType.GLOBAL_POINT}),
                       5.5, "spike cluster")]
    from tsdiag.detector import pool_and_merge

    bundles = list(empty_bundles())
    bundles[0] = EvidenceBundle(
        family=AnomalyFamily.POINT, candidates=tuple(cands),
        tool_summaries={"detect_outliers": "z hits [10, 11, 12]"},
        summary="1 candidate",
    )
    merged = pool_and_merge(bundles)
    prompt = render_prompt("detector", SUMMARY, bundles, candidates=merged)
    assert "[10, 12]" in prompt.user
    assert "z hits [10, 11, 12]" in prompt.user


def test_render_prompt_supervisor_sections():
    stats = statistics(np.arange(50, dtype=np.float64))
    prompt = render_prompt("supervisor", None, records=[record(3, 4, 80)],
                           stats=stats)
    assert "# Window statistics" in prompt.user
    assert "# Confirmed anomaly records" in prompt.user
    assert '"index": 3' in prompt.user


def test_render_prompt_unknown_role():
    with pytest.raises(ValueError):
        render_prompt("oracle", SUMMARY)


# ---------------------------------------------------------------------------
# severity and the rule-path supervisor


@pytest.mark.parametrize("confidence,severity", [
    (0.95, "Urgent"), (0.85, "Urgent"),
    (0.84, "Error"), (0.70, "Error"),
    (0.69, "Warning"), (0.50, "Warning"),
    (0.49, "Info"), (0.0, "Info"),
])
def test_severity_bands(confidence, severity):
    assert severity_for(confidence) == severity


def test_supervise_no_records_is_info():
    report = supervise([], statistics(np.arange(20, dtype=np.float64)))
    assert report.overall_alarm_level == "Info"
    assert "No anomalies" in report.executive_summary
    assert report.confirmed_anomalies == ()
    assert report.recommendations


def test_supervise_high_confidence_is_urgent():
    report = supervise([record(10, 12, 90)],
                       statistics(np.arange(20, dtype=np.float64)))
    assert report.overall_alarm_level == "Urgent"
    assert len(report.confirmed_anomalies) == 1
    assert report.confirmed_anomalies[0].severity == "Urgent"


def test_supervise_threshold_filters_records():
    records = [record(1, 1, 55), record(5, 6, 90)]
    report = supervise(records, None, tau=0.8)
    assert [(c.record.start, c.record.end)
            for c in report.confirmed_anomalies] == [(5, 6)]


def test_supervise_overall_is_max_severity():
    records = [record(1, 1, 55), record(5, 6, 72)]
    report = supervise(records, None)
    assert [c.severity for c in report.confirmed_anomalies] == ["Warning", "Error"]
    assert report.overall_alarm_level == "Error"


def test_supervise_subset_contract_seeded():
    rng = np.random.default_rng(11)
    for _ in range(100):
        records = []
        for _ in range(int(rng.integers(0, 6))):
            a = int(rng.integers(0, 300))
            b = a + int(rng.integers(0, 10))
            types = frozenset({AnomalyType(int(rng.integers(1, 10)))})
            records.append(AnomalyRecord(
                start=a, end=b, raw_score=int(rng.integers(50, 101)),
                types=types, evidence="",
            ))
        tau = float(rng.uniform(0.4, 0.9))
        report = supervise(records, None, tau=tau)
        allowed = {(r.start, r.end, r.types) for r in records}
        for c in report.confirmed_anomalies:
            assert (c.record.start, c.record.end, c.record.types) in allowed
            assert c.record.confidence >= tau


def test_report_markdown_and_json():
    report = supervise([record(10, 12, 90)],
                       statistics(np.arange(20, dtype=np.float64)))
    md = report.to_markdown()
    assert md.startswith("# Diagnosis report")
    assert "| 10 | 12 |" in md
    assert "Urgent" in md
    data = report.to_json()
    assert set(data) == {
        "executive_summary", "time_series_characteristics",
        "confirmed_anomalies", "overall_alarm_level", "alarm_reason",
        "recommendations",
    }
    assert data["confirmed_anomalies"][0]["severity"] == "Urgent"


# ---------------------------------------------------------------------------
# supervisor completion path


def full_report_json(entries, level="Error"):
    import json

    return json.dumps({
        "executive_summary": "model summary",
        "time_series_characteristics": "model characteristics",
        "confirmed_anomalies": entries,
        "overall_alarm_level": level,
        "alarm_reason": "model reason",
        "recommendations": ["model recommendation"],
    })


def test_supervisor_completion_drops_fabricated_intervals():
    records = [record(10, 12, 90)]
    backend = ScriptedBackend([full_report_json([
        {"index": 10, "end_index": 12, "severity": "Error"},
        {"index": 40, "end_index": 45, "severity": "Urgent"},
    ])])
    report = supervise(records, None, backend=backend)
    assert [(c.record.start, c.record.end)
            for c in report.confirmed_anomalies] == [(10, 12)]
    # the level is recomputed from surviving anomalies, not trusted
    assert report.overall_alarm_level == "Error"
    assert report.executive_summary == "model summary"


def test_supervisor_completion_repairs_then_parses():
    records = [record(10, 12, 90)]
    backend = ScriptedBackend([
        "no JSON here",
        full_report_json([{"index": 10, "end_index": 12}]),
    ])
    report = supervise(records, None, backend=backend)
    assert len(backend.prompts) == 2
    assert "could not be parsed" in backend.prompts[1]
    # missing severity falls back to the confidence band
    assert report.confirmed_anomalies[0].severity == "Urgent"


def test_supervisor_completion_fails_after_retry():
    backend = ScriptedBackend(["prose", "more prose"])
    with pytest.raises(UnparseableResponse):
        supervise([record(1, 2, 80)], None, backend=backend)


def test_supervisor_completion_rejects_unknown_severity():
    records = [record(10, 12, 60)]
    backend = ScriptedBackend([full_report_json([
        {"index": 10, "end_index": 12, "severity": "Catastrophic"},
    ])])
    report = supervise(records, None, backend=backend)
    assert report.confirmed_anomalies[0].severity == "Warning"


# ---------------------------------------------------------------------------
# backends


def test_mock_backend_keyed_and_default(tmp_path):
    prompt = "score this window"
    (tmp_path / f"{prompt_key(prompt)}.txt").write_text("[]", "utf-8")
    (tmp_path / "default.txt").write_text("fallback", "utf-8")
    backend = MockCompletionBackend(tmp_path)
    assert backend.complete(prompt).text == "[]"
    assert backend.complete("anything else").text == "fallback"


def test_mock_backend_unavailable_when_empty(tmp_path):
    backend = MockCompletionBackend(tmp_path)
    with pytest.raises(BackendUnavailable):
        backend.complete("prompt")


def test_http_backend_requires_endpoint_env(monkeypatch):
    monkeypatch.delenv("TSDIAG_ENDPOINT", raising=False)
    backend = HttpCompletionBackend()
    with pytest.raises(BackendUnavailable):
        backend.complete("prompt")


def test_prompt_key_stable_format():
    key = prompt_key("abc")
    assert key == prompt_key("abc")
    assert len(key) == 16
    assert all(c in "0123456789abcdef" for c in key)


def test_parse_render_roundtrip():
    # a synthetic detector answer built from scored fields parses back exactly
    import json

    from tsdiag.detector import parse_detector_response

    fields = [
        {"index": 10, "end_index": 14, "confidence": 85, "types": [1, 6],
         "evidence": "level shift"},
        {"index": 100, "end_index": 100, "confidence": 60, "types": [2],
         "evidence": "context bump"},
    ]
    parsed = parse_detector_response(json.dumps(fields), 400)
    assert [(c.interval.start, c.interval.end, c.raw_score,
             sorted(int(t) for t in c.types), c.evidence) for c in parsed] == [
        (10, 14, 85, [1, 6], "level shift"),
        (100, 100, 60, [2], "context bump"),
    ]
