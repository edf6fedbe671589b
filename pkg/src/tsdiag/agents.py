"""Prompt assembly, completion backends, and the diagnosis report generator.

Templates live as text assets under prompts/. Rendering is deterministic:
identical inputs produce byte-identical prompt text. The supervisor has a
deterministic template path (the default) and an optional completion path.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .core import AnomalyRecord, AnomalyType
from .detector import ScoredCandidate, parse_detector_response  # noqa: F401
from .errors import BackendUnavailable, UnparseableResponse
from .represent import estimate_tokens
from .tools.stats import StatsSummary

SEVERITY_SCALE = ("Info", "Warning", "Error", "Urgent")
URGENT_MIN = 0.85
ERROR_MIN = 0.70
WARNING_MIN = 0.50

_ROLES = {
    "point": ("PointAnalyzer", "point.txt"),
    "struct": ("StructAnalyzer", "struct.txt"),
    "season": ("SeasonAnalyzer", "season.txt"),
    "pattern": ("PatternAnalyzer", "pattern.txt"),
    "detector": ("Detector", "detector.txt"),
    "supervisor": ("Supervisor", "supervisor.txt"),
}

TYPE_LABELS = {
    AnomalyType.GLOBAL_POINT: "global point outlier",
    AnomalyType.CONTEXTUAL_POINT: "contextual point outlier",
    AnomalyType.AMPLITUDE_CHANGE: "seasonal amplitude change",
    AnomalyType.SEASONALITY_ANOMALY: "seasonality distortion",
    AnomalyType.TREND_CHANGE: "trend direction change",
    AnomalyType.MEAN_CHANGE_POINT: "mean level shift",
    AnomalyType.VARIANCE_CHANGE: "variance change",
    AnomalyType.PATTERN_SHIFT: "pattern shift",
    AnomalyType.WAVEFORM_DISTORTION: "waveform distortion",
}


def _load_template(filename: str) -> str:
    root = resources.files("tsdiag")
    return root.joinpath("prompts").joinpath(filename).read_text("utf-8")


def global_rules() -> str:
    return _load_template("global_rules.txt")


@dataclass(frozen=True)
class PromptBundle:
    role: str
    system: str
    user: str
    images: tuple = ()

    @property
    def text(self) -> str:
        return self.system + "\n\n" + self.user

    @property
    def estimated_tokens(self) -> int:
        return estimate_tokens(self.text)


def _render_candidates(candidates) -> str:
    if not candidates:
        return "Candidates: none pooled from the analyzers."
    lines = ["Pooled candidates (merged across analyzers):"]
    for i, c in enumerate(candidates):
        types = ",".join(str(int(t)) for t in sorted(c.types))
        fams = ",".join(sorted(c.families))
        lines.append(
            f"  {i}: interval [{c.interval.start}, {c.interval.end}]"
            f" strength {c.strength:.3f} types {{{types}}} families {{{fams}}}"
            f" evidence: {c.evidence or 'none'}"
        )
    return "\n".join(lines)


def _render_reference(i: int, ref) -> str:
    if hasattr(ref, "prompt_text"):
        return f"Reference {i}:\n{ref.prompt_text()}"
    return f"Reference {i}: {ref}"


def _render_bundles(bundles) -> str:
    blocks = []
    for bundle in bundles:
        lines = [f"## {bundle.family.name} analyzer", bundle.summary or "(no summary)"]
        for name in sorted(bundle.tool_summaries):
            lines.append(f"- {name}: {bundle.tool_summaries[name]}")
        if bundle.candidates:
            for c in bundle.candidates:
                types = ",".join(str(int(t)) for t in sorted(c.types))
                lines.append(
                    f"- candidate [{c.interval.start}, {c.interval.end}]"
                    f" strength {c.strength:.3f} types {{{types}}}: {c.note}"
                )
        else:
            lines.append("- no candidates")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def render_prompt(role: str, summary, bundles=(), references=(), images=(),
                  candidates=None, records=(), stats: StatsSummary | None = None,
                  ) -> PromptBundle:
    """Deterministic prompt assembly for any agent role.

    The detector system text embeds the shared global rules block verbatim.
    The user text lays out the window summary, the analyzer evidence, any
    retrieved references, and (detector) the pooled candidates or
    (supervisor) the thresholded records plus window statistics.
    """
    key = role.lower().removesuffix("analyzer")
    if key not in _ROLES:
        raise ValueError(f"unknown role: {role!r}")
    canonical, filename = _ROLES[key]
    system = _load_template(filename)
    if canonical == "Detector":
        system = system.replace("{GLOBAL_RULES}", global_rules())

    parts = []
    if summary is not None:
        parts.append("# Window summary\n" + summary.text)
    if bundles:
        parts.append("# Analyzer evidence\n" + _render_bundles(bundles))
    if references:
        parts.append("# Retrieved references\n" + "\n\n".join(
            _render_reference(i, r) for i, r in enumerate(references)
        ))
    if canonical == "Detector" and candidates is not None:
        parts.append("# Scoring input\n" + _render_candidates(candidates))
    if canonical == "Supervisor":
        if stats is not None:
            parts.append("# Window statistics\n" + stats.describe())
        rec_lines = ["# Confirmed anomaly records"]
        if records:
            for rec in records:
                rec_lines.append(json.dumps(rec.to_json(), sort_keys=True))
        else:
            rec_lines.append("(none)")
        parts.append("\n".join(rec_lines))

    png_images = tuple(
        img if isinstance(img, (bytes, bytearray)) else img.render_png()
        for img in images
    )
    return PromptBundle(role=canonical, system=system,
                        user="\n\n".join(parts), images=png_images)


# ---------------------------------------------------------------------------
# Completion backends


@dataclass(frozen=True)
class CompletionResult:
    text: str
    prompt_tokens: int
    completion_tokens: int


def prompt_key(prompt: str) -> str:
    """Stable 16-hex-digit key for canned-response lookup."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


class HttpCompletionBackend:
    """Provider-neutral HTTP client.

    POSTs {model, messages, temperature, images} as JSON. The endpoint comes
    from TSDIAG_ENDPOINT and the bearer token from TSDIAG_API_KEY; both are
    environment-only so credentials never land in flags or config files.
    """

    def __init__(self, model: str = "default", temperature: float = 0.0,
                 timeout: float = 60.0):
        self.model = model
        self.temperature = temperature
        self.timeout = timeout

    def complete(self, prompt: str, images=()) -> CompletionResult:
        import base64

        import requests

        endpoint = os.environ.get("TSDIAG_ENDPOINT")
        if not endpoint:
            raise BackendUnavailable("TSDIAG_ENDPOINT is not set")
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get("TSDIAG_API_KEY")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "images": [base64.b64encode(bytes(img)).decode("ascii")
                       for img in images],
        }
        try:
            resp = requests.post(endpoint, json=payload, headers=headers,
                                 timeout=self.timeout)
        except requests.RequestException as exc:
            raise BackendUnavailable(f"request failed: {exc}") from None
        if resp.status_code != 200:
            raise BackendUnavailable(f"backend returned HTTP {resp.status_code}")
        try:
            body = resp.json()
        except ValueError:
            raise BackendUnavailable("backend returned non-JSON body") from None
        text = body.get("text")
        if text is None:
            try:
                text = body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError):
                raise BackendUnavailable("no completion text in response") from None
        usage = body.get("usage", {})
        return CompletionResult(
            text=str(text),
            prompt_tokens=int(usage.get("prompt_tokens", estimate_tokens(prompt))),
            completion_tokens=int(usage.get("completion_tokens",
                                            estimate_tokens(str(text)))),
        )


class MockCompletionBackend:
    """Canned responses from a directory keyed by prompt hash.

    Looks for <prompt_key>.txt, then default.txt; raises BackendUnavailable
    when neither exists so tests can exercise the fallback path.
    """

    def __init__(self, directory):
        self.directory = Path(directory)

    def complete(self, prompt: str, images=()) -> CompletionResult:
        keyed = self.directory / f"{prompt_key(prompt)}.txt"
        path = keyed if keyed.exists() else self.directory / "default.txt"
        if not path.exists():
            raise BackendUnavailable(f"no canned response in {self.directory}")
        text = path.read_text("utf-8")
        return CompletionResult(text, estimate_tokens(prompt), estimate_tokens(text))


class ScriptedBackend:
    """In-memory FIFO of responses; records prompts for assertions."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.prompts: list[str] = []

    def complete(self, prompt: str, images=()) -> CompletionResult:
        self.prompts.append(prompt)
        if not self.responses:
            raise BackendUnavailable("scripted backend exhausted")
        text = self.responses.pop(0)
        return CompletionResult(text, estimate_tokens(prompt), estimate_tokens(text))


# ---------------------------------------------------------------------------
# Supervisor


@dataclass(frozen=True)
class ConfirmedAnomaly:
    record: AnomalyRecord
    severity: str

    def to_json(self) -> dict:
        data = self.record.to_json()
        data["severity"] = self.severity
        return data


@dataclass(frozen=True)
class DiagnosisReport:
    executive_summary: str
    time_series_characteristics: str
    confirmed_anomalies: tuple[ConfirmedAnomaly, ...]
    overall_alarm_level: str
    alarm_reason: str
    recommendations: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "executive_summary": self.executive_summary,
            "time_series_characteristics": self.time_series_characteristics,
            "confirmed_anomalies": [c.to_json() for c in self.confirmed_anomalies],
            "overall_alarm_level": self.overall_alarm_level,
            "alarm_reason": self.alarm_reason,
            "recommendations": list(self.recommendations),
        }

    def to_markdown(self) -> str:
        lines = ["# Diagnosis report", ""]
        lines += ["## Executive summary", self.executive_summary, ""]
        lines += ["## Time series characteristics",
                  self.time_series_characteristics, ""]
        lines.append("## Confirmed anomalies")
        if self.confirmed_anomalies:
            lines.append("| start | end | types | confidence | severity |")
            lines.append("| --- | --- | --- | --- | --- |")
            for c in self.confirmed_anomalies:
                types = ", ".join(
                    TYPE_LABELS[t] for t in sorted(c.record.types)
                )
                lines.append(
                    f"| {c.record.start} | {c.record.end} | {types}"
                    f" | {c.record.confidence:.2f} | {c.severity} |"
                )
        else:
            lines.append("None.")
        lines += ["", f"## Alarm level: {self.overall_alarm_level}",
                  self.alarm_reason, "", "## Recommendations"]
        lines += [f"- {r}" for r in self.recommendations]
        return "\n".join(lines) + "\n"


def severity_for(confidence: float) -> str:
    if confidence >= URGENT_MIN:
        return "Urgent"
    if confidence >= ERROR_MIN:
        return "Error"
    if confidence >= WARNING_MIN:
        return "Warning"
    return "Info"


def _overall(confirmed) -> str:
    if not confirmed:
        return "Info"
    return max((c.severity for c in confirmed), key=SEVERITY_SCALE.index)


_RECOMMENDATIONS = {
    "Urgent": (
        "Alert the on-call operator and inspect the flagged interval immediately.",
        "Cross-check the upstream data source over the same interval.",
        "Re-run detection on adjacent windows to bound the affected range.",
    ),
    "Error": (
        "Investigate the flagged interval before the next reporting cycle.",
        "Increase monitoring frequency on this series.",
    ),
    "Warning": (
        "Keep the flagged interval under observation.",
        "Review again if the deviation persists in subsequent windows.",
    ),
    "Info": (
        "No action needed; continue routine monitoring.",
    ),
}


def _characteristics(stats: StatsSummary | None) -> str:
    if stats is None:
        return "No window statistics were supplied."
    spread = stats.maximum - stats.minimum
    return (
        f"The window holds {stats.n} points with mean {stats.mean:.4g} and"
        f" standard deviation {stats.std:.4g}; values span"
        f" [{stats.minimum:.4g}, {stats.maximum:.4g}] (range {spread:.4g}),"
        f" interquartile range [{stats.q1:.4g}, {stats.q3:.4g}],"
        f" skewness {stats.skewness:.3g}, excess kurtosis {stats.kurtosis:.3g}."
    )


def _describe_record(c: ConfirmedAnomaly) -> str:
    rec = c.record
    types = ", ".join(TYPE_LABELS[t] for t in sorted(rec.types))
    span = "point" if rec.start == rec.end else f"{rec.end - rec.start + 1}-point interval"
    return (
        f"[{rec.start}, {rec.end}] ({span}): {types}; confidence"
        f" {rec.confidence:.2f}, severity {c.severity}."
    )


def supervise(records, stats: StatsSummary | None = None, tau: float = 0.5,
              backend=None, summary=None) -> DiagnosisReport:
    """Analyst-facing diagnosis from thresholded records.

    The default rule path fills fixed templates per alarm level, making the
    full pipeline reproducible offline. With a completion backend, the
    supervisor prompt is rendered and the six-field JSON reply is parsed;
    intervals or types not present in the input records are discarded, so
    the report can never widen the detector's output.
    """
    kept = [r for r in records if r.confidence >= tau]
    kept.sort(key=lambda r: (r.start, r.end))
    if backend is not None:
        return _supervise_completion(kept, stats, backend, summary)

    confirmed = tuple(
        ConfirmedAnomaly(r, severity_for(r.confidence)) for r in kept
    )
    level = _overall(confirmed)
    if not confirmed:
        executive = ("No anomalies were confirmed in this window;"
                     " no action is required.")
        reason = ("Alarm level Info: every scored candidate fell below the"
                  f" reporting threshold ({tau:.2f}).")
    else:
        action = {
            "Urgent": "immediate action is required",
            "Error": "prompt investigation is required",
            "Warning": "monitoring is recommended",
        }[level]
        executive = (
            f"{len(confirmed)} anomal{'y was' if len(confirmed) == 1 else 'ies were'}"
            f" confirmed with highest severity {level}; {action}."
        )
        worst = max(confirmed,
                    key=lambda c: (c.record.confidence, -c.record.start))
        reason = (
            f"Alarm level {level}: the strongest confirmed anomaly covers"
            f" [{worst.record.start}, {worst.record.end}] with confidence"
            f" {worst.record.confidence:.2f}."
        )
    characteristics = _characteristics(stats)
    if confirmed:
        characteristics += " Anomaly details: " + " ".join(
            _describe_record(c) for c in confirmed
        )
    return DiagnosisReport(
        executive_summary=executive,
        time_series_characteristics=characteristics,
        confirmed_anomalies=confirmed,
        overall_alarm_level=level,
        alarm_reason=reason,
        recommendations=_RECOMMENDATIONS[level],
    )


def _first_json_object(text: str) -> dict:
    start = text.find("{")
    if start < 0:
        raise UnparseableResponse("no JSON object found in response")
    try:
        obj, _ = json.JSONDecoder().raw_decode(text[start:])
    except json.JSONDecodeError as exc:
        raise UnparseableResponse(f"invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise UnparseableResponse("response JSON is not an object")
    return obj


_REPORT_FIELDS = ("executive_summary", "time_series_characteristics",
                  "confirmed_anomalies", "overall_alarm_level",
                  "alarm_reason", "recommendations")


def _parse_supervisor_response(text: str, records) -> DiagnosisReport:
    obj = _first_json_object(text)
    missing = [f for f in _REPORT_FIELDS if f not in obj]
    if missing:
        raise UnparseableResponse(f"report missing fields: {missing}")
    by_interval = {(r.start, r.end): r for r in records}
    confirmed = []
    entries = obj["confirmed_anomalies"]
    if not isinstance(entries, list):
        raise UnparseableResponse("confirmed_anomalies is not a list")
    for entry in entries:
        if not isinstance(entry, dict):
            continue
        key = (int(entry.get("index", -1)), int(entry.get("end_index", -1)))
        rec = by_interval.get(key)
        if rec is None:
            continue  # never widen the detector's output
        sev = str(entry.get("severity", severity_for(rec.confidence)))
        if sev not in SEVERITY_SCALE:
            sev = severity_for(rec.confidence)
        confirmed.append(ConfirmedAnomaly(rec, sev))
    confirmed_t = tuple(confirmed)
    level = _overall(confirmed_t)
    recs = obj["recommendations"]
    if isinstance(recs, str):
        recs = [recs]
    return DiagnosisReport(
        executive_summary=str(obj["executive_summary"]),
        time_series_characteristics=str(obj["time_series_characteristics"]),
        confirmed_anomalies=confirmed_t,
        overall_alarm_level=level,
        alarm_reason=str(obj["alarm_reason"]),
        recommendations=tuple(str(r) for r in recs),
    )


def _supervise_completion(records, stats, backend, summary) -> DiagnosisReport:
    prompt = render_prompt("supervisor", summary, records=records, stats=stats)
    response = backend.complete(prompt.text, images=())
    try:
        return _parse_supervisor_response(response.text, records)
    except UnparseableResponse:
        repair = (
            prompt.text
            + "\n\nThe previous reply could not be parsed. Reply with ONLY a"
            " JSON object holding exactly the six report fields."
        )
        response = backend.complete(repair, images=())
        return _parse_supervisor_response(response.text, records)
