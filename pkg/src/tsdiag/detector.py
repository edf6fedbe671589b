"""Evidence aggregation into scored anomaly records.

Two interchangeable scoring backends: a deterministic rule backend encoding
the strength rubric (the offline/CI path) and a completion backend that
renders a prompt, calls a model at temperature 0, and parses its JSON reply.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .analyzers import Candidate, EvidenceBundle
from .core import AnomalyRecord, Interval, merge_intervals
from .errors import UnparseableResponse
from .represent import CompressedSummary

MERGE_GAP = 2
EMIT_MIN = 50
AGREEMENT_BONUS = 10
SCORE_BANDS = ((5.0, 85), (4.0, 70), (3.0, 60), (2.5, 50))
BASE_WEAK = 30
CLUSTER_FLOORS = ((3, 70), (2, 60))


@dataclass(frozen=True)
class DetectorInput:
    offset: int
    summary: CompressedSummary
    bundles: tuple[EvidenceBundle, ...]
    references: tuple = ()
    images: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if len(self.bundles) != 4:
            raise ValueError("DetectorInput needs exactly four bundles")
        families = [b.family for b in self.bundles]
        if len(set(families)) != 4:
            raise ValueError("DetectorInput bundles must cover all four families")


@dataclass(frozen=True)
class MergedCandidate:
    interval: Interval
    strength: float
    types: frozenset
    evidence: str
    families: frozenset


@dataclass(frozen=True)
class ScoredCandidate:
    interval: Interval
    raw_score: int
    types: frozenset
    evidence: str
    families: frozenset


def _pool_candidates(bundles) -> list[Candidate]:
    pooled: list[tuple[Candidate, str]] = []
    for bundle in bundles:
        for cand in bundle.candidates:
            pooled.append((cand, bundle.family.name))
    pooled.sort(key=lambda cf: (cf[0].interval.start, cf[0].interval.end))
    return pooled


def pool_and_merge(bundles) -> list[MergedCandidate]:
    """Pool candidates across bundles and merge intervals with gap 2.

    A merged candidate keeps the union of types, the maximum strength, the
    contributing families, and a joined evidence note.
    """
    pooled = _pool_candidates(bundles)
    if not pooled:
        return []
    merged_ivs = merge_intervals([c.interval for c, _ in pooled], gap=MERGE_GAP)
    out = []
    for iv in merged_ivs:
        members = [
            (c, fam) for c, fam in pooled
            if c.interval.start <= iv.end and iv.start <= c.interval.end
        ]
        types = frozenset().union(*(c.types for c, _ in members))
        families = frozenset(fam for _, fam in members)
        strength = max(c.strength for c, _ in members)
        notes = "; ".join(
            f"[{fam}] {c.note}" for c, fam in members if c.note
        )
        out.append(MergedCandidate(
            interval=iv,
            strength=strength,
            types=types,
            evidence=notes,
            families=families,
        ))
    return out


def rule_score(strength: float, length: int, n_families: int) -> int:
    """Deterministic rubric score.

    Base band from the candidate's strength; cluster floors (length 2 -> at
    least 60, length 3+ -> at least 70) apply only when the base band already
    reaches 50; each additional agreeing family adds 10; capped at 100.
    """
    base = BASE_WEAK
    for floor, score in SCORE_BANDS:
        if strength >= floor:
            base = score
            break
    score = base
    if base >= EMIT_MIN:
        for min_len, floor in CLUSTER_FLOORS:
            if length >= min_len:
                score = max(score, floor)
                break
    score += AGREEMENT_BONUS * max(0, n_families - 1)
    return min(100, score)


def detect(dinput: DetectorInput, backend=None) -> list[AnomalyRecord]:
    """Score pooled candidates and emit records with confidence >= 0.50.

    With no backend the rule rubric scores each merged candidate from its
    strength, cluster length, and family agreement. With a completion
    backend, the rendered prompt decides the scores (completion_score).
    Record indices are shifted by the window offset into global coordinates.
    """
    merged = pool_and_merge(dinput.bundles)
    if backend is None:
        scored = []
        for cand in merged:
            raw = rule_score(cand.strength, cand.interval.length(), len(cand.families))
            scored.append(ScoredCandidate(
                cand.interval, raw, cand.types, cand.evidence, cand.families,
            ))
    else:
        scored = completion_score(dinput, merged, backend)

    records = []
    for cand in scored:
        if cand.raw_score < EMIT_MIN or not cand.types:
            continue
        records.append(AnomalyRecord(
            start=cand.interval.start + dinput.offset,
            end=cand.interval.end + dinput.offset,
            raw_score=int(cand.raw_score),
            types=cand.types,
            evidence=cand.evidence,
        ))
    records.sort(key=lambda r: (r.start, r.end))
    return records


_JSON_LIST = re.compile(r"\[.*\]", re.DOTALL)


def parse_detector_response(text: str, window_length: int) -> list[ScoredCandidate]:
    """Parse the JSON list of {index, end_index, confidence, types} records.

    Confidence is clamped to [0, 100]; intervals are clamped to the window;
    entries with no valid types are dropped. Raises UnparseableResponse when
    no JSON list can be extracted.
    """
    from .core import AnomalyType

    match = _JSON_LIST.search(text)
    if not match:
        raise UnparseableResponse("no JSON list found in response")
    try:
        items = json.loads(match.group(0))
    except json.JSONDecodeError as exc:
        raise UnparseableResponse(f"invalid JSON: {exc}") from None
    if not isinstance(items, list):
        raise UnparseableResponse("response JSON is not a list")
    out = []
    for item in items:
        if not isinstance(item, dict):
            raise UnparseableResponse("list entry is not an object")
        try:
            start = int(item["index"])
            end = int(item.get("end_index", start))
            conf = float(item["confidence"])
        except (KeyError, TypeError, ValueError) as exc:
            raise UnparseableResponse(f"bad record fields: {exc}") from None
        start = max(0, min(start, window_length - 1))
        end = max(start, min(end, window_length - 1))
        raw = int(round(min(100.0, max(0.0, conf))))
        types = frozenset(
            AnomalyType(int(t)) for t in item.get("types", [])
            if int(t) in AnomalyType._value2member_map_
        )
        if not types:
            continue
        out.append(ScoredCandidate(
            interval=Interval(start, end),
            raw_score=raw,
            types=types,
            evidence=str(item.get("evidence", "")),
            families=frozenset(t.family.name for t in types),
        ))
    return out


def completion_score(dinput: DetectorInput, candidates, backend) -> list[ScoredCandidate]:
    """One temperature-0 completion request; retry once with a repair
    instruction on a malformed reply, then raise UnparseableResponse."""
    from . import agents

    window_length = dinput.summary.n
    prompt = agents.render_prompt(
        "detector", dinput.summary, dinput.bundles, dinput.references,
        dinput.images, candidates=candidates,
    )
    images = [img.render_png() for img in dinput.images]
    response = backend.complete(prompt.text, images=images)
    try:
        return parse_detector_response(response.text, window_length)
    except UnparseableResponse:
        repair = (
            prompt.text
            + "\n\nThe previous reply could not be parsed. Reply with ONLY a JSON"
            " list of objects {\"index\", \"end_index\", \"confidence\", \"types\"}."
        )
        response = backend.complete(repair, images=images)
        return parse_detector_response(response.text, window_length)


def threshold(records, tau: float, length: int) -> np.ndarray:
    """Binary point predictions: positions covered by a record with
    confidence >= tau."""
    pred = np.zeros(length, dtype=np.int8)
    for rec in records:
        if rec.confidence >= tau:
            lo = max(0, rec.start)
            hi = min(length - 1, rec.end)
            if lo <= hi:
                pred[lo : hi + 1] = 1
    return pred
