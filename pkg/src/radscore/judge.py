"""Judge grading: categorical verdict parsing, numeric mapping, aggregation.

The judge LLM grades a predicted description against the gold sentence on a
closed four-level rubric per aspect (location, body part, type, plus the
optional attributes aspect).  Aggregation produces per-group grade
distributions and correct-percentage tables; headline tables cover the three
main aspects only.
"""

from __future__ import annotations

import json
import re
import sys
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence

from .backends import BackendConfig, BackendError, TranscriptLedger, complete
from .prompts import PromptScenario, build_judge_prompt

__all__ = [
    "Grade",
    "AspectGrade",
    "JudgeVerdict",
    "GradeDistribution",
    "VerdictParseError",
    "VerdictError",
    "parse_verdict",
    "judge_one",
    "aggregate",
    "to_numeric",
    "MAIN_ASPECTS",
]

MAIN_ASPECTS = ("location", "body_part", "type")
ALL_ASPECTS = MAIN_ASPECTS + ("attributes",)


class Grade(Enum):
    CORRECT = "Correct"
    PARTIALLY_CORRECT = "Partially Correct"
    INCORRECT = "Incorrect"
    NOT_APPLICABLE = "Not Applicable"

    @classmethod
    def parse(cls, token: str) -> "Grade":
        normalized = re.sub(r"[\s_]+", " ", token.strip()).lower()
        for grade in cls:
            if normalized in (grade.value.lower(), grade.value.replace(" ", "").lower()):
                return grade
        raise VerdictParseError(f"grade token {token!r} is not in the closed rubric enumeration")


class VerdictParseError(ValueError):
    """The judge response could not be parsed into the closed rubric."""


class VerdictError(Exception):
    """Unparseable verdict after the single deterministic reprompt."""

    def __init__(self, message: str, raw_response: str):
        super().__init__(message)
        self.raw_response = raw_response


@dataclass(frozen=True)
class AspectGrade:
    grade: Grade
    explanation: str


@dataclass(frozen=True)
class JudgeVerdict:
    finding_id: str
    model_name: str
    scenario: PromptScenario
    location: AspectGrade
    body_part: AspectGrade
    type: AspectGrade
    attributes: Optional[AspectGrade]
    raw_response: str

    def aspect(self, name: str) -> Optional[AspectGrade]:
        return getattr(self, name)

    def to_dict(self) -> dict:
        out = {
            "finding_id": self.finding_id,
            "model_name": self.model_name,
            "scenario": self.scenario.tag,
            "raw_response": self.raw_response,
        }
        for name in ALL_ASPECTS:
            ag = self.aspect(name)
            out[name] = None if ag is None else {"grade": ag.grade.value, "explanation": ag.explanation}
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "JudgeVerdict":
        def ag(value):
            return None if value is None else AspectGrade(Grade.parse(value["grade"]), value["explanation"])

        return cls(
            finding_id=obj["finding_id"],
            model_name=obj["model_name"],
            scenario=PromptScenario.from_tag(obj["scenario"]),
            location=ag(obj["location"]),
            body_part=ag(obj["body_part"]),
            type=ag(obj["type"]),
            attributes=ag(obj.get("attributes")),
            raw_response=obj.get("raw_response", ""),
        )


_FENCE = re.compile(r"```(?:json)?\s*(.*?)\s*```", re.DOTALL)


def _extract_json_object(raw: str) -> dict:
    """Pull the first JSON object out of a response, tolerating prose and code fences."""
    fenced = _FENCE.search(raw)
    text = fenced.group(1) if fenced else raw
    start = text.find("{")
    if start == -1:
        raise VerdictParseError("no JSON object found in judge response")
    decoder = json.JSONDecoder()
    try:
        obj, _ = decoder.raw_decode(text[start:])
    except json.JSONDecodeError as exc:
        raise VerdictParseError(f"malformed JSON in judge response: {exc}") from exc
    if not isinstance(obj, dict):
        raise VerdictParseError("judge response JSON is not an object")
    return obj


_ASPECT_ALIASES = {
    "location": "location",
    "body part": "body_part",
    "body_part": "body_part",
    "bodypart": "body_part",
    "type": "type",
    "lesion_type": "type",
    "attributes": "attributes",
}


def parse_verdict(
    raw: str, diagnostic: Callable[[str], None] = lambda m: print(m, file=sys.stderr)
) -> dict[str, AspectGrade]:
    """Parse the judge's structured response into per-aspect grades.

    The three main aspects are required; unknown keys are ignored with a
    diagnostic; a grade outside the closed enumeration or an empty explanation
    on a gradable aspect is a parse error.
    """
    obj = _extract_json_object(raw)
    grades: dict[str, AspectGrade] = {}
    for key, value in obj.items():
        aspect = _ASPECT_ALIASES.get(re.sub(r"[\s_]+", " ", key.strip().lower()).replace(" ", "_"))
        if aspect is None:
            diagnostic(f"ignoring unknown aspect key {key!r} in judge response")
            continue
        if isinstance(value, str):
            grade, explanation = Grade.parse(value), ""
        elif isinstance(value, dict):
            if "grade" not in value:
                raise VerdictParseError(f"aspect {aspect!r} missing 'grade'")
            grade = Grade.parse(str(value["grade"]))
            explanation = str(value.get("explanation", "") or "")
        else:
            raise VerdictParseError(f"aspect {aspect!r} has unexpected shape {type(value).__name__}")
        if grade is not Grade.NOT_APPLICABLE and not explanation.strip():
            raise VerdictParseError(f"aspect {aspect!r} graded {grade.value} without an explanation")
        grades[aspect] = AspectGrade(grade=grade, explanation=explanation)

    missing = [a for a in MAIN_ASPECTS if a not in grades]
    if missing:
        raise VerdictParseError(f"judge response missing required aspects: {', '.join(missing)}")
    return grades


REPROMPT_SUFFIX = "Respond only with the structured object."


def judge_one(
    gt_text: str,
    pred_result: str,
    cfg: BackendConfig,
    finding_id: str = "",
    model_name: str = "",
    scenario: PromptScenario = PromptScenario(cot=False, bbox=False),
    expanded_terms: Optional[str] = None,
    backend=None,
    ledger: Optional[TranscriptLedger] = None,
    templates=None,
) -> JudgeVerdict:
    """Grade one (gt, pred) pair through the judge backend.

    On a parse failure exactly one deterministic reprompt is issued with the
    structured-output reminder appended; a second failure raises
    :class:`VerdictError` carrying the raw text, never a silent regrade.
    """
    bundle = build_judge_prompt(gt_text, pred_result, expanded_terms=expanded_terms,
                                templates=templates)
    raw, _ = complete(cfg, bundle, backend=backend, ledger=ledger)
    try:
        grades = parse_verdict(raw)
    except VerdictParseError:
        from dataclasses import replace as _replace

        retry_bundle = _replace(bundle, user_text=bundle.user_text + "\n" + REPROMPT_SUFFIX)
        raw, _ = complete(cfg, retry_bundle, backend=backend, ledger=ledger)
        try:
            grades = parse_verdict(raw)
        except VerdictParseError as exc:
            raise VerdictError(f"unparseable verdict after reprompt: {exc}", raw) from exc

    return JudgeVerdict(
        finding_id=finding_id,
        model_name=model_name,
        scenario=scenario,
        location=grades["location"],
        body_part=grades["body_part"],
        type=grades["type"],
        attributes=grades.get("attributes"),
        raw_response=raw,
    )


def to_numeric(grade: Grade) -> Optional[float]:
    """Map a categorical grade onto [0, 1]; NotApplicable carries no score."""
    return {
        Grade.CORRECT: 1.0,
        Grade.PARTIALLY_CORRECT: 0.5,
        Grade.INCORRECT: 0.0,
        Grade.NOT_APPLICABLE: None,
    }[grade]


@dataclass(frozen=True)
class GradeDistribution:
    model_name: str
    scenario: PromptScenario
    aspect: str
    counts: dict[Grade, int]
    n: int

    @property
    def fractions(self) -> dict[Grade, float]:
        return {g: c / self.n for g, c in self.counts.items()}

    @property
    def correct_percentage(self) -> float:
        """count(Correct) / n * 100, with NotApplicable included in n."""
        return self.counts.get(Grade.CORRECT, 0) / self.n * 100.0


def aggregate(
    verdicts: Sequence[JudgeVerdict],
    aspects: Sequence[str] = MAIN_ASPECTS,
    diagnostic: Callable[[str], None] = lambda m: print(m, file=sys.stderr),
) -> list[GradeDistribution]:
    """Count grades per (model, scenario, aspect) group.

    Rows come back ordered by model, then scenario tag, then aspect order;
    empty groups are omitted with a diagnostic.
    """
    groups: dict[tuple[str, str], list[JudgeVerdict]] = {}
    for v in verdicts:
        groups.setdefault((v.model_name, v.scenario.tag), []).append(v)

    out: list[GradeDistribution] = []
    for (model, tag) in sorted(groups):
        members = groups[(model, tag)]
        for aspect in aspects:
            counts: Counter = Counter()
            for v in members:
                ag = v.aspect(aspect)
                if ag is not None:
                    counts[ag.grade] += 1
            n = sum(counts.values())
            if n == 0:
                diagnostic(f"group ({model}, {tag}, {aspect}) has no gradable verdicts; omitted")
                continue
            out.append(GradeDistribution(
                model_name=model,
                scenario=PromptScenario.from_tag(tag),
                aspect=aspect,
                counts=dict(counts),
                n=n,
            ))
    return out
