"""Finding-record data model, corpus ingestion, and bookmark measurement extraction.

Report sentences in the source corpus carry RECIST measurements wrapped in
``BOOKMARK ( ... )`` tokens (the target lesion) and ``OTHER_BMK ( ... )``
tokens (non-target measurements).  This module parses those measurements and
produces a cleaned description with the measurement/series parentheticals and
bookmark tokens stripped.
"""

from __future__ import annotations

import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

__all__ = [
    "BoundingBox",
    "AspectTriple",
    "Measurement",
    "FindingRecord",
    "CorpusError",
    "MeasurementParseError",
    "load_corpus",
    "extract_bookmark",
    "parse_measurement",
    "format_measurement",
]


class CorpusError(Exception):
    """Fatal corpus-level failure (unreadable manifest, duplicate ids)."""


class MeasurementParseError(ValueError):
    """Raised when a measurement payload cannot be parsed."""


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"bounding box must have positive size, got w={self.w} h={self.h}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"bounding box origin must be non-negative, got x={self.x} y={self.y}")

    def check_within(self, width: int, height: int) -> None:
        """Validate the box against image dimensions, naming the violated edge."""
        if self.x + self.w > width:
            raise ValueError(f"bounding box exceeds right edge: x+w={self.x + self.w} > width={width}")
        if self.y + self.h > height:
            raise ValueError(f"bounding box exceeds bottom edge: y+h={self.y + self.h} > height={height}")


@dataclass(frozen=True)
class AspectTriple:
    """Gold decomposition of a finding: body part, fine-grained location, lesion type."""

    body_part: Optional[str] = None
    location: Optional[str] = None
    lesion_type: Optional[str] = None

    def __post_init__(self) -> None:
        for name in ("body_part", "location", "lesion_type"):
            value = getattr(self, name)
            if value is not None:
                trimmed = value.strip()
                if not trimmed:
                    raise ValueError(f"aspect {name} present but empty")
                object.__setattr__(self, name, trimmed)
        if self.body_part is None and self.location is None and self.lesion_type is None:
            raise ValueError("at least one aspect must be present")


@dataclass(frozen=True)
class Measurement:
    """Axis lengths in centimeters (1 or 2 axes) plus the verbatim source span."""

    axis_lengths_cm: tuple[float, ...]
    raw_text: str

    def __post_init__(self) -> None:
        if not 1 <= len(self.axis_lengths_cm) <= 2:
            raise ValueError("a measurement has 1 or 2 axes")
        for v in self.axis_lengths_cm:
            if not 0 < v < 100:
                raise ValueError(f"axis length {v} cm outside sanity bounds (0, 100)")


@dataclass(frozen=True)
class FindingRecord:
    id: str
    patient_id: str
    study_id: str
    image_ref: str
    bbox: BoundingBox
    gold_sentence: str
    gold_aspects: AspectTriple
    size_text: Optional[str] = None
    expanded_terms: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("record id must be non-empty")
        if not self.gold_sentence.strip():
            raise ValueError("gold_sentence must be non-empty")


Diagnostic = Callable[[str], None]


def _stderr_diagnostic(message: str) -> None:
    print(message, file=sys.stderr)


_NUMBER = r"\d+(?:\.\d+)?"
_MEASURE_PAREN = re.compile(
    rf"\(\s*{_NUMBER}\s*(?:cm|mm)(?:\s*[xX]\s*{_NUMBER}\s*(?:cm|mm))?\s*\)"
)
_SERIES_PAREN = re.compile(r"\(\s*(?:series|image)\b[^)]*\)", re.IGNORECASE)
_BOOKMARK_PAYLOAD = re.compile(r"\bBOOKMARK\s*\(\s*([^)]*?)\s*\)")
_BOOKMARK_TOKEN = re.compile(r"\b(?:BOOKMARK|OTHER_BMK)\b")
_MEASUREMENT = re.compile(
    rf"^\s*({_NUMBER})\s*(cm|mm)\s*(?:[xX]\s*({_NUMBER})\s*(cm|mm))?\s*$"
)


def parse_measurement(text: str) -> Measurement:
    """Parse a measurement payload like ``1.8 cm x 1.0 cm`` or ``27 mm``.

    Axis lengths are normalized to centimeters.  Raises
    :class:`MeasurementParseError` naming the offending token otherwise.
    """
    m = _MEASUREMENT.match(text)
    if m is None:
        token = text.strip().split()[0] if text.strip() else "<empty>"
        raise MeasurementParseError(f"unrecognized measurement {text!r} (offending token {token!r})")
    axes = []
    for value, unit in ((m.group(1), m.group(2)), (m.group(3), m.group(4))):
        if value is None:
            continue
        length = float(value)
        if unit == "mm":
            length /= 10.0
        axes.append(length)
    return Measurement(axis_lengths_cm=tuple(axes), raw_text=text)


def format_measurement(m: Measurement) -> str:
    """Canonical rendering; ``parse_measurement(format_measurement(m))`` round-trips."""
    return " x ".join(f"{v:g} cm" for v in m.axis_lengths_cm)


def _normalize_whitespace(text: str) -> str:
    text = re.sub(r"\s+", " ", text).strip()
    text = re.sub(r"\s+([,.;:!?])", r"\1", text)
    text = re.sub(r",(\s*,)+", ",", text)
    text = re.sub(r"^[,;]\s*", "", text)
    return text


def extract_bookmark(
    sentence: str, diagnostic: Diagnostic = _stderr_diagnostic
) -> tuple[str, Optional[Measurement]]:
    """Pull the BOOKMARK measurement out of a raw report sentence.

    Returns ``(cleaned_description, measurement_or_none)``.  Only the payload
    attached to the ``BOOKMARK`` token is parsed; ``OTHER_BMK`` payloads are
    stripped but never returned as the size.  Cleaning removes all measurement
    and series/image parentheticals plus the bookmark tokens, then normalizes
    whitespace while preserving sentence-final punctuation.  Idempotent on its
    own output.
    """
    payloads = _BOOKMARK_PAYLOAD.findall(sentence)
    size: Optional[Measurement] = None
    if payloads:
        if len(payloads) > 1:
            diagnostic(f"multiple BOOKMARK tokens in sentence; using the first of {len(payloads)}")
        try:
            size = parse_measurement(payloads[0])
        except MeasurementParseError as exc:
            diagnostic(f"unparseable BOOKMARK size: {exc}")

    cleaned = _MEASURE_PAREN.sub(" ", sentence)
    cleaned = _SERIES_PAREN.sub(" ", cleaned)
    cleaned = _BOOKMARK_TOKEN.sub(" ", cleaned)
    cleaned = _normalize_whitespace(cleaned)
    return cleaned, size


_REQUIRED_FIELDS = ("id", "patient_id", "study_id", "image_ref", "bbox", "gold_sentence", "gold_aspects")


def _record_from_dict(obj: dict) -> FindingRecord:
    missing = [f for f in _REQUIRED_FIELDS if f not in obj]
    if missing:
        raise ValueError(f"missing fields: {', '.join(missing)}")
    bbox = BoundingBox(**{k: int(obj["bbox"][k]) for k in ("x", "y", "w", "h")})
    aspects = AspectTriple(
        body_part=obj["gold_aspects"].get("body_part"),
        location=obj["gold_aspects"].get("location"),
        lesion_type=obj["gold_aspects"].get("lesion_type"),
    )
    return FindingRecord(
        id=str(obj["id"]),
        patient_id=str(obj["patient_id"]),
        study_id=str(obj["study_id"]),
        image_ref=str(obj["image_ref"]),
        bbox=bbox,
        gold_sentence=str(obj["gold_sentence"]),
        gold_aspects=aspects,
        size_text=obj.get("size_text"),
        expanded_terms=obj.get("expanded_terms"),
    )


def load_corpus(
    root: Path | str,
    manifest: Path | str,
    diagnostic: Diagnostic = _stderr_diagnostic,
) -> list[FindingRecord]:
    """Load finding records from a line-delimited JSON manifest.

    Per-line validation failures are reported via ``diagnostic`` with a
    ``line:<n>`` prefix and the record skipped; duplicate ids and an
    unreadable manifest are fatal (:class:`CorpusError`).  Images under
    ``root`` may be absent (text-only runs); presence is checked at render
    time, not here.
    """
    manifest = Path(manifest)
    try:
        lines = manifest.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read manifest {manifest}: {exc}") from exc

    records: list[FindingRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            record = _record_from_dict(obj)
        except (json.JSONDecodeError, ValueError, KeyError, TypeError) as exc:
            diagnostic(f"line:{lineno}: skipping malformed record: {exc}")
            continue
        if record.id in seen:
            raise CorpusError(f"line:{lineno}: duplicate record id {record.id!r}")
        seen.add(record.id)
        records.append(record)
    return records
