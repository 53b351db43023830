"""HTTP service for human graders.

Serves cases (annotated slice, gold sentence and aspects, model prediction)
and persists per-aspect grade sheets.  Persistence is append-only JSONL with
last-write-wins materialization on read; a resubmission overwrites the
materialized sheet but the audit trail keeps every record.  Submissions are
flushed and fsynced before the acknowledgment is sent.
"""

from __future__ import annotations

import json
import os
import random
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from fastapi import FastAPI, Header, HTTPException, Response

from .corpus import FindingRecord
from .imaging import OverlayStyle, encode_for_backend, load_raster, render_overlay
from .judge import Grade, MAIN_ASPECTS
from .prompts import PromptScenario

__all__ = ["GradeSheet", "EvalSession", "SheetStore", "CaseStore", "create_session", "create_app"]

RUBRIC = {
    "aspects": {
        "location": "If the model finds the problem in the right spot.",
        "body_part": "If the model correctly names which part of the lesion located.",
        "type": "If the model accurately describes what kind of issue it sees (like a nodule or mass).",
        "attributes": "Additional descriptive attributes of the finding (optional).",
    },
    "grades": {
        "Correct": "The model's guess is just right.",
        "Partially Correct": "The model's guess is somewhat right but lacks full accuracy or completeness.",
        "Incorrect": "The model's guess doesn't match the correct answer at all.",
        "Not Applicable": "The model's guess omits relevant information and thus cannot be evaluated",
    },
}


@dataclass(frozen=True)
class GradeSheet:
    finding_id: str
    model_name: str
    scenario: PromptScenario
    grader_id: str
    location: Grade
    body_part: Grade
    lesion_type: Grade
    attributes: Optional[Grade] = None
    note: Optional[str] = None
    submitted_at: str = ""
    adjudicated: bool = False

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.finding_id, self.model_name, self.scenario.tag, self.grader_id)

    def to_dict(self) -> dict:
        return {
            "finding_id": self.finding_id,
            "model_name": self.model_name,
            "scenario": self.scenario.tag,
            "grader_id": self.grader_id,
            "location": self.location.value,
            "body_part": self.body_part.value,
            "lesion_type": self.lesion_type.value,
            "attributes": self.attributes.value if self.attributes else None,
            "note": self.note,
            "submitted_at": self.submitted_at,
            "adjudicated": self.adjudicated,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GradeSheet":
        return cls(
            finding_id=obj["finding_id"],
            model_name=obj["model_name"],
            scenario=PromptScenario.from_tag(obj["scenario"]),
            grader_id=obj["grader_id"],
            location=Grade.parse(obj["location"]),
            body_part=Grade.parse(obj["body_part"]),
            lesion_type=Grade.parse(obj["lesion_type"]),
            attributes=Grade.parse(obj["attributes"]) if obj.get("attributes") else None,
            note=obj.get("note"),
            submitted_at=obj.get("submitted_at", ""),
            adjudicated=bool(obj.get("adjudicated", False)),
        )


@dataclass
class EvalSession:
    session_id: str
    case_ids: list[str]
    assigned_grader: str
    seed: int

    def to_dict(self) -> dict:
        return {"session_id": self.session_id, "case_ids": self.case_ids,
                "assigned_grader": self.assigned_grader, "seed": self.seed}


class SheetStore:
    """Append-only JSONL sheet persistence with last-write-wins reads."""

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def submit(self, sheet: GradeSheet) -> bool:
        """Persist a sheet durably; returns True when it overwrites a prior one."""
        overwrites = sheet.key in {s.key for s in self.all_sheets()}
        record = sheet.to_dict()
        record["overwrites"] = overwrites
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        return overwrites

    def all_records(self) -> list[dict]:
        if not self.path.exists():
            return []
        records = []
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    records.append(json.loads(line))
        return records

    def all_sheets(self) -> list[GradeSheet]:
        """Materialized sheets, last write wins per key, ordered by key."""
        latest: dict[tuple, GradeSheet] = {}
        for record in self.all_records():
            sheet = GradeSheet.from_dict(record)
            latest[sheet.key] = sheet
        return [latest[k] for k in sorted(latest)]

    def export_jsonl(self) -> str:
        """Byte-stable export: one materialized sheet per line, key order."""
        return "".join(json.dumps(s.to_dict(), sort_keys=True) + "\n" for s in self.all_sheets())


@dataclass(frozen=True)
class Case:
    case_id: str
    record: FindingRecord
    model_name: str
    scenario: PromptScenario
    prediction: str


class CaseStore:
    """Cases assembled from corpus records and generation results."""

    def __init__(self, records: Sequence[FindingRecord], results: Sequence,
                 corpus_root: Path | str, style: OverlayStyle = OverlayStyle()):
        self.corpus_root = Path(corpus_root)
        self.style = style
        by_id = {r.id: r for r in records}
        self.cases: dict[str, Case] = {}
        for result in results:
            record = by_id.get(result.finding_id)
            if record is None:
                continue
            case_id = f"{result.finding_id}::{result.model_name}::{result.scenario.tag}"
            self.cases[case_id] = Case(
                case_id=case_id,
                record=record,
                model_name=result.model_name,
                scenario=result.scenario,
                prediction=result.text,
            )

    def case_ids(self) -> list[str]:
        return sorted(self.cases)

    def image_png(self, case: Case) -> bytes:
        raster = load_raster(self.corpus_root / case.record.image_ref)
        annotated = render_overlay(raster, case.record.bbox, self.style,
                                   source_ref=case.record.image_ref)
        return encode_for_backend(annotated, "png")[0]


def create_session(
    case_ids: Sequence[str], sample_size: int, seed: int, grader_id: str
) -> EvalSession:
    """Deterministic without-replacement sample of cases for one grader."""
    pool = sorted(case_ids)
    if sample_size > len(pool):
        raise ValueError(f"sample_size {sample_size} exceeds pool of {len(pool)} cases")
    sampled = random.Random(seed).sample(pool, sample_size)
    return EvalSession(
        session_id=f"{grader_id}-{seed}-{sample_size}",
        case_ids=sampled,
        assigned_grader=grader_id,
        seed=seed,
    )


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _parse_grade(payload: dict, field_name: str, required: bool) -> Optional[Grade]:
    value = payload.get(field_name)
    if value is None:
        if required:
            raise HTTPException(status_code=422, detail=f"missing required grade {field_name!r}")
        return None
    try:
        return Grade.parse(str(value))
    except ValueError:
        raise HTTPException(status_code=422,
                            detail=f"grade {value!r} for {field_name!r} is not in the rubric")


def create_app(
    case_store: CaseStore,
    sheet_store: SheetStore,
    token: str,
    sessions_path: Optional[Path | str] = None,
    static_dir: Optional[Path | str] = None,
) -> FastAPI:
    app = FastAPI(title="radscore grading service")
    sessions: dict[str, EvalSession] = {}
    sessions_file = Path(sessions_path) if sessions_path else None
    if sessions_file and sessions_file.exists():
        with open(sessions_file, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    sessions[obj["session_id"]] = EvalSession(**obj)

    def check_token(x_grader_token: Optional[str]) -> None:
        if x_grader_token != token:
            raise HTTPException(status_code=401, detail="missing or invalid X-Grader-Token")

    def case_payload(case: Case) -> dict:
        return {
            "case_id": case.case_id,
            "finding_id": case.record.id,
            "model_name": case.model_name,
            "scenario": case.scenario.tag,
            "gold_sentence": case.record.gold_sentence,
            "gold_aspects": {
                "body_part": case.record.gold_aspects.body_part,
                "location": case.record.gold_aspects.location,
                "lesion_type": case.record.gold_aspects.lesion_type,
            },
            "prediction": case.prediction,
            "image_url": f"/api/cases/{case.case_id}/image",
        }

    @app.get("/api/rubric")
    def rubric():
        return RUBRIC

    @app.get("/api/sessions")
    def list_sessions(x_grader_token: Optional[str] = Header(default=None)):
        check_token(x_grader_token)
        out = []
        graded = {s.key for s in sheet_store.all_sheets()}
        for session in sessions.values():
            done = sum(
                1 for cid in session.case_ids
                if tuple(cid.split("::")) + (session.assigned_grader,) in graded
            )
            out.append({**session.to_dict(), "progress": done})
        return sorted(out, key=lambda s: s["session_id"])

    @app.post("/api/sessions")
    def post_session(payload: dict, x_grader_token: Optional[str] = Header(default=None)):
        check_token(x_grader_token)
        for field_name in ("grader_id", "sample_size", "seed"):
            if field_name not in payload:
                raise HTTPException(status_code=422, detail=f"missing {field_name!r}")
        try:
            session = create_session(case_store.case_ids(), int(payload["sample_size"]),
                                     int(payload["seed"]), str(payload["grader_id"]))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        sessions[session.session_id] = session
        if sessions_file:
            with open(sessions_file, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(session.to_dict(), sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        return session.to_dict()

    @app.get("/api/sessions/{session_id}/next")
    def next_case(session_id: str, x_grader_token: Optional[str] = Header(default=None)):
        check_token(x_grader_token)
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        graded = {s.key for s in sheet_store.all_sheets()}
        for cid in session.case_ids:
            if tuple(cid.split("::")) + (session.assigned_grader,) not in graded:
                case = case_store.cases.get(cid)
                if case is None:
                    raise HTTPException(status_code=404, detail=f"unknown case {cid!r}")
                return case_payload(case)
        return {"done": True, "progress": len(session.case_ids)}

    @app.get("/api/cases/{case_id}")
    def get_case(case_id: str, x_grader_token: Optional[str] = Header(default=None)):
        check_token(x_grader_token)
        case = case_store.cases.get(case_id)
        if case is None:
            raise HTTPException(status_code=404, detail=f"unknown case {case_id!r}")
        return case_payload(case)

    @app.get("/api/cases/{case_id}/image")
    def get_case_image(case_id: str, x_grader_token: Optional[str] = Header(default=None)):
        check_token(x_grader_token)
        case = case_store.cases.get(case_id)
        if case is None:
            raise HTTPException(status_code=404, detail=f"unknown case {case_id!r}")
        return Response(content=case_store.image_png(case), media_type="image/png")

    @app.post("/api/cases/{case_id}/grades")
    def post_grades(case_id: str, payload: dict,
                    x_grader_token: Optional[str] = Header(default=None)):
        check_token(x_grader_token)
        case = case_store.cases.get(case_id)
        if case is None:
            raise HTTPException(status_code=404, detail=f"unknown case {case_id!r}")
        grader_id = payload.get("grader_id")
        if not grader_id:
            raise HTTPException(status_code=422, detail="missing 'grader_id'")
        sheet = GradeSheet(
            finding_id=case.record.id,
            model_name=case.model_name,
            scenario=case.scenario,
            grader_id=str(grader_id),
            location=_parse_grade(payload, "location", required=True),
            body_part=_parse_grade(payload, "body_part", required=True),
            lesion_type=_parse_grade(payload, "lesion_type", required=True),
            attributes=_parse_grade(payload, "attributes", required=False),
            note=payload.get("note"),
            submitted_at=_utc_now(),
            adjudicated=bool(payload.get("adjudicated", False)),
        )
        overwrote = sheet_store.submit(sheet)
        return {"status": "ok", "overwrote": overwrote}

    @app.get("/api/export")
    def export(x_grader_token: Optional[str] = Header(default=None)):
        check_token(x_grader_token)
        return Response(content=sheet_store.export_jsonl(),
                        media_type="application/x-ndjson")

    if static_dir and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
