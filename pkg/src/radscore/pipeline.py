"""End-to-end run orchestration: generate -> judge -> metrics -> correlate.

Each run lives under ``runs/<run-id>/`` with a manifest sufficient to
reproduce the run in replay mode (corpus digest, backend configs sans
secrets, template version, scenario set, seed).  Stage outputs are JSONL
intermediates plus CSV tables; every table carries the manifest digest in a
header comment so cross-run contamination is detectable.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import __version__
from .backends import BackendConfig, TranscriptLedger, complete_batch, make_backend
from .corpus import FindingRecord, load_corpus
from .imaging import OverlayStyle
from .judge import (Grade, JudgeVerdict, MAIN_ASPECTS, VerdictError, aggregate,
                    judge_one, to_numeric)
from .nlgmetrics import compute_metrics, bleu as bleu_fn, rouge_l, meteor, tokenize
from .prompts import ALL_SCENARIOS, PromptScenario, TemplateSet, build_generation_prompt, default_templates
from .stats import (ScoreVector, agreement_summary,
                    correlation_matrix, format_p_value)

__all__ = [
    "GenerationResult",
    "RunManifest",
    "RunError",
    "run_generate",
    "run_judge",
    "run_metrics",
    "run_correlate",
    "load_results",
    "load_verdicts",
]


class RunError(Exception):
    """Fatal run-level failure (digest mismatch, empty inputs)."""


@dataclass(frozen=True)
class GenerationResult:
    finding_id: str
    model_name: str
    scenario: PromptScenario
    text: str
    transcript_ref: str = ""
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return {
            "finding_id": self.finding_id,
            "model_name": self.model_name,
            "scenario": self.scenario.tag,
            "text": self.text,
            "transcript_ref": self.transcript_ref,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GenerationResult":
        return cls(
            finding_id=obj["finding_id"],
            model_name=obj["model_name"],
            scenario=PromptScenario.from_tag(obj["scenario"]),
            text=obj["text"],
            transcript_ref=obj.get("transcript_ref", ""),
            error=obj.get("error"),
        )


@dataclass(frozen=True)
class RunManifest:
    run_id: str
    corpus_digest: str
    backends: list[dict]
    template_version: str
    scenarios: list[str]
    seed: int
    tool_version: str

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "corpus_digest": self.corpus_digest,
            "backends": self.backends,
            "template_version": self.template_version,
            "scenarios": self.scenarios,
            "seed": self.seed,
            "tool_version": self.tool_version,
        }

    @property
    def digest(self) -> str:
        """Reproducibility digest: everything except the run id, so a replay
        of the same configuration carries the same table headers."""
        payload = {k: v for k, v in self.to_dict().items() if k != "run_id"}
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def corpus_digest(manifest_path: Path | str) -> str:
    return hashlib.sha256(Path(manifest_path).read_bytes()).hexdigest()


def make_run_manifest(
    run_id: str,
    corpus_manifest: Path | str,
    backend_cfgs: Sequence[BackendConfig],
    scenarios: Sequence[PromptScenario],
    seed: int = 0,
    templates: Optional[TemplateSet] = None,
) -> RunManifest:
    templates = templates or default_templates()
    return RunManifest(
        run_id=run_id,
        corpus_digest=corpus_digest(corpus_manifest),
        backends=[cfg.public_dict() for cfg in backend_cfgs],
        template_version=templates.version,
        scenarios=[s.tag for s in scenarios],
        seed=seed,
        tool_version=__version__,
    )


def save_manifest(manifest: RunManifest, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_manifest(run_dir: Path) -> RunManifest:
    obj = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    return RunManifest(**obj)


def check_corpus_digest(manifest: RunManifest, corpus_manifest: Path | str) -> None:
    actual = corpus_digest(corpus_manifest)
    if actual != manifest.corpus_digest:
        raise RunError(
            f"corpus digest mismatch: run manifest has {manifest.corpus_digest[:12]}, "
            f"corpus on disk is {actual[:12]}")


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def run_generate(
    records: Sequence[FindingRecord],
    backend_cfgs: Sequence[BackendConfig],
    scenarios: Sequence[PromptScenario],
    run_dir: Path,
    corpus_root: Path | str,
    style: OverlayStyle = OverlayStyle(),
    templates: Optional[TemplateSet] = None,
    replay_ledger: Optional[Path | str] = None,
    diagnostic: Callable[[str], None] = lambda m: print(m, file=sys.stderr),
) -> list[GenerationResult]:
    """Attempt the full findings x models x scenarios product.

    Per-item failures become error-marked results; the run always completes.
    Transcripts go to ``runs/<run-id>/transcripts.jsonl`` unless replaying.
    """
    run_dir.mkdir(parents=True, exist_ok=True)
    ledger = None if replay_ledger else TranscriptLedger(run_dir / "transcripts.jsonl")

    results: list[GenerationResult] = []
    for cfg in backend_cfgs:
        backend = make_backend(cfg, replay_ledger=replay_ledger)
        for scenario in scenarios:
            if scenario.cot and not cfg.cot_capable:
                diagnostic(f"warning: backend {cfg.name!r} is not flagged cot-capable; "
                           f"proceeding with scenario {scenario.tag}")
            bundles = []
            bundle_records = []
            for record in records:
                try:
                    bundles.append(build_generation_prompt(
                        record, scenario, style=style, corpus_root=corpus_root,
                        templates=templates))
                    bundle_records.append(record)
                except (FileNotFoundError, ValueError, OSError) as exc:
                    results.append(GenerationResult(
                        finding_id=record.id, model_name=cfg.name, scenario=scenario,
                        text="", error=str(exc)))
            items = complete_batch(cfg, bundles, backend=backend, ledger=ledger)
            for record, item in zip(bundle_records, items):
                if item.ok:
                    results.append(GenerationResult(
                        finding_id=record.id, model_name=cfg.name, scenario=scenario,
                        text=item.text, transcript_ref=item.transcript.request_digest))
                else:
                    results.append(GenerationResult(
                        finding_id=record.id, model_name=cfg.name, scenario=scenario,
                        text="", error=item.error))

    with open(run_dir / "results.jsonl", "w", encoding="utf-8") as fh:
        for r in sorted(results, key=lambda r: (r.model_name, r.scenario.tag, r.finding_id)):
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    return results


def load_results(run_dir: Path) -> list[GenerationResult]:
    out = []
    with open(run_dir / "results.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(GenerationResult.from_dict(json.loads(line)))
    return out


def run_judge(
    results: Sequence[GenerationResult],
    records: Sequence[FindingRecord],
    judge_cfg: BackendConfig,
    run_dir: Path,
    templates: Optional[TemplateSet] = None,
    replay_ledger: Optional[Path | str] = None,
    diagnostic: Callable[[str], None] = lambda m: print(m, file=sys.stderr),
) -> list[JudgeVerdict]:
    """Grade every successful generation result against its gold sentence."""
    run_dir.mkdir(parents=True, exist_ok=True)
    ledger = None if replay_ledger else TranscriptLedger(run_dir / "transcripts.jsonl")
    backend = make_backend(judge_cfg, replay_ledger=replay_ledger)
    by_id = {r.id: r for r in records}

    verdicts: list[JudgeVerdict] = []
    for result in results:
        if not result.ok or not result.text.strip():
            diagnostic(f"skipping unjudgeable result {result.finding_id}/{result.model_name}"
                       f"/{result.scenario.tag}: {result.error or 'empty text'}")
            continue
        record = by_id.get(result.finding_id)
        if record is None:
            diagnostic(f"result {result.finding_id} has no corpus record; skipped")
            continue
        try:
            verdicts.append(judge_one(
                record.gold_sentence, result.text, judge_cfg,
                finding_id=result.finding_id, model_name=result.model_name,
                scenario=result.scenario, expanded_terms=record.expanded_terms,
                backend=backend, ledger=ledger, templates=templates))
        except VerdictError as exc:
            diagnostic(f"verdict error for {result.finding_id}: {exc}")

    with open(run_dir / "verdicts.jsonl", "w", encoding="utf-8") as fh:
        for v in sorted(verdicts, key=lambda v: (v.model_name, v.scenario.tag, v.finding_id)):
            fh.write(json.dumps(v.to_dict(), sort_keys=True) + "\n")
    return verdicts


def load_verdicts(run_dir: Path) -> list[JudgeVerdict]:
    out = []
    with open(run_dir / "verdicts.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(JudgeVerdict.from_dict(json.loads(line)))
    return out


def _write_table(path: Path, header_digest: str, columns: Sequence[str],
                 rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(f"# run {header_digest}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(row)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def run_metrics(
    results: Sequence[GenerationResult],
    records: Sequence[FindingRecord],
    run_dir: Path,
    manifest: RunManifest,
) -> dict[tuple[str, str], "object"]:
    """NLG metrics per (model, scenario) group, written to tables/nlg_metrics.csv."""
    ok_results = [r for r in results if r.ok]
    if not ok_results:
        raise RunError("metrics on empty result set")
    by_id = {r.id: r for r in records}

    groups: dict[tuple[str, str], list[GenerationResult]] = {}
    for r in ok_results:
        groups.setdefault((r.model_name, r.scenario.tag), []).append(r)

    reports = {}
    rows = []
    for key in sorted(groups):
        members = sorted(groups[key], key=lambda r: r.finding_id)
        cands = [m.text for m in members]
        refs = [by_id[m.finding_id].gold_sentence for m in members if m.finding_id in by_id]
        cands = [m.text for m in members if m.finding_id in by_id]
        report = compute_metrics(cands, refs)
        reports[key] = report
        rows.append([key[0], key[1], _fmt(report.bleu[0]), _fmt(report.bleu[1]),
                     _fmt(report.bleu[2]), _fmt(report.bleu[3]),
                     _fmt(report.rouge_l_f1), _fmt(report.meteor), report.n_pairs])

    _write_table(run_dir / "tables" / "nlg_metrics.csv", manifest.digest,
                 ["model", "scenario", "bleu_1", "bleu_2", "bleu_3", "bleu_4",
                  "rouge_l", "meteor", "n_pairs"], rows)
    return reports


def write_judge_tables(verdicts: Sequence[JudgeVerdict], run_dir: Path,
                       manifest: RunManifest) -> None:
    """Grade distributions and correct-percentage tables from verdicts."""
    distributions = aggregate(verdicts)
    grade_order = [Grade.CORRECT, Grade.PARTIALLY_CORRECT, Grade.INCORRECT, Grade.NOT_APPLICABLE]
    dist_rows = []
    pct_rows = []
    for d in distributions:
        counts = [d.counts.get(g, 0) for g in grade_order]
        dist_rows.append([d.model_name, d.scenario.tag, d.aspect, *counts, d.n])
        pct_rows.append([d.model_name, d.scenario.tag, d.aspect, _fmt(d.correct_percentage)])
    _write_table(run_dir / "tables" / "grade_distributions.csv", manifest.digest,
                 ["model", "scenario", "aspect", "correct", "partially_correct",
                  "incorrect", "not_applicable", "n"], dist_rows)
    _write_table(run_dir / "tables" / "correct_percentages.csv", manifest.digest,
                 ["model", "scenario", "aspect", "correct_percentage"], pct_rows)


def _per_pair_vectors(results: Sequence[GenerationResult],
                      records: Sequence[FindingRecord],
                      model: str, scenario_tag: str) -> list[ScoreVector]:
    """Per-finding NLG scores for one (model, scenario) group."""
    by_id = {r.id: r for r in records}
    members = [r for r in results
               if r.ok and r.model_name == model and r.scenario.tag == scenario_tag
               and r.finding_id in by_id]
    vectors: dict[str, dict[str, float]] = {
        "bleu_1": {}, "bleu_2": {}, "bleu_3": {}, "bleu_4": {}, "rouge_l": {}, "meteor": {}}
    for r in members:
        cand = tokenize(r.text)
        ref = tokenize(by_id[r.finding_id].gold_sentence)
        b = bleu_fn([cand], [ref])
        for i in range(4):
            vectors[f"bleu_{i + 1}"][r.finding_id] = b[i]
        vectors["rouge_l"][r.finding_id] = rouge_l(cand, ref, diagnostic=lambda m: None)
        vectors["meteor"][r.finding_id] = meteor(cand, ref)
    return [ScoreVector(label=label, values=vals) for label, vals in vectors.items()]


def _judge_vectors(verdicts: Sequence[JudgeVerdict], model: str,
                   scenario_tag: str) -> list[ScoreVector]:
    out = []
    for aspect in MAIN_ASPECTS:
        vals: dict[str, float] = {}
        for v in verdicts:
            if v.model_name != model or v.scenario.tag != scenario_tag:
                continue
            ag = v.aspect(aspect)
            num = to_numeric(ag.grade) if ag is not None else None
            if num is not None:
                vals[v.finding_id] = num
        out.append(ScoreVector(label=f"gpt.{aspect}", values=vals))
    return out


def run_correlate(
    results: Sequence[GenerationResult],
    verdicts: Sequence[JudgeVerdict],
    records: Sequence[FindingRecord],
    run_dir: Path,
    manifest: RunManifest,
    sheets: Sequence = (),
    diagnostic: Callable[[str], None] = lambda m: print(m, file=sys.stderr),
) -> None:
    """Pairwise correlation matrix per (model, scenario), plus the clinician
    agreement summary when grade sheets are available."""
    pairs = sorted({(v.model_name, v.scenario.tag) for v in verdicts})
    matrix_rows = []
    for model, tag in pairs:
        vectors = _per_pair_vectors(results, records, model, tag) + \
            _judge_vectors(verdicts, model, tag)
        vectors = [v for v in vectors if v.values]
        if len(vectors) < 2:
            continue
        matrix = correlation_matrix(vectors)
        for i, a in enumerate(matrix.labels):
            for b in matrix.labels[i:]:
                stat = matrix.cell(a, b)
                if stat is None:
                    matrix_rows.append([model, tag, a, b, "", "", ""])
                else:
                    matrix_rows.append([model, tag, a, b, _fmt(stat.r),
                                        format_p_value(stat.p_value), stat.n])
    _write_table(run_dir / "tables" / "correlation_matrix.csv", manifest.digest,
                 ["model", "scenario", "label_a", "label_b", "r", "p", "n"], matrix_rows)

    if not sheets:
        diagnostic("no grade sheets; agreement summary skipped")
        return
    rows = []
    models = sorted({s.model_name for s in sheets})
    for model in models:
        model_sheets = [s for s in sheets if s.model_name == model]
        model_verdicts = [v for v in verdicts if v.model_name == model]
        summary = agreement_summary(model_sheets, model_verdicts)
        cells = []
        for aspect in ("location", "body_part", "type"):
            stat = summary["per_aspect"][aspect]
            cells.append(_fmt(stat.r) if stat else "")
        avg = _fmt(summary["avg"]) if summary["avg"] is not None else ""
        stdev = _fmt(summary["stdev"]) if summary["stdev"] is not None else ""
        p = format_p_value(summary["max_p"]) if summary["max_p"] is not None else ""
        rows.append([model, *cells, avg, stdev, p])
    _write_table(run_dir / "tables" / "agreement_summary.csv", manifest.digest,
                 ["model", "location_r", "body_part_r", "type_r", "avg", "stdev", "max_p"], rows)
