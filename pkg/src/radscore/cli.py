"""Command-line entry points.

Exit codes: 0 success, 1 fatal config/validation error, 2 completed with
per-item errors.  Config precedence is CLI flags > environment > config file;
the effective backend configs are printed at startup.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import yaml

from .backends import BackendConfig, RetryPolicy
from .corpus import load_corpus
from .imaging import OverlayStyle, encode_for_backend, load_raster, render_overlay
from .pipeline import (RunError, check_corpus_digest, load_manifest, load_results,
                       load_verdicts, make_run_manifest, run_correlate, run_generate,
                       run_judge, run_metrics, save_manifest, write_judge_tables)
from .prompts import ALL_SCENARIOS, PromptScenario, TemplateSet

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_ITEM_ERRORS = 2


def _load_backend_configs(path: str | None) -> dict[str, BackendConfig]:
    configs = {"mock": BackendConfig(name="mock")}
    if path:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        for name, spec in (doc.get("backends") or {}).items():
            spec = dict(spec or {})
            retry = RetryPolicy(**spec.pop("retry", {}))
            spec.setdefault("name", name)
            configs[name] = BackendConfig(retry=retry, **spec)
    return configs


def _templates(templates_dir: str | None) -> TemplateSet:
    return TemplateSet(templates_dir) if templates_dir else TemplateSet()


def _scenarios(spec: str) -> list[PromptScenario]:
    if spec == "all":
        return list(ALL_SCENARIOS)
    return [PromptScenario.from_tag(tag.strip()) for tag in spec.split(",") if tag.strip()]


@click.group()
def main() -> None:
    """Evaluation harness for multimodal-LLM descriptions of CT findings."""


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--root", required=True, type=click.Path(exists=True, file_okay=False))
def ingest(manifest: str, root: str) -> None:
    """Validate and summarize a corpus manifest."""
    records = load_corpus(root, manifest)
    click.echo(f"loaded {len(records)} records from {manifest}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--dump-annotated", "dump_dir", required=True, type=click.Path(file_okay=False))
@click.option("--color", default="0,255,0", show_default=True, help="Overlay RGB, comma-separated.")
@click.option("--thickness", default=2, show_default=True, type=int)
def render(manifest: str, root: str, dump_dir: str, color: str, thickness: int) -> None:
    """Render annotated overlays for every record into a directory."""
    style = OverlayStyle(color=tuple(int(c) for c in color.split(",")), thickness=thickness)
    records = load_corpus(root, manifest)
    out_dir = Path(dump_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    errors = 0
    for record in records:
        try:
            raster = load_raster(Path(root) / record.image_ref)
            annotated = render_overlay(raster, record.bbox, style, source_ref=record.image_ref)
            data, _ = encode_for_backend(annotated, "png")
            (out_dir / f"{record.id}.png").write_bytes(data)
        except (OSError, ValueError) as exc:
            click.echo(f"record {record.id}: {exc}", err=True)
            errors += 1
    click.echo(f"rendered {len(records) - errors}/{len(records)} overlays into {dump_dir}")
    sys.exit(EXIT_ITEM_ERRORS if errors else EXIT_OK)


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--backends", "backends_path", type=click.Path(exists=True))
@click.option("--models", default="mock", show_default=True, help="Comma-separated backend names.")
@click.option("--scenarios", default="all", show_default=True)
@click.option("--run-id", required=True)
@click.option("--runs-dir", default="runs", show_default=True)
@click.option("--templates", "templates_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--replay", "replay_ledger", type=click.Path(exists=True),
              help="Transcript ledger to replay instead of live calls.")
def generate(manifest: str, root: str, backends_path: str | None, models: str,
             scenarios: str, run_id: str, runs_dir: str, templates_dir: str | None,
             seed: int, replay_ledger: str | None) -> None:
    """Generate descriptions for every finding x model x scenario."""
    try:
        configs = _load_backend_configs(backends_path)
        cfgs = [configs[name.strip()] for name in models.split(",")]
    except (KeyError, ValueError, TypeError) as exc:
        click.echo(f"fatal: bad backend config: {exc}", err=True)
        sys.exit(EXIT_FATAL)
    for cfg in cfgs:
        click.echo(f"backend config: {json.dumps(cfg.public_dict(), sort_keys=True)}")

    templates = _templates(templates_dir)
    scenario_list = _scenarios(scenarios)
    records = load_corpus(root, manifest)
    run_dir = Path(runs_dir) / run_id
    run_manifest = make_run_manifest(run_id, manifest, cfgs, scenario_list,
                                     seed=seed, templates=templates)
    save_manifest(run_manifest, run_dir)
    (run_dir / "corpus_manifest_path.txt").write_text(str(Path(manifest).resolve()) + "\n")

    results = run_generate(records, cfgs, scenario_list, run_dir, corpus_root=root,
                           templates=templates, replay_ledger=replay_ledger)
    failed = sum(1 for r in results if not r.ok)
    click.echo(f"generated {len(results) - failed}/{len(results)} results under {run_dir}")
    sys.exit(EXIT_ITEM_ERRORS if failed else EXIT_OK)


def _open_run(runs_dir: str, run_id: str):
    run_dir = Path(runs_dir) / run_id
    manifest = load_manifest(run_dir)
    corpus_manifest = (run_dir / "corpus_manifest_path.txt").read_text().strip()
    check_corpus_digest(manifest, corpus_manifest)
    records = load_corpus(Path(corpus_manifest).parent, corpus_manifest)
    return run_dir, manifest, corpus_manifest, records


@main.command()
@click.option("--run-id", required=True)
@click.option("--runs-dir", default="runs", show_default=True)
@click.option("--backends", "backends_path", type=click.Path(exists=True))
@click.option("--judge-backend", default="mock", show_default=True)
@click.option("--templates", "templates_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--replay", "replay_ledger", type=click.Path(exists=True))
def judge(run_id: str, runs_dir: str, backends_path: str | None, judge_backend: str,
          templates_dir: str | None, replay_ledger: str | None) -> None:
    """Grade generation results with the judge backend."""
    try:
        run_dir, manifest, _, records = _open_run(runs_dir, run_id)
        cfg = _load_backend_configs(backends_path)[judge_backend]
    except (RunError, KeyError, OSError) as exc:
        click.echo(f"fatal: {exc}", err=True)
        sys.exit(EXIT_FATAL)
    results = load_results(run_dir)
    verdicts = run_judge(results, records, cfg, run_dir,
                         templates=_templates(templates_dir), replay_ledger=replay_ledger)
    write_judge_tables(verdicts, run_dir, manifest)
    judged = len(verdicts)
    judgeable = sum(1 for r in results if r.ok and r.text.strip())
    click.echo(f"judged {judged}/{judgeable} results")
    sys.exit(EXIT_OK if judged == judgeable else EXIT_ITEM_ERRORS)


@main.command()
@click.option("--run-id", required=True)
@click.option("--runs-dir", default="runs", show_default=True)
def metrics(run_id: str, runs_dir: str) -> None:
    """Compute NLG metric tables for a run."""
    try:
        run_dir, manifest, _, records = _open_run(runs_dir, run_id)
        run_metrics(load_results(run_dir), records, run_dir, manifest)
    except (RunError, OSError) as exc:
        click.echo(f"fatal: {exc}", err=True)
        sys.exit(EXIT_FATAL)
    click.echo(f"wrote {run_dir / 'tables' / 'nlg_metrics.csv'}")


@main.command()
@click.option("--run-id", required=True)
@click.option("--runs-dir", default="runs", show_default=True)
@click.option("--sheets", "sheets_path", type=click.Path(exists=True),
              help="Exported grade-sheet JSONL for the agreement summary.")
def correlate(run_id: str, runs_dir: str, sheets_path: str | None) -> None:
    """Emit correlation matrix and (with sheets) the agreement summary."""
    from .evalserve import GradeSheet

    try:
        run_dir, manifest, _, records = _open_run(runs_dir, run_id)
    except (RunError, OSError) as exc:
        click.echo(f"fatal: {exc}", err=True)
        sys.exit(EXIT_FATAL)
    sheets = []
    if sheets_path:
        with open(sheets_path, encoding="utf-8") as fh:
            sheets = [GradeSheet.from_dict(json.loads(line)) for line in fh if line.strip()]
    run_correlate(load_results(run_dir), load_verdicts(run_dir), records,
                  run_dir, manifest, sheets=sheets)
    click.echo(f"wrote correlation tables under {run_dir / 'tables'}")


@main.command()
@click.option("--run-id", required=True)
@click.option("--runs-dir", default="runs", show_default=True)
def report(run_id: str, runs_dir: str) -> None:
    """Print a summary of a run's artifacts."""
    run_dir = Path(runs_dir) / run_id
    manifest = load_manifest(run_dir)
    click.echo(f"run {manifest.run_id} (digest {manifest.digest[:12]})")
    click.echo(f"  corpus digest: {manifest.corpus_digest[:12]}")
    click.echo(f"  template version: {manifest.template_version}")
    click.echo(f"  scenarios: {', '.join(manifest.scenarios)}")
    for name in ("results.jsonl", "verdicts.jsonl", "transcripts.jsonl"):
        path = run_dir / name
        if path.exists():
            count = sum(1 for line in path.read_text().splitlines() if line.strip())
            click.echo(f"  {name}: {count} records")
    tables = sorted((run_dir / "tables").glob("*.csv")) if (run_dir / "tables").is_dir() else []
    for table in tables:
        click.echo(f"  table: {table.name}")


@main.command()
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--run", "run_id", required=True)
@click.option("--runs-dir", default="runs", show_default=True)
@click.option("--token", envvar="RADSCORE_GRADER_TOKEN", required=True,
              help="Static grader token (or RADSCORE_GRADER_TOKEN).")
@click.option("--static-dir", type=click.Path(file_okay=False),
              help="Optional grader-ui asset bundle to serve at /.")
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(port: int, run_id: str, runs_dir: str, token: str,
          static_dir: str | None, host: str) -> None:
    """Serve cases to human graders and collect grade sheets."""
    import uvicorn

    from .evalserve import CaseStore, SheetStore, create_app

    try:
        run_dir, _, corpus_manifest, records = _open_run(runs_dir, run_id)
    except (RunError, OSError) as exc:
        click.echo(f"fatal: {exc}", err=True)
        sys.exit(EXIT_FATAL)
    case_store = CaseStore(records, load_results(run_dir),
                           corpus_root=Path(corpus_manifest).parent)
    app = create_app(case_store, SheetStore(run_dir / "sheets.jsonl"), token,
                     sessions_path=run_dir / "sessions.jsonl", static_dir=static_dir)
    uvicorn.run(app, host=host, port=port)


@main.command()
@click.option("--from-run", required=True, help="Run id whose transcripts to replay.")
@click.option("--run-id", required=True, help="New run id for the replayed outputs.")
@click.option("--runs-dir", default="runs", show_default=True)
@click.option("--backends", "backends_path", type=click.Path(exists=True))
@click.option("--models", default="mock", show_default=True)
@click.option("--judge-backend", default="mock", show_default=True)
def replay(from_run: str, run_id: str, runs_dir: str, backends_path: str | None,
           models: str, judge_backend: str) -> None:
    """Re-run the full pipeline offline against a prior run's transcripts."""
    try:
        src_dir, src_manifest, corpus_manifest, records = _open_run(runs_dir, from_run)
        configs = _load_backend_configs(backends_path)
        cfgs = [configs[name.strip()] for name in models.split(",")]
        judge_cfg = configs[judge_backend]
    except (RunError, KeyError, OSError) as exc:
        click.echo(f"fatal: {exc}", err=True)
        sys.exit(EXIT_FATAL)
    ledger = src_dir / "transcripts.jsonl"
    run_dir = Path(runs_dir) / run_id
    scenario_list = [PromptScenario.from_tag(t) for t in src_manifest.scenarios]
    manifest = make_run_manifest(run_id, corpus_manifest, cfgs, scenario_list,
                                 seed=src_manifest.seed)
    save_manifest(manifest, run_dir)
    (run_dir / "corpus_manifest_path.txt").write_text(str(Path(corpus_manifest).resolve()) + "\n")
    root = Path(corpus_manifest).parent
    results = run_generate(records, cfgs, scenario_list, run_dir, corpus_root=root,
                           replay_ledger=ledger)
    verdicts = run_judge(results, records, judge_cfg, run_dir, replay_ledger=ledger)
    write_judge_tables(verdicts, run_dir, manifest)
    run_metrics(results, records, run_dir, manifest)
    run_correlate(results, verdicts, records, run_dir, manifest)
    click.echo(f"replayed {from_run} into {run_dir}")


if __name__ == "__main__":
    main()
