"""Prompt materialization for the four generation scenarios and the judge.

Template text lives in versioned resource files under ``templates/`` (one file
per scenario plus the evaluation template) and is substituted with
``{{variable}}`` delimiters; nothing is string-concatenated ad hoc, so prompt
bytes are stable for a fixed template version.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import FindingRecord
from .imaging import AnnotatedImage, OverlayStyle, load_raster, render_overlay

__all__ = [
    "PromptScenario",
    "PromptBundle",
    "TemplateSet",
    "build_generation_prompt",
    "build_judge_prompt",
    "ALL_SCENARIOS",
]


@dataclass(frozen=True)
class PromptScenario:
    cot: bool
    bbox: bool

    @property
    def tag(self) -> str:
        return ("bbox" if self.bbox else "nobbox") + "-" + ("cot" if self.cot else "nocot")

    @classmethod
    def from_tag(cls, tag: str) -> "PromptScenario":
        try:
            bbox_part, cot_part = tag.split("-")
            return cls(cot={"cot": True, "nocot": False}[cot_part],
                       bbox={"bbox": True, "nobbox": False}[bbox_part])
        except (ValueError, KeyError):
            raise ValueError(f"unknown scenario tag {tag!r}") from None


ALL_SCENARIOS = (
    PromptScenario(cot=True, bbox=True),
    PromptScenario(cot=True, bbox=False),
    PromptScenario(cot=False, bbox=True),
    PromptScenario(cot=False, bbox=False),
)


@dataclass(frozen=True)
class PromptBundle:
    user_text: str
    scenario: Optional[PromptScenario] = None
    system_text: Optional[str] = None
    image: Optional[AnnotatedImage] = None
    raw_image: Optional[np.ndarray] = None


_TEMPLATE_FILES = {
    (True, True): "gen_cot_bbox.txt",
    (True, False): "gen_cot_nobbox.txt",
    (False, True): "gen_nocot_bbox.txt",
    (False, False): "gen_nocot_nobbox.txt",
}


class TemplateSet:
    """Prompt templates loaded from a directory (default: the packaged set)."""

    def __init__(self, directory: Optional[Path | str] = None):
        if directory is None:
            directory = Path(str(resources.files("radscore").joinpath("templates")))
        self.directory = Path(directory)
        self.version = (self.directory / "VERSION").read_text(encoding="utf-8").strip()
        self._cache: dict[str, str] = {}

    def text(self, name: str) -> str:
        if name not in self._cache:
            self._cache[name] = (self.directory / name).read_text(encoding="utf-8").rstrip("\n")
        return self._cache[name]

    def generation(self, scenario: PromptScenario) -> str:
        return self.text(_TEMPLATE_FILES[(scenario.cot, scenario.bbox)])

    def judge(self) -> str:
        return self.text("judge.txt")


_DEFAULT_TEMPLATES: Optional[TemplateSet] = None


def default_templates() -> TemplateSet:
    global _DEFAULT_TEMPLATES
    if _DEFAULT_TEMPLATES is None:
        _DEFAULT_TEMPLATES = TemplateSet()
    return _DEFAULT_TEMPLATES


def _substitute(template: str, variables: dict[str, str]) -> str:
    for key, value in variables.items():
        if re.search(r"\{\{|\}\}", value):
            print(f"warning: literal braces in prompt variable {key}", file=sys.stderr)
        template = template.replace("{{" + key + "}}", value)
    return template


def build_generation_prompt(
    record: FindingRecord,
    scenario: PromptScenario,
    style: OverlayStyle = OverlayStyle(),
    corpus_root: Optional[Path | str] = None,
    templates: Optional[TemplateSet] = None,
    require_image: bool = True,
) -> PromptBundle:
    """Build the generation prompt for one finding under one scenario.

    The user text is the scenario's template verbatim; the image is the
    annotated render iff ``scenario.bbox``, otherwise the unannotated source
    raster.  With ``require_image=False`` (text-only backends) the image is
    omitted entirely.
    """
    templates = templates or default_templates()
    user_text = templates.generation(scenario)

    image: Optional[AnnotatedImage] = None
    raw_image: Optional[np.ndarray] = None
    if require_image:
        path = Path(corpus_root or ".") / record.image_ref
        if not path.is_file():
            raise FileNotFoundError(f"record {record.id}: image {path} not found")
        raster = load_raster(path)
        if scenario.bbox:
            image = render_overlay(raster, record.bbox, style, source_ref=record.image_ref)
        else:
            raw_image = raster
    return PromptBundle(user_text=user_text, scenario=scenario, image=image, raw_image=raw_image)


def build_judge_prompt(
    gt_text: str,
    pred_result: str,
    expanded_terms: Optional[str] = None,
    templates: Optional[TemplateSet] = None,
) -> PromptBundle:
    """Embed (gt_text, pred_result) into the text-only evaluation template."""
    if not gt_text.strip():
        raise ValueError("gt_text must be non-empty")
    if not pred_result.strip():
        raise ValueError("pred_result must be non-empty")
    templates = templates or default_templates()
    expanded_block = f"expanded terms: {expanded_terms}\n" if expanded_terms else ""
    user_text = _substitute(
        templates.judge(),
        {"gt_text": gt_text, "pred_result": pred_result, "expanded_terms_block": expanded_block},
    )
    return PromptBundle(user_text=user_text)
