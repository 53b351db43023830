from pathlib import Path

import pytest

from radscore.corpus import load_corpus
from radscore.prompts import (ALL_SCENARIOS, PromptScenario, TemplateSet,
                              build_generation_prompt, build_judge_prompt)

DEMO = Path(__file__).resolve().parents[1] / "demo"

GEMINI_CASE_STUDY = ("Location: Right kidney; Body Part: Kidney; Type: Mass; "
                     "Impression: Right renal mass, likely benign.")


@pytest.fixture(scope="module")
def records():
    return load_corpus(DEMO, DEMO / "manifest.jsonl")


class TestGenerationPrompt:
    def test_plain_nobbox_template_verbatim(self, records):
        bundle = build_generation_prompt(records[0], PromptScenario(cot=False, bbox=False),
                                         corpus_root=DEMO)
        assert bundle.user_text == ("Imagine you are a radiologist. "
                                    "Generate a short radiological impression based on this image.")
        assert bundle.image is None and bundle.raw_image is not None

    def test_cot_bbox_mentions_box_and_enumeration(self, records):
        bundle = build_generation_prompt(records[0], PromptScenario(cot=True, bbox=True),
                                         corpus_root=DEMO)
        assert "with a bounding box created by a radiologist" in bundle.user_text
        for marker in ("1. Location", "2. Body Part", "3. Types", "4. Impression"):
            assert marker in bundle.user_text
        assert bundle.image is not None

    def test_nobbox_never_references_box(self, records):
        for scenario in ALL_SCENARIOS:
            if scenario.bbox:
                continue
            bundle = build_generation_prompt(records[0], scenario, corpus_root=DEMO)
            assert "bounding box" not in bundle.user_text

    def test_same_scenario_same_text_different_images(self, records):
        scenario = PromptScenario(cot=True, bbox=True)
        a = build_generation_prompt(records[0], scenario, corpus_root=DEMO)
        b = build_generation_prompt(records[1], scenario, corpus_root=DEMO)
        assert a.user_text == b.user_text
        assert a.image.source_ref != b.image.source_ref

    def test_missing_image_names_record(self, records):
        with pytest.raises(FileNotFoundError, match=records[0].id):
            build_generation_prompt(records[0], PromptScenario(cot=False, bbox=True),
                                    corpus_root="/nonexistent")

    def test_text_only_mode_omits_image(self, records):
        bundle = build_generation_prompt(records[0], PromptScenario(cot=False, bbox=False),
                                         corpus_root="/nonexistent", require_image=False)
        assert bundle.image is None and bundle.raw_image is None


class TestJudgePrompt:
    def test_embeds_both_texts_verbatim(self):
        bundle = build_judge_prompt("right renal parapelvic cyst", GEMINI_CASE_STUDY)
        assert "right renal parapelvic cyst" in bundle.user_text
        assert GEMINI_CASE_STUDY in bundle.user_text
        assert bundle.image is None

    def test_rubric_terms_present(self):
        bundle = build_judge_prompt("gt", "pred")
        for term in ("Correct", "Partially Correct", "Incorrect", "Not Applicable"):
            assert term in bundle.user_text
        assert "Location: If the model finds the problem in the right spot." in bundle.user_text

    def test_self_comparison_valid(self):
        bundle = build_judge_prompt("same text", "same text")
        assert bundle.user_text.count("same text") == 2

    def test_empty_pred_rejected(self):
        with pytest.raises(ValueError):
            build_judge_prompt("gt", "  ")

    def test_empty_gt_rejected(self):
        with pytest.raises(ValueError):
            build_judge_prompt("", "pred")

    def test_expanded_terms_passthrough(self):
        bundle = build_judge_prompt("gt", "pred", expanded_terms="renal cyst; kidney cyst")
        assert "renal cyst; kidney cyst" in bundle.user_text

    def test_no_leftover_placeholders(self):
        bundle = build_judge_prompt("gt", "pred")
        assert "{{" not in bundle.user_text


class TestTemplateSet:
    def test_version_loaded(self):
        assert TemplateSet().version

    def test_byte_identical_across_loads(self):
        a = TemplateSet().generation(PromptScenario(cot=True, bbox=False))
        b = TemplateSet().generation(PromptScenario(cot=True, bbox=False))
        assert a == b

    def test_override_directory(self, tmp_path):
        (tmp_path / "VERSION").write_text("test-2")
        (tmp_path / "gen_nocot_nobbox.txt").write_text("custom template\n")
        ts = TemplateSet(tmp_path)
        assert ts.version == "test-2"
        assert ts.generation(PromptScenario(cot=False, bbox=False)) == "custom template"

    def test_scenario_tag_round_trip(self):
        for scenario in ALL_SCENARIOS:
            assert PromptScenario.from_tag(scenario.tag) == scenario
        with pytest.raises(ValueError):
            PromptScenario.from_tag("bogus")
