import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radscore.corpus import (AspectTriple, BoundingBox, CorpusError, Measurement,
                             MeasurementParseError, extract_bookmark,
                             format_measurement, load_corpus, parse_measurement)

SENTENCE_1 = ("There is no mediastinal adenopathy however there is a nodule in the "
              "prevascular space measuring BOOKMARK ( 1.8 cm x 1.0 cm ) "
              "( series 3 , image 88 ) .")
SENTENCE_2 = ("Smaller retroperitoneal nodules and masses for example iliac artery "
              "OTHER_BMK ( 1.6 cm x 1.4 cm ) , prior exam was OTHER_BMK ( 3.4 cm x 1.8 cm ) "
              "and left internal iliac BOOKMARK ( 2.0 cm x 1.2 cm ) , "
              "prior exam OTHER_BMK was ( 5.1 cm x 4.4 cm )")


def record_dict(id="f1", **overrides):
    base = {
        "id": id, "patient_id": "p1", "study_id": "s1", "image_ref": "images/x.png",
        "bbox": {"x": 1, "y": 2, "w": 3, "h": 4},
        "gold_sentence": "A mass.", "gold_aspects": {"body_part": "lung"},
    }
    base.update(overrides)
    return base


class TestParseMeasurement:
    def test_two_axis_cm(self):
        assert parse_measurement("1.8 cm x 1.0 cm").axis_lengths_cm == (1.8, 1.0)

    def test_mm_normalized(self):
        assert parse_measurement("27 mm").axis_lengths_cm == (2.7,)

    def test_second_reference_value(self):
        assert parse_measurement("5.1 cm x 4.4 cm").axis_lengths_cm == (5.1, 4.4)

    def test_uppercase_x(self):
        assert parse_measurement("2 cm X 1 cm").axis_lengths_cm == (2.0, 1.0)

    def test_bad_unit_names_token(self):
        with pytest.raises(MeasurementParseError, match="sub-cm"):
            parse_measurement("sub-cm")

    def test_non_numeric(self):
        with pytest.raises(MeasurementParseError):
            parse_measurement("large cm")

    @given(st.lists(st.floats(min_value=0.1, max_value=99.0).map(lambda v: round(v, 2)),
                    min_size=1, max_size=2))
    @settings(max_examples=100, deadline=None)
    def test_format_round_trip(self, axes):
        m = Measurement(axis_lengths_cm=tuple(axes), raw_text="fixture")
        assert parse_measurement(format_measurement(m)).axis_lengths_cm == m.axis_lengths_cm


class TestExtractBookmark:
    def test_reference_sentence_one(self):
        description, size = extract_bookmark(SENTENCE_1, diagnostic=lambda m: None)
        assert size.axis_lengths_cm == (1.8, 1.0)
        assert "BOOKMARK" not in description and "OTHER_BMK" not in description
        assert "(" not in description and ")" not in description
        assert description.endswith(".")
        assert description.startswith("There is no mediastinal adenopathy")

    def test_reference_sentence_two_takes_bookmark_not_other_bmk(self):
        description, size = extract_bookmark(SENTENCE_2, diagnostic=lambda m: None)
        assert size.axis_lengths_cm == (2.0, 1.2)
        assert "BOOKMARK" not in description and "OTHER_BMK" not in description
        assert "(" not in description

    def test_no_bookmark(self):
        assert extract_bookmark("No bookmark here.") == ("No bookmark here.", None)

    def test_unparseable_size_emits_diagnostic(self):
        messages = []
        description, size = extract_bookmark(
            "Lesion BOOKMARK ( sub-cm ) noted.", diagnostic=messages.append)
        assert size is None
        assert messages
        assert "BOOKMARK" not in description

    def test_multiple_bookmarks_takes_first_with_diagnostic(self):
        messages = []
        _, size = extract_bookmark(
            "One BOOKMARK ( 1 cm ) and two BOOKMARK ( 2 cm ).", diagnostic=messages.append)
        assert size.axis_lengths_cm == (1.0,)
        assert any("first" in m for m in messages)

    def test_idempotent_on_cleaned_output(self):
        for sentence in (SENTENCE_1, SENTENCE_2, "No bookmark here."):
            cleaned, _ = extract_bookmark(sentence, diagnostic=lambda m: None)
            again, size = extract_bookmark(cleaned, diagnostic=lambda m: None)
            assert again == cleaned
            assert size is None

    def test_other_bmk_removal_never_changes_size(self):
        import re

        for sentence in (SENTENCE_1, SENTENCE_2):
            stripped = re.sub(r"OTHER_BMK\s*(?:was\s*)?\(\s*[^)]*\)", " ", sentence)
            _, size_a = extract_bookmark(sentence, diagnostic=lambda m: None)
            _, size_b = extract_bookmark(stripped, diagnostic=lambda m: None)
            assert (size_a is None) == (size_b is None)
            if size_a is not None:
                assert size_a.axis_lengths_cm == size_b.axis_lengths_cm


class TestTypes:
    def test_bbox_requires_positive_size(self):
        with pytest.raises(ValueError):
            BoundingBox(x=0, y=0, w=0, h=5)

    def test_bbox_edge_check_names_edge(self):
        with pytest.raises(ValueError, match="right edge"):
            BoundingBox(x=5, y=0, w=10, h=5).check_within(12, 12)

    def test_aspects_need_one_field(self):
        with pytest.raises(ValueError):
            AspectTriple()

    def test_aspects_trimmed(self):
        assert AspectTriple(body_part="  lung ").body_part == "lung"

    def test_measurement_sanity_bound(self):
        with pytest.raises(ValueError):
            Measurement(axis_lengths_cm=(150.0,), raw_text="150 cm")


class TestLoadCorpus:
    def write_manifest(self, tmp_path, lines):
        path = tmp_path / "manifest.jsonl"
        path.write_text("".join(json.dumps(l) + "\n" if isinstance(l, dict) else l + "\n"
                                for l in lines))
        return path

    def test_empty_manifest(self, tmp_path):
        path = self.write_manifest(tmp_path, [])
        assert load_corpus(tmp_path, path) == []

    def test_two_valid_records_in_order(self, tmp_path):
        path = self.write_manifest(tmp_path, [record_dict("a"), record_dict("b")])
        records = load_corpus(tmp_path, path)
        assert [r.id for r in records] == ["a", "b"]

    def test_missing_gold_sentence_reports_line(self, tmp_path):
        bad = record_dict("b")
        del bad["gold_sentence"]
        path = self.write_manifest(tmp_path, [record_dict("a"), bad])
        messages = []
        records = load_corpus(tmp_path, path, diagnostic=messages.append)
        assert [r.id for r in records] == ["a"]
        assert len(messages) == 1
        assert messages[0].startswith("line:2")
        assert "gold_sentence" in messages[0]

    def test_duplicate_id_fatal(self, tmp_path):
        path = self.write_manifest(tmp_path, [record_dict("a"), record_dict("a")])
        with pytest.raises(CorpusError, match="duplicate"):
            load_corpus(tmp_path, path)

    def test_unreadable_manifest_fatal(self, tmp_path):
        with pytest.raises(CorpusError):
            load_corpus(tmp_path, tmp_path / "missing.jsonl")

    def test_malformed_json_line_diagnostic(self, tmp_path):
        path = self.write_manifest(tmp_path, [record_dict("a"), "not json"])
        messages = []
        records = load_corpus(tmp_path, path, diagnostic=messages.append)
        assert len(records) == 1
        assert messages and messages[0].startswith("line:2")

    def test_demo_corpus_loads_clean(self):
        from pathlib import Path

        demo = Path(__file__).resolve().parents[1] / "demo"
        messages = []
        records = load_corpus(demo, demo / "manifest.jsonl", diagnostic=messages.append)
        assert len(records) == 5
        assert not messages
