from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from autopkg.errors import JsonParseError, TableParseError, TypeParseError
from autopkg.parsers import (
    KeyRow,
    parse_gt_table,
    parse_key_table,
    parse_markdown_table,
    parse_type_answer,
    parse_value_json,
    split_examples,
)

VALUE_EXAMPLE_OUTPUT = """{
"18392": "BLM",
"18597": "18650",
"19903": 3,
"27091": "Series",
"18809": "Nickel-Plated Brass",
"18407": "Snap-In",
"20066": "Positive Front",
"18427": "-20°C to 70°C",
"18724": null,
"19542": "ABS Plastic"
}"""

VALUE_EXAMPLE_KNOWN = ["18392", "18597", "19903", "27091", "18809", "18407", "20066", "18427", "18724", "19542"]

KEY_TABLE_REPLY = """| Attribute Name | Description | Examples |
\\\\
|----------------|-------------|----------|
\\\\
| Brand | The Manufacturer Or Company That Produces The Product | Wacom, Apple, Huion, XP-Pen, Logitech |
\\\\
| Precision | The Level Of Accuracy And Responsiveness In Tracking Movement And Input | 0.01 Mm, 0.05 Mm, 0.1 Mm, 0.2 Mm, 0.5 Mm |
\\\\
| Pressure Sensitivity | The Number Of Levels The Device Can Detect To Vary Line Thickness Or Opacity Based On Pen Pressure | 2048, 4096, 8192, 16384, 20480 |
\\\\
(truncated for brevity)
"""


class TestValueJson:
    def test_expected_output_gives_nine_facts(self):
        pairs = parse_value_json(VALUE_EXAMPLE_OUTPUT, VALUE_EXAMPLE_KNOWN)
        assert pairs == [
            ("18392", "BLM"),
            ("18597", "18650"),
            ("19903", "3"),
            ("27091", "Series"),
            ("18809", "Nickel-Plated Brass"),
            ("18407", "Snap-In"),
            ("20066", "Positive Front"),
            ("18427", "-20°C to 70°C"),
            ("19542", "ABS Plastic"),
        ]

    def test_lists_flatten(self):
        pairs = parse_value_json('{"126": ["White", "Black", "Silver"], "123": "Philips"}')
        assert pairs == [("126", "White"), ("126", "Black"), ("126", "Silver"), ("123", "Philips")]

    def test_fenced_and_prose_wrapped(self):
        assert parse_value_json('```json\n{"1": "a"}\n```') == [("1", "a")]
        assert parse_value_json('Here you go: {"1": "a"} hope it helps') == [("1", "a")]

    def test_unknown_ids_dropped(self, caplog):
        assert parse_value_json('{"1": "a", "99": "b"}', ["1"]) == [("1", "a")]
        assert "99" in caplog.text

    def test_scalars(self):
        pairs = parse_value_json('{"1": 3.0, "2": 2.5, "3": true, "4": false, "5": "  ", "6": []}')
        assert pairs == [("1", "3"), ("2", "2.5"), ("3", "Yes"), ("4", "No")]

    @pytest.mark.parametrize("bad", ["", "no json here", "[1, 2]", "{broken", '"str"'])
    def test_rejects(self, bad):
        with pytest.raises(JsonParseError):
            parse_value_json(bad)

    @given(
        st.dictionaries(
            st.from_regex(r"[1-9][0-9]{0,5}", fullmatch=True),
            st.one_of(
                st.none(),
                st.integers(-10**6, 10**6),
                st.text(min_size=1).filter(str.strip),
                st.lists(st.text(min_size=1).filter(str.strip), max_size=4),
            ),
            max_size=12,
        )
    )
    def test_round_trip_counts(self, obj):
        pairs = parse_value_json(json.dumps(obj))
        expected = 0
        for v in obj.values():
            if v is None:
                continue
            expected += len(v) if isinstance(v, list) else 1
        assert len(pairs) == expected
        assert {k for k, _ in pairs} <= set(obj)


class TestTables:
    def test_key_discovery_example(self):
        rows = parse_key_table(KEY_TABLE_REPLY)
        assert [r.name for r in rows] == ["Brand", "Precision", "Pressure Sensitivity"]
        assert rows[0] == KeyRow(
            "Brand",
            "The Manufacturer Or Company That Produces The Product",
            ("Wacom", "Apple", "Huion", "XP-Pen", "Logitech"),
        )
        assert rows[2].examples == ("2048", "4096", "8192", "16384", "20480")

    def test_duplicate_and_short_rows(self, caplog):
        text = "| A | B | C |\n|---|---|---|\n| Color | hue | red |\n| color | dup | x |\n| Size |\n"
        rows = parse_key_table(text)
        assert [r.name for r in rows] == ["Color"]
        assert "fewer than" in caplog.text

    def test_headerless_table_keeps_all_rows(self):
        assert parse_markdown_table("| a | b |\n| c | d |") == [["a", "b"], ["c", "d"]]

    def test_aligned_separator(self):
        assert parse_markdown_table("| a | b |\n|:--|--:|\n| c | d |") == [["c", "d"]]

    def test_no_table(self):
        with pytest.raises(TableParseError):
            parse_markdown_table("just prose")
        with pytest.raises(TableParseError):
            parse_key_table("| Name | Desc | Ex |\n|---|---|---|\n")

    def test_gt_table(self):
        text = "| Attribute Name | Value |\n|---|---|\n| Color | grey |\n| Neckline | Henley |"
        assert parse_gt_table(text) == [("Color", "grey"), ("Neckline", "Henley")]

    def test_split_examples(self):
        assert split_examples(" a, b ,,c ") == ("a", "b", "c")


class TestTypeAnswer:
    @pytest.mark.parametrize(
        "reply, expected",
        [
            ("Pen Mouse", "Pen Mouse"),
            ("  \n`Pen Mouse`.\nextra", "Pen Mouse"),
            ('"Chair"', "Chair"),
            ("None", None),
            ("none.", None),
        ],
    )
    def test_accepts(self, reply, expected):
        assert parse_type_answer(reply) == expected

    @pytest.mark.parametrize(
        "reply",
        ["", "   ", "The product type is: Pen Mouse", "Is it a mouse?", "one two three four five six seven"],
    )
    def test_rejects(self, reply):
        with pytest.raises(TypeParseError):
            parse_type_answer(reply)
