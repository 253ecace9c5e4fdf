import pytest
from hypothesis import given
from hypothesis import strategies as st

from promptloom.parsing import (
    EmptyOutput,
    FinishReason,
    RawCompletion,
    guard_value,
    parse_numbered_list,
    parse_output,
    render_numbered_list,
    strip_stops,
)
from promptloom.prompting import ParseType


class TestStripStops:
    def test_single_delimiter(self):
        assert strip_stops("Bonjour!\n###\nEnglish:", ["###"]) == "Bonjour!\n"

    def test_no_stop_is_noop(self):
        assert strip_stops("abc", ["###"]) == "abc"

    def test_cuts_at_earliest_of_several_stops(self):
        raw = "alpha STOP beta END gamma"
        # brute-force oracle: min over all occurrence offsets
        stops = ["END", "STOP"]
        expected_cut = min(raw.find(s) for s in stops if s in raw)
        assert strip_stops(raw, stops) == raw[:expected_cut]

    def test_empty_stop_ignored(self):
        assert strip_stops("abc", [""]) == "abc"


class TestParseNumberedList:
    def test_review_problem_list(self):
        raw = (
            "1. Too much text on slides\n"
            "2. No clear structure\n"
            "3. Does not engage with audience"
        )
        parsed = parse_numbered_list(raw)
        assert parsed.values == [
            "Too much text on slides",
            "No clear structure",
            "Does not engage with audience",
        ]

    def test_empty_string_gives_zero_items(self):
        assert parse_numbered_list("").values == []

    def test_mixed_enumerator_forms(self):
        # rule table: "1.", "1)", and "-" all introduce an item
        assert parse_numbered_list("1) a\n- b\n2. c").values == ["a", "b", "c"]

    def test_unenumerated_lines_kept_as_items(self):
        assert parse_numbered_list("plain line").values == ["plain line"]

    def test_blank_lines_skipped(self):
        assert parse_numbered_list("1. a\n\n2. b\n").values == ["a", "b"]


class TestParseOutput:
    def test_single_text_trims(self):
        parsed = parse_output(
            RawCompletion("Où est un bon restaurant?"), ParseType.SINGLE_TEXT
        )
        assert parsed.values == ["Où est un bon restaurant?"]

    def test_labeled_fields_first_line_keeps_case(self):
        parsed = parse_output(RawCompletion("  Yes  \nextra"), ParseType.LABELED_FIELDS)
        assert parsed.values == ["Yes"]
        assert guard_value(parsed.values[0]) == "yes"

    def test_single_text_empty_is_error(self):
        with pytest.raises(EmptyOutput):
            parse_output(RawCompletion("   \n"), ParseType.SINGLE_TEXT)

    def test_empty_numbered_list_is_not_an_error(self):
        assert parse_output(RawCompletion(""), ParseType.NUMBERED_LIST).values == []

    def test_stops_applied_before_parsing(self):
        parsed = parse_output(
            RawCompletion("1. a\n2. b\n###\n1. ghost"),
            ParseType.NUMBERED_LIST,
            stops=["###"],
        )
        assert parsed.values == ["a", "b"]

    def test_length_finish_adds_truncation_warning(self):
        parsed = parse_output(
            RawCompletion("text", FinishReason.LENGTH), ParseType.SINGLE_TEXT
        )
        assert any("truncated" in w for w in parsed.warnings)

    def test_values_never_contain_stop_sequences(self):
        parsed = parse_output(
            RawCompletion("line one\n\nline two"), ParseType.SINGLE_TEXT, stops=["\n\n"]
        )
        assert parsed.values == ["line one"]


items_strategy = st.lists(
    st.text(
        alphabet=st.characters(blacklist_characters="\n", blacklist_categories=("Cs", "Cc")),
        min_size=1,
        max_size=40,
    ).map(str.strip).filter(lambda s: s and not s[0].isdigit() and not s.startswith(("-", "#"))),
    min_size=1,
    max_size=12,
)


@given(items_strategy)
def test_numbered_list_round_trip(items):
    assert parse_numbered_list(render_numbered_list(items)).values == items


@given(items_strategy)
def test_order_preserved(items):
    parsed = parse_numbered_list(render_numbered_list(items))
    assert parsed.values == items  # appearance order
