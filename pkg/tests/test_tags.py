from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reasondrive.core import CameraView
from reasondrive.errors import ToolkitError
from reasondrive.tags import (
    MARKERS,
    ParseMode,
    emit_structured,
    extract_tags,
    parse_structured,
)

MULTI_OBJECT_ANSWER = (
    "Ahead are a parked van <c1> and a cyclist <c2>; behind sits a bus <c3>. "
    "A pedestrian <c4> waits at the crossing next to a stop sign <c5>."
)


def test_parse_strict():
    out = parse_structured("<think>wet road, no brake</think><answer>Decelerate gradually.</answer>")
    assert (out.think, out.answer, out.parse_mode) == ("wet road, no brake", "Decelerate gradually.", ParseMode.STRICT)


def test_parse_fallback_whole():
    out = parse_structured("Brake gently to a stop.")
    assert (out.think, out.answer, out.parse_mode) == (None, "Brake gently to a stop.", ParseMode.FALLBACK_WHOLE)


def test_parse_fallback_after_think():
    out = parse_structured("<think>stop needed</think> Brake.")
    assert (out.think, out.answer, out.parse_mode) == ("stop needed", "Brake.", ParseMode.FALLBACK_AFTER_THINK)


def test_parse_answer_only_block():
    out = parse_structured("  <answer>No.</answer>\n")
    assert out.parse_mode is ParseMode.FALLBACK_WHOLE
    assert out.answer == "No."


def test_parse_answer_before_think_is_not_strict():
    out = parse_structured("<answer>Go.</answer><think>clear road</think>")
    assert out.parse_mode is ParseMode.FALLBACK_AFTER_THINK
    assert out.think == "clear road" and out.answer == "Go."


def test_parse_first_answer_block_wins():
    out = parse_structured("<think>t</think><answer>first</answer><answer>second</answer>")
    assert out.parse_mode is ParseMode.STRICT
    assert out.answer == "first"
    assert [f.code for f in out.findings] == ["MULTIPLE_ANSWER_BLOCKS"]


def test_parse_is_case_sensitive():
    out = parse_structured("<THINK>x</THINK><ANSWER>y</ANSWER>")
    assert out.parse_mode is ParseMode.FALLBACK_WHOLE


def test_parse_unclosed_markers_never_leak():
    out = parse_structured("<think>never closed <answer>Stop")
    assert out.parse_mode is ParseMode.FALLBACK_WHOLE
    assert "<answer>" not in out.answer and "</answer>" not in out.answer


def test_parse_empty_raises():
    with pytest.raises(ToolkitError) as err:
        parse_structured("")
    assert err.value.code == "EMPTY_INPUT"


def test_extract_tags_in_order():
    assert [t.id for t in extract_tags(MULTI_OBJECT_ANSWER)] == ["c1", "c2", "c3", "c4", "c5"]


def test_extract_extended_first_occurrence_wins():
    tags = extract_tags("<c2,CAM_FRONT,100,200> then <c2>")
    assert len(tags) == 1
    assert tags[0].camera is CameraView.FRONT
    assert tags[0].coords == (100.0, 200.0)


def test_extract_no_tags():
    assert extract_tags("no tags here") == []


def test_extract_skips_malformed_candidates():
    tags = extract_tags("<c0> <c3,CAM_NOWHERE,1,2> <c4,CAM_BACK,x,y> <c5,CAM_BACK_LEFT> <c6,CAM_FRONT,-3.5,9999.25>")
    assert [t.id for t in tags] == ["c5", "c6"]
    assert tags[0].camera is CameraView.BACK_LEFT and tags[0].coords is None
    assert tags[1].coords == (-3.5, 9999.25)


def test_extract_is_idempotent_and_order_stable():
    text = "<c3> <c1,CAM_FRONT,1,2> <c3> <c2>"
    first = extract_tags(text)
    assert [t.id for t in first] == ["c3", "c1", "c2"]
    assert extract_tags(" ".join(str(t) for t in first)) == first


def test_emit():
    assert emit_structured(None, "No.") == "<answer>No.</answer>"
    assert emit_structured("x", "y") == "<think>x</think>\n<answer>y</answer>"
    with pytest.raises(ToolkitError) as err:
        emit_structured("a <answer> b", "y")
    assert err.value.code == "NESTED_MARKERS"


def _marker_free(text: str) -> bool:
    return not any(m in text for m in MARKERS)


segment = st.text(min_size=1, max_size=60).map(str.strip).filter(lambda s: s and _marker_free(s))


@settings(max_examples=300)
@given(segment, segment)
def test_round_trip_property(think, answer):
    out = parse_structured(emit_structured(think, answer))
    assert (out.think, out.answer, out.parse_mode) == (think, answer, ParseMode.STRICT)


@settings(max_examples=300)
@given(st.text(min_size=1))
def test_parser_is_total(raw):
    out = parse_structured(raw)
    assert "<answer>" not in out.answer and "</answer>" not in out.answer
    assert out.parse_mode in ParseMode
