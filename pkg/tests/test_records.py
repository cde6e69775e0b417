"""Intent record parsing, canonical serialization, and exact-match scoring."""

from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from intentbench.records import (
    Action,
    ErrorClass,
    IntentRecord,
    MatchOutcome,
    NoObjectFound,
    SchemaViolation,
    canonical_serialize,
    exact_match,
    parse_intent_json,
)

GOLD = IntentRecord(Action.REMOVE, "Lip Balm", 12)


# ------------------------------------------------------------------ parsing

def test_parse_plain_object():
    record = parse_intent_json('{"action":"remove","product":"Lip Balm","quantity":12}')
    assert record == GOLD


def test_parse_skips_surrounding_prose():
    text = 'Sure! {"action":"add","product":"Beer","quantity":2} Anything else?'
    assert parse_intent_json(text) == IntentRecord(Action.ADD, "Beer", 2)


def test_parse_first_valid_object_wins():
    text = '{"foo":1} {"action":"add","product":"Beer","quantity":2}'
    with pytest.raises(SchemaViolation):
        parse_intent_json(text)


def test_parse_recovers_from_unparseable_prefix():
    text = '{not json {"action":"add","product":"Beer","quantity":2}'
    assert parse_intent_json(text) == IntentRecord(Action.ADD, "Beer", 2)


def test_parse_string_quantity_rejected():
    with pytest.raises(SchemaViolation):
        parse_intent_json('{"action":"add","product":"Beer","quantity":"two"}')


def test_parse_string_digits_rejected():
    with pytest.raises(SchemaViolation):
        parse_intent_json('{"action":"add","product":"Beer","quantity":"12"}')


def test_parse_integral_float_accepted():
    record = parse_intent_json('{"action":"add","product":"Beer","quantity":2.0}')
    assert record.quantity == 2


@pytest.mark.parametrize(
    "payload",
    [
        '{"action":"add","product":"Beer","quantity":2.5}',
        '{"action":"add","product":"Beer","quantity":0}',
        '{"action":"add","product":"Beer","quantity":-3}',
        '{"action":"add","product":"Beer","quantity":true}',
        '{"action":"buy","product":"Beer","quantity":2}',
        '{"action":"add","product":"","quantity":2}',
        '{"action":"add","product":"  ","quantity":2}',
        '{"action":"add","product":42,"quantity":2}',
        '{"action":"add","quantity":2}',
        '{"action":"add","product":"Beer","quantity":2,"note":"x"}',
    ],
)
def test_parse_schema_violations(payload):
    with pytest.raises(SchemaViolation):
        parse_intent_json(payload)


@pytest.mark.parametrize("text", ["", "not json at all", "[1, 2, 3]", '"just a string"', "{{{"])
def test_parse_no_object(text):
    with pytest.raises(NoObjectFound):
        parse_intent_json(text)


# ------------------------------------------------------------ serialization

def test_canonical_form_is_exact():
    assert (
        canonical_serialize(IntentRecord(Action.ADD, "Beer", 2))
        == '{"action":"add","product":"Beer","quantity":2}'
    )


def test_canonical_keeps_utf8_literal():
    out = canonical_serialize(IntentRecord(Action.REMOVE, "Šampon", 3))
    assert "Šampon" in out
    assert "\\u" not in out


records_strategy = st.builds(
    IntentRecord,
    action=st.sampled_from(list(Action)),
    product=st.text(min_size=1).filter(lambda s: bool(s.strip())),
    quantity=st.integers(min_value=1, max_value=10**9),
)


@given(records_strategy)
def test_roundtrip(record):
    assert parse_intent_json(canonical_serialize(record)) == record


@given(records_strategy)
def test_reflexivity(record):
    outcome = exact_match(canonical_serialize(record), record)
    assert outcome.matched
    assert outcome.error_class is ErrorClass.NONE
    assert outcome.predicted == record


# ----------------------------------------------------------------- matching

def test_match_canonical_example():
    outcome = exact_match('{"action":"remove","product":"Lip Balm","quantity":12}', GOLD)
    assert outcome.matched


def test_wrong_quantity():
    outcome = exact_match('{"action":"remove","product":"Lip Balm","quantity":11}', GOLD)
    assert outcome.error_class is ErrorClass.WRONG_QUANTITY
    assert outcome.predicted is not None


def test_wrong_action():
    outcome = exact_match('{"action":"add","product":"Lip Balm","quantity":12}', GOLD)
    assert outcome.error_class is ErrorClass.WRONG_ACTION


def test_wrong_product_case_sensitive():
    outcome = exact_match('{"action":"remove","product":"lip balm","quantity":12}', GOLD)
    assert outcome.error_class is ErrorClass.WRONG_PRODUCT


def test_product_outer_whitespace_trimmed():
    outcome = exact_match('{"action":"remove","product":"  Lip Balm ","quantity":12}', GOLD)
    assert outcome.matched


def test_multiple_wrong():
    outcome = exact_match('{"action":"add","product":"Beer","quantity":12}', GOLD)
    assert outcome.error_class is ErrorClass.MULTIPLE_WRONG


def test_invalid_json_class():
    outcome = exact_match("not json at all", GOLD)
    assert outcome.error_class is ErrorClass.INVALID_JSON
    assert outcome.predicted is None


def test_schema_violation_class():
    outcome = exact_match('{"action":"add","quantity":2}', GOLD)
    assert outcome.error_class is ErrorClass.SCHEMA_VIOLATION


def test_normalize_flag_applies_nfc():
    # "Š" composed vs decomposed S + combining caron
    gold = IntentRecord(Action.ADD, "Šampon", 1)
    text = '{"action":"add","product":"Šampon","quantity":1}'
    assert exact_match(text, gold).error_class is ErrorClass.WRONG_PRODUCT
    assert exact_match(text, gold, normalize_product=True).matched


@given(st.text(max_size=200), records_strategy)
def test_classification_partition(text, gold):
    outcome = exact_match(text, gold)
    assert outcome.matched == (outcome.error_class is ErrorClass.NONE)
    assert isinstance(outcome.error_class, ErrorClass)


def test_outcome_invariants_enforced():
    with pytest.raises(ValueError):
        MatchOutcome(True, ErrorClass.WRONG_ACTION, GOLD)
    with pytest.raises(ValueError):
        MatchOutcome(False, ErrorClass.INVALID_JSON, GOLD)
    with pytest.raises(ValueError):
        MatchOutcome(False, ErrorClass.WRONG_ACTION, None)


def test_record_invariants_enforced():
    with pytest.raises(ValueError):
        IntentRecord(Action.ADD, "Beer", 0)
    with pytest.raises(ValueError):
        IntentRecord(Action.ADD, "", 1)
    with pytest.raises(ValueError):
        IntentRecord(Action.ADD, "Beer", 1.5)  # type: ignore[arg-type]
    with pytest.raises(ValueError):
        IntentRecord("purchase", "Beer", 1)  # type: ignore[arg-type]
