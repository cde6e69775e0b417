"""Evaluator: Wilson intervals, aggregation, parallelism invariance, failure accounting."""

from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from intentbench.backends import BackendConfig
from intentbench.datagen import Dataset, Example, GenerationSpec, NoiseProfile, generate_dataset
from intentbench.evaluator import (
    DomainError,
    EmptyDataset,
    EvalConfig,
    aggregate_report,
    evaluate_dataset,
    per_item_csv,
    report_table,
    wilson_interval,
)
from intentbench.records import (
    Action,
    ErrorClass,
    IntentRecord,
    MatchOutcome,
    backend_error_outcome,
)

ORACLE = BackendConfig(kind="oracle")


def _clean_dataset(n=60, seed=21) -> Dataset:
    return generate_dataset(GenerationSpec(n_examples=n, seed=seed, noise_profile=NoiseProfile.none()))


def _outcome(matched: bool, error_class=ErrorClass.WRONG_QUANTITY) -> MatchOutcome:
    if matched:
        return MatchOutcome(True, ErrorClass.NONE, IntentRecord(Action.ADD, "Beer", 1))
    if error_class in (ErrorClass.INVALID_JSON, ErrorClass.SCHEMA_VIOLATION, ErrorClass.BACKEND_ERROR):
        return MatchOutcome(False, error_class, None)
    return MatchOutcome(False, error_class, IntentRecord(Action.ADD, "Beer", 9))


def _example(language="en") -> Example:
    return Example("add 1 beer", IntentRecord(Action.ADD, "Beer", 1), language)


# ------------------------------------------------------------------- wilson

def test_wilson_hundred_item_fixture():
    # frozen from an independent evaluation of the Wilson formula
    low, high = wilson_interval(99, 100, 1.96)
    assert low == pytest.approx(0.9455124752390652, abs=1e-12)
    assert high == pytest.approx(0.9982326134344527, abs=1e-12)
    assert abs(low - 0.946) <= 0.001
    assert abs(high - 0.998) <= 0.001


def test_wilson_bounds_exact_at_extremes():
    low, _ = wilson_interval(0, 100)
    assert low == 0.0
    _, high = wilson_interval(100, 100)
    assert high == 1.0


def test_wilson_domain_errors():
    for k, n, z in [(-1, 10, 1.96), (11, 10, 1.96), (5, 0, 1.96), (5, 10, 0.0)]:
        with pytest.raises(DomainError):
            wilson_interval(k, n, z)


@given(st.integers(0, 500), st.integers(1, 500))
def test_wilson_contains_point_estimate(k, n):
    if k > n:
        k = n
    low, high = wilson_interval(k, n)
    assert 0.0 <= low <= k / n <= high <= 1.0


# -------------------------------------------------------------- aggregation

def test_aggregate_basic_fixture():
    items = [(i, _example(), _outcome(i != 37)) for i in range(100)]
    report = aggregate_report(items)
    assert report.n_total == 100
    assert report.n_matched == 99
    assert report.accuracy == pytest.approx(0.99)
    assert report.error_counts == {ErrorClass.WRONG_QUANTITY.value: 1}


def test_aggregate_permutation_invariant():
    items = [
        (i, _example(language), _outcome(i % 3 != 0))
        for i, language in enumerate(["en", "hr", "es"] * 20)
    ]
    shuffled = items[:]
    random.Random(4).shuffle(shuffled)
    assert aggregate_report(items) == aggregate_report(shuffled)


def test_aggregate_count_conservation():
    items = [
        (0, _example(), _outcome(True)),
        (1, _example(), _outcome(False, ErrorClass.WRONG_ACTION)),
        (2, _example(), _outcome(False, ErrorClass.WRONG_QUANTITY)),
        (3, _example(), _outcome(False, ErrorClass.INVALID_JSON)),
    ]
    report = aggregate_report(items)
    assert report.n_total == report.n_matched + sum(report.error_counts.values())
    assert report.error_counts[ErrorClass.WRONG_ACTION.value] == 1
    assert report.error_counts[ErrorClass.WRONG_QUANTITY.value] == 1


def test_aggregate_single_match():
    report = aggregate_report([(0, _example(), _outcome(True))])
    assert report.accuracy == 1.0
    assert report.error_counts == {}


def test_aggregate_empty_rejected():
    with pytest.raises(EmptyDataset):
        aggregate_report([])


@given(st.lists(st.booleans(), min_size=1, max_size=60))
def test_aggregate_monotonicity(matches):
    items = [(i, _example(), _outcome(m)) for i, m in enumerate(matches)]
    accuracy = aggregate_report(items).accuracy
    grown = items + [(len(items), _example(), _outcome(True))]
    assert aggregate_report(grown).accuracy >= accuracy
    shrunk = items + [(len(items), _example(), _outcome(False))]
    assert aggregate_report(shrunk).accuracy <= accuracy


def test_per_language_breakdown():
    items = [
        (0, _example("en"), _outcome(True)),
        (1, _example("en"), _outcome(False)),
        (2, _example("hr"), _outcome(True)),
    ]
    report = aggregate_report(items)
    assert report.per_language == {"en": 0.5, "hr": 1.0}


# --------------------------------------------------------------- evaluation

def test_evaluate_oracle_clean_dataset_perfect():
    ds = _clean_dataset()
    report = evaluate_dataset(ds, ORACLE)
    assert report.accuracy == 1.0
    assert report.error_counts == {}


def test_evaluate_parallelism_invariance():
    ds = _clean_dataset(n=90)
    serial = evaluate_dataset(ds, ORACLE, EvalConfig(parallelism=1))
    parallel = evaluate_dataset(ds, ORACLE, EvalConfig(parallelism=8))
    assert serial == parallel


def test_evaluate_all_malformed():
    ds = _clean_dataset(n=12)
    echo = BackendConfig(kind="subprocess", command_template="printf 'not json' {prompt}")
    report = evaluate_dataset(ds, echo)
    assert report.accuracy == 0.0
    assert report.error_counts == {ErrorClass.INVALID_JSON.value: 12}


def test_evaluate_backend_failures_counted():
    ds = _clean_dataset(n=8)
    failing = BackendConfig(kind="subprocess", command_template="printf %s {prompt}; exit 1")
    report = evaluate_dataset(ds, failing)
    assert report.accuracy == 0.0
    assert report.n_backend_failures == 8
    assert report.error_counts == {ErrorClass.BACKEND_ERROR.value: 8}
    assert report.accuracy_excluding_failures == 0.0
    assert "backend failures" in report_table(report)


def test_evaluate_fixed_prediction_error_classes():
    ds = _clean_dataset(n=9)
    fixed = BackendConfig(
        kind="subprocess",
        command_template='printf \'{"action":"add","product":"Beer","quantity":1}\' {prompt}',
    )
    report = evaluate_dataset(ds, fixed)
    assert report.n_total == 9
    assert report.n_matched + sum(report.error_counts.values()) == 9
    assert ErrorClass.BACKEND_ERROR.value not in report.error_counts


def test_evaluate_fewshot_prompting_works():
    ds = _clean_dataset(n=15)
    shots = tuple(_clean_dataset(n=30, seed=77).examples)
    report = evaluate_dataset(ds, ORACLE, EvalConfig(fewshot_k=4, shots=shots))
    assert report.accuracy == 1.0  # oracle reads only the final query block


def test_evaluate_empty_dataset():
    with pytest.raises(EmptyDataset):
        evaluate_dataset(Dataset((), 0, "x"), ORACLE)


def test_eval_config_validation():
    from intentbench.evaluator import ConfigError

    with pytest.raises(ConfigError):
        EvalConfig(parallelism=0).validate()
    with pytest.raises(ConfigError):
        EvalConfig(fewshot_k=3).validate()
    with pytest.raises(ConfigError):
        EvalConfig(prompt_mode="chatty").validate()


def test_fingerprint_excludes_parallelism():
    ds = _clean_dataset(n=6)
    a = evaluate_dataset(ds, ORACLE, EvalConfig(parallelism=1))
    b = evaluate_dataset(ds, ORACLE, EvalConfig(parallelism=8))
    assert a.config_fingerprint == b.config_fingerprint


def test_per_item_csv_shape():
    ds = _clean_dataset(n=5)
    report = evaluate_dataset(ds, ORACLE)
    csv_text = per_item_csv(report, ds)
    lines = csv_text.strip().splitlines()
    assert lines[0] == "id,language,matched,error_class,gold,predicted"
    assert len(lines) == 6
    assert lines[1].startswith("0,")


def test_report_json_shape():
    ds = _clean_dataset(n=5)
    report = evaluate_dataset(ds, ORACLE, name="oracle-run")
    payload = report.to_json_dict()
    assert payload["name"] == "oracle-run"
    assert payload["accuracy"] == 1.0
    assert payload["ci95"]["low"] <= 1.0
    assert len(payload["per_item"]) == 5
    assert payload["extraction_policy"]
