from __future__ import annotations

import random

import pytest
from hypothesis import given, strategies as st

from lmpipe.core import (
    ConstraintDecl,
    ConstraintOutcome,
    Prediction,
    Trace,
    TraceStep,
    passages_to_text,
)
from lmpipe.metrics import (
    CitationMetrics,
    TaskExample,
    answer_em,
    citation_metrics,
    final_label_outcomes,
    load_dataset,
    quiz_validity,
    retrieval_recall,
    suggestions_passed,
    tweet_quality,
)


def outcome(kind: str, disposition: str, site: int, seq: int, attempt: int = 0,
            label: str = "") -> ConstraintOutcome:
    return ConstraintOutcome(
        decl=ConstraintDecl(kind=kind, passed=disposition == "passed", message="m",
                            label=label or f"c{site}"),
        attempt=attempt, disposition=disposition, site=site, seq=seq,
    )


def trace_with(outcomes: list[ConstraintOutcome], inputs=None) -> Trace:
    step = TraceStep(module_id="m", inputs=inputs or {}, prediction=Prediction(outputs={}),
                     constraint_outcomes=outcomes)
    return Trace(steps=[step], final_prediction=Prediction(outputs={}))


def test_suggestions_passed_all_final_pass():
    trace = trace_with([
        outcome("suggest", "retried", site=0, seq=0),
        outcome("suggest", "passed", site=0, seq=1, attempt=1),
        outcome("suggest", "passed", site=1, seq=2),
    ])
    assert suggestions_passed(trace) == (1.0, False)


def test_suggestions_passed_counts_only_final_attempts():
    trace = trace_with([
        outcome("suggest", "retried", site=0, seq=0),
        outcome("suggest", "retried", site=0, seq=1, attempt=1),
        outcome("suggest", "warned", site=0, seq=2, attempt=2),
        outcome("suggest", "passed", site=1, seq=3),
    ])
    assert suggestions_passed(trace) == (0.5, False)


def test_suggestions_passed_vacuous():
    value, vacuous = suggestions_passed(trace_with([]))
    assert value == 1.0 and vacuous is True


def test_suggestions_passed_ignores_assert_sites():
    trace = trace_with([
        outcome("assert", "passed", site=0, seq=0),
        outcome("suggest", "failed", site=1, seq=1),
    ])
    assert suggestions_passed(trace) == (0.0, False)


def test_suggestions_passed_failed_disposition_not_passed():
    trace = trace_with([outcome("suggest", "failed", site=0, seq=0)])
    assert suggestions_passed(trace) == (0.0, False)


@given(st.lists(st.lists(st.booleans(), min_size=1, max_size=3), min_size=1, max_size=6))
def test_suggestions_passed_matches_recount(site_patterns):
    """The metric equals an independent recount over final dispositions."""
    outcomes = []
    seq = 0
    for site, pattern in enumerate(site_patterns):
        for attempt, passed in enumerate(pattern):
            if attempt < len(pattern) - 1:
                disposition = "retried" if not passed else "passed"
            else:
                disposition = "passed" if passed else "warned"
            outcomes.append(outcome("suggest", disposition, site=site, seq=seq, attempt=attempt))
            seq += 1
    trace = trace_with(outcomes)
    expected = sum(1 for p in site_patterns if p[-1]) / len(site_patterns)
    assert suggestions_passed(trace)[0] == pytest.approx(expected)


def test_final_label_outcomes_groups_by_label():
    trace = trace_with([
        outcome("suggest", "retried", site=0, seq=0, label="length"),
        outcome("suggest", "passed", site=0, seq=1, attempt=1, label="length"),
        outcome("suggest", "warned", site=1, seq=2, label="length"),
        outcome("suggest", "passed", site=2, seq=3, label="distinct"),
    ])
    labels = final_label_outcomes(trace)
    assert labels == {"length": [True, False], "distinct": [True]}


def test_answer_em_normalizes():
    assert answer_em("The Treaty of Trianon", "Treaty of Trianon") == 1.0
    assert answer_em("treaty of trianon.", "Treaty of Trianon") == 1.0
    assert answer_em("Enterprise", "Budget Rent a Car") == 0.0
    assert answer_em("", "x") == 0.0


def context_trace(titles: list[str], module_id: str = "generate_answer") -> Trace:
    context = passages_to_text([(t, "body") for t in titles])
    step = TraceStep(module_id=module_id, inputs={"context": context},
                     prediction=Prediction(outputs={}))
    return Trace(steps=[step], final_prediction=Prediction(outputs={}))


def test_retrieval_recall_counts_gold_titles():
    trace = context_trace(["A", "B", "C"])
    assert retrieval_recall(trace, {"A", "B"}) == 1.0
    assert retrieval_recall(trace, {"A", "Z"}) == 0.5
    assert retrieval_recall(trace, {"Y", "Z"}) == 0.0


def test_retrieval_recall_empty_gold_absent():
    assert retrieval_recall(context_trace(["A"]), frozenset()) is None


def test_retrieval_recall_reads_named_module():
    judge_step = TraceStep(module_id="judge", inputs={"context": "N/A"},
                           prediction=Prediction(outputs={}))
    answer_step = TraceStep(
        module_id="generate_answer",
        inputs={"context": passages_to_text([("Gold", "b")])},
        prediction=Prediction(outputs={}),
    )
    trace = Trace(steps=[answer_step, judge_step], final_prediction=Prediction(outputs={}))
    assert retrieval_recall(trace, {"Gold"}, context_module="generate_answer") == 1.0


# --- composite scores against a brute-force oracle ----------------------------

def quiz_oracle(fmt: bool, inc: bool, plausible: bool) -> float:
    booleans = [fmt, inc, plausible]
    return sum(map(float, booleans)) / 3.0 if fmt and inc else 0.0


def tweet_oracle(tags: bool, ans: bool, limit: bool, engaging: bool, faithful: bool) -> float:
    booleans = [tags, ans, limit, engaging, faithful]
    return sum(map(float, booleans)) / 5.0 if ans and limit else 0.0


def test_quiz_validity_oracle_sweep():
    rng = random.Random(0)
    for _ in range(200):
        fmt, inc, plausible = (rng.random() < 0.5 for _ in range(3))
        assert quiz_validity(fmt, inc, plausible) == pytest.approx(
            quiz_oracle(fmt, inc, plausible), abs=1e-12)


def test_tweet_quality_oracle_sweep():
    rng = random.Random(1)
    for _ in range(200):
        flags = tuple(rng.random() < 0.5 for _ in range(5))
        assert tweet_quality(*flags) == pytest.approx(tweet_oracle(*flags), abs=1e-12)


def test_gate_failures_default_to_zero():
    assert quiz_validity(False, True, True) == 0.0
    assert quiz_validity(True, False, True) == 0.0
    assert tweet_quality(True, False, True, True, True) == 0.0
    assert tweet_quality(True, True, False, True, True) == 0.0


def test_quiz_validity_partial():
    assert quiz_validity(True, True, False) == pytest.approx(2 / 3)
    assert quiz_validity(True, True, True) == 1.0


# --- citation metrics ----------------------------------------------------------

def test_citation_metrics_exact_gold():
    cm = citation_metrics("A [1]. B [2].", ["Gold1", "Gold2"], {"Gold1", "Gold2"},
                          faithful_flags=[True, True])
    assert cm == CitationMetrics(faithfulness=1.0, precision=1.0, recall=1.0)


def test_citation_metrics_half():
    cm = citation_metrics("A [1]. B [2].", ["Gold1", "Other"], {"Gold1", "Gold2"},
                          faithful_flags=[True, False])
    assert cm.precision == 0.5
    assert cm.recall == 0.5
    assert cm.faithfulness == 0.5


def test_citation_metrics_out_of_range_counts_against_precision():
    cm = citation_metrics("A [1]. B [9].", ["Gold1", "Gold2"], {"Gold1", "Gold2"},
                          faithful_flags=[True, False])
    # one valid gold citation plus one dangling marker
    assert cm.precision == 0.5
    assert cm.recall == 0.5
    assert cm.faithfulness == 0.5


def test_citation_metrics_no_citations():
    cm = citation_metrics("No markers here.", ["Gold1"], {"Gold1"})
    assert cm.precision is None
    assert cm.faithfulness is None
    assert cm.recall == 0.0


def test_dataset_loading(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text(
        '{"question": "Q1?", "answer": "A1", "gold_titles": ["T1", "T2"]}\n'
        '{"question": "Q2?", "answer": "A2", "gold_titles": []}\n'
    )
    examples = load_dataset(path)
    assert examples[0] == TaskExample(question="Q1?", answer="A1",
                                      gold_titles=frozenset({"T1", "T2"}))
    assert examples[1].gold_titles == frozenset()


def test_task_example_validation():
    with pytest.raises(ValueError):
        TaskExample(question="", answer="x")
