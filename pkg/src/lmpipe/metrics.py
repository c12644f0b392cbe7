"""Intrinsic and extrinsic evaluation metrics.

Intrinsic metrics measure conformance to the declared constraints (e.g. the
fraction of suggestion sites whose final attempt passed). Extrinsic metrics
measure downstream quality against gold labels: exact-match answers, retrieval
recall, citation precision/recall, and the gated composite scores.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .checks import cited_indices, normalize_answer
from .core import PASSED, Trace, titles_from_context


@dataclass(frozen=True)
class TaskExample:
    """One dataset record: a question, its gold answer, and gold passage titles."""

    question: str
    answer: str
    gold_titles: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not self.question or not self.answer:
            raise ValueError("question and answer must be nonempty")
        object.__setattr__(self, "gold_titles", frozenset(self.gold_titles))


def load_dataset(path: str | Path) -> list[TaskExample]:
    """One JSON record per line with fields {question, answer, gold_titles}."""
    examples = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                examples.append(TaskExample(
                    question=record["question"],
                    answer=record["answer"],
                    gold_titles=frozenset(record.get("gold_titles", [])),
                ))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"bad dataset record at {path}:{lineno}: {exc}") from exc
    return examples


@dataclass
class MetricReport:
    """Per-metric means over an evaluated set, plus the raw per-example rows."""

    strategy: str
    task: str
    n_examples: int
    metrics: dict[str, float] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)


def answer_em(prediction_text: str, gold: str) -> float:
    """Normalized exact match: 1.0 or 0.0."""
    return 1.0 if normalize_answer(prediction_text) == normalize_answer(gold) else 0.0


def suggestions_passed(trace: Trace) -> tuple[float, bool]:
    """Fraction of suggestion sites whose final-attempt disposition is passed.

    Only the last run of the self-refinement loop at each site counts. With no
    suggestion sites the value is vacuously 1.0, flagged by the second element.
    """
    sites = trace.outcomes_by_site()
    suggest_sites = [
        outcomes for outcomes in sites.values() if outcomes[0].decl.kind == "suggest"
    ]
    if not suggest_sites:
        return 1.0, True
    passed = sum(1 for outcomes in suggest_sites if outcomes[-1].disposition == PASSED)
    return passed / len(suggest_sites), False


def final_label_outcomes(trace: Trace) -> dict[str, list[bool]]:
    """Final-attempt pass/fail per constraint label, in site order.

    A label guarding several sites (one per loop iteration, say) contributes
    one boolean per site.
    """
    results: dict[str, list[bool]] = {}
    for outcomes in trace.outcomes_by_site().values():
        last = outcomes[-1]
        results.setdefault(last.decl.label, []).append(last.disposition == PASSED)
    return results


def retrieval_recall(
    trace: Trace, gold_titles: frozenset[str] | set[str], context_module: Optional[str] = None
) -> Optional[float]:
    """Fraction of gold titles present in the final retrieved context.

    The context is read from the inputs of the last step (of ``context_module``
    when given; judge steps also consume a ``context`` input, so retrieval
    tasks name the module that sees the real final context). Returns None when
    there are no gold titles.
    """
    if not gold_titles:
        return None
    context_text = None
    for step in reversed(trace.steps):
        if context_module is not None and step.module_id != context_module:
            continue
        if "context" in step.inputs:
            context_text = step.inputs["context"]
            break
    if context_text is None:
        return 0.0
    retrieved = set(titles_from_context(context_text))
    return len(retrieved & set(gold_titles)) / len(gold_titles)


def quiz_validity(format_ok: bool, answer_included: bool, plausible: bool) -> float:
    """Mean of the three intrinsic booleans, gated: 0 unless format and inclusion hold."""
    if not (format_ok and answer_included):
        return 0.0
    return (float(format_ok) + float(answer_included) + float(plausible)) / 3.0


def tweet_quality(
    no_hashtags: bool, has_answer: bool, within_limit: bool, engaging: bool, faithful: bool
) -> float:
    """Mean of the five intrinsic booleans, gated: 0 unless the tweet has the
    answer and fits the length limit."""
    if not (has_answer and within_limit):
        return 0.0
    values = (no_hashtags, has_answer, within_limit, engaging, faithful)
    return sum(float(v) for v in values) / 5.0


@dataclass(frozen=True)
class CitationMetrics:
    faithfulness: Optional[float]
    precision: Optional[float]
    recall: float


def citation_metrics(
    paragraph: str,
    context_titles: Sequence[str],
    gold_titles: frozenset[str] | set[str],
    faithful_flags: Optional[Sequence[bool]] = None,
) -> CitationMetrics:
    """Map [k] markers to the k-th context passage title (1-based) and score.

    Precision counts distinct cited titles against gold; an out-of-range k is
    an incorrect citation. Recall covers gold titles. ``faithful_flags`` are
    the per-citation judged booleans (out-of-range citations must already be
    False there); their mean is the faithfulness score. With no citations,
    precision and faithfulness are absent and recall is 0.
    """
    ks = cited_indices(paragraph)
    if not ks:
        recall = 0.0 if gold_titles else 0.0
        return CitationMetrics(faithfulness=None, precision=None, recall=recall)
    cited_titles = set()
    valid = 0
    for k in ks:
        if 1 <= k <= len(context_titles):
            cited_titles.add(context_titles[k - 1])
            valid += 1
    gold = set(gold_titles)
    hits = len(cited_titles & gold)
    # every distinct in-range title counts once; each out-of-range marker counts
    # as one incorrect citation
    out_of_range = len(ks) - valid
    denominator = len(cited_titles) + out_of_range
    precision = hits / denominator if denominator else None
    recall = hits / len(gold) if gold else 0.0
    faithfulness = None
    if faithful_flags is not None and len(faithful_flags) > 0:
        faithfulness = sum(1.0 for flag in faithful_flags if flag) / len(faithful_flags)
    return CitationMetrics(faithfulness=faithfulness, precision=precision, recall=recall)


def mean_of(values: Iterable[Optional[float]]) -> Optional[float]:
    """Mean over the non-absent values; None when every value is absent."""
    present = [v for v in values if v is not None]
    if not present:
        return None
    return sum(present) / len(present)


def summarize_rows(rows: Sequence[Mapping[str, object]], metric_names: Sequence[str]) -> dict[str, float]:
    """Column means over per-example rows, skipping absent values."""
    summary = {}
    for name in metric_names:
        value = mean_of(
            [row.get(name) if isinstance(row.get(name), (int, float)) else None for row in rows]
        )
        if value is not None:
            summary[name] = value
    return summary
