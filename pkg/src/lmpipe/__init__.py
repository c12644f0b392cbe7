"""Declarative LM pipelines with checked constraints, self-refining retries,
and few-shot compilation."""

from .backend import (
    CachingBackend,
    EndpointConfig,
    GenerationParams,
    HTTPBackend,
    ScriptEntry,
    ScriptedBackend,
    UnscriptedPromptError,
    load_script,
    save_script,
)
from .core import (
    ConstraintDecl,
    ConstraintOutcome,
    Counterexample,
    Example,
    FieldSpec,
    Prediction,
    Signature,
    Trace,
    TraceStep,
    parse_signature,
    passages_to_text,
    prepend_output_field,
    render_prompt,
)
from .metrics import MetricReport, TaskExample, answer_em, retrieval_recall, suggestions_passed
from .modules import PredictModule, chain_of_thought, parse_completion, predict
from .optimizers import (
    CompileConfig,
    bootstrap_few_shot,
    collect_counterexamples,
    load_compiled_program,
    random_search_compile,
    save_compiled_program,
)
from .retrieval import Passage, RetrieverIndex, deduplicate, load_corpus, retrieve
from .runtime import (
    AssertionHalt,
    ExecutionContext,
    Program,
    RetryState,
    RunResult,
    RuntimeConfig,
    apply_handler,
    check_constraint,
    run_with_backtracking,
    wrap_retry,
)
from .tasks import LongFormQA, MultiHopQA, QuizGen, TweetGen, build_program

__version__ = "0.1.0"

__all__ = [
    "AssertionHalt",
    "CachingBackend",
    "CompileConfig",
    "ConstraintDecl",
    "ConstraintOutcome",
    "Counterexample",
    "EndpointConfig",
    "Example",
    "ExecutionContext",
    "FieldSpec",
    "GenerationParams",
    "HTTPBackend",
    "LongFormQA",
    "MetricReport",
    "MultiHopQA",
    "Passage",
    "Prediction",
    "PredictModule",
    "Program",
    "QuizGen",
    "RetrieverIndex",
    "RetryState",
    "RunResult",
    "RuntimeConfig",
    "ScriptEntry",
    "ScriptedBackend",
    "Signature",
    "TaskExample",
    "Trace",
    "TraceStep",
    "TweetGen",
    "UnscriptedPromptError",
    "answer_em",
    "apply_handler",
    "bootstrap_few_shot",
    "build_program",
    "chain_of_thought",
    "check_constraint",
    "collect_counterexamples",
    "deduplicate",
    "load_compiled_program",
    "load_corpus",
    "load_script",
    "parse_completion",
    "parse_signature",
    "passages_to_text",
    "predict",
    "prepend_output_field",
    "random_search_compile",
    "render_prompt",
    "retrieval_recall",
    "retrieve",
    "run_with_backtracking",
    "save_compiled_program",
    "save_script",
    "suggestions_passed",
    "wrap_retry",
]
