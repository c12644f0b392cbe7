"""The bundled task programs and their constraints.

Four question-answering variants over the same corpus:

* multihop  -- two query/retrieve hops, then a short answer; suggestions keep
               queries short (< 100 chars) and distinct from earlier queries.
* longform  -- two hops, then a cited paragraph; suggestions require citations
               every 1-2 sentences and per-citation faithfulness (LM-judged).
* quiz      -- answer-choice generation; suggestions require JSON formatting,
               inclusion of the correct answer, and plausible distractors
               (LM-judged).
* tweet     -- two hops with per-hop query modules and context deduplication,
               then a tweet; suggestions cover hashtags, length, answer
               inclusion, engagement and faithfulness (the last two LM-judged).

Each program carries a primitive and a complete instruction variant; the
complete one spells out the constraints the suggestions encode.
"""

from __future__ import annotations

from typing import Optional

from .checks import (
    citations_check,
    format_checker,
    get_lines_and_citations,
    has_correct_answer,
    has_no_hashtags,
    is_assessment_yes,
    is_correct_answer_included,
    is_query_distinct,
    is_within_length_limit,
)
from .core import Prediction, passages_to_text
from .modules import PredictModule, chain_of_thought, parse_signature
from .retrieval import RetrieverIndex, deduplicate, retrieve
from .runtime import (
    BACKTRACK_DEFAULT,
    DISABLE_ALL,
    ExecutionContext,
    Program,
    RunResult,
    RuntimeConfig,
    run_with_backtracking,
)

PASSAGES_PER_HOP = 3
HOPS = 2
TWEET_LIMIT = 280
QUERY_LENGTH_LIMIT = 100
DEFAULT_CHOICE_COUNT = 4

QUERY_LENGTH_MESSAGE = "Query should be less than 100 characters"

PRIMITIVE = "primitive"
COMPLETE = "complete"

INSTRUCTIONS = {
    "multihop": {
        "query": {
            PRIMITIVE: "Write a simple search query that will help answer a complex question.",
            COMPLETE: (
                "Write a simple search query that will help answer a complex question. "
                "Keep the query under 100 characters and distinct from earlier queries."
            ),
        },
        "answer": {
            PRIMITIVE: "Answer questions with short factoid answers.",
            COMPLETE: "Answer questions with short factoid answers.",
        },
    },
    "longform": {
        "query": {
            PRIMITIVE: "Write a simple search query that will help answer a complex question.",
            COMPLETE: (
                "Write a simple search query that will help answer a complex question. "
                "Keep the query under 100 characters and distinct from earlier queries."
            ),
        },
        "paragraph": {
            PRIMITIVE: "Write a paragraph that answers the question using the context.",
            COMPLETE: (
                "Write a paragraph that answers the question using the context, citing "
                "passages as [k] after every 1-2 sentences and staying faithful to the "
                "cited text."
            ),
        },
    },
    "quiz": {
        "choices": {
            PRIMITIVE: "Generate answer choices for the specified question.",
            COMPLETE: (
                "Generate answer choices in JSON format that include the correct answer "
                "and plausible distractors for the specified question."
            ),
        },
    },
    "tweet": {
        "query": {
            PRIMITIVE: "Write a simple search query that will help answer a complex question.",
            COMPLETE: "Write a simple search query that will help answer a complex question.",
        },
        "tweet": {
            PRIMITIVE: "Generate a tweet that effectively answers a question.",
            COMPLETE: (
                "Generate an engaging tweet that effectively answers a question staying "
                "faithful to the context, is less than 280 characters, and has no hashtags."
            ),
        },
    },
}

JUDGE_INSTRUCTIONS = "Assess the quality of a text along the specified dimension."

PLAUSIBILITY_QUESTION = (
    "Are the distractors in the answer choices plausible and not easily identifiable "
    "as incorrect?"
)
ENGAGING_QUESTION = (
    "Does the assessed text make for a self-contained, engaging tweet? Say no if it "
    "is not engaging."
)
FAITHFUL_QUESTION = (
    "Is the assessed text grounded in the context? Say no if it includes significant "
    "facts not in the context."
)


def _judge_module(module_id: str, spec: str) -> PredictModule:
    return PredictModule(
        module_id=module_id,
        signature=parse_signature(spec, instructions=JUDGE_INSTRUCTIONS),
    )


class MultiHopQA(Program):
    def __init__(self, index: RetrieverIndex, instruction_variant: str = COMPLETE):
        super().__init__()
        self.index = index
        self.generate_query = self.register(chain_of_thought(
            "context, question -> query", module_id="generate_query",
            instructions=INSTRUCTIONS["multihop"]["query"][instruction_variant],
        ))
        self.generate_answer = self.register(chain_of_thought(
            "context, question -> answer", module_id="generate_answer",
            instructions=INSTRUCTIONS["multihop"]["answer"][instruction_variant],
        ))

    def forward(self, ctx: ExecutionContext, question: str) -> Prediction:
        context, queries = [], [question]
        for _hop in range(HOPS):
            pred = ctx.call(self.generate_query,
                            context=passages_to_text(context), question=question)
            query = pred.outputs["query"]
            ctx.suggest(len(query) < QUERY_LENGTH_LIMIT, QUERY_LENGTH_MESSAGE,
                        label="query_length")
            ctx.suggest(is_query_distinct(query, queries),
                        f"Query should be distinct from {queries}",
                        label="query_distinct")
            context += retrieve(self.index, query, PASSAGES_PER_HOP)
            queries.append(query)
        ctx.meta["context_passages"] = [(p.title, p.text) for p in context]
        ctx.meta["queries"] = queries[1:]
        return ctx.call(self.generate_answer,
                        context=passages_to_text(context), question=question)


class LongFormQA(Program):
    def __init__(self, index: RetrieverIndex, instruction_variant: str = COMPLETE):
        super().__init__()
        self.index = index
        self.generate_query = self.register(chain_of_thought(
            "context, question -> query", module_id="generate_query",
            instructions=INSTRUCTIONS["longform"]["query"][instruction_variant],
        ))
        self.generate_cited_paragraph = self.register(chain_of_thought(
            "context, question -> paragraph", module_id="generate_cited_paragraph",
            instructions=INSTRUCTIONS["longform"]["paragraph"][instruction_variant],
        ))
        self.faithfulness_judge = _judge_module(
            "faithfulness_judge", "context, assessed_text, assessment_question -> assessment_answer"
        )

    def forward(self, ctx: ExecutionContext, question: str) -> Prediction:
        context = []
        for _hop in range(HOPS):
            pred = ctx.call(self.generate_query,
                            context=passages_to_text(context), question=question)
            context += retrieve(self.index, pred.outputs["query"], PASSAGES_PER_HOP)
        ctx.meta["context_passages"] = [(p.title, p.text) for p in context]
        pred = ctx.call(self.generate_cited_paragraph,
                        context=passages_to_text(context), question=question)
        paragraph = pred.outputs["paragraph"]
        ctx.suggest(citations_check(paragraph),
                    "Every 1-2 sentences should have citations: 'text... [x].'",
                    label="citations_format")
        for line, k in get_lines_and_citations(paragraph):
            if not 1 <= k <= len(context):
                # a citation pointing outside the context cannot be checked;
                # it counts as an unfaithful pair
                ctx.suggest(False,
                            f"Your output cites [{k}], which is not in the context.",
                            label="citation_faithful")
                continue
            cited = passages_to_text([context[k - 1]])
            verdict = ctx.call(self.faithfulness_judge, context=cited,
                               assessed_text=line, assessment_question=FAITHFUL_QUESTION)
            ctx.suggest(is_assessment_yes(verdict.outputs["assessment_answer"]),
                        f"Your output should be based on the context: '{cited}'.",
                        label="citation_faithful")
        return pred


class QuizGen(Program):
    def __init__(self, instruction_variant: str = COMPLETE,
                 number_of_choices: int = DEFAULT_CHOICE_COUNT):
        super().__init__()
        self.number_of_choices = number_of_choices
        self.generate_choices = self.register(chain_of_thought(
            "question, correct_answer, number_of_choices -> answer_choices",
            module_id="generate_choices",
            instructions=INSTRUCTIONS["quiz"]["choices"][instruction_variant],
        ))
        self.plausibility_judge = _judge_module(
            "plausibility_judge", "question, answer_choices, assessment_question -> assessment_answer"
        )

    def forward(self, ctx: ExecutionContext, question: str, answer: str) -> Prediction:
        pred = ctx.call(self.generate_choices, question=question, correct_answer=answer,
                        number_of_choices=str(self.number_of_choices))
        choices = pred.outputs["answer_choices"]
        ctx.suggest(format_checker(choices),
                    "The format of the answer choices should be in JSON format. "
                    "Please revise accordingly.",
                    label="format")
        ctx.suggest(is_correct_answer_included(answer, choices),
                    "The answer choices do not include the correct answer to the question. "
                    "Please revise accordingly.",
                    label="has_answer")
        verdict = ctx.call(self.plausibility_judge, question=question,
                           answer_choices=choices, assessment_question=PLAUSIBILITY_QUESTION)
        ctx.suggest(is_assessment_yes(verdict.outputs["assessment_answer"]),
                    "The answer choices are not plausible distractors or are too easily "
                    "identifiable as incorrect. Please revise to provide more challenging "
                    "and plausible distractors.",
                    label="plausible")
        return pred


class TweetGen(Program):
    def __init__(self, index: RetrieverIndex, instruction_variant: str = COMPLETE):
        super().__init__()
        self.index = index
        # one query module per hop; each can carry its own demos
        self.query_modules = [
            self.register(chain_of_thought(
                "context, question -> query", module_id=f"generate_query_{hop}",
                instructions=INSTRUCTIONS["tweet"]["query"][instruction_variant],
            ))
            for hop in range(HOPS)
        ]
        self.generate_tweet = self.register(chain_of_thought(
            "question, context -> tweet", module_id="generate_tweet",
            instructions=INSTRUCTIONS["tweet"]["tweet"][instruction_variant],
        ))
        self.engaging_judge = _judge_module(
            "engaging_judge", "context, assessed_text, assessment_question -> assessment_answer"
        )
        self.faithful_judge = _judge_module(
            "faithful_judge", "context, assessed_text, assessment_question -> assessment_answer"
        )

    def forward(self, ctx: ExecutionContext, question: str, answer: str) -> Prediction:
        context = []
        for hop in range(HOPS):
            pred = ctx.call(self.query_modules[hop],
                            context=passages_to_text(context), question=question)
            passages = retrieve(self.index, pred.outputs["query"], PASSAGES_PER_HOP)
            context = deduplicate(context + passages)
        ctx.meta["context_passages"] = [(p.title, p.text) for p in context]
        context_text = passages_to_text(context)
        pred = ctx.call(self.generate_tweet, question=question, context=context_text)
        tweet = pred.outputs["tweet"]
        ctx.suggest(has_no_hashtags(tweet),
                    "Please revise the tweet to remove hashtag phrases following it.",
                    label="no_hashtags")
        ctx.suggest(is_within_length_limit(tweet, TWEET_LIMIT),
                    f"Please ensure the tweet is within {TWEET_LIMIT} characters.",
                    label="within_limit")
        ctx.suggest(has_correct_answer(tweet, answer),
                    "The tweet does not include the correct answer to the question. "
                    "Please revise accordingly.",
                    label="has_answer")
        engaging = ctx.call(self.engaging_judge, context=context_text,
                            assessed_text=tweet, assessment_question=ENGAGING_QUESTION)
        ctx.suggest(is_assessment_yes(engaging.outputs["assessment_answer"]),
                    "The text is not engaging enough. Please revise to make it more "
                    "captivating.",
                    label="engaging")
        faithful = ctx.call(self.faithful_judge, context="N/A",
                            assessed_text=tweet, assessment_question=FAITHFUL_QUESTION)
        ctx.suggest(is_assessment_yes(faithful.outputs["assessment_answer"]),
                    "The text contains unfaithful elements or significant facts not in "
                    "the context. Please revise for accuracy.",
                    label="faithful")
        return pred


TASK_NAMES = ("multihop", "longform", "quiz", "tweet")

# which module's step carries the final retrieval context, per task
CONTEXT_MODULE = {
    "multihop": "generate_answer",
    "longform": "generate_cited_paragraph",
    "tweet": "generate_tweet",
}


def build_program(task: str, index: Optional[RetrieverIndex] = None,
                  instruction_variant: str = COMPLETE) -> Program:
    if task == "multihop":
        return MultiHopQA(index, instruction_variant)
    if task == "longform":
        return LongFormQA(index, instruction_variant)
    if task == "quiz":
        return QuizGen(instruction_variant)
    if task == "tweet":
        return TweetGen(index, instruction_variant)
    raise ValueError(f"unknown task {task!r}; expected one of {TASK_NAMES}")


def task_inputs(task: str, question: str, answer: str) -> dict[str, str]:
    """The forward() arguments one dataset example supplies for a task."""
    if task in ("quiz", "tweet"):
        return {"question": question, "answer": answer}
    return {"question": question}


def _runtime_config(use_assertions: bool, max_retries: int = 2) -> RuntimeConfig:
    policy = BACKTRACK_DEFAULT if use_assertions else DISABLE_ALL
    return RuntimeConfig(max_retries=max_retries, handler_policy=policy)


def multihop_qa(program: MultiHopQA, question: str, use_assertions: bool,
                backend=None, max_retries: int = 2) -> RunResult:
    return run_with_backtracking(program, {"question": question},
                                 _runtime_config(use_assertions, max_retries), backend)


def longform_qa(program: LongFormQA, question: str, use_assertions: bool,
                backend=None, max_retries: int = 2) -> RunResult:
    return run_with_backtracking(program, {"question": question},
                                 _runtime_config(use_assertions, max_retries), backend)


def quiz_gen(program: QuizGen, question: str, answer: str, use_assertions: bool,
             backend=None, max_retries: int = 2) -> RunResult:
    return run_with_backtracking(program, {"question": question, "answer": answer},
                                 _runtime_config(use_assertions, max_retries), backend)


def tweet_gen(program: TweetGen, question: str, answer: str, use_assertions: bool,
              backend=None, max_retries: int = 2) -> RunResult:
    return run_with_backtracking(program, {"question": question, "answer": answer},
                                 _runtime_config(use_assertions, max_retries), backend)
