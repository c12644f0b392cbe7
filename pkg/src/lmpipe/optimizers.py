"""Few-shot compilation.

`bootstrap_few_shot` runs the program as its own teacher over the training
set and harvests per-module input/output pairs from runs whose final metric
passes. With teacher assertions active, a run only qualifies when every
constraint site ultimately passed, so harvested demos are guaranteed to obey
the intermediate constraints too. Recovered failures can additionally be kept
as counterexamples: the failed output, the instruction that fixed it, and the
corrected output, rendered into prompts ahead of the ordinary demos.

`random_search_compile` builds several candidates under different training
orders and keeps the one scoring best on the validation set.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

from .core import Counterexample, Example, PASSED, RETRIED, Trace, payload_field
from .metrics import TaskExample
from .runtime import (
    BACKTRACK_DEFAULT,
    DISABLE_ALL,
    Program,
    RunResult,
    RuntimeConfig,
    run_with_backtracking,
)

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = 1

# metric(example, prediction, trace) -> bool | float
Metric = Callable[[TaskExample, object, Trace], object]

DemoSet = dict[str, list[Example]]

COUNTEREXAMPLES_PER_MODULE = 1


@dataclass(frozen=True)
class CompileConfig:
    max_bootstrapped_demos: int = 2
    num_candidates: int = 6
    rng_seed: int = 0
    teacher_assertions: bool = False
    collect_counterexamples: bool = False
    max_retries: int = 2

    def __post_init__(self) -> None:
        if self.max_bootstrapped_demos < 0:
            raise ValueError("max_bootstrapped_demos must be >= 0")
        if self.num_candidates < 1:
            raise ValueError("num_candidates must be >= 1")


def _metric_passes(value: object) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return value > 0
    return bool(value)


def _final_steps(trace: Trace) -> list:
    """The steps that produced the final prediction: the last attempt per position."""
    latest = {}
    for step in trace.steps:
        latest[step.position] = step
    return [latest[pos] for pos in sorted(latest)]


def _all_sites_ultimately_passed(trace: Trace) -> bool:
    return all(
        outcomes[-1].disposition == PASSED for outcomes in trace.outcomes_by_site().values()
    )


def collect_counterexamples(
    traces: Sequence[Trace], payload_fields: Optional[dict[str, str]] = None
) -> list[Counterexample]:
    """One counterexample per site that failed at least once and then passed.

    ``payload_fields`` maps module id to the output field the constraint spoke
    about; without it the last output field of the recorded prediction is used.
    """
    found = []
    for trace in traces:
        steps_by_pos: dict[int, dict[int, object]] = {}
        for step in trace.steps:
            steps_by_pos.setdefault(step.position, {})[step.attempt] = step
        for outcomes in trace.outcomes_by_site().values():
            if outcomes[-1].disposition != PASSED:
                continue
            retried = [o for o in outcomes if o.disposition == RETRIED]
            if not retried:
                continue
            first_failure = retried[0]
            final = outcomes[-1]
            module_id = final.target_module
            attempts = None
            for steps in steps_by_pos.values():
                sample = next(iter(steps.values()))
                if sample.module_id == module_id and first_failure.attempt in steps:
                    attempts = steps
                    break
            if attempts is None:
                continue
            failed_step = attempts[first_failure.attempt]
            fixed_step = attempts[final.attempt]
            field_name = None
            if payload_fields:
                field_name = payload_fields.get(module_id)
            if field_name is None:
                for name in fixed_step.prediction.outputs:
                    field_name = name  # predictions key outputs in signature order
            found.append(Counterexample(
                module_id=module_id,
                failed_output=failed_step.prediction.outputs.get(field_name, ""),
                message=first_failure.decl.message,
                corrected_output=fixed_step.prediction.outputs.get(field_name, ""),
            ))
    return found


def bootstrap_few_shot(
    program: Program,
    trainset: Sequence[TaskExample],
    metric: Metric,
    config: CompileConfig = CompileConfig(),
    backend=None,
    run_example: Optional[Callable[[Program, TaskExample, RuntimeConfig, object], RunResult]] = None,
) -> Program:
    """Compile the program by harvesting demos from its own passing runs.

    ``run_example`` executes one training example; the default calls the
    program with the example's question. Teacher and student share `backend`.
    """
    compiled = program.clone()
    policy = BACKTRACK_DEFAULT if config.teacher_assertions else DISABLE_ALL
    teacher_config = RuntimeConfig(max_retries=config.max_retries, handler_policy=policy)
    if run_example is None:
        run_example = _default_run_example

    demos: DemoSet = {module_id: [] for module_id in compiled.modules}
    counterexamples: dict[str, list[Counterexample]] = {m: [] for m in compiled.modules}
    harvested_any = False
    for example in trainset:
        if all(len(d) >= config.max_bootstrapped_demos for d in demos.values()):
            break
        result = run_example(program, example, teacher_config, backend)
        if result.halted or result.prediction is None:
            continue
        value = metric(example, result.prediction, result.trace)
        if not _metric_passes(value):
            continue
        if config.teacher_assertions and not _all_sites_ultimately_passed(result.trace):
            continue
        harvested_any = True
        for step in _final_steps(result.trace):
            if step.module_id not in demos:
                continue  # auxiliary predictors (judges) never carry demos
            if len(demos[step.module_id]) >= config.max_bootstrapped_demos:
                continue
            module = compiled.modules[step.module_id]
            values = dict(step.inputs)
            values.update(step.prediction.outputs)
            input_names = frozenset(f.name for f in module.signature.input_fields)
            demos[step.module_id].append(Example(values=values, input_keys=input_names))
        if config.collect_counterexamples:
            payload_names = {
                mid: payload_field(mod.signature).name for mid, mod in compiled.modules.items()
            }
            for ce in collect_counterexamples([result.trace], payload_fields=payload_names):
                bucket = counterexamples.get(ce.module_id)
                if bucket is not None and len(bucket) < COUNTEREXAMPLES_PER_MODULE:
                    bucket.append(ce)

    if not harvested_any:
        logger.warning("bootstrap harvested no demonstrations; compiled program has none")
    for module_id, module in compiled.modules.items():
        module.demos = list(demos[module_id])
        module.counterexamples = list(counterexamples[module_id])
    return compiled


def _default_run_example(program: Program, example: TaskExample, config: RuntimeConfig, backend) -> RunResult:
    return run_with_backtracking(program, {"question": example.question}, config, backend)


@dataclass
class CandidateReport:
    index: int
    score: float
    demo_counts: dict[str, int]


@dataclass
class SearchReport:
    rng_seed: int
    candidates: list[CandidateReport]
    best_index: int

    def to_dict(self) -> dict:
        return {
            "version": ARTIFACT_VERSION,
            "rng_seed": self.rng_seed,
            "best_index": self.best_index,
            "candidates": [
                {"index": c.index, "score": c.score, "demo_counts": c.demo_counts}
                for c in self.candidates
            ],
        }


def random_search_compile(
    program: Program,
    trainset: Sequence[TaskExample],
    valset: Sequence[TaskExample],
    metric: Metric,
    config: CompileConfig = CompileConfig(),
    backend=None,
    run_example: Optional[Callable] = None,
) -> tuple[Program, SearchReport]:
    """Bootstrap ``num_candidates`` variants under seeded shuffles and keep the
    one with the best mean validation metric (ties: lowest candidate index).

    Candidates are scored with constraints recorded but never retried, so the
    extrinsic metric alone drives selection.
    """
    if not valset:
        raise ValueError("valset must be nonempty")
    if run_example is None:
        run_example = _default_run_example
    eval_config = RuntimeConfig(max_retries=config.max_retries, handler_policy=DISABLE_ALL)

    rng = random.Random(config.rng_seed)
    candidates: list[tuple[float, Program]] = []
    reports: list[CandidateReport] = []
    for index in range(config.num_candidates):
        order = list(trainset)
        rng.shuffle(order)
        compiled = bootstrap_few_shot(
            program, order, metric, config=config, backend=backend, run_example=run_example
        )
        scores = []
        for example in valset:
            result = run_example(compiled, example, eval_config, backend)
            if result.halted or result.prediction is None:
                scores.append(0.0)
                continue
            value = metric(example, result.prediction, result.trace)
            scores.append(float(value))
        score = sum(scores) / len(scores)
        candidates.append((score, compiled))
        reports.append(CandidateReport(
            index=index,
            score=score,
            demo_counts={m: len(mod.demos) for m, mod in compiled.modules.items()},
        ))
    best_index = max(range(len(candidates)), key=lambda i: (candidates[i][0], -i))
    report = SearchReport(rng_seed=config.rng_seed, candidates=reports, best_index=best_index)
    return candidates[best_index][1], report


def compiled_program_to_dict(program: Program, task: str, config: CompileConfig) -> dict:
    modules = {}
    for module_id, module in program.modules.items():
        modules[module_id] = {
            "instructions": module.signature.instructions,
            "demos": [
                {"values": dict(demo.values), "input_keys": sorted(demo.input_keys)}
                for demo in module.demos
            ],
            "counterexamples": [
                {
                    "module_id": ce.module_id,
                    "failed_output": ce.failed_output,
                    "message": ce.message,
                    "corrected_output": ce.corrected_output,
                }
                for ce in module.counterexamples
            ],
        }
    return {
        "version": ARTIFACT_VERSION,
        "task": task,
        "compile_config": {
            "max_bootstrapped_demos": config.max_bootstrapped_demos,
            "num_candidates": config.num_candidates,
            "rng_seed": config.rng_seed,
            "teacher_assertions": config.teacher_assertions,
            "collect_counterexamples": config.collect_counterexamples,
            "max_retries": config.max_retries,
        },
        "modules": modules,
    }


def save_compiled_program(program: Program, task: str, config: CompileConfig, path: str | Path) -> None:
    payload = compiled_program_to_dict(program, task, config)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, ensure_ascii=False, sort_keys=True)
        handle.write("\n")


def load_compiled_program(program: Program, path: str | Path) -> tuple[Program, str]:
    """Attach a saved artifact's demos/counterexamples/instructions to a fresh program."""
    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    version = data.get("version")
    if version != ARTIFACT_VERSION:
        raise ValueError(
            f"artifact version mismatch: file has {version}, supported is {ARTIFACT_VERSION}"
        )
    loaded = program.clone()
    for module_id, spec in data["modules"].items():
        if module_id not in loaded.modules:
            raise ValueError(f"artifact names unknown module {module_id!r}")
        module = loaded.modules[module_id]
        module.signature = module.signature.with_instructions(spec["instructions"])
        module.demos = [
            Example(values=d["values"], input_keys=frozenset(d["input_keys"]))
            for d in spec["demos"]
        ]
        module.counterexamples = [
            Counterexample(
                module_id=c["module_id"],
                failed_output=c["failed_output"],
                message=c["message"],
                corrected_output=c["corrected_output"],
            )
            for c in spec["counterexamples"]
        ]
    return loaded, data["task"]
