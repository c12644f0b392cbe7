"""Hard and soft constraints with retrying, backtracking execution.

A constraint evaluation does exactly one of four things:

* condition true            -> continue, retry count reset to 0
* false and r < R           -> retry: control returns to the backtrack target
                               with the failure and message added to its prompt
* false, r >= R, assert     -> halt the run with the constraint's message
* false, r >= R, suggest    -> log a warning, reset the count, keep going

R is the per-site retry budget (default 2). Retry counters are scoped per
constraint site; a site is one evaluation slot within a forward pass, so the
second hop of a loop is a fresh site with a fresh budget.

The engine re-runs the program's forward pass to hand control back to a
failing module. A journal of the previous pass lets completed work replay
without re-recording trace steps or re-invoking the backend; everything at
and after the backtrack target re-executes fresh, which rolls back any
downstream state the discarded attempt produced.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Optional

from .backend import BackendError, stable_digest
from .core import (
    FAILED,
    HALTED,
    PASSED,
    RETRIED,
    WARNED,
    ConstraintDecl,
    ConstraintOutcome,
    Prediction,
    Trace,
    TraceStep,
    payload_field,
)
from .modules import PredictModule, parse_completion

logger = logging.getLogger(__name__)

TRACE_VERSION = 1

BACKTRACK_DEFAULT = "backtrack_default"
SUPPRESS_ASSERT_LOG = "suppress_assert_log"
DISABLE_ALL = "disable_all"
BYPASS_SUGGEST_ONLY = "bypass_suggest_only"

HANDLER_POLICIES = (BACKTRACK_DEFAULT, SUPPRESS_ASSERT_LOG, DISABLE_ALL, BYPASS_SUGGEST_ONLY)

# Generous bound on forward passes; per-site budgets already force termination
# for deterministic backends, this only guards pathological programs.
_MAX_PASSES = 10_000


@dataclass(frozen=True)
class RetryState:
    """Retry bookkeeping for one constraint site: count r and the failures so far."""

    module_id: str = ""
    r: int = 0
    past_failures: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if self.r < 0:
            raise ValueError("retry count must be >= 0")
        if len(self.past_failures) != self.r:
            raise ValueError("past_failures length must equal the retry count")

    def reset(self) -> "RetryState":
        return RetryState(module_id=self.module_id)

    def extended(self, failed_output: str, message: str) -> "RetryState":
        return RetryState(
            module_id=self.module_id,
            r=self.r + 1,
            past_failures=self.past_failures + ((failed_output, message),),
        )


@dataclass(frozen=True)
class RuntimeConfig:
    max_retries: int = 2
    handler_policy: str = BACKTRACK_DEFAULT

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.handler_policy not in HANDLER_POLICIES:
            raise ValueError(f"unknown handler policy {self.handler_policy!r}")


# Transition actions: the disposition the evaluation records.
CONTINUE = PASSED
RETRY = RETRIED
HALT = HALTED
WARN = WARNED
RECORD_FAILED = FAILED


@dataclass(frozen=True)
class Transition:
    action: str
    state: RetryState


def check_constraint(
    decl: ConstraintDecl,
    state: RetryState,
    config: RuntimeConfig,
    failed_output: str = "",
) -> Transition:
    """Apply the transition rules (adjusted by the handler policy) to one evaluation."""
    if state.r > config.max_retries:
        raise ValueError(f"retry count {state.r} exceeds budget {config.max_retries}")
    if decl.passed:
        return Transition(CONTINUE, state.reset())
    policy = config.handler_policy
    if policy == DISABLE_ALL:
        return Transition(RECORD_FAILED, state.reset())
    if policy == BYPASS_SUGGEST_ONLY and decl.kind == "suggest":
        return Transition(WARN, state.reset())
    if state.r < config.max_retries:
        return Transition(RETRY, state.extended(failed_output, decl.message))
    if decl.kind == "assert":
        if policy == SUPPRESS_ASSERT_LOG:
            return Transition(RECORD_FAILED, state.reset())
        return Transition(HALT, state.reset())
    return Transition(WARN, state.reset())


class AssertionHalt(RuntimeError):
    """An assert constraint exhausted its retries; the run stops here."""

    def __init__(self, message: str):
        super().__init__(message)
        self.constraint_message = message


class _Backtrack(Exception):
    def __init__(self, site: int, target_pos: int):
        self.site = site
        self.target_pos = target_pos


class Program:
    """Base class for pipelines: register modules, then implement forward(ctx, ...).

    Registered modules are the backtrack-eligible, demo-carrying parts of the
    program. Auxiliary predictors (e.g. LM judges inside constraint checks)
    stay unregistered: they are still traced but never become retry targets.
    """

    def __init__(self) -> None:
        self.modules: dict[str, PredictModule] = {}
        self.handler_policy: Optional[str] = None

    def register(self, module: PredictModule) -> PredictModule:
        if module.module_id in self.modules:
            raise ValueError(f"duplicate module id {module.module_id!r}")
        self.modules[module.module_id] = module
        return module

    def forward(self, ctx: "ExecutionContext", **inputs: str) -> Prediction:
        raise NotImplementedError

    def clone(self) -> "Program":
        return copy.deepcopy(self)


def apply_handler(policy: str, program: Program) -> Program:
    """Return a copy of the program pinned to the given handler policy."""
    if policy not in HANDLER_POLICIES:
        raise ValueError(f"unknown handler policy {policy!r}")
    clone = program.clone()
    clone.handler_policy = policy
    return clone


class RetryModule:
    """Wrapper that feeds a retry state's past failures into the prompt."""

    def __init__(self, inner: PredictModule):
        self.inner = inner

    def render(self, inputs: Mapping[str, str], state: Optional[RetryState] = None) -> str:
        feedback = state.past_failures if state else ()
        return self.inner.render(inputs, feedback=feedback)

    def predict(
        self, inputs: Mapping[str, str], state: Optional[RetryState], backend, attempt: int = 0
    ) -> Prediction:
        prompt = self.render(inputs, state)
        completions = backend.generate(prompt, self.inner.params)
        return parse_completion(self.inner.signature, completions[0], attempt=attempt)


def wrap_retry(module: PredictModule) -> RetryModule:
    return RetryModule(module)


@dataclass
class _JournalEvent:
    kind: str  # "call" | "constraint"
    position: int = -1
    inputs: Optional[dict[str, str]] = None
    step: Optional[TraceStep] = None
    site: int = -1


@dataclass
class RunResult:
    prediction: Optional[Prediction]
    trace: Trace
    halted: bool = False
    error: Optional[str] = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def completed(self) -> bool:
        return not self.halted


class ExecutionContext:
    """Per-run state handed to Program.forward.

    ``call`` invokes a module (with journal replay across backtrack passes);
    ``suggest`` / ``check_assert`` evaluate constraints. ``meta`` is rebuilt
    every pass, so anything the program stores there reflects only the
    surviving attempt.
    """

    def __init__(self, program: Program, backend, config: RuntimeConfig):
        self._program = program
        self._backend = backend
        self._config = config
        self._registered = set(program.modules)
        # run-level state
        self.steps: list[TraceStep] = []
        self._attempts_at_pos: dict[int, int] = {}
        self._step_at_pos: dict[int, TraceStep] = {}
        self._module_at_pos: dict[int, PredictModule] = {}
        self._retry_states: dict[int, RetryState] = {}
        self._eval_seq = 0
        # pass-level state, reset by _begin_pass
        self.meta: dict[str, Any] = {}
        self._pos = 0
        self._site_counter = 0
        self._journal: list[_JournalEvent] = []
        self._cursor = 0
        self._new_journal: list[_JournalEvent] = []
        self._replaying = False
        self._pending_site: Optional[int] = None
        self._pending_target: Optional[int] = None

    @property
    def config(self) -> RuntimeConfig:
        return self._config

    def _begin_pass(self, journal: list[_JournalEvent], pending: Optional[tuple[int, int]]) -> None:
        self.meta = {}
        self._pos = 0
        self._site_counter = 0
        self._journal = journal
        self._cursor = 0
        self._new_journal = []
        self._replaying = bool(journal)
        if pending:
            self._pending_site, self._pending_target = pending
        else:
            self._pending_site = self._pending_target = None

    def _next_event(self) -> Optional[_JournalEvent]:
        if self._replaying and self._cursor < len(self._journal):
            return self._journal[self._cursor]
        return None

    def call(self, module: PredictModule, **inputs: str) -> Prediction:
        """Invoke a module. Replays the previous pass's result when possible."""
        position = self._pos
        self._pos += 1
        diverge = self._pending_target is not None and position == self._pending_target
        if diverge:
            # feedback consumed here; nothing after this point replays
            state = self._retry_states[self._pending_site]
            feedback = state.past_failures
            self._pending_site = self._pending_target = None
            self._replaying = False
        else:
            feedback = ()
            event = self._next_event()
            if event is not None:
                # a replayed call must be byte-identical: same slot, same module,
                # same inputs (its own feedback, if it was a retry, is unchanged)
                if (
                    event.kind == "call"
                    and event.position == position
                    and event.step.module_id == module.module_id
                    and event.inputs == dict(inputs)
                ):
                    self._cursor += 1
                    self._new_journal.append(event)
                    return event.step.prediction
                self._replaying = False  # diverged earlier than expected

        prompt = module.render(inputs, feedback=feedback)
        completions = self._backend.generate(prompt, module.params)
        attempt = self._attempts_at_pos.get(position, 0)
        self._attempts_at_pos[position] = attempt + 1
        prediction = parse_completion(module.signature, completions[0], attempt=attempt)
        step = TraceStep(
            module_id=module.module_id,
            inputs=dict(inputs),
            prediction=prediction,
            attempt=attempt,
            position=position,
            prompt_digest=stable_digest(prompt),
        )
        self.steps.append(step)
        self._step_at_pos[position] = step
        self._module_at_pos[position] = module
        self._new_journal.append(
            _JournalEvent(kind="call", position=position, inputs=dict(inputs), step=step)
        )
        return prediction

    def suggest(
        self, condition: bool, message: str, backtrack: Optional[str] = None, label: str = ""
    ) -> None:
        self._check("suggest", condition, message, backtrack, label)

    def check_assert(
        self, condition: bool, message: str, backtrack: Optional[str] = None, label: str = ""
    ) -> None:
        self._check("assert", condition, message, backtrack, label)

    def _resolve_target(self, backtrack: Optional[str]) -> Optional[int]:
        """The invocation a retry returns to: the most recent call of the named
        module, or of any registered module when no name was given."""
        for position in range(self._pos - 1, -1, -1):
            module = self._module_at_pos.get(position)
            if module is None:
                continue
            if backtrack is not None:
                if module.module_id == backtrack:
                    return position
            elif module.module_id in self._registered:
                return position
        return None

    def _check(
        self, kind: str, condition: bool, message: str, backtrack: Optional[str], label: str
    ) -> None:
        site = self._site_counter
        self._site_counter += 1
        if self._replaying:
            event = self._next_event()
            if event is not None and event.kind == "constraint" and event.site == site:
                self._cursor += 1
                self._new_journal.append(event)
                return  # outcome already recorded on an earlier pass
            self._replaying = False

        decl = ConstraintDecl(
            kind=kind, passed=bool(condition), message=message,
            backtrack_target=backtrack, label=label or message,
        )
        target_pos = self._resolve_target(backtrack)
        state = self._retry_states.get(site)
        if state is None:
            target_module = self._module_at_pos[target_pos].module_id if target_pos is not None else ""
            state = RetryState(module_id=target_module)

        failed_output = ""
        target_step = self._step_at_pos.get(target_pos) if target_pos is not None else None
        if target_step is not None and not decl.passed:
            module = self._module_at_pos[target_pos]
            failed_output = target_step.prediction.outputs.get(
                payload_field(module.signature).name, ""
            )

        transition = check_constraint(decl, state, self._config, failed_output=failed_output)
        action = transition.action
        if action == RETRY and target_pos is None:
            # nothing to hand control back to: fall through to the terminal rule
            if kind == "assert":
                action = HALT
            else:
                action = WARN
            transition = Transition(action, state.reset())

        outcome = ConstraintOutcome(
            decl=decl,
            attempt=state.r,
            disposition=action,
            site=site,
            target_module=state.module_id,
            seq=self._eval_seq,
        )
        self._eval_seq += 1
        carrier = target_step if target_step is not None else (self.steps[-1] if self.steps else None)
        if carrier is not None:
            carrier.constraint_outcomes.append(outcome)

        self._retry_states[site] = transition.state
        if action == RETRY:
            raise _Backtrack(site=site, target_pos=target_pos)
        if action == HALT:
            raise AssertionHalt(message)
        if action == WARN:
            logger.warning("suggestion not satisfied after %d retries: %s", state.r, message)
        elif action == RECORD_FAILED and self._config.handler_policy == SUPPRESS_ASSERT_LOG:
            logger.warning("assertion failure suppressed: %s", message)
        self._new_journal.append(_JournalEvent(kind="constraint", site=site))


def run_with_backtracking(
    program: Program,
    inputs: Mapping[str, str],
    config: RuntimeConfig = RuntimeConfig(),
    backend=None,
) -> RunResult:
    """Execute a program, backtracking on failed constraints per the transition rules."""
    if program.handler_policy is not None:
        config = replace(config, handler_policy=program.handler_policy)
    ctx = ExecutionContext(program, backend, config)
    journal: list[_JournalEvent] = []
    pending: Optional[tuple[int, int]] = None
    for _ in range(_MAX_PASSES):
        ctx._begin_pass(journal, pending)
        try:
            prediction = program.forward(ctx, **inputs)
        except _Backtrack as b:
            journal = ctx._new_journal
            pending = (b.site, b.target_pos)
            continue
        except BackendError as exc:
            exc.partial_trace = Trace(steps=ctx.steps, final_prediction=None)
            raise
        except AssertionHalt as halt:
            trace = Trace(steps=ctx.steps, final_prediction=None)
            return RunResult(
                prediction=None, trace=trace, halted=True,
                error=str(halt), meta=dict(ctx.meta),
            )
        trace = Trace(steps=ctx.steps, final_prediction=prediction)
        return RunResult(prediction=prediction, trace=trace, meta=dict(ctx.meta))
    raise RuntimeError("backtracking did not terminate within the pass budget")


def trace_to_dict(trace: Trace, halted: bool = False, error: Optional[str] = None) -> dict:
    steps = []
    for step in trace.steps:
        steps.append({
            "module_id": step.module_id,
            "attempt": step.attempt,
            "position": step.position,
            "prompt_digest": step.prompt_digest,
            "inputs": dict(step.inputs),
            "outputs": dict(step.prediction.outputs),
            "raw_completion": step.prediction.raw_completion,
            "constraints": [
                {
                    "site": o.site,
                    "kind": o.decl.kind,
                    "label": o.decl.label,
                    "message": o.decl.message,
                    "passed": o.decl.passed,
                    "attempt": o.attempt,
                    "disposition": o.disposition,
                    "target_module": o.target_module,
                    "seq": o.seq,
                }
                for o in step.constraint_outcomes
            ],
        })
    final = dict(trace.final_prediction.outputs) if trace.final_prediction else None
    return {
        "version": TRACE_VERSION,
        "halted": halted,
        "error": error,
        "steps": steps,
        "final_outputs": final,
    }


def trace_from_dict(data: dict) -> tuple[Trace, bool, Optional[str]]:
    version = data.get("version")
    if version != TRACE_VERSION:
        raise ValueError(f"trace version mismatch: file has {version}, supported is {TRACE_VERSION}")
    steps = []
    for raw in data["steps"]:
        prediction = Prediction(
            outputs=raw["outputs"], raw_completion=raw.get("raw_completion", ""),
            attempt=raw["attempt"],
        )
        outcomes = [
            ConstraintOutcome(
                decl=ConstraintDecl(
                    kind=o["kind"], passed=o["passed"], message=o["message"],
                    label=o.get("label", ""),
                ),
                attempt=o["attempt"],
                disposition=o["disposition"],
                site=o["site"],
                target_module=o.get("target_module", ""),
                seq=o.get("seq", 0),
            )
            for o in raw.get("constraints", [])
        ]
        steps.append(TraceStep(
            module_id=raw["module_id"],
            inputs=raw.get("inputs", {}),
            prediction=prediction,
            constraint_outcomes=outcomes,
            attempt=raw["attempt"],
            position=raw.get("position", 0),
            prompt_digest=raw.get("prompt_digest", ""),
        ))
    final = None
    if data.get("final_outputs") is not None:
        final = Prediction(outputs=data["final_outputs"])
    return Trace(steps=steps, final_prediction=final), data.get("halted", False), data.get("error")


def save_trace(result: RunResult, path: str | Path) -> None:
    payload = trace_to_dict(result.trace, halted=result.halted, error=result.error)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, ensure_ascii=False, sort_keys=True)
        handle.write("\n")


def load_trace(path: str | Path) -> tuple[Trace, bool, Optional[str]]:
    with open(path, "r", encoding="utf-8") as handle:
        return trace_from_dict(json.load(handle))
