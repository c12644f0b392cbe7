"""Domain types shared by every pipeline stage, plus canonical prompt rendering.

A :class:`Signature` is the declarative contract of one LM call: ordered
input/output fields and an instruction string. Prompts are rendered from a
signature with a fixed, byte-stable template so that runs replay exactly and
golden-file tests are meaningful. The template is documented in the README
("Prompt format") and frozen by ``tests/golden/``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence


class SignatureError(ValueError):
    """Raised for malformed signature shorthand or field conflicts."""


class PromptError(ValueError):
    """Raised when a prompt cannot be rendered (e.g. missing input value)."""


_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

INPUT = "input"
OUTPUT = "output"


def default_prefix(name: str) -> str:
    """Title-case a field name into its display prefix: answer_choices -> 'Answer Choices:'."""
    return " ".join(part.capitalize() for part in name.split("_")) + ":"


@dataclass(frozen=True)
class FieldSpec:
    """One named slot of a signature, rendered as '<prefix> <value>'."""

    name: str
    kind: str  # INPUT or OUTPUT
    prefix: str = ""
    description: str = ""

    def __post_init__(self) -> None:
        if not self.name:
            raise SignatureError("field name must be nonempty")
        if self.kind not in (INPUT, OUTPUT):
            raise SignatureError(f"field kind must be input or output, got {self.kind!r}")
        if not self.prefix:
            object.__setattr__(self, "prefix", default_prefix(self.name))
        if not self.description:
            object.__setattr__(self, "description", "${" + self.name + "}")

    @property
    def prefix_key(self) -> str:
        """The prefix truncated at its first colon, used to spot the field in completions."""
        head, colon, _ = self.prefix.partition(":")
        return head + colon if colon else self.prefix


@dataclass(frozen=True)
class Signature:
    """Ordered field specs plus instruction text; inputs always precede outputs."""

    instructions: str
    fields: tuple[FieldSpec, ...]

    def __post_init__(self) -> None:
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            dupe = next(n for n in names if names.count(n) > 1)
            raise SignatureError(f"duplicate field name {dupe!r}")
        if not self.input_fields:
            raise SignatureError("signature needs at least one input field")
        if not self.output_fields:
            raise SignatureError("signature needs at least one output field")
        seen_output = False
        for f in self.fields:
            if f.kind == OUTPUT:
                seen_output = True
            elif seen_output:
                raise SignatureError(f"input field {f.name!r} declared after an output field")

    @property
    def input_fields(self) -> tuple[FieldSpec, ...]:
        return tuple(f for f in self.fields if f.kind == INPUT)

    @property
    def output_fields(self) -> tuple[FieldSpec, ...]:
        return tuple(f for f in self.fields if f.kind == OUTPUT)

    def shorthand(self) -> str:
        """Canonical 'a, b -> c' form (prefixes and instructions are not encoded)."""
        ins = ", ".join(f.name for f in self.input_fields)
        outs = ", ".join(f.name for f in self.output_fields)
        return f"{ins} -> {outs}"

    def with_instructions(self, instructions: str) -> "Signature":
        return replace(self, instructions=instructions)


def _parse_names(side: str, label: str) -> list[str]:
    names = [tok.strip() for tok in side.split(",")]
    if names == [""]:
        raise SignatureError(f"empty {label} side in signature")
    for name in names:
        if not name:
            raise SignatureError(f"empty field name on {label} side")
        if not _IDENT_RE.match(name):
            raise SignatureError(f"invalid field name {name!r}")
    return names


def parse_signature(spec: str, instructions: str = "") -> Signature:
    """Parse shorthand like ``"context, question -> query"`` into a Signature.

    When no instructions are supplied, a deterministic sentence derived from
    the field names is used.
    """
    if spec.count("->") != 1:
        raise SignatureError(f"signature must contain exactly one '->': {spec!r}")
    left, right = spec.split("->")
    inputs = _parse_names(left, "input")
    outputs = _parse_names(right, "output")
    overlap = set(inputs) & set(outputs)
    if overlap:
        raise SignatureError(f"field name {sorted(overlap)[0]!r} appears on both sides")
    if len(set(inputs)) != len(inputs) or len(set(outputs)) != len(outputs):
        names = inputs + outputs
        dupe = next(n for n in names if names.count(n) > 1)
        raise SignatureError(f"duplicate field name {dupe!r}")
    if not instructions:
        instructions = "Given the fields {}, produce the fields {}.".format(
            ", ".join("`%s`" % n for n in inputs), ", ".join("`%s`" % n for n in outputs)
        )
    fields = tuple(
        [FieldSpec(name=n, kind=INPUT) for n in inputs]
        + [FieldSpec(name=n, kind=OUTPUT) for n in outputs]
    )
    return Signature(instructions=instructions, fields=fields)


def prepend_output_field(sig: Signature, new_field: FieldSpec) -> Signature:
    """Return a signature whose output fields start with ``new_field``."""
    if new_field.kind != OUTPUT:
        raise SignatureError(f"can only prepend an output field, got kind {new_field.kind!r}")
    if any(f.name == new_field.name for f in sig.fields):
        raise SignatureError(f"duplicate field name {new_field.name!r}")
    fields = sig.input_fields + (new_field,) + sig.output_fields
    return Signature(instructions=sig.instructions, fields=fields)


@dataclass(frozen=True)
class Example:
    """A record of named text values; ``input_keys`` marks which are inputs."""

    values: Mapping[str, str]
    input_keys: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", dict(self.values))
        object.__setattr__(self, "input_keys", frozenset(self.input_keys))
        missing = self.input_keys - set(self.values)
        if missing:
            raise ValueError(f"input_keys not present in values: {sorted(missing)}")

    def inputs(self) -> dict[str, str]:
        return {k: v for k, v in self.values.items() if k in self.input_keys}


@dataclass(frozen=True)
class Prediction:
    """Parsed module output: one text per output field plus the raw completion."""

    outputs: Mapping[str, str]
    raw_completion: str = ""
    attempt: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "outputs", dict(self.outputs))
        if self.attempt < 0:
            raise ValueError("attempt must be >= 0")

    def __getitem__(self, key: str) -> str:
        return self.outputs[key]


@dataclass(frozen=True)
class ConstraintDecl:
    """One evaluated Assert/Suggest: its kind, the condition's value, and message."""

    kind: str  # "assert" | "suggest"
    passed: bool
    message: str
    backtrack_target: Optional[str] = None
    label: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("assert", "suggest"):
            raise ValueError(f"constraint kind must be assert or suggest, got {self.kind!r}")
        if not self.message:
            raise ValueError("constraint message must be nonempty")


# Outcomes of one constraint evaluation. "failed" records a violation that a
# handler policy kept from retrying or halting.
PASSED = "passed"
RETRIED = "retried"
HALTED = "halted"
WARNED = "warned"
FAILED = "failed"

DISPOSITIONS = (PASSED, RETRIED, HALTED, WARNED, FAILED)


@dataclass(frozen=True)
class ConstraintOutcome:
    """What one evaluation of a constraint did, tagged with its site for grouping."""

    decl: ConstraintDecl
    attempt: int
    disposition: str
    site: int
    target_module: str = ""
    seq: int = 0  # global evaluation order within a run

    def __post_init__(self) -> None:
        if self.disposition not in DISPOSITIONS:
            raise ValueError(f"unknown disposition {self.disposition!r}")
        if self.disposition == HALTED and self.decl.kind != "assert":
            raise ValueError("only assert constraints can halt")
        if self.disposition == WARNED and self.decl.kind != "suggest":
            raise ValueError("only suggest constraints can warn")


@dataclass(frozen=True)
class Counterexample:
    """A recovered failure: the bad output, the instruction, and the fixed output."""

    module_id: str
    failed_output: str
    message: str
    corrected_output: str


@dataclass
class TraceStep:
    """One module invocation: inputs, prediction, and the constraint outcomes it drew."""

    module_id: str
    inputs: dict[str, str]
    prediction: Prediction
    constraint_outcomes: list[ConstraintOutcome] = field(default_factory=list)
    attempt: int = 0
    position: int = 0  # execution slot within a pass; retries share a position
    prompt_digest: str = ""


@dataclass
class Trace:
    """Ordered record of one pipeline run; ``final_prediction`` is None when halted."""

    steps: list[TraceStep] = field(default_factory=list)
    final_prediction: Optional[Prediction] = None

    def outcomes(self) -> list[ConstraintOutcome]:
        """All constraint outcomes in evaluation order."""
        out = [o for step in self.steps for o in step.constraint_outcomes]
        return sorted(out, key=lambda o: o.seq)

    def outcomes_by_site(self) -> dict[int, list[ConstraintOutcome]]:
        sites: dict[int, list[ConstraintOutcome]] = {}
        for outcome in self.outcomes():
            sites.setdefault(outcome.site, []).append(outcome)
        return sites


SECTION_SEPARATOR = "\n\n---\n\n"
FORMAT_SENTENCE = "Follow the following format."
PAST_LINE = "Past {label} {value}"
INSTRUCTION_LINE = "Instruction: {message}"


def feedback_label(sig: Signature) -> str:
    """Prefix used for 'Past ...' feedback lines: the final output field's prefix key."""
    return sig.output_fields[-1].prefix_key


def payload_field(sig: Signature) -> FieldSpec:
    """The field feedback refers to: the last output field (rationales are prepended)."""
    return sig.output_fields[-1]


def _field_line(spec: FieldSpec, value: str) -> str:
    return f"{spec.prefix} {value}"


def _header(sig: Signature) -> str:
    lines = [_field_line(f, f.description) for f in sig.fields]
    return sig.instructions + "\n\n" + FORMAT_SENTENCE + "\n\n" + "\n".join(lines)


def _demo_block(sig: Signature, demo: Example) -> str:
    lines = [_field_line(f, demo.values[f.name]) for f in sig.fields if f.name in demo.values]
    return "\n".join(lines)


def _counterexample_block(sig: Signature, ce: Counterexample) -> str:
    target = payload_field(sig)
    lines = [
        PAST_LINE.format(label=feedback_label(sig), value=ce.failed_output),
        INSTRUCTION_LINE.format(message=ce.message),
        _field_line(target, ce.corrected_output),
    ]
    return "\n".join(lines)


def _live_block(
    sig: Signature, inputs: Mapping[str, str], feedback: Sequence[tuple[str, str]]
) -> str:
    lines = []
    for f in sig.input_fields:
        if f.name not in inputs:
            raise PromptError(f"missing input field {f.name!r}")
        lines.append(_field_line(f, inputs[f.name]))
    label = feedback_label(sig)
    for failed_output, message in feedback:
        lines.append(PAST_LINE.format(label=label, value=failed_output))
        lines.append(INSTRUCTION_LINE.format(message=message))
    # Generation cue: first output prefix, one trailing space, nothing else.
    lines.append(sig.output_fields[0].prefix + " ")
    return "\n".join(lines)


def render_prompt(
    sig: Signature,
    demos: Sequence[Example] = (),
    counterexamples: Sequence[Counterexample] = (),
    inputs: Optional[Mapping[str, str]] = None,
    feedback: Sequence[tuple[str, str]] = (),
) -> str:
    """Render the full prompt for one call. Pure: equal arguments, identical bytes.

    Counterexample blocks come before demo blocks, which come before the live
    block; sections are separated by a line containing exactly ``---``.
    Feedback pairs render inside the live block, after the inputs and before
    the generation cue, oldest first.
    """
    sections = [_header(sig)]
    for ce in counterexamples:
        sections.append(_counterexample_block(sig, ce))
    for demo in demos:
        sections.append(_demo_block(sig, demo))
    sections.append(_live_block(sig, inputs or {}, feedback))
    return SECTION_SEPARATOR.join(sections)


def passages_to_text(passages: Iterable) -> str:
    """Flatten passages into the single numbered-list encoding used for context values.

    Each entry becomes ``[k] title | body`` (1-based); an empty list renders
    as ``N/A``. Newlines inside bodies are collapsed so each passage stays on
    one line.
    """
    rendered = []
    for i, passage in enumerate(passages, start=1):
        title = getattr(passage, "title", None)
        body = getattr(passage, "text", None)
        if title is None:
            title, body = passage  # (title, text) tuples are accepted too
        body = " ".join(str(body).split())
        rendered.append(f"[{i}] {title} | {body}")
    return "\n".join(rendered) if rendered else "N/A"


_CONTEXT_LINE_RE = re.compile(r"^\[\d+\] (.*?) \| ", re.MULTILINE)


def titles_from_context(text: str) -> list[str]:
    """Recover passage titles from a rendered context value."""
    return _CONTEXT_LINE_RE.findall(text)
