"""Command-line harness: compile, eval, inspect-trace.

Five strategies select where constraints are active:

    label                 compiled  student assertions  teacher assertions
    vanilla               no        no                  -
    infer_assert          no        yes                 -
    compile               yes       no                  no
    compile_assert        yes       no                  yes
    compile_infer_assert  yes       yes                 yes

Offline runs (--offline with a script file) are fully deterministic: repeated
invocations produce byte-identical artifacts and reports.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import click

from .backend import (
    CachingBackend,
    EndpointConfig,
    HTTPBackend,
    ScriptedBackend,
    load_script,
)
from .evaluation import METRIC_COLUMNS, bootstrap_metric, build_report, evaluate_dataset, run_task_example
from .metrics import MetricReport, load_dataset
from .optimizers import CompileConfig, load_compiled_program, random_search_compile, save_compiled_program
from .retrieval import RetrieverIndex, load_corpus
from .runtime import (
    BACKTRACK_DEFAULT,
    DISABLE_ALL,
    RuntimeConfig,
    load_trace,
    save_trace,
)
from .tasks import COMPLETE, TASK_NAMES, build_program

REPORT_VERSION = 1

STRATEGY_LABELS = ("vanilla", "infer_assert", "compile", "compile_assert", "compile_infer_assert")


@dataclass(frozen=True)
class Strategy:
    label: str
    compiled: bool
    student_assertions: bool
    teacher_assertions: Optional[bool]  # None when not applicable (uncompiled)


_STRATEGIES = {
    "vanilla": Strategy("vanilla", compiled=False, student_assertions=False, teacher_assertions=None),
    "infer_assert": Strategy("infer_assert", compiled=False, student_assertions=True, teacher_assertions=None),
    "compile": Strategy("compile", compiled=True, student_assertions=False, teacher_assertions=False),
    "compile_assert": Strategy("compile_assert", compiled=True, student_assertions=False, teacher_assertions=True),
    "compile_infer_assert": Strategy(
        "compile_infer_assert", compiled=True, student_assertions=True, teacher_assertions=True
    ),
}


def strategy_from_label(label: str) -> Strategy:
    try:
        return _STRATEGIES[label]
    except KeyError:
        raise ValueError(f"unknown strategy {label!r}; expected one of {STRATEGY_LABELS}")


@dataclass
class RunConfig:
    """Everything one compile or eval invocation needs."""

    task: str
    strategy: Strategy
    out_dir: Path
    corpus_path: Optional[Path] = None
    script_path: Optional[Path] = None
    offline: bool = False
    model: str = "gpt-3.5-turbo"
    api_base: Optional[str] = None
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)
    compile_config: CompileConfig = field(default_factory=CompileConfig)
    instruction_variant: str = COMPLETE
    workers: int = 1

    def __post_init__(self) -> None:
        if self.offline and self.script_path is None:
            raise ValueError("offline mode requires a script file")


def bundled_data_path(name: str) -> Path:
    return Path(str(resources.files("lmpipe").joinpath("data", name)))


def load_run_config_file(path: Optional[Path]) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def assemble_run_config(
    task: str,
    strategy_label: str,
    out_dir: str,
    config_file: Optional[str] = None,
    offline: bool = False,
    script: Optional[str] = None,
    workers: int = 1,
) -> RunConfig:
    raw = load_run_config_file(Path(config_file) if config_file else None)
    backend_cfg = raw.get("backend", {})
    runtime_cfg = raw.get("runtime", {})
    compile_cfg = raw.get("compile", {})
    script_path = script or (backend_cfg.get("script") if backend_cfg.get("mode") == "scripted" else None)
    offline = offline or backend_cfg.get("mode") == "scripted"
    return RunConfig(
        task=task,
        strategy=strategy_from_label(strategy_label),
        out_dir=Path(out_dir),
        corpus_path=Path(raw["corpus"]) if raw.get("corpus") else None,
        script_path=Path(script_path) if script_path else None,
        offline=offline,
        model=backend_cfg.get("model", "gpt-3.5-turbo"),
        api_base=backend_cfg.get("api_base"),
        runtime=RuntimeConfig(
            max_retries=runtime_cfg.get("max_retries", 2),
            handler_policy=runtime_cfg.get("handler_policy", BACKTRACK_DEFAULT),
        ),
        compile_config=CompileConfig(
            max_bootstrapped_demos=compile_cfg.get("max_bootstrapped_demos", 2),
            num_candidates=compile_cfg.get("num_candidates", 6),
            rng_seed=compile_cfg.get("rng_seed", 0),
            collect_counterexamples=compile_cfg.get("collect_counterexamples", True),
            max_retries=runtime_cfg.get("max_retries", 2),
        ),
        instruction_variant=raw.get("instructions", COMPLETE),
        workers=workers,
    )


def make_backend(config: RunConfig) -> CachingBackend:
    if config.script_path is not None:
        return CachingBackend(ScriptedBackend(load_script(config.script_path)))
    if config.offline:
        raise ValueError("offline mode requires a script file")
    return CachingBackend(HTTPBackend(EndpointConfig(model=config.model, api_base=config.api_base)))


def make_program(config: RunConfig):
    index = None
    if config.task != "quiz":
        corpus = config.corpus_path or bundled_data_path("corpus.jsonl")
        index = RetrieverIndex.build(load_corpus(corpus))
    return build_program(config.task, index, config.instruction_variant)


def _write_json(payload: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, ensure_ascii=False, sort_keys=True)
        handle.write("\n")


def cmd_compile(config: RunConfig, train_path: Path, dev_path: Path) -> Path:
    """Compile per the strategy and write the artifact plus candidate scores."""
    if not config.strategy.compiled:
        raise ValueError(f"strategy {config.strategy.label!r} does not compile; nothing to do")
    trainset = load_dataset(train_path)
    devset = load_dataset(dev_path)
    backend = make_backend(config)
    program = make_program(config)
    compile_config = CompileConfig(
        max_bootstrapped_demos=config.compile_config.max_bootstrapped_demos,
        num_candidates=config.compile_config.num_candidates,
        rng_seed=config.compile_config.rng_seed,
        teacher_assertions=bool(config.strategy.teacher_assertions),
        collect_counterexamples=(
            bool(config.strategy.teacher_assertions)
            and config.compile_config.collect_counterexamples
        ),
        max_retries=config.compile_config.max_retries,
    )

    def run_example(prog, example, runtime_config, bk):
        return run_task_example(config.task, prog, example, runtime_config, bk)

    compiled, report = random_search_compile(
        program, trainset, devset, bootstrap_metric(config.task),
        config=compile_config, backend=backend, run_example=run_example,
    )
    config.out_dir.mkdir(parents=True, exist_ok=True)
    artifact_path = config.out_dir / "compiled_program.json"
    save_compiled_program(compiled, config.task, compile_config, artifact_path)
    _write_json(report.to_dict(), config.out_dir / "candidates.json")
    return artifact_path


def cmd_eval(config: RunConfig, test_path: Path, artifact_path: Optional[Path] = None) -> MetricReport:
    """Evaluate the strategy over a dataset; writes report.json and summary.txt."""
    strategy = config.strategy
    if strategy.compiled and artifact_path is None:
        raise ValueError(f"strategy {strategy.label!r} needs a compiled artifact (--artifact)")
    examples = load_dataset(test_path)
    backend = make_backend(config)
    program = make_program(config)
    if strategy.compiled:
        program, artifact_task = load_compiled_program(program, artifact_path)
        if artifact_task != config.task:
            raise ValueError(
                f"artifact was compiled for task {artifact_task!r}, not {config.task!r}"
            )
    policy = BACKTRACK_DEFAULT if strategy.student_assertions else DISABLE_ALL
    runtime = RuntimeConfig(max_retries=config.runtime.max_retries, handler_policy=policy)

    rows, results = evaluate_dataset(
        config.task, program, examples, runtime, backend, workers=config.workers
    )
    report = build_report(config.task, strategy.label, rows)

    config.out_dir.mkdir(parents=True, exist_ok=True)
    traces_dir = config.out_dir / "traces"
    traces_dir.mkdir(exist_ok=True)
    for index, result in enumerate(results):
        if result is not None:
            save_trace(result, traces_dir / f"example_{index:03d}.json")
    _write_json(
        {
            "version": REPORT_VERSION,
            "task": report.task,
            "strategy": report.strategy,
            "n_examples": report.n_examples,
            "metrics": report.metrics,
            "flags": report.flags,
            "rows": report.rows,
        },
        config.out_dir / "report.json",
    )
    with open(config.out_dir / "summary.txt", "w", encoding="utf-8") as handle:
        handle.write(format_summary(report))
    return report


def format_summary(report: MetricReport) -> str:
    lines = [
        f"task:     {report.task}",
        f"strategy: {report.strategy}",
        f"examples: {report.n_examples}",
        "",
        f"{'metric':<24} {'mean':>8}",
        f"{'-' * 24} {'-' * 8}",
    ]
    for name in METRIC_COLUMNS[report.task]:
        if name in report.metrics:
            lines.append(f"{name:<24} {report.metrics[name]:>8.4f}")
    for flag in report.flags:
        lines.append(f"flag: {flag}")
    return "\n".join(lines) + "\n"


def format_trace(trace, halted: bool, error: Optional[str]) -> str:
    lines = []
    for step in trace.steps:
        lines.append(f"step {step.position}.{step.attempt}  {step.module_id}  "
                     f"prompt={step.prompt_digest[:12]}")
        for name, value in step.prediction.outputs.items():
            shown = value if len(value) <= 80 else value[:77] + "..."
            lines.append(f"    {name}: {shown}")
        for outcome in step.constraint_outcomes:
            tag = outcome.disposition.upper()
            if outcome.disposition == "retried":
                tag = "RETRY"
            lines.append(f"    [{outcome.decl.kind}/{tag}] {outcome.decl.message}")
    if halted:
        lines.append(f"assertion failed: {error}")
        lines.append("HALTED")
    else:
        lines.append("completed")
    return "\n".join(lines) + "\n"


def cmd_inspect_trace(path: Path) -> str:
    trace, halted, error = load_trace(path)
    return format_trace(trace, halted, error)


@click.group()
def main() -> None:
    """Declarative LM pipelines with checked constraints and few-shot compilation."""


@main.command("compile")
@click.option("--task", type=click.Choice(TASK_NAMES), required=True)
@click.option("--strategy", "strategy_label", type=click.Choice(STRATEGY_LABELS), required=True)
@click.option("--train", "train_path", type=click.Path(exists=True), required=True)
@click.option("--dev", "dev_path", type=click.Path(exists=True), required=True)
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@click.option("--offline", is_flag=True, default=False)
@click.option("--script", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def compile_command(task, strategy_label, train_path, dev_path, config_file, offline, script, out_dir):
    """Bootstrap demonstrations and write a compiled-program artifact."""
    try:
        config = assemble_run_config(task, strategy_label, out_dir, config_file, offline, script)
        artifact = cmd_compile(config, Path(train_path), Path(dev_path))
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc))
    click.echo(f"wrote {artifact}")


@main.command("eval")
@click.option("--task", type=click.Choice(TASK_NAMES), required=True)
@click.option("--strategy", "strategy_label", type=click.Choice(STRATEGY_LABELS), required=True)
@click.option("--test", "test_path", type=click.Path(exists=True), required=True)
@click.option("--artifact", type=click.Path(exists=True), default=None)
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@click.option("--offline", is_flag=True, default=False)
@click.option("--script", type=click.Path(exists=True), default=None)
@click.option("--workers", type=int, default=1)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def eval_command(task, strategy_label, test_path, artifact, config_file, offline, script, workers, out_dir):
    """Evaluate a strategy over a dataset and write the metric report."""
    try:
        config = assemble_run_config(task, strategy_label, out_dir, config_file, offline, script, workers)
        report = cmd_eval(config, Path(test_path), Path(artifact) if artifact else None)
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc))
    click.echo(format_summary(report))
    failures = sum(1 for row in report.rows if "error" in row)
    if report.rows and failures == len(report.rows):
        sys.exit(1)


@main.command("inspect-trace")
@click.argument("path", type=click.Path(exists=True))
def inspect_trace_command(path):
    """Render a saved trace for humans."""
    try:
        click.echo(cmd_inspect_trace(Path(path)), nl=False)
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc))


if __name__ == "__main__":
    main()
