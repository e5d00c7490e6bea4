"""Monte-Carlo hard labeling of steps via rollout completions.

A step is labeled 1 iff at least one of ``k`` completions from its prefix
reaches the correct final answer — the classic rollout-based recipe, kept
here as the comparison baseline for the judge-based annotator.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

from .backends import BackendError, CompletionBackend, SamplingParams, derive_seed
from .core import (
    AnnotatedTrace,
    Problem,
    ReasoningTrace,
    StepAnnotation,
    answers_match,
    count_tokens,
    extract_final_answer,
)


@dataclass(frozen=True)
class RolloutOutcome:
    """Result of one completion sampled from a step prefix."""

    prefix_len: int
    completion_text: str
    reached_correct: bool
    token_cost: int
    failed: bool = False  # backend gave up within the per-rollout retry budget


@dataclass(frozen=True)
class McConfig:
    k: int = 8
    max_completion_tokens: int = 2048
    seed: int = 0
    temperature: float = 1.0
    rollout_retries: int = 2

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


def _rollout_template() -> str:
    return resources.files("longprm.assets").joinpath("rollout_prompt.txt").read_text(
        encoding="utf-8")


def build_rollout_prompt(problem: Problem, prefix_texts: Sequence[str]) -> str:
    """Prefix steps joined by blank lines plus a continuation instruction."""
    return _rollout_template().format(
        problem=problem.statement, prefix="\n\n".join(prefix_texts))


def mc_label_step(
    problem: Problem,
    trace: ReasoningTrace,
    step_index: int,
    completer: CompletionBackend,
    cfg: McConfig,
) -> tuple[int, int, list[RolloutOutcome]]:
    """Hard-label one step from ``cfg.k`` rollouts of its prefix.

    Returns ``(label, successes, outcomes)`` where ``label = 1`` iff any
    rollout reached the correct final answer.  A rollout that keeps failing
    at the transport level counts as not-correct and is flagged in its
    outcome rather than retried forever.
    """
    if step_index >= trace.num_steps:
        raise ValueError(f"step_index {step_index} out of range for K={trace.num_steps}")
    prefix = [s.text for s in trace.steps[: step_index + 1]]
    prompt = build_rollout_prompt(problem, prefix)

    outcomes: list[RolloutOutcome] = []
    successes = 0
    for rollout in range(cfg.k):
        seed = derive_seed(cfg.seed, problem.id, trace.generator_tag, step_index, rollout)
        params = SamplingParams(temperature=cfg.temperature,
                                max_tokens=cfg.max_completion_tokens, seed=seed)
        completion = None
        last_exc: BackendError | None = None
        for _ in range(cfg.rollout_retries + 1):
            try:
                completion = completer.complete(prompt, params)
                break
            except BackendError as exc:
                last_exc = exc
        if completion is None:
            outcomes.append(RolloutOutcome(
                prefix_len=step_index + 1,
                completion_text=f"[rollout failed: {last_exc}]",
                reached_correct=False, token_cost=0, failed=True))
            continue
        answer = extract_final_answer(completion)
        correct = answers_match(answer, problem.gold_answer)
        successes += int(correct)
        outcomes.append(RolloutOutcome(
            prefix_len=step_index + 1, completion_text=completion,
            reached_correct=correct, token_cost=count_tokens(completion)))
    return (1 if successes >= 1 else 0), successes, outcomes


@dataclass
class RolloutBudget:
    """Aggregate rollout accounting, surfaced by the CLI.

    Safe to share across annotation workers; aggregation is commutative.
    """

    rollouts: int = 0
    completion_tokens: int = 0
    failed_rollouts: int = 0

    def __post_init__(self):
        self._lock = threading.Lock()

    def add(self, outcomes: Sequence[RolloutOutcome]) -> None:
        with self._lock:
            self.rollouts += len(outcomes)
            self.completion_tokens += sum(o.token_cost for o in outcomes)
            self.failed_rollouts += sum(1 for o in outcomes if o.failed)


def mc_annotate_trace(
    problem: Problem,
    trace: ReasoningTrace,
    completer: CompletionBackend,
    cfg: McConfig,
    budget: RolloutBudget | None = None,
) -> AnnotatedTrace:
    """Apply :func:`mc_label_step` to every step of a trace.

    The soft success fraction is recorded in each rationale for audit, but
    only the hard label is used downstream.
    """
    annotations: list[StepAnnotation] = []
    annotator = f"mc:{completer.id}"
    for step in trace.steps:
        label, successes, outcomes = mc_label_step(problem, trace, step.index, completer, cfg)
        if budget is not None:
            budget.add(outcomes)
        annotations.append(StepAnnotation(
            step_index=step.index,
            label=label,
            rationale=f"{successes}/{cfg.k} rollouts reached the gold answer",
            annotator_tag=annotator,
        ))
    solution_correct = answers_match(trace.final_answer, problem.gold_answer)
    if not solution_correct and annotations[-1].label == 1:
        last = annotations[-1]
        annotations[-1] = StepAnnotation(
            step_index=last.step_index, label=0,
            rationale=last.rationale + " [final answer mismatch; label forced to 0]",
            annotator_tag=last.annotator_tag)
    return AnnotatedTrace(
        trace=trace,
        annotations=tuple(annotations),
        solution_correct=solution_correct,
        gold_answer=problem.gold_answer,
        problem_statement=problem.statement,
    )


# ---------------------------------------------------------------------------
# Annotator agreement, binned by trace length
# ---------------------------------------------------------------------------

def agreement_by_bins(
    a: Sequence[AnnotatedTrace],
    b: Sequence[AnnotatedTrace],
    n_bins: int = 10,
) -> list[tuple[int, float]]:
    """Per-bin step-label agreement between two annotations of the same traces.

    Traces are sorted by step count (ties broken by problem id, then by
    position for determinism) and split into ``n_bins`` equal-sized bins,
    with the remainder distributed to the last bins.  Each bin reports the
    fraction of its steps on which the two annotators agree.
    """
    if len(a) != len(b):
        raise ValueError(f"mismatched trace sets: {len(a)} vs {len(b)}")
    if len(a) < n_bins:
        raise ValueError(f"need at least {n_bins} traces, got {len(a)}")
    for i, (ta, tb) in enumerate(zip(a, b)):
        if ta.trace.problem_id != tb.trace.problem_id or ta.trace.step_texts != tb.trace.step_texts:
            raise ValueError(f"trace {i}: the two datasets annotate different traces")

    order = sorted(range(len(a)),
                   key=lambda i: (a[i].num_steps, a[i].trace.problem_id, i))
    base, rem = divmod(len(order), n_bins)
    sizes = [base] * (n_bins - rem) + [base + 1] * rem

    results: list[tuple[int, float]] = []
    cursor = 0
    for bin_index, size in enumerate(sizes):
        agree = 0
        total = 0
        for i in order[cursor:cursor + size]:
            for la, lb in zip(a[i].labels, b[i].labels):
                agree += int(la == lb)
                total += 1
        cursor += size
        results.append((bin_index, agree / total if total else 0.0))
    return results


def overall_agreement(a: Sequence[AnnotatedTrace], b: Sequence[AnnotatedTrace]) -> float:
    """Fraction of all steps where the two annotations agree."""
    agree = 0
    total = 0
    for ta, tb in zip(a, b):
        for la, lb in zip(ta.labels, tb.labels):
            agree += int(la == lb)
            total += 1
    return agree / total if total else 0.0
