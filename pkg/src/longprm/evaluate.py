"""Evaluation protocols: best-of-N, online step search, step-level
classification metrics, EF/RB diagnostic accuracy, and dataset statistics.

Every protocol is deterministic given (world/dataset seed, eval seed,
scorer id); per-problem seeds are derived by hashing so results do not
depend on scheduling or iteration order.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

from .backends import derive_seed
from .core import (
    AnnotatedTrace,
    Problem,
    ReasoningTrace,
    answers_match,
    make_trace,
    problem_of,
)
from .prm import StepScorer, count_reflection_words
from .segment import default_reflection_words


class TraceGenerator(Protocol):
    """Candidate producer for the solution-level protocols."""

    id: str

    def sample_trace(self, problem: Problem, seed: int) -> ReasoningTrace: ...

    def sample_next_step(self, problem: Problem, prefix_texts: Sequence[str],
                         seed: int) -> tuple[str, bool]: ...


# ---------------------------------------------------------------------------
# Best-of-N
# ---------------------------------------------------------------------------

def best_of_n(candidates: Sequence[tuple[ReasoningTrace, Sequence[float]]]) -> int:
    """Index of the candidate with the highest final-step score (a
    solution's score is its last step's score); ties go to the lowest index."""
    if not candidates:
        raise ValueError("candidates must be nonempty")
    best_index = 0
    best_score = None
    for i, (_, scores) in enumerate(candidates):
        if not scores:
            raise ValueError(f"candidate {i} has no step scores")
        final = scores[-1]
        if best_score is None or final > best_score:
            best_index, best_score = i, final
    return best_index


@dataclass
class PrmAtNResult:
    accuracy: float
    n: int
    per_problem: list[dict] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)


def sample_pool(generator: TraceGenerator, problem: Problem, n: int,
                seed: int) -> list[ReasoningTrace]:
    """The N candidate traces for a problem.  Pool membership depends only
    on (seed, problem id, sample index), so pools nest across N."""
    return [
        generator.sample_trace(problem, derive_seed(seed, "bon", problem.id, i))
        for i in range(n)
    ]


def prm_at_n(
    problems: Sequence[Problem],
    generator: TraceGenerator,
    scorer: StepScorer,
    n: int,
    seed: int = 0,
) -> PrmAtNResult:
    """Best-of-N accuracy: per problem, sample N candidates, keep the
    highest-scoring one, count it right iff its final answer matches gold."""
    result = PrmAtNResult(accuracy=0.0, n=n)
    correct = 0
    scored = 0
    for problem in problems:
        try:
            pool = sample_pool(generator, problem, n, seed)
        except Exception as exc:  # generator failure: skip, never silently
            result.skipped.append(f"{problem.id}: {exc}")
            continue
        scored_pool = [(t, scorer.score_steps(problem, t)) for t in pool]
        choice = best_of_n(scored_pool)
        hit = answers_match(pool[choice].final_answer, problem.gold_answer)
        correct += int(hit)
        scored += 1
        result.per_problem.append(
            {"problem_id": problem.id, "chosen": choice, "correct": hit})
    result.accuracy = correct / scored if scored else 0.0
    return result


# ---------------------------------------------------------------------------
# Online step-level search
# ---------------------------------------------------------------------------

@dataclass
class StepSearchResult:
    trace: ReasoningTrace
    terminated: bool

    def correct(self, problem: Problem) -> bool:
        return self.terminated and answers_match(
            self.trace.final_answer, problem.gold_answer)


def step_search(
    problem: Problem,
    generator: TraceGenerator,
    scorer: StepScorer,
    n: int,
    max_steps: int = 64,
    seed: int = 0,
) -> StepSearchResult:
    """Greedy reward-guided decoding: at each position sample N candidate
    next steps, keep the one whose extended prefix scores highest (ties to
    the lowest sample index), until the generator ends the solution or
    ``max_steps`` is hit (counted incorrect)."""
    prefix: list[str] = []
    terminated = False
    for round_index in range(max_steps):
        candidates: list[tuple[str, bool]] = [
            generator.sample_next_step(
                problem, prefix,
                derive_seed(seed, "search", problem.id, round_index, i))
            for i in range(n)
        ]
        best_i = 0
        best_score = None
        for i, (text, _) in enumerate(candidates):
            extended = make_trace(problem.id, prefix + [text],
                                  generator_tag=generator.id)
            score = scorer.score_steps(problem, extended)[-1]
            if best_score is None or score > best_score:
                best_i, best_score = i, score
        text, is_final = candidates[best_i]
        prefix.append(text)
        if is_final:
            terminated = True
            break
    trace = make_trace(problem.id, prefix, generator_tag=generator.id)
    return StepSearchResult(trace=trace, terminated=terminated)


def step_search_accuracy(
    problems: Sequence[Problem],
    generator: TraceGenerator,
    scorer: StepScorer,
    n: int,
    max_steps: int = 64,
    seed: int = 0,
) -> float:
    """Mean correctness of step-search traces over a problem set."""
    hits = 0
    for problem in problems:
        result = step_search(problem, generator, scorer, n, max_steps, seed)
        hits += int(result.correct(problem))
    return hits / len(problems) if problems else 0.0


# ---------------------------------------------------------------------------
# Step-level classification metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepMetrics:
    precision: float
    recall: float
    f1: float
    threshold: float
    true_positive: int = 0
    false_positive: int = 0
    false_negative: int = 0
    true_negative: int = 0


def step_level_metrics(
    scores: Sequence[float],
    labels: Sequence[int],
    threshold: float = 0.5,
) -> StepMetrics:
    """Precision/recall/F1 with "step is correct" (label 1) as the positive
    class; a step is predicted positive when its score >= threshold."""
    if not scores:
        raise ValueError("empty input")
    if len(scores) != len(labels):
        raise ValueError(f"{len(scores)} scores vs {len(labels)} labels")
    tp = fp = fn = tn = 0
    for s, y in zip(scores, labels):
        if y not in (0, 1):
            raise ValueError(f"labels must be 0 or 1, got {y!r}")
        predicted = s >= threshold
        if predicted and y == 1:
            tp += 1
        elif predicted and y == 0:
            fp += 1
        elif not predicted and y == 1:
            fn += 1
        else:
            tn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return StepMetrics(precision=precision, recall=recall, f1=f1, threshold=threshold,
                       true_positive=tp, false_positive=fp,
                       false_negative=fn, true_negative=tn)


def dataset_step_metrics(
    predicted: Sequence[AnnotatedTrace],
    gold: Sequence[AnnotatedTrace],
    threshold: float = 0.5,
    scores: Sequence[Sequence[float]] | None = None,
) -> StepMetrics:
    """Step metrics across two aligned datasets (same traces, one gold).

    When ``scores`` is given it is thresholded; otherwise the predicted
    dataset's hard labels stand in as scores.
    """
    if len(predicted) != len(gold):
        raise ValueError(f"mismatched datasets: {len(predicted)} vs {len(gold)}")
    flat_scores: list[float] = []
    flat_labels: list[int] = []
    for i, (p, g) in enumerate(zip(predicted, gold)):
        if p.num_steps != g.num_steps:
            raise ValueError(f"trace {i}: {p.num_steps} vs {g.num_steps} steps")
        flat_scores.extend(scores[i] if scores is not None else [float(x) for x in p.labels])
        flat_labels.extend(g.labels)
    return step_level_metrics(flat_scores, flat_labels, threshold)


# ---------------------------------------------------------------------------
# EF/RB diagnostic accuracy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EfRbResult:
    ef_accuracy: float
    rb_accuracy: float
    threshold: float
    solution_score: str

    @property
    def gap(self) -> float:
        return self.ef_accuracy - self.rb_accuracy


def solution_score(step_scores: Sequence[float], mode: str = "final") -> float:
    """Scalar score of a solution: its final step's score (consistent with
    best-of-N) or, alternatively, the minimum over steps."""
    if mode == "final":
        return step_scores[-1]
    if mode == "min":
        return min(step_scores)
    raise ValueError(f"unknown solution score mode {mode!r}")


def ef_rb_accuracy(
    scorer: StepScorer,
    ef_set: Sequence[AnnotatedTrace],
    rb_set: Sequence[AnnotatedTrace],
    threshold: float = 0.5,
    mode: str = "final",
) -> EfRbResult:
    """Accuracy of "this solution is correct" predictions on the two
    diagnostic sets (all members have correct final answers, so accuracy is
    the fraction scored at or above the threshold)."""
    if not ef_set or not rb_set:
        raise ValueError("both diagnostic sets must be nonempty")

    def set_accuracy(dataset: Sequence[AnnotatedTrace]) -> float:
        hits = 0
        for annotated in dataset:
            scores = scorer.score_steps(problem_of(annotated), annotated.trace)
            hits += int(solution_score(scores, mode) >= threshold)
        return hits / len(dataset)

    return EfRbResult(
        ef_accuracy=set_accuracy(ef_set),
        rb_accuracy=set_accuracy(rb_set),
        threshold=threshold,
        solution_score=mode,
    )


# ---------------------------------------------------------------------------
# Dataset distribution statistics
# ---------------------------------------------------------------------------

@dataclass
class DistStats:
    steps_per_solution: dict[int, int]
    tokens_per_step: dict[int, int]
    mean_steps: float
    mean_tokens_per_step: float
    mean_reflection_tokens: float
    n_traces: int
    n_steps: int

    def to_dict(self) -> dict:
        return {
            "steps_per_solution": {str(k): v for k, v in sorted(self.steps_per_solution.items())},
            "tokens_per_step": {str(k): v for k, v in sorted(self.tokens_per_step.items())},
            "mean_steps": self.mean_steps,
            "mean_tokens_per_step": self.mean_tokens_per_step,
            "mean_reflection_tokens": self.mean_reflection_tokens,
            "n_traces": self.n_traces,
            "n_steps": self.n_steps,
        }


def dataset_stats(dataset: Sequence[AnnotatedTrace],
                  reflection_words: Sequence[str] | None = None) -> DistStats:
    """Histograms of steps-per-solution and tokens-per-step, plus the mean
    reflection-token count per trace."""
    if not dataset:
        raise ValueError("dataset must be nonempty")
    words = tuple(reflection_words) if reflection_words is not None else default_reflection_words()
    steps_hist: Counter[int] = Counter()
    tokens_hist: Counter[int] = Counter()
    reflection_total = 0
    step_total = 0
    token_total = 0
    for annotated in dataset:
        steps_hist[annotated.num_steps] += 1
        for step in annotated.trace.steps:
            tokens_hist[step.token_count] += 1
            token_total += step.token_count
            step_total += 1
            reflection_total += count_reflection_words(step.text, words)
    return DistStats(
        steps_per_solution=dict(steps_hist),
        tokens_per_step=dict(tokens_hist),
        mean_steps=step_total / len(dataset),
        mean_tokens_per_step=token_total / step_total,
        mean_reflection_tokens=reflection_total / len(dataset),
        n_traces=len(dataset),
        n_steps=step_total,
    )


# ---------------------------------------------------------------------------
# Report bundle
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    provenance: dict = field(default_factory=dict)
    prm_at_n: dict[int, float] = field(default_factory=dict)
    prm_at_n_step: dict[int, float] = field(default_factory=dict)
    step_metrics: StepMetrics | None = None
    ef_accuracy: float | None = None
    rb_accuracy: float | None = None
    bins: list[tuple[int, float]] = field(default_factory=list)
    dist_stats: DistStats | None = None

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "prm_at_n": {str(k): v for k, v in sorted(self.prm_at_n.items())},
            "prm_at_n_step": {str(k): v for k, v in sorted(self.prm_at_n_step.items())},
            "step_metrics": None if self.step_metrics is None else {
                "precision": self.step_metrics.precision,
                "recall": self.step_metrics.recall,
                "f1": self.step_metrics.f1,
                "threshold": self.step_metrics.threshold,
            },
            "ef_accuracy": self.ef_accuracy,
            "rb_accuracy": self.rb_accuracy,
            "bins": [{"bin": b, "agreement": a} for b, a in self.bins],
            "dist_stats": None if self.dist_stats is None else self.dist_stats.to_dict(),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")


def write_plot_data(report: EvalReport, directory: str | Path) -> list[Path]:
    """Emit bin/histogram series as CSV files for external plotting."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if report.bins:
        path = directory / "bin_agreement.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin", "agreement"])
            writer.writerows(report.bins)
        written.append(path)
    if report.dist_stats is not None:
        for name, hist in (("steps_per_solution", report.dist_stats.steps_per_solution),
                           ("tokens_per_step", report.dist_stats.tokens_per_step)):
            path = directory / f"{name}.csv"
            with path.open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["value", "count"])
                writer.writerows(sorted(hist.items()))
            written.append(path)
    return written
