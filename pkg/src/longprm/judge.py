"""LLM judging of reasoning steps, and the deterministic label automaton.

The automaton is the executable form of the annotation rules for reflective
reasoning: a local error taints the state, sound continuations inherit the
taint (error propagation), and a correction or a fresh approach clears it
(error cessation).  The last step is additionally forced to 0 when the
stated final answer does not match the gold answer.  It serves both as the
oracle for simulated data and as a validator for label sequences.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Sequence

from .backends import CompletionBackend, SamplingParams
from .core import (
    AnnotatedTrace,
    LocalEvent,
    LocalEventTag,
    Problem,
    ReasoningTrace,
    Step,
    StepAnnotation,
    answers_match,
)

DEFAULT_JUDGE_PARAMS = SamplingParams(temperature=0.0, max_tokens=8192)


# ---------------------------------------------------------------------------
# Label automaton
# ---------------------------------------------------------------------------

class MalformedTagsError(ValueError):
    """Tag sequence violates the final-flag placement rules."""


def expected_labels(tags: Sequence[LocalEventTag]) -> list[int]:
    """Gold labels implied by a local-event tag sequence.

    Two-state automaton over ``err in {clean, dirty}``:

    * local error        -> 0, err := dirty
    * sound continuation -> 1 if clean else 0 (propagation), err unchanged
    * new approach /
      corrects prior     -> 1, err := clean (cessation)

    The last label is forced to 0 when ``final_answer_matches`` is False.
    """
    if not tags:
        raise MalformedTagsError("tag sequence must be nonempty")
    last = len(tags) - 1
    for i, tag in enumerate(tags):
        if i != last and tag.final_answer_matches is not None:
            raise MalformedTagsError(
                f"final_answer_matches set on step {i}, which is not the last step")
    if tags[last].final_answer_matches is None:
        raise MalformedTagsError("final_answer_matches must be set on the last tag")

    labels: list[int] = []
    dirty = False
    for tag in tags:
        if tag.event is LocalEvent.LOCAL_ERROR:
            labels.append(0)
            dirty = True
        elif tag.event is LocalEvent.SOUND_CONTINUATION:
            labels.append(0 if dirty else 1)
        else:  # NEW_APPROACH or CORRECTS_PRIOR
            labels.append(1)
            dirty = False
    if tags[last].final_answer_matches is False:
        labels[last] = 0
    return labels


@dataclass(frozen=True)
class LabelViolation:
    step_index: int
    expected: int
    actual: int

    def __str__(self) -> str:
        return f"step {self.step_index}: expected {self.expected}, got {self.actual}"


def validate_label_sequence(tags: Sequence[LocalEventTag],
                            labels: Sequence[int]) -> list[LabelViolation]:
    """Indices where ``labels`` deviates from the automaton; empty when ok."""
    if len(tags) != len(labels):
        raise ValueError(f"{len(tags)} tags vs {len(labels)} labels")
    want = expected_labels(tags)
    return [
        LabelViolation(step_index=i, expected=w, actual=a)
        for i, (w, a) in enumerate(zip(want, labels))
        if w != a
    ]


# ---------------------------------------------------------------------------
# Prompt construction and response parsing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JudgeRequest:
    problem: Problem
    steps: tuple[Step, ...]
    prompt_text: str


@dataclass(frozen=True)
class VerdictEntry:
    step_key: str
    score: int
    reason: str


@dataclass(frozen=True)
class JudgeVerdict:
    entries: tuple[VerdictEntry, ...]

    @property
    def scores(self) -> list[int]:
        return [e.score for e in self.entries]


def _judge_template() -> str:
    return resources.files("longprm.assets").joinpath("judge_prompt.txt").read_text(
        encoding="utf-8")


def render_steps_block(steps: Sequence[Step]) -> str:
    return "\n\n".join(f"STEP {s.index}:\n{s.text}" for s in steps)


def build_judge_prompt(problem: Problem, steps: Sequence[Step]) -> JudgeRequest:
    """Render the judging template with the problem, numbered steps, and the
    gold answer substituted in."""
    if not steps:
        raise ValueError("cannot judge an empty step list")
    prompt = _judge_template().format(
        problem=problem.statement,
        gold_answer=problem.gold_answer,
        steps_block=render_steps_block(steps),
    )
    return JudgeRequest(problem=problem, steps=tuple(steps), prompt_text=prompt)


class JudgeResponseError(ValueError):
    """Judge response could not be turned into a complete verdict."""


class ParseFailure(JudgeResponseError):
    pass


class CoverageMismatch(JudgeResponseError):
    pass


class DomainError(JudgeResponseError):
    pass


_STEP_KEY_RE = re.compile(r"^STEP\s+(\d+)$")


def parse_judge_response(raw: str, expected_steps: int) -> JudgeVerdict:
    """Extract the first well-formed verdict array from free-form judge
    output, tolerating surrounding prose and code fences."""
    decoder = json.JSONDecoder()
    array: list | None = None
    for pos in (m.start() for m in re.finditer(r"\[", raw)):
        try:
            value, _ = decoder.raw_decode(raw, pos)
        except json.JSONDecodeError:
            continue
        if isinstance(value, list) and value and all(isinstance(v, dict) for v in value):
            array = value
            break
    if array is None:
        raise ParseFailure("no JSON array of step objects found in the response")

    by_index: dict[int, VerdictEntry] = {}
    for obj in array:
        step_key = None
        score = None
        for key, val in obj.items():
            m = _STEP_KEY_RE.match(key.strip())
            if m:
                step_key = f"STEP {int(m.group(1))}"
                score = val
                break
        if step_key is None:
            raise ParseFailure(f"entry without a STEP key: {json.dumps(obj)[:80]}")
        index = int(step_key.split()[1])
        if score not in (0, 1):
            raise DomainError(f"{step_key}: score {score!r} outside {{0, 1}}")
        if index in by_index:
            raise CoverageMismatch(f"{step_key}: duplicated")
        reason = str(obj.get("Reason", obj.get("reason", "")))
        by_index[index] = VerdictEntry(step_key=step_key, score=score, reason=reason)

    missing = [i for i in range(expected_steps) if i not in by_index]
    extra = [i for i in sorted(by_index) if i >= expected_steps]
    if missing or extra:
        parts = []
        if missing:
            parts.append("missing " + ", ".join(f"STEP {i}" for i in missing))
        if extra:
            parts.append("unexpected " + ", ".join(f"STEP {i}" for i in extra))
        raise CoverageMismatch("; ".join(parts))
    return JudgeVerdict(entries=tuple(by_index[i] for i in range(expected_steps)))


# ---------------------------------------------------------------------------
# Whole-trace annotation
# ---------------------------------------------------------------------------

class AnnotationFailed(RuntimeError):
    """Judge never produced a parseable verdict within the retry budget."""

    def __init__(self, problem_id: str, raw_response: str, error: str):
        self.problem_id = problem_id
        self.raw_response = raw_response
        self.error = error
        super().__init__(f"annotation failed for {problem_id!r}: {error}")


RejectsSink = Callable[[dict], None]


def jsonl_rejects_sink(path) -> RejectsSink:
    """Append rejected annotation attempts to a JSONL file."""
    def sink(entry: dict) -> None:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
    return sink


def annotate_trace(
    trace: ReasoningTrace,
    problem: Problem,
    judge: CompletionBackend,
    retries: int = 2,
    params: SamplingParams = DEFAULT_JUDGE_PARAMS,
    rejects: RejectsSink | None = None,
) -> AnnotatedTrace:
    """Judge a whole trace in one prompt and return step annotations.

    Malformed responses are retried with the parse error appended as a
    corrective instruction.  The final-step rule is enforced locally: when
    the trace's extracted final answer does not match the gold answer, the
    last label is overridden to 0 and the override is recorded in the
    rationale.
    """
    request = build_judge_prompt(problem, trace.steps)
    prompt = request.prompt_text
    raw = ""
    last_error = ""
    verdict: JudgeVerdict | None = None
    for attempt in range(retries + 1):
        attempt_prompt = prompt if attempt == 0 else (
            prompt + f"\n\nYour previous response was invalid: {last_error}. "
                     "Respond with only the JSON array, one object per step, "
                     "covering every step exactly once.")
        raw = judge.complete(attempt_prompt, params)
        try:
            verdict = parse_judge_response(raw, expected_steps=trace.num_steps)
            break
        except JudgeResponseError as exc:
            last_error = str(exc)
    if verdict is None:
        if rejects is not None:
            rejects({"problem_id": problem.id, "raw_response": raw, "error": last_error})
        raise AnnotationFailed(problem.id, raw, last_error)

    solution_correct = answers_match(trace.final_answer, problem.gold_answer)
    annotations: list[StepAnnotation] = []
    for entry in verdict.entries:
        index = int(entry.step_key.split()[1])
        label = entry.score
        rationale = entry.reason
        if index == trace.num_steps - 1 and not solution_correct and label == 1:
            label = 0
            rationale = (rationale + " [final answer does not match the gold "
                                     "answer; label overridden to 0]").strip()
        annotations.append(StepAnnotation(
            step_index=index, label=label, rationale=rationale,
            annotator_tag=judge.id))
    return AnnotatedTrace(
        trace=trace,
        annotations=tuple(annotations),
        solution_correct=solution_correct,
        gold_answer=problem.gold_answer,
        problem_statement=problem.statement,
    )
