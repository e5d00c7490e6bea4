"""Domain types, answer matching, and JSONL persistence.

Everything downstream (segmentation, annotation, training, evaluation)
speaks in terms of the types defined here.  All types are immutable after
construction and validate their invariants in ``__post_init__``, so a
constructed value is always safe to share between workers.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence


class DatasetFormatError(ValueError):
    """A dataset file violates the JSONL record schema.

    Carries the 1-based line number and the offending field so callers can
    point at the exact problem.
    """

    def __init__(self, message: str, *, line: int | None = None, field_name: str | None = None):
        self.line = line
        self.field_name = field_name
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field_name is not None:
            prefix += f"field '{field_name}': "
        super().__init__(prefix + message)


def count_tokens(text: str) -> int:
    """Whitespace token count, the toolkit-wide token approximation."""
    return len(text.split())


# ---------------------------------------------------------------------------
# Answer normalization / matching
# ---------------------------------------------------------------------------

# Closed rule list, applied in order:
#   1. trim surrounding whitespace
#   2. peel surrounding math delimiters ($...$, $$...$$, \(...\), \[...\], \boxed{...})
#   3. strip trailing periods
#   4. drop thousands separators from fully-numeric strings
#   5. canonical decimal form (no leading zeros, no trailing fractional zeros)
#   6. lowercase
# Anything the rules do not touch passes through unchanged.

_DELIM_PAIRS = (("$$", "$$"), ("$", "$"), ("\\(", "\\)"), ("\\[", "\\]"))
_BOXED_RE = re.compile(r"^\\boxed\{(.*)\}$", re.DOTALL)
_THOUSANDS_RE = re.compile(r"^[+-]?\d{1,3}(?:,\d{3})+(?:\.\d+)?$")
_NUMERIC_RE = re.compile(r"^[+-]?(?:\d+\.?\d*|\.\d+)$")


def _peel_delimiters(s: str) -> str:
    while True:
        t = s.strip()
        m = _BOXED_RE.match(t)
        if m:
            s = m.group(1)
            continue
        for left, right in _DELIM_PAIRS:
            if len(t) > len(left) + len(right) and t.startswith(left) and t.endswith(right):
                s = t[len(left):-len(right)]
                break
        else:
            return t


def normalize_answer(raw: str) -> str:
    """Canonical form of a short final answer.  Total and idempotent."""
    s = raw.strip()
    while True:  # delimiters and trailing periods can interleave
        t = _peel_delimiters(s).rstrip(".").strip()
        if t == s:
            break
        s = t
    if _THOUSANDS_RE.match(s):
        s = s.replace(",", "")
    if _NUMERIC_RE.match(s):
        try:
            canonical = format(Decimal(s).normalize(), "f")
            if canonical in ("-0", "+0"):
                canonical = "0"
            s = canonical
        except InvalidOperation:  # pragma: no cover - regex already guards
            pass
    return s.lower()


def answers_match(a: str | None, b: str | None,
                  normalize: "Callable[[str], str]" = normalize_answer) -> bool:
    """True iff the two answers normalize to the same string.

    ``None`` (no answer extracted) never matches anything.  Datasets with
    special answer formats can pass their own ``normalize`` hook.
    """
    if a is None or b is None:
        return False
    return normalize(a) == normalize(b)


_FINAL_ANSWER_RE = re.compile(r"final answer\s*(?:is)?\s*[:\-]?\s*(.+?)\s*$",
                              re.IGNORECASE | re.MULTILINE)
_BOXED_ANY_RE = re.compile(r"\\boxed\{([^{}]*)\}")


def extract_final_answer(text: str) -> str | None:
    """Pull the short final answer out of a step or completion.

    Looks for the last "final answer: ..." marker, then the last
    ``\\boxed{...}``.  Returns ``None`` when neither is present.
    """
    markers = _FINAL_ANSWER_RE.findall(text)
    if markers:
        return markers[-1].strip()
    boxed = _BOXED_ANY_RE.findall(text)
    if boxed:
        return boxed[-1].strip()
    return None


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Problem:
    """A question with a known gold answer."""

    id: str
    statement: str
    gold_answer: str
    source_tag: str = ""

    def __post_init__(self):
        if not self.id:
            raise ValueError("Problem.id must be nonempty")
        if not self.gold_answer:
            raise ValueError(f"Problem {self.id!r}: gold_answer must be nonempty")


@dataclass(frozen=True)
class Step:
    """One reasoning step of a trace.  ``token_count`` is derived from
    ``text`` when not supplied."""

    index: int
    text: str
    token_count: int = 0

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"Step.index must be >= 0, got {self.index}")
        if not self.text.strip():
            raise ValueError(f"Step {self.index}: text must be nonempty after trimming")
        if self.token_count == 0:
            object.__setattr__(self, "token_count", count_tokens(self.text))
        if self.token_count < 1:
            raise ValueError(f"Step {self.index}: token_count must be >= 1")


class LocalEvent(str, Enum):
    """What a step does locally, before propagation rules are applied."""

    LOCAL_ERROR = "local_error"
    SOUND_CONTINUATION = "sound_continuation"
    NEW_APPROACH = "new_approach"
    CORRECTS_PRIOR = "corrects_prior"


@dataclass(frozen=True)
class LocalEventTag:
    """Per-step event tag.  ``final_answer_matches`` is set only on the
    last step of a trace."""

    event: LocalEvent
    final_answer_matches: bool | None = None


@dataclass(frozen=True)
class ReasoningTrace:
    """A problem id plus an ordered, contiguously indexed list of steps."""

    problem_id: str
    steps: tuple[Step, ...]
    final_answer: str | None = None
    generator_tag: str = ""

    def __post_init__(self):
        if not self.steps:
            raise ValueError(f"trace {self.problem_id!r}: steps must be nonempty")
        object.__setattr__(self, "steps", tuple(self.steps))
        for pos, step in enumerate(self.steps):
            if step.index != pos:
                raise ValueError(
                    f"trace {self.problem_id!r}: step indices must be contiguous "
                    f"0..K-1, position {pos} has index {step.index}")

    @property
    def num_steps(self) -> int:
        return len(self.steps)

    @property
    def step_texts(self) -> tuple[str, ...]:
        return tuple(s.text for s in self.steps)


def make_trace(problem_id: str, step_texts: Sequence[str], generator_tag: str = "") -> ReasoningTrace:
    """Build a trace from raw step texts; extracts the final answer from the
    last step."""
    steps = tuple(Step(index=i, text=t) for i, t in enumerate(step_texts))
    return ReasoningTrace(
        problem_id=problem_id,
        steps=steps,
        final_answer=extract_final_answer(steps[-1].text),
        generator_tag=generator_tag,
    )


@dataclass(frozen=True)
class StepAnnotation:
    """Binary label plus rationale for one step."""

    step_index: int
    label: int
    rationale: str
    local_tag: LocalEventTag | None = None
    annotator_tag: str = ""

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"step {self.step_index}: label must be 0 or 1, got {self.label!r}")
        if self.step_index < 0:
            raise ValueError(f"step_index must be >= 0, got {self.step_index}")


@dataclass(frozen=True)
class AnnotatedTrace:
    """A trace with exactly one annotation per step.

    ``solution_correct`` is stored, not recomputed, because the gold answer
    may be unavailable at scoring time.  ``gold_answer`` and
    ``problem_statement`` ride along so a dataset record is self-contained.
    """

    trace: ReasoningTrace
    annotations: tuple[StepAnnotation, ...]
    solution_correct: bool
    gold_answer: str | None = None
    problem_statement: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))
        if len(self.annotations) != self.trace.num_steps:
            raise ValueError(
                f"trace {self.trace.problem_id!r}: {len(self.annotations)} annotations "
                f"for {self.trace.num_steps} steps")
        for pos, ann in enumerate(self.annotations):
            if ann.step_index != pos:
                raise ValueError(
                    f"trace {self.trace.problem_id!r}: annotation {pos} references "
                    f"step {ann.step_index}")
        if not self.solution_correct and self.annotations[-1].label != 0:
            raise ValueError(
                f"trace {self.trace.problem_id!r}: final step of an incorrect "
                f"solution must be labeled 0")

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(a.label for a in self.annotations)

    @property
    def num_steps(self) -> int:
        return self.trace.num_steps


class SolutionClass(str, Enum):
    ERROR_FREE = "error_free"
    REFLECTION_BASED = "reflection_based"
    INCORRECT = "incorrect"


def classify_solution(annotated: AnnotatedTrace) -> SolutionClass:
    """Partition a fully annotated trace into exactly one diagnostic class."""
    if not annotated.solution_correct:
        return SolutionClass.INCORRECT
    if all(label == 1 for label in annotated.labels):
        return SolutionClass.ERROR_FREE
    return SolutionClass.REFLECTION_BASED


def split_ef_rb(dataset: Iterable[AnnotatedTrace]) -> tuple[list[AnnotatedTrace], list[AnnotatedTrace]]:
    """Split a dataset into the error-free and reflection-based diagnostic
    sets (incorrect solutions are dropped)."""
    ef: list[AnnotatedTrace] = []
    rb: list[AnnotatedTrace] = []
    for t in dataset:
        cls = classify_solution(t)
        if cls is SolutionClass.ERROR_FREE:
            ef.append(t)
        elif cls is SolutionClass.REFLECTION_BASED:
            rb.append(t)
    return ef, rb


def problem_of(annotated: AnnotatedTrace) -> Problem:
    """Reconstruct a Problem from a self-contained dataset record."""
    return Problem(
        id=annotated.trace.problem_id,
        statement=annotated.problem_statement or "",
        gold_answer=annotated.gold_answer or "?",
        source_tag="dataset",
    )


# ---------------------------------------------------------------------------
# JSONL persistence
# ---------------------------------------------------------------------------

_REQUIRED_FIELDS = ("problem", "steps", "labels", "rationales", "annotator",
                    "solution_correct", "gold_answer", "generator")
_ARRAY_FIELDS = ("steps", "labels", "rationales")


def _tag_to_json(tag: LocalEventTag | None) -> dict | None:
    if tag is None:
        return None
    out: dict = {"event": tag.event.value}
    if tag.final_answer_matches is not None:
        out["final_answer_matches"] = tag.final_answer_matches
    return out


def _tag_from_json(obj, *, line: int) -> LocalEventTag | None:
    if obj is None:
        return None
    if not isinstance(obj, dict) or "event" not in obj:
        raise DatasetFormatError("tag entries must be null or {event, ...}",
                                 line=line, field_name="tags")
    try:
        event = LocalEvent(obj["event"])
    except ValueError:
        raise DatasetFormatError(f"unknown event {obj['event']!r}",
                                 line=line, field_name="tags") from None
    return LocalEventTag(event=event, final_answer_matches=obj.get("final_answer_matches"))


def record_to_json(annotated: AnnotatedTrace) -> dict:
    """One self-contained JSONL record for an annotated trace."""
    annotators = {a.annotator_tag for a in annotated.annotations}
    if len(annotators) != 1:
        raise ValueError(
            f"trace {annotated.trace.problem_id!r}: records hold a single "
            f"annotator, got {sorted(annotators)}")
    record = {
        "problem": annotated.problem_statement or "",
        "problem_id": annotated.trace.problem_id,
        "steps": [s.text for s in annotated.trace.steps],
        "labels": [a.label for a in annotated.annotations],
        "rationales": [a.rationale for a in annotated.annotations],
        "annotator": annotated.annotations[0].annotator_tag,
        "solution_correct": annotated.solution_correct,
        "gold_answer": annotated.gold_answer or "",
        "generator": annotated.trace.generator_tag,
        "final_answer": annotated.trace.final_answer,
    }
    if any(a.local_tag is not None for a in annotated.annotations):
        record["tags"] = [_tag_to_json(a.local_tag) for a in annotated.annotations]
    return record


def record_from_json(record: dict, *, line: int = 0) -> AnnotatedTrace:
    """Parse and validate one JSONL record."""
    for name in _REQUIRED_FIELDS:
        if name not in record:
            raise DatasetFormatError("missing required field", line=line, field_name=name)
    for name in _ARRAY_FIELDS:
        if not isinstance(record[name], list):
            raise DatasetFormatError("must be an array", line=line, field_name=name)
    n = len(record["steps"])
    for name in _ARRAY_FIELDS:
        if len(record[name]) != n:
            raise DatasetFormatError(
                f"length {len(record[name])} != steps length {n}",
                line=line, field_name=name)
    if "tags" in record:
        if not isinstance(record["tags"], list) or len(record["tags"]) != n:
            raise DatasetFormatError("must be an array matching steps length",
                                     line=line, field_name="tags")
    for i, label in enumerate(record["labels"]):
        if label not in (0, 1):
            raise DatasetFormatError(f"entry {i} is {label!r}, expected 0 or 1",
                                     line=line, field_name="labels")
    if not isinstance(record["solution_correct"], bool):
        raise DatasetFormatError("must be a boolean", line=line, field_name="solution_correct")

    problem_id = record.get("problem_id") or record["problem"] or f"record-{line}"
    try:
        steps = tuple(Step(index=i, text=t) for i, t in enumerate(record["steps"]))
        tags = record.get("tags", [None] * n)
        annotations = tuple(
            StepAnnotation(
                step_index=i,
                label=record["labels"][i],
                rationale=record["rationales"][i],
                local_tag=_tag_from_json(tags[i], line=line),
                annotator_tag=record["annotator"],
            )
            for i in range(n)
        )
        trace = ReasoningTrace(
            problem_id=problem_id,
            steps=steps,
            final_answer=record.get("final_answer"),
            generator_tag=record["generator"],
        )
        return AnnotatedTrace(
            trace=trace,
            annotations=annotations,
            solution_correct=record["solution_correct"],
            gold_answer=record["gold_answer"] or None,
            problem_statement=record["problem"] or None,
        )
    except DatasetFormatError:
        raise
    except ValueError as exc:
        raise DatasetFormatError(str(exc), line=line, field_name=None) from exc


def write_dataset(records: Iterable[AnnotatedTrace], path: str | Path) -> int:
    """Write records as JSONL, one per line.  Returns the count written."""
    path = Path(path)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for annotated in records:
            fh.write(json.dumps(record_to_json(annotated), ensure_ascii=False))
            fh.write("\n")
            count += 1
    return count


def read_dataset(path: str | Path) -> list[AnnotatedTrace]:
    """Read a JSONL dataset.  Raises on the first malformed line; never
    returns a partial parse."""
    path = Path(path)
    out: list[AnnotatedTrace] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"invalid JSON ({exc.msg})", line=lineno) from exc
            if not isinstance(record, dict):
                raise DatasetFormatError("record must be a JSON object", line=lineno)
            out.append(record_from_json(record, line=lineno))
    return out
