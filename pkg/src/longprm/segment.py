"""Segmentation of raw long-form reasoning text into steps.

Three strategies: double-newline splitting (SDN), reflection-word splitting
with short-segment merging (SRW), and LLM-assisted resegmentation with a
content-preservation guard and an SRW fallback.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

from .backends import CompletionBackend, SamplingParams
from .core import Step, count_tokens


class EmptyInputError(ValueError):
    """Input text has no non-whitespace content."""


class Strategy(str, Enum):
    SDN = "sdn"
    SRW = "srw"
    LLM_ASSISTED = "llm"


def _load_asset(name: str) -> str:
    return resources.files("longprm.assets").joinpath(name).read_text(encoding="utf-8")


def default_reflection_words() -> tuple[str, ...]:
    """Reflection-word vocabulary shipped with the package (data, not code)."""
    return load_reflection_words_text(_load_asset("reflection_words.txt"))


def load_reflection_words_text(text: str) -> tuple[str, ...]:
    words = tuple(line.strip().lower() for line in text.splitlines() if line.strip())
    return words


def load_reflection_words(path: str | Path) -> tuple[str, ...]:
    """Load a one-word-per-line reflection vocabulary file."""
    return load_reflection_words_text(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class SegmentationConfig:
    strategy: Strategy = Strategy.SDN
    reflection_words: tuple[str, ...] = field(default_factory=default_reflection_words)
    min_step_tokens: int = 3
    # Caps for the LLM strategy; defaults are this repo's choices, exposed as
    # config because no canonical values exist.
    max_steps: int = 40
    max_step_tokens: int = 600
    retries: int = 2

    def __post_init__(self):
        if self.min_step_tokens < 1 or self.max_steps < 1 or self.max_step_tokens < 1:
            raise ValueError("min_step_tokens, max_steps, max_step_tokens must be >= 1")
        if self.min_step_tokens > self.max_step_tokens:
            raise ValueError("min_step_tokens must be <= max_step_tokens")
        if self.strategy is Strategy.SRW and not self.reflection_words:
            raise ValueError("SRW strategy requires a nonempty reflection word list")


_DOUBLE_NEWLINE_RE = re.compile(r"\n{2,}")
_NEWLINE_RUN_RE = re.compile(r"[\r\n]+")
_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")


def flatten_linebreaks(text: str) -> str:
    """Replace every line-break run with a single space."""
    return _NEWLINE_RUN_RE.sub(" ", text)


def _steps_from_texts(texts: list[str]) -> list[Step]:
    return [Step(index=i, text=t) for i, t in enumerate(texts)]


def segment_sdn(text: str) -> list[Step]:
    """Split on runs of two or more newlines, dropping blank segments."""
    if not text.strip():
        raise EmptyInputError("cannot segment whitespace-only text")
    parts = [p.strip() for p in _DOUBLE_NEWLINE_RE.split(text)]
    return _steps_from_texts([p for p in parts if p])


def _starts_with_reflection_word(sentence: str, words: tuple[str, ...]) -> bool:
    lowered = sentence.lstrip().lower()
    for w in words:
        if lowered.startswith(w):
            rest = lowered[len(w):]
            if not rest or not rest[0].isalnum():
                return True
    return False


def segment_srw(text: str, config: SegmentationConfig) -> list[Step]:
    """Split before each sentence opening with a reflection word, then merge
    segments shorter than ``min_step_tokens`` into their neighbors (the first
    segment merges forward, the rest merge backward)."""
    if not text.strip():
        raise EmptyInputError("cannot segment whitespace-only text")
    if not config.reflection_words:
        raise ValueError("segment_srw requires a nonempty reflection word list")

    sentences = [s for s in _SENTENCE_SPLIT_RE.split(text.strip()) if s.strip()]
    segments: list[str] = []
    current: list[str] = []
    for sentence in sentences:
        if current and _starts_with_reflection_word(sentence, config.reflection_words):
            segments.append(" ".join(current))
            current = [sentence]
        else:
            current.append(sentence)
    if current:
        segments.append(" ".join(current))

    merged: list[str] = []
    pending_forward: str | None = None
    for seg in segments:
        if pending_forward is not None:
            seg = pending_forward + " " + seg
            pending_forward = None
        if count_tokens(seg) >= config.min_step_tokens:
            merged.append(seg)
        elif merged:
            merged[-1] = merged[-1] + " " + seg
        else:
            pending_forward = seg
    if pending_forward is not None:
        # everything was short: emit the accumulated singleton
        merged.append(pending_forward)
    return _steps_from_texts(merged)


@dataclass(frozen=True)
class SegmentationViolation:
    offset: int
    message: str


_WS_RE = re.compile(r"\s+")


def _normalize_ws(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


def validate_segmentation(original: str, steps: list[Step]) -> list[SegmentationViolation]:
    """Check that the steps reproduce the original text up to whitespace.

    Returns an empty list when the segmentation is faithful, otherwise one
    violation naming the first diverging character offset (in the
    whitespace-normalized strings).
    """
    want = _normalize_ws(original)
    got = _normalize_ws(" ".join(s.text for s in steps))
    if want == got:
        return []
    offset = next(
        (i for i, (a, b) in enumerate(zip(want, got)) if a != b),
        min(len(want), len(got)),
    )
    return [SegmentationViolation(
        offset=offset,
        message=(f"segmented text diverges from original at offset {offset}: "
                 f"expected {want[offset:offset + 24]!r}, got {got[offset:offset + 24]!r}"),
    )]


@dataclass(frozen=True)
class ResegmentResult:
    steps: list[Step]
    used_fallback: bool = False
    failure: str | None = None


_JSON_ARRAY_RE = re.compile(r"\[")


def _extract_string_array(raw: str) -> list[str] | None:
    """First well-formed JSON array of strings in ``raw``, tolerating fences
    and surrounding prose."""
    decoder = json.JSONDecoder()
    for match in _JSON_ARRAY_RE.finditer(raw):
        try:
            value, _ = decoder.raw_decode(raw, match.start())
        except json.JSONDecodeError:
            continue
        if isinstance(value, list) and value and all(isinstance(v, str) for v in value):
            return value
    return None


def resegment_with_llm(
    text: str,
    judge: CompletionBackend,
    config: SegmentationConfig,
    params: SamplingParams | None = None,
) -> ResegmentResult:
    """Ask an LLM to resegment flattened text; fall back to SRW when the
    response fails validation ``config.retries + 1`` times."""
    if not text.strip():
        raise EmptyInputError("cannot segment whitespace-only text")
    params = params or SamplingParams(temperature=0.0, max_tokens=4096)
    flattened = flatten_linebreaks(text)
    template = _load_asset("resegment_prompt.txt")
    prompt = template.format(
        max_steps=config.max_steps, max_step_tokens=config.max_step_tokens, text=flattened)

    last_failure = ""
    for attempt in range(config.retries + 1):
        request = prompt if attempt == 0 else (
            prompt + f"\n\nYour previous response was rejected: {last_failure} "
                     "Respond with only the JSON array of verbatim steps.")
        raw = judge.complete(request, params)
        texts = _extract_string_array(raw)
        if texts is None:
            last_failure = "no JSON array of strings found."
            continue
        texts = [t.strip() for t in texts if t.strip()]
        if not texts:
            last_failure = "the array contained no nonempty steps."
            continue
        if len(texts) > config.max_steps:
            last_failure = f"{len(texts)} steps exceed the cap of {config.max_steps}."
            continue
        steps = _steps_from_texts(texts)
        violations = validate_segmentation(flattened, steps)
        if violations:
            last_failure = violations[0].message + "."
            continue
        return ResegmentResult(steps=steps)

    fallback = segment_srw(flattened, config)
    return ResegmentResult(steps=fallback, used_fallback=True, failure=last_failure.rstrip("."))


def segment(text: str, config: SegmentationConfig,
            judge: CompletionBackend | None = None) -> list[Step]:
    """Dispatch on the configured strategy."""
    if config.strategy is Strategy.SDN:
        return segment_sdn(text)
    if config.strategy is Strategy.SRW:
        return segment_srw(text, config)
    if judge is None:
        raise ValueError("LLM-assisted segmentation requires a completion backend")
    return resegment_with_llm(text, judge, config).steps
