"""Deterministic simulated world with analytically known step correctness.

Problems are arithmetic chains: start from a small integer and apply a fixed
sequence of binary operations; the unique final value is the gold answer.
Generated traces walk the chain and narrate each move as an explicit
equality, so every step's correctness is decidable by replaying the text
against the true chain:

* a step may introduce a wrong intermediate value (probability ``p_err``),
* later steps continue computing correctly *from the wrong value* until a
  correction fires (probability ``p_fix`` per step) and restores the true
  value, carrying a reflection marker,
* the trace ends with a "Final answer" step that is correct iff the running
  value is back on the true chain.

Error offsets are nonzero and the operation set contains no zero
multiplications, so a tainted value can never collide with the true one:
the final answer is correct exactly when the replayed state ends clean.

Everything is a pure function of (world, arguments, seed); per-call seeds
are derived by hashing, so concurrency cannot change any result.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

from .backends import SamplingParams, derive_seed
from .core import (
    LocalEvent,
    LocalEventTag,
    Problem,
    ReasoningTrace,
    Step,
    answers_match,
    count_tokens,
    make_trace,
)
from .judge import JudgeRequest, expected_labels
from .mc import RolloutOutcome

_ADD, _SUB, _MUL = "add", "subtract", "multiply"
_OP_WORDS = {_ADD: "add", _SUB: "subtract", _MUL: "multiply by"}
_OP_SYMBOLS = {_ADD: "+", _SUB: "-", _MUL: "*"}

_CORRECTION_OPENERS = (
    "Wait, that does not look right.",
    "Hold on, let me check the last result against the problem.",
    "Hmm, let me reconsider the previous computation.",
    "Actually, I should rethink that step.",
)


class SimParseError(ValueError):
    """Text handed to the simulator does not follow the world's format."""


@dataclass(frozen=True)
class SimWorld:
    seed: int
    p_err: float = 0.2
    p_fix: float = 0.5
    strength: float = 1.0
    min_ops: int = 4
    max_ops: int = 16

    def __post_init__(self):
        for name in ("p_err", "p_fix"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.strength < 0:
            raise ValueError(f"strength must be >= 0, got {self.strength}")
        if not 1 <= self.min_ops <= self.max_ops:
            raise ValueError("need 1 <= min_ops <= max_ops")


@dataclass(frozen=True)
class Chain:
    """The hidden computation: start value, operations, and true values."""

    start: int
    ops: tuple[tuple[str, int], ...]

    @property
    def length(self) -> int:
        return len(self.ops)

    def apply(self, value: int, position: int) -> int:
        op, operand = self.ops[position]
        if op == _ADD:
            return value + operand
        if op == _SUB:
            return value - operand
        return value * operand

    @property
    def values(self) -> tuple[int, ...]:
        out = [self.start]
        for j in range(self.length):
            out.append(self.apply(out[-1], j))
        return tuple(out)

    @property
    def answer(self) -> int:
        return self.values[-1]


@lru_cache(maxsize=65536)
def make_chain(world: SimWorld, index: int) -> Chain:
    rng = random.Random(derive_seed(world.seed, "problem", index))
    length = rng.randint(world.min_ops, world.max_ops)
    ops: list[tuple[str, int]] = []
    for _ in range(length):
        roll = rng.random()
        if roll < 0.15:
            ops.append((_MUL, rng.choice((2, 3))))
        elif roll < 0.575:
            ops.append((_ADD, rng.randint(1, 9)))
        else:
            ops.append((_SUB, rng.randint(1, 9)))
    return Chain(start=rng.randint(2, 9), ops=tuple(ops))


def statement_for_chain(chain: Chain) -> str:
    parts = [f"Start with {chain.start}."]
    for op, operand in chain.ops:
        parts.append(f"Then {_OP_WORDS[op]} {operand}.")
    parts.append("Report the final value.")
    return " ".join(parts)


_STATEMENT_START_RE = re.compile(r"Start with (-?\d+)\.")
_STATEMENT_OP_RE = re.compile(r"Then (add|subtract|multiply by) (\d+)\.")


@lru_cache(maxsize=65536)
def chain_from_statement(statement: str) -> Chain:
    """Recover the hidden chain from a problem statement (the statement is
    the chain, written out)."""
    m = _STATEMENT_START_RE.search(statement)
    if not m:
        raise SimParseError(f"not a simulated problem statement: {statement[:80]!r}")
    ops = []
    for word, operand in _STATEMENT_OP_RE.findall(statement):
        op = {_OP_WORDS[_ADD]: _ADD, _OP_WORDS[_SUB]: _SUB, _OP_WORDS[_MUL]: _MUL}[word]
        ops.append((op, int(operand)))
    if not ops:
        raise SimParseError("simulated problem statement contains no operations")
    return Chain(start=int(m.group(1)), ops=tuple(ops))


def make_problem(world: SimWorld, index: int) -> Problem:
    chain = make_chain(world, index)
    return Problem(
        id=f"sim-{world.seed}-{index:05d}",
        statement=statement_for_chain(chain),
        gold_answer=str(chain.answer),
        source_tag="simworld",
    )


def _problem_index(world: SimWorld, problem: Problem) -> int:
    m = re.fullmatch(r"sim-(-?\d+)-(\d+)", problem.id)
    if not m or int(m.group(1)) != world.seed:
        raise SimParseError(f"problem {problem.id!r} does not belong to world seed {world.seed}")
    return int(m.group(2))


def chain_of(world: SimWorld, problem: Problem) -> Chain:
    """Chain for a problem of this world; falls back to parsing the
    statement so foreign-but-well-formed problems also work."""
    try:
        return make_chain(world, _problem_index(world, problem))
    except SimParseError:
        return chain_from_statement(problem.statement)


# ---------------------------------------------------------------------------
# Step text rendering and replay
# ---------------------------------------------------------------------------

def _move_text(position: int, op: str, operand: int, value: int, result: int) -> str:
    return (f"Move {position + 1}: {_OP_WORDS[op]} {operand}, "
            f"so {value} {_OP_SYMBOLS[op]} {operand} = {result}.")

_MOVE_RE = re.compile(
    r"Move (\d+): (?:add|subtract|multiply by) \d+, "
    r"so (-?\d+) [+\-*] (\d+) = (-?\d+)\.")
_CORRECTION_RE = re.compile(
    r"the value after move (\d+) should be (-?\d+)\.")
_FINAL_RE = re.compile(r"Final answer: (-?\d+)\.")


def _correction_text(opener: str, position: int, value: int) -> str:
    return (f"{opener} Working again from the problem statement, "
            f"the value after move {position} should be {value}.")


@dataclass(frozen=True)
class ReplayState:
    """Automaton state after replaying a prefix of step texts."""

    position: int          # moves completed (0..L)
    value: int             # running value stated by the last step
    clean: bool            # value agrees with the true chain
    finished: bool = False  # a final-answer step was consumed


def replay_states(chain: Chain, step_texts: Sequence[str]) -> list[ReplayState]:
    """Parse simulated step texts and recover the state after each step.

    Taint is decided against the true chain, not the narration: a move step
    is clean iff its stated result equals the true value at that position.
    """
    values = chain.values
    position = 0
    value = values[0]
    clean = True
    finished = False
    states: list[ReplayState] = []
    for text in step_texts:
        if finished:
            raise SimParseError("steps continue after a final-answer step")
        m = _MOVE_RE.search(text)
        if m:
            position = int(m.group(1))
            if position > chain.length:
                raise SimParseError(f"move {position} beyond chain length {chain.length}")
            value = int(m.group(4))
            clean = value == values[position]
        else:
            m = _CORRECTION_RE.search(text)
            if m:
                position = int(m.group(1))
                if position > chain.length:
                    raise SimParseError(
                        f"correction beyond chain length {chain.length}")
                value = int(m.group(2))
                clean = value == values[position]
            else:
                m = _FINAL_RE.search(text)
                if m:
                    value = int(m.group(1))
                    clean = value == chain.answer
                    finished = True
                else:
                    raise SimParseError(
                        f"unrecognized simulated step text: {text[:80]!r}")
        states.append(ReplayState(position=position, value=value,
                                  clean=clean, finished=finished))
    return states


def replay_prefix(chain: Chain, step_texts: Sequence[str]) -> ReplayState:
    """State after replaying a whole prefix of step texts."""
    states = replay_states(chain, step_texts)
    if not states:
        return ReplayState(position=0, value=chain.start, clean=True)
    return states[-1]


def derive_tags(chain: Chain, step_texts: Sequence[str],
                gold_answer: str) -> list[LocalEventTag]:
    """Ground-truth local-event tags for simulated step texts."""
    values = chain.values
    tags: list[LocalEventTag] = []
    position = 0
    clean = True
    stated_final: int | None = None
    for text in step_texts:
        m = _MOVE_RE.search(text)
        if m:
            position = int(m.group(1))
            result = int(m.group(4))
            now_clean = result == values[position]
            if clean and not now_clean:
                tags.append(LocalEventTag(LocalEvent.LOCAL_ERROR))
            else:
                tags.append(LocalEventTag(LocalEvent.SOUND_CONTINUATION))
            clean = now_clean
            continue
        m = _CORRECTION_RE.search(text)
        if m:
            position = int(m.group(1))
            restored = int(m.group(2))
            now_clean = restored == values[position]
            if now_clean:
                tags.append(LocalEventTag(LocalEvent.CORRECTS_PRIOR))
            else:
                tags.append(LocalEventTag(LocalEvent.LOCAL_ERROR))
            clean = now_clean
            continue
        m = _FINAL_RE.search(text)
        if m:
            stated_final = int(m.group(1))
            tags.append(LocalEventTag(LocalEvent.SOUND_CONTINUATION))
            continue
        raise SimParseError(f"unrecognized simulated step text: {text[:80]!r}")
    if stated_final is None:
        raise SimParseError("trace has no final-answer step")
    last = tags[-1]
    tags[-1] = LocalEventTag(
        last.event,
        final_answer_matches=answers_match(str(stated_final), gold_answer))
    return tags


# ---------------------------------------------------------------------------
# Trace generation
# ---------------------------------------------------------------------------

def _effective_rates(world: SimWorld, strength: float) -> tuple[float, float]:
    p_err = min(1.0, max(0.0, 1.0 - (1.0 - world.p_err) * strength))
    p_fix = min(1.0, world.p_fix * strength)
    return p_err, p_fix


def _walk(chain: Chain, rng: random.Random, p_err: float, p_fix: float,
          start_position: int, start_value: int, start_clean: bool,
          ) -> tuple[list[str], list[LocalEvent]]:
    """Continue the chain from an intermediate state to the final answer."""
    values = chain.values
    texts: list[str] = []
    events: list[LocalEvent] = []
    position, value, clean = start_position, start_value, start_clean
    while position < chain.length:
        op, operand = chain.ops[position]
        if clean:
            result = chain.apply(value, position)
            if rng.random() < p_err:
                offset = rng.choice((-5, -4, -3, -2, -1, 1, 2, 3, 4, 5))
                result += offset
                events.append(LocalEvent.LOCAL_ERROR)
                clean = False
            else:
                events.append(LocalEvent.SOUND_CONTINUATION)
            texts.append(_move_text(position, op, operand, value, result))
            value = result
            position += 1
        else:
            if rng.random() < p_fix:
                opener = rng.choice(_CORRECTION_OPENERS)
                texts.append(_correction_text(opener, position, values[position]))
                events.append(rng.choice((LocalEvent.CORRECTS_PRIOR,
                                          LocalEvent.NEW_APPROACH)))
                value = values[position]
                clean = True
            else:
                result = chain.apply(value, position)
                texts.append(_move_text(position, op, operand, value, result))
                events.append(LocalEvent.SOUND_CONTINUATION)
                value = result
                position += 1
    texts.append(f"Final answer: {value}.")
    events.append(LocalEvent.SOUND_CONTINUATION)
    return texts, events


def sim_generate_trace(
    world: SimWorld,
    problem: Problem,
    sample_seed: int = 0,
    strength: float | None = None,
    generator_tag: str | None = None,
) -> tuple[ReasoningTrace, list[LocalEventTag]]:
    """Generate one trace plus its ground-truth tags.

    Errors arrive with ``p_err``, propagate until a correction fires with
    ``p_fix``, and the final answer is correct iff the walk ends clean; the
    returned tags therefore reproduce the gold labels exactly through the
    label automaton.
    """
    chain = chain_of(world, problem)
    p_err, p_fix = _effective_rates(world, world.strength if strength is None else strength)
    rng = random.Random(derive_seed(world.seed, "trace", problem.id, sample_seed))
    texts, events = _walk(chain, rng, p_err, p_fix, 0, chain.start, True)
    tag = generator_tag if generator_tag is not None else f"sim-gen-{world.seed}/s{sample_seed}"
    trace = make_trace(problem.id, texts, generator_tag=tag)
    tags = [LocalEventTag(e) for e in events[:-1]]
    tags.append(LocalEventTag(
        events[-1],
        final_answer_matches=answers_match(trace.final_answer, problem.gold_answer)))
    return trace, tags


def sim_complete_from_prefix(
    world: SimWorld,
    trace: ReasoningTrace,
    prefix_len: int,
    strength: float | None = None,
    seed: int = 0,
    problem: Problem | None = None,
) -> RolloutOutcome:
    """Sample one completion of a trace prefix.

    The walk continues from the replayed (state, remaining-depth) with the
    completion model's effective rates, so the success probability is the
    analytic function of (automaton state after the prefix, scaled fix
    probability, remaining depth) given by the world's Markov chain.
    """
    if not 1 <= prefix_len <= trace.num_steps:
        raise ValueError(f"prefix_len must be in [1, {trace.num_steps}], got {prefix_len}")
    if problem is None:
        m = re.fullmatch(r"sim-(-?\d+)-(\d+)", trace.problem_id)
        if not m or int(m.group(1)) != world.seed:
            raise SimParseError(
                f"trace {trace.problem_id!r} did not originate from world seed {world.seed}")
        chain = make_chain(world, int(m.group(2)))
        gold = str(chain.answer)
    else:
        chain = chain_of(world, problem)
        gold = problem.gold_answer
    state = replay_prefix(chain, [s.text for s in trace.steps[:prefix_len]])
    if state.finished:
        text = f"Final answer: {state.value}."
        return RolloutOutcome(prefix_len=prefix_len, completion_text=text,
                              reached_correct=str(state.value) == gold,
                              token_cost=count_tokens(text))
    p_err, p_fix = _effective_rates(world, world.strength if strength is None else strength)
    rng = random.Random(derive_seed(world.seed, "rollout", trace.problem_id,
                                    prefix_len, strength, seed))
    texts, _ = _walk(chain, rng, p_err, p_fix, state.position, state.value, state.clean)
    completion = "\n\n".join(texts)
    final_value = int(_FINAL_RE.search(texts[-1]).group(1))
    return RolloutOutcome(
        prefix_len=prefix_len,
        completion_text=completion,
        reached_correct=str(final_value) == gold,
        token_cost=count_tokens(completion),
    )


# ---------------------------------------------------------------------------
# Backend adapters (text-interface views of the world)
# ---------------------------------------------------------------------------

_PROMPT_PROBLEM_RE = re.compile(r"^Problem: (.+)$", re.MULTILINE)


class SimCompletionBackend:
    """Rollout completer over the text interface.

    Recovers the chain from the problem statement embedded in the rollout
    prompt, replays the prefix steps, and walks the remaining moves.  The
    per-call seed comes from the sampling params (or, failing that, from the
    prompt itself), so identical calls give identical completions.
    """

    def __init__(self, world: SimWorld, strength: float | None = None, id: str | None = None):
        self.world = world
        self.strength = world.strength if strength is None else strength
        self.id = id or f"sim-completer-s{self.strength:g}"

    def complete(self, prompt: str, params: SamplingParams) -> str:
        m = _PROMPT_PROBLEM_RE.search(prompt)
        if not m:
            raise SimParseError("rollout prompt carries no problem statement")
        chain = chain_from_statement(m.group(1))
        tail = prompt.split("Partial solution:", 1)
        if len(tail) != 2:
            raise SimParseError("rollout prompt carries no partial solution")
        body = tail[1].rsplit("Continue from here.", 1)[0]
        prefix_texts = [p.strip() for p in re.split(r"\n{2,}", body) if p.strip()]
        state = replay_prefix(chain, prefix_texts)
        if state.finished:
            return f"Final answer: {state.value}."
        p_err, p_fix = _effective_rates(self.world, self.strength)
        seed = params.seed if params.seed is not None else derive_seed(self.id, prompt)
        rng = random.Random(derive_seed(self.world.seed, "complete", self.id, seed))
        texts, _ = _walk(chain, rng, p_err, p_fix,
                         state.position, state.value, state.clean)
        return "\n\n".join(texts)


class SimGenerator:
    """Trace generator for the evaluation harness."""

    def __init__(self, world: SimWorld, strength: float | None = None, id: str | None = None):
        self.world = world
        self.strength = world.strength if strength is None else strength
        self.id = id or f"sim-generator-s{self.strength:g}"

    def sample_trace(self, problem: Problem, seed: int) -> ReasoningTrace:
        trace, _ = sim_generate_trace(self.world, problem, sample_seed=seed,
                                      strength=self.strength, generator_tag=self.id)
        return trace

    def sample_next_step(self, problem: Problem, prefix_texts: Sequence[str],
                         seed: int) -> tuple[str, bool]:
        """One candidate continuation step; ``True`` when it ends the trace."""
        chain = chain_of(self.world, problem)
        state = replay_prefix(chain, prefix_texts)
        if state.finished:
            raise ValueError("trace already finished")
        if state.position >= chain.length:
            return f"Final answer: {state.value}.", True
        p_err, p_fix = _effective_rates(self.world, self.strength)
        rng = random.Random(derive_seed(self.world.seed, "step", self.id,
                                        problem.id, len(prefix_texts), seed))
        values = chain.values
        if state.clean or rng.random() >= p_fix:
            op, operand = chain.ops[state.position]
            result = chain.apply(state.value, state.position)
            if state.clean and rng.random() < p_err:
                result += rng.choice((-5, -4, -3, -2, -1, 1, 2, 3, 4, 5))
            return _move_text(state.position, op, operand, state.value, result), False
        opener = rng.choice(_CORRECTION_OPENERS)
        return _correction_text(opener, state.position, values[state.position]), False


_PROMPT_GOLD_RE = re.compile(r"^GT Answer: (.+)$", re.MULTILINE)
_PROMPT_STEP_RE = re.compile(r"^STEP (\d+):\n(.*?)(?=\n\nSTEP \d+:\n|\Z)",
                             re.MULTILINE | re.DOTALL)


def sim_judge(world: SimWorld, request: JudgeRequest, judge_accuracy: float = 1.0,
              seed: int = 0) -> str:
    """Produce a verdict-format response whose scores equal the automaton's
    labels, flipped independently with probability ``1 - judge_accuracy``."""
    chain = chain_of(world, request.problem)
    texts = [s.text for s in request.steps]
    tags = derive_tags(chain, texts, request.problem.gold_answer)
    labels = expected_labels(tags)
    entries = []
    for i, (tag, label) in enumerate(zip(tags, labels)):
        rng = random.Random(derive_seed(world.seed, "judge", request.problem.id,
                                        seed, i, texts[i]))
        if rng.random() < 1.0 - judge_accuracy:
            label = 1 - label
        reason = {
            LocalEvent.LOCAL_ERROR: "the stated result disagrees with the problem's chain",
            LocalEvent.SOUND_CONTINUATION: (
                "consistent continuation of the running value" if label == 1
                else "builds on an uncorrected wrong value"),
            LocalEvent.CORRECTS_PRIOR: "restores the true value from the problem statement",
            LocalEvent.NEW_APPROACH: "restarts cleanly from the problem statement",
        }[tag.event]
        entries.append(json.dumps({f"STEP {i}": label, "Reason": reason}, indent=4))
    return "[\n" + ",\n".join(entries) + "\n]"


class SimJudgeBackend:
    """Judge backend over the text interface: parses the judging prompt,
    reconstructs the request, and answers via :func:`sim_judge`."""

    def __init__(self, world: SimWorld, accuracy: float = 1.0, seed: int = 0,
                 id: str | None = None):
        if not 0.0 <= accuracy <= 1.0:
            raise ValueError(f"accuracy must be in [0, 1], got {accuracy}")
        self.world = world
        self.accuracy = accuracy
        self.seed = seed
        self.id = id or f"sim-judge-a{accuracy:g}"

    def complete(self, prompt: str, params: SamplingParams) -> str:
        pm = _PROMPT_PROBLEM_RE.search(prompt)
        gm = _PROMPT_GOLD_RE.search(prompt)
        if not pm or not gm:
            raise SimParseError("judging prompt carries no problem/gold answer")
        steps = [Step(index=int(i), text=text.strip())
                 for i, text in _PROMPT_STEP_RE.findall(prompt)]
        if not steps:
            raise SimParseError("judging prompt carries no steps")
        problem = Problem(id=f"sim-{self.world.seed}-prompt", statement=pm.group(1),
                          gold_answer=gm.group(1), source_tag="simworld")
        request = JudgeRequest(problem=problem, steps=tuple(steps), prompt_text=prompt)
        return sim_judge(self.world, request, judge_accuracy=self.accuracy,
                         seed=derive_seed(self.seed, prompt))


# ---------------------------------------------------------------------------
# Scorers with ground-truth access (evaluation oracles)
# ---------------------------------------------------------------------------

class OracleScorer:
    """Scores a step high iff the replayed state after it is clean.

    On a complete trace the final step's score is high exactly when the
    stated final answer is correct, so best-of-n with this scorer picks a
    correct candidate whenever one exists.
    """

    def __init__(self, world: SimWorld, high: float = 0.9, low: float = 0.1):
        self.world = world
        self.high = high
        self.low = low
        self.id = "oracle"

    def score_steps(self, problem: Problem, trace: ReasoningTrace) -> list[float]:
        chain = chain_of(self.world, problem)
        states = replay_states(chain, [s.text for s in trace.steps])
        return [self.high if state.clean else self.low for state in states]


class AntiOracleScorer:
    """1 - oracle: prefers tainted continuations."""

    def __init__(self, world: SimWorld):
        self._oracle = OracleScorer(world)
        self.id = "anti-oracle"

    def score_steps(self, problem: Problem, trace: ReasoningTrace) -> list[float]:
        return [1.0 - s for s in self._oracle.score_steps(problem, trace)]


class ConstantScorer:
    """Same score everywhere; best-of-n degenerates to first-sample."""

    def __init__(self, value: float = 0.5):
        if not 0.0 < value < 1.0:
            raise ValueError("constant score must be in (0, 1)")
        self.value = value
        self.id = f"constant-{value:g}"

    def score_steps(self, problem: Problem, trace: ReasoningTrace) -> list[float]:
        return [self.value] * trace.num_steps
