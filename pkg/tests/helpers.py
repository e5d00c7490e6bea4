"""Shared test fixtures over the simulated world."""

from __future__ import annotations

from longprm.core import AnnotatedTrace, LocalEvent, StepAnnotation
from longprm.judge import expected_labels
from longprm.simworld import SimWorld, make_problem, sim_generate_trace


def sim_oracle_dataset(world: SimWorld, start: int, n: int) -> list[AnnotatedTrace]:
    """Generate n traces labeled by the automaton over ground-truth tags."""
    out = []
    for index in range(start, start + n):
        problem = make_problem(world, index)
        trace, tags = sim_generate_trace(world, problem)
        labels = expected_labels(tags)
        annotations = tuple(
            StepAnnotation(i, labels[i], "oracle label", local_tag=tags[i],
                           annotator_tag="oracle")
            for i in range(trace.num_steps))
        out.append(AnnotatedTrace(
            trace=trace, annotations=annotations,
            solution_correct=tags[-1].final_answer_matches is True,
            gold_answer=problem.gold_answer, problem_statement=problem.statement))
    return out


def automaton_state_and_depth(tags, chain_length: int) -> tuple[bool, int]:
    """(clean, remaining moves) after a strict prefix of ground-truth tags."""
    dirty = False
    advances = 0
    for tag in tags:
        if tag.event is LocalEvent.LOCAL_ERROR:
            dirty = True
            advances += 1
        elif tag.event is LocalEvent.SOUND_CONTINUATION:
            advances += 1
        else:
            dirty = False
    return (not dirty), chain_length - advances
