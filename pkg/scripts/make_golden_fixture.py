#!/usr/bin/env python3
"""Regenerate the golden reflective-trace fixture shipped in assets/.

An 11-step worked solution (five runners, average speeds) whose mistake,
propagation, and recovery pattern exercises every rule of the label
automaton: a fresh arithmetic slip, two continuations on the bad value, a
re-check that repeats the mistake, a correction, and a correct final
answer.  Expected labels: 1 1 1 1 0 0 0 0 1 1 1.
"""

from pathlib import Path

from longprm.core import (
    AnnotatedTrace,
    LocalEvent,
    LocalEventTag,
    StepAnnotation,
    make_trace,
    write_dataset,
)
from longprm.judge import expected_labels

PROBLEM = (
    "A training run recorded each runner's total distance and total time. "
    "Evelyn ran 4.5 distance units in 1.25 time units, Briana ran 4 distance "
    "units in 2.5 time units, Carla ran 5.2 distance units in 4.25 time "
    "units, Debra ran 2.8 distance units in 5.6 time units, and Angela ran "
    "1.4 distance units in 6.8 time units. Which runner had the second "
    "highest average speed?"
)
GOLD = "Briana"

E = LocalEvent
STEPS: list[tuple[str, LocalEvent, str]] = [
    ("I have timing data for five runners: Evelyn, Briana, Carla, Debra, and "
     "Angela, each with a total distance and the time it took. The question "
     "asks which runner had the second highest average speed.",
     E.SOUND_CONTINUATION,
     "restates the data and the goal correctly"),
    ("Average speed is total distance divided by total time, so I should "
     "divide each runner's distance by their time and compare the results.",
     E.SOUND_CONTINUATION,
     "correct definition of average speed"),
    ("The data: Evelyn covered 4.5 units in 1.25 time units, Briana 4 units "
     "in 2.5, Carla 5.2 units in 4.25, Debra 2.8 units in 5.6, and Angela "
     "1.4 units in 6.8.",
     E.SOUND_CONTINUATION,
     "data listed correctly"),
    ("Each runner has a single distance and time pair, so the pace is "
     "treated as constant and one ratio per runner is enough.",
     E.SOUND_CONTINUATION,
     "valid plan for the computation"),
    ("Evelyn: 4.5 / 1.25 = 3.6 units per time unit. Briana: 4 / 2.5 = 0.625 "
     "units per time unit.",
     E.LOCAL_ERROR,
     "Briana's speed is miscalculated; 4 / 2.5 = 1.6"),
    ("Carla: 5.2 / 4.25 is about 1.225. Debra: 2.8 / 5.6 = 0.5. Angela: "
     "1.4 / 6.8 is about 0.205. Ranking what I have so far: Evelyn 3.6, "
     "then Carla 1.225, then Briana 0.625, then Debra 0.5, then Angela 0.205.",
     E.SOUND_CONTINUATION,
     "ranking is built on the wrong value for Briana"),
    ("Let me make sure the data reading is right: one total distance and "
     "one total time per runner, so those ratios are the average speeds. "
     "With 3.6 > 1.225 > 0.625 > 0.5 > 0.205, the second highest would be "
     "Carla.",
     E.SOUND_CONTINUATION,
     "still relies on the uncorrected value for Briana"),
    ("Wait, I should recheck the divisions to be safe. Evelyn: 4.5 / 1.25 = "
     "3.6, fine. Briana: 2.5 / 4 = 0.625, fine. Carla is about 1.224, Debra "
     "0.5, Angela about 0.205. Everything checks out.",
     E.LOCAL_ERROR,
     "the re-check divides time by distance for Briana, repeating the mistake"),
    ("Hold on. Briana ran 4 units in 2.5 time units, so the division is "
     "4 / 2.5 = 1.6, not 0.625. The ordering becomes Evelyn 3.6, Briana "
     "1.6, Carla 1.224, Debra 0.5, Angela 0.206.",
     E.CORRECTS_PRIOR,
     "catches the swapped division and restores the correct speeds"),
    ("Listing the corrected speeds once more: Evelyn 3.6, Briana 1.6, Carla "
     "about 1.225, Debra 0.5, Angela about 0.205. The second highest "
     "average speed belongs to Briana.",
     E.SOUND_CONTINUATION,
     "correct ranking on the corrected values"),
    ("Final answer: Briana.",
     E.SOUND_CONTINUATION,
     "final answer matches the gold answer"),
]


def build() -> AnnotatedTrace:
    trace = make_trace("golden-runners", [text for text, _, _ in STEPS],
                       generator_tag="fixture")
    tags = [LocalEventTag(event) for _, event, _ in STEPS[:-1]]
    tags.append(LocalEventTag(STEPS[-1][1], final_answer_matches=True))
    labels = expected_labels(tags)
    assert labels == [1, 1, 1, 1, 0, 0, 0, 0, 1, 1, 1], labels
    annotations = tuple(
        StepAnnotation(step_index=i, label=labels[i], rationale=STEPS[i][2],
                       local_tag=tags[i], annotator_tag="oracle")
        for i in range(len(STEPS))
    )
    return AnnotatedTrace(
        trace=trace,
        annotations=annotations,
        solution_correct=True,
        gold_answer=GOLD,
        problem_statement=PROBLEM,
    )


if __name__ == "__main__":
    out = Path(__file__).resolve().parent.parent / "src" / "longprm" / "assets" / "golden_trace.jsonl"
    write_dataset([build()], out)
    print(f"wrote {out}")
