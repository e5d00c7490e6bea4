"""Desk-scale step scorer: fixed features + logistic model.

The model exists to exercise the pipeline and the evaluation protocols, not
to be a good reward model.  It is trained by minimizing per-step binary
cross-entropy (the classification-loss objective written as a sum of
``y log yhat + (1-y) log(1-yhat)`` terms; the trainer minimizes the
negation).  ``StepScorer`` is the interface every evaluator consumes; a real
scorer endpoint can implement it behind the HTTP backend.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .core import (
    AnnotatedTrace,
    Problem,
    ReasoningTrace,
    extract_final_answer,
    problem_of,
)
from .segment import default_reflection_words

FEATURE_SCHEMA_VERSION = "fv1"
FEATURE_NAMES = (
    "token_count_scaled",
    "relative_position",
    "reflection_words_in_step",
    "broken_equalities_in_step",
    "prior_reflection_words",
    "repeats_earlier_step",
)

_EPS = 1e-9


@runtime_checkable
class StepScorer(Protocol):
    """Per-step scorer: one score in (0, 1) per step of a trace."""

    id: str

    def score_steps(self, problem: Problem, trace: ReasoningTrace) -> list[float]: ...


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

_EQUALITY_RE = re.compile(
    r"(-?\d+(?:\.\d+)?)\s*([+\-*/])\s*(-?\d+(?:\.\d+)?)\s*=\s*(-?\d+(?:\.\d+)?)")


def count_broken_equalities(text: str) -> int:
    """Number of ``a op b = c`` expressions in the text whose two sides
    disagree (relative tolerance 1e-6 for division)."""
    broken = 0
    for a, op, b, c in _EQUALITY_RE.findall(text):
        x, y, z = float(a), float(b), float(c)
        if op == "+":
            value = x + y
        elif op == "-":
            value = x - y
        elif op == "*":
            value = x * y
        else:
            if y == 0:
                continue
            value = x / y
        if abs(value - z) > 1e-6 * max(1.0, abs(value)):
            broken += 1
    return broken


def count_reflection_words(text: str, words: Sequence[str]) -> int:
    lowered = text.lower()
    total = 0
    for w in words:
        total += len(re.findall(r"(?<!\w)" + re.escape(w) + r"(?!\w)", lowered))
    return total


def _token_containment(step_tokens: set[str], earlier_tokens: set[str]) -> float:
    if not step_tokens:
        return 0.0
    return len(step_tokens & earlier_tokens) / len(step_tokens)


def extract_features(
    problem: Problem,
    trace: ReasoningTrace,
    step_index: int,
    reflection_words: Sequence[str] | None = None,
) -> np.ndarray:
    """Deterministic features of the prefix up to and including a step."""
    if step_index >= trace.num_steps:
        raise ValueError(f"step_index {step_index} out of range for K={trace.num_steps}")
    words = tuple(reflection_words) if reflection_words is not None else default_reflection_words()
    step = trace.steps[step_index]
    k = trace.num_steps

    prior_reflection = sum(
        count_reflection_words(trace.steps[j].text, words) for j in range(step_index))
    step_tokens = set(step.text.lower().split())
    repeats = 0.0
    for j in range(step_index):
        if _token_containment(step_tokens, set(trace.steps[j].text.lower().split())) >= 0.8:
            repeats = 1.0
            break

    return np.array([
        step.token_count / 100.0,
        step_index / k,
        float(count_reflection_words(step.text, words)),
        float(count_broken_equalities(step.text)),
        float(prior_reflection),
        repeats,
    ])


def trace_features(problem: Problem, trace: ReasoningTrace,
                   reflection_words: Sequence[str] | None = None) -> np.ndarray:
    """K x D feature matrix for a whole trace."""
    return np.stack([
        extract_features(problem, trace, i, reflection_words)
        for i in range(trace.num_steps)
    ])


# ---------------------------------------------------------------------------
# Model, loss, gradient
# ---------------------------------------------------------------------------

@dataclass
class ToyPrmModel:
    weights: np.ndarray
    bias: float
    feature_schema_version: str = FEATURE_SCHEMA_VERSION

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.bias):
            raise ValueError("model parameters must be finite")
        if self.feature_schema_version != FEATURE_SCHEMA_VERSION:
            raise ValueError(
                f"model schema {self.feature_schema_version!r} does not match "
                f"extractor schema {FEATURE_SCHEMA_VERSION!r}")

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights + self.bias

    def scores(self, features: np.ndarray) -> np.ndarray:
        """Sigmoid of the logits, clipped into the open interval (0, 1)."""
        z = np.clip(self.logits(features), -60.0, 60.0)
        s = 1.0 / (1.0 + np.exp(-z))
        return np.clip(s, _EPS, 1.0 - _EPS)


def prm_loss(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Summed binary cross-entropy, the negation of the per-step
    classification objective; lower is better."""
    if len(labels) != len(scores):
        raise ValueError(f"{len(labels)} labels vs {len(scores)} scores")
    total = 0.0
    for y, s in zip(labels, scores):
        if not 0.0 < s < 1.0:
            raise ValueError(f"scores must lie in (0, 1), got {s}")
        if y not in (0, 1):
            raise ValueError(f"labels must be 0 or 1, got {y!r}")
        total -= y * np.log(s) + (1 - y) * np.log(1.0 - s)
    return float(total)


def prm_loss_gradient(model: ToyPrmModel, features: np.ndarray,
                      labels: np.ndarray) -> tuple[np.ndarray, float]:
    """Analytic gradient of mean cross-entropy w.r.t. (weights, bias)."""
    if len(features) == 0:
        raise ValueError("batch must be nonempty")
    y = np.asarray(labels, dtype=float)
    s = model.scores(features)
    diff = s - y
    grad_w = features.T @ diff / len(y)
    grad_b = float(np.mean(diff))
    return grad_w, grad_b


def mean_loss(model: ToyPrmModel, features: np.ndarray, labels: np.ndarray) -> float:
    s = model.scores(features)
    y = np.asarray(labels, dtype=float)
    return float(-np.mean(y * np.log(s) + (1.0 - y) * np.log(1.0 - s)))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    # Desk-scale defaults; published 7B-scale values are recorded in
    # assets/reference_tables.json for documentation only.
    learning_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 64
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")


@dataclass
class TrainReport:
    loss_curve: list[float] = field(default_factory=list)
    n_steps: int = 0
    n_traces: int = 0
    positive_fraction: float = 0.0
    degenerate_class_balance: bool = False

    def to_dict(self) -> dict:
        return {
            "loss_curve": self.loss_curve,
            "n_steps": self.n_steps,
            "n_traces": self.n_traces,
            "positive_fraction": self.positive_fraction,
            "degenerate_class_balance": self.degenerate_class_balance,
        }


def dataset_matrices(dataset: Sequence[AnnotatedTrace],
                     reflection_words: Sequence[str] | None = None,
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Flatten an annotated dataset into (features, labels) arrays."""
    rows: list[np.ndarray] = []
    labels: list[int] = []
    for annotated in dataset:
        problem = problem_of(annotated)
        rows.append(trace_features(problem, annotated.trace, reflection_words))
        labels.extend(annotated.labels)
    return np.concatenate(rows), np.array(labels, dtype=float)


def train(
    dataset: Sequence[AnnotatedTrace],
    cfg: TrainConfig = TrainConfig(),
    reflection_words: Sequence[str] | None = None,
) -> tuple[ToyPrmModel, TrainReport]:
    """Mini-batch gradient descent on mean cross-entropy with L2 decay.

    Deterministic for a fixed seed: seeded shuffling, fixed iteration order.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    features, labels = dataset_matrices(dataset, reflection_words)
    n, dim = features.shape

    report = TrainReport(
        n_steps=n,
        n_traces=len(dataset),
        positive_fraction=float(np.mean(labels)),
        degenerate_class_balance=bool(np.all(labels == labels[0])),
    )

    rng = np.random.default_rng(cfg.seed)
    model = ToyPrmModel(weights=np.zeros(dim), bias=0.0)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grad_w, grad_b = prm_loss_gradient(model, features[batch], labels[batch])
            model.weights = model.weights - cfg.learning_rate * (
                grad_w + cfg.l2 * model.weights)
            model.bias = model.bias - cfg.learning_rate * grad_b
        report.loss_curve.append(mean_loss(model, features, labels))
    return model, report


# ---------------------------------------------------------------------------
# First-error truncation (training-data ablations)
# ---------------------------------------------------------------------------

def truncate_at_first_error(dataset: Sequence[AnnotatedTrace]) -> list[AnnotatedTrace]:
    """Keep each trace's steps up to and including its first label-0 step.

    Traces without errors pass through unchanged.  A truncated trace is no
    longer a complete solution, so it is marked not solution-correct (its
    last kept label is 0, satisfying the final-step rule).
    """
    out: list[AnnotatedTrace] = []
    for annotated in dataset:
        labels = annotated.labels
        if 0 not in labels:
            out.append(annotated)
            continue
        cut = labels.index(0) + 1
        steps = annotated.trace.steps[:cut]
        trace = ReasoningTrace(
            problem_id=annotated.trace.problem_id,
            steps=steps,
            final_answer=extract_final_answer(steps[-1].text),
            generator_tag=annotated.trace.generator_tag,
        )
        out.append(AnnotatedTrace(
            trace=trace,
            annotations=annotated.annotations[:cut],
            solution_correct=False,
            gold_answer=annotated.gold_answer,
            problem_statement=annotated.problem_statement,
        ))
    return out


def fes_dataset(
    dataset: Sequence[AnnotatedTrace],
    supplement: Sequence[AnnotatedTrace],
    target_steps: int | None = None,
) -> list[AnnotatedTrace]:
    """First-error truncation padded with extra truncated traces until the
    total step count reaches the untruncated dataset's (signal alignment)."""
    if target_steps is None:
        target_steps = sum(t.num_steps for t in dataset)
    out = truncate_at_first_error(dataset)
    total = sum(t.num_steps for t in out)
    for extra in truncate_at_first_error(supplement):
        if total >= target_steps:
            break
        out.append(extra)
        total += extra.num_steps
    return out


# ---------------------------------------------------------------------------
# Scorer wrapper and model persistence
# ---------------------------------------------------------------------------

class ToyPrmScorer:
    """StepScorer view of a trained model."""

    def __init__(self, model: ToyPrmModel,
                 reflection_words: Sequence[str] | None = None):
        self.model = model
        self.reflection_words = reflection_words
        self.id = f"toy-prm-{model.feature_schema_version}"

    def score_steps(self, problem: Problem, trace: ReasoningTrace) -> list[float]:
        features = trace_features(problem, trace, self.reflection_words)
        return [float(s) for s in self.model.scores(features)]


class HttpPrmScorer:
    """Reference adapter scoring steps through a completion backend.

    Prompts the model for a JSON array of per-step scores and clips them
    into (0, 1).  Provided as the extension point for real scorer
    endpoints; its judgments carry no correctness guarantee.
    """

    def __init__(self, backend, params=None):
        from importlib import resources

        from .backends import SamplingParams

        self.backend = backend
        self.params = params or SamplingParams(temperature=0.0, max_tokens=2048)
        self.id = f"http-prm:{backend.id}"
        self._template = resources.files("longprm.assets").joinpath(
            "score_prompt.txt").read_text(encoding="utf-8")

    def score_steps(self, problem: Problem, trace: ReasoningTrace) -> list[float]:
        import json

        steps_block = "\n\n".join(f"STEP {s.index}:\n{s.text}" for s in trace.steps)
        prompt = self._template.format(problem=problem.statement,
                                       steps_block=steps_block)
        raw = self.backend.complete(prompt, self.params)
        decoder = json.JSONDecoder()
        for pos in (m.start() for m in re.finditer(r"\[", raw)):
            try:
                value, _ = decoder.raw_decode(raw, pos)
            except json.JSONDecodeError:
                continue
            if (isinstance(value, list) and len(value) == trace.num_steps
                    and all(isinstance(v, (int, float)) for v in value)):
                return [min(1.0 - _EPS, max(_EPS, float(v))) for v in value]
        raise ValueError(
            f"scorer backend returned no usable array for {problem.id!r}: {raw[:120]!r}")


def save_model(model: ToyPrmModel, path: str | Path) -> None:
    """Diff-able text format: schema, dimension, then decimal parameters."""
    lines = [
        f"schema {model.feature_schema_version}",
        f"dim {len(model.weights)}",
        f"bias {float(model.bias)!r}",
    ]
    lines += [f"w{i} {float(w)!r}" for i, w in enumerate(model.weights)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> ToyPrmModel:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            key, value = line.split(maxsplit=1)
        except ValueError:
            raise ValueError(f"model file line {lineno}: expected 'key value'") from None
        entries[key] = value
    dim = int(entries["dim"])
    weights = np.array([float(entries[f"w{i}"]) for i in range(dim)])
    return ToyPrmModel(
        weights=weights,
        bias=float(entries["bias"]),
        feature_schema_version=entries["schema"],
    )
