"""Human-review service for judge annotations.

Reviewers step through (question, gold answer, step, rationale, llm score)
items and accept or reject each one.  Verdicts go to an append-only JSONL
journal; replaying the journal reconstructs exactly the latest verdict per
(trace, step, reviewer), so a restarted server reports identical progress
and accuracy.
"""

from __future__ import annotations

import json
import threading
import time
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .core import AnnotatedTrace, read_dataset


class Verdict(str, Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    REJECTED = "rejected"


@dataclass(frozen=True)
class ReviewRecord:
    """Latest state of one reviewer's decision on one step."""

    trace_index: int
    step_index: int
    llm_label: int
    llm_rationale: str
    verdict: Verdict
    reviewer_id: str
    timestamp: float


def task_id(trace_index: int, step_index: int) -> str:
    return f"t{trace_index}s{step_index}"


class JournalError(RuntimeError):
    pass


def _read_journal_lines(path: Path) -> list[dict]:
    if not path.exists():
        return []
    entries: list[dict] = []
    lines = path.read_text(encoding="utf-8").splitlines()
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            entries.append(json.loads(line))
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                # torn trailing write from a crashed process: ignore
                continue
            raise JournalError(f"journal line {i + 1} is malformed") from None
    return entries


def replay_journal(path: str | Path) -> dict[tuple[int, int, str], dict]:
    """Latest journal entry per (trace, step, reviewer)."""
    latest: dict[tuple[int, int, str], dict] = {}
    for entry in _read_journal_lines(Path(path)):
        key = (entry["trace_index"], entry["step_index"], entry["reviewer"])
        latest[key] = entry
    return latest


def _majority(verdicts: Iterable[str]) -> Verdict:
    # ties count as rejected
    accepted = sum(1 for v in verdicts if v == Verdict.ACCEPTED.value)
    rejected = sum(1 for v in verdicts if v == Verdict.REJECTED.value)
    if accepted + rejected == 0:
        return Verdict.PENDING
    return Verdict.ACCEPTED if accepted > rejected else Verdict.REJECTED


def annotation_accuracy(journal_path: str | Path, annotator_tag: str) -> float | None:
    """Accepted / (accepted + rejected) over reviewed steps of one annotator,
    majority-voted across reviewers; ``None`` when nothing was reviewed."""
    by_task: dict[tuple[int, int], list[str]] = defaultdict(list)
    for entry in replay_journal(journal_path).values():
        if entry.get("annotator") == annotator_tag:
            by_task[(entry["trace_index"], entry["step_index"])].append(entry["verdict"])
    verdicts = [_majority(v) for v in by_task.values()]
    reviewed = [v for v in verdicts if v is not Verdict.PENDING]
    if not reviewed:
        return None
    accepted = sum(1 for v in reviewed if v is Verdict.ACCEPTED)
    return accepted / len(reviewed)


def annotation_accuracy_report(journal_path: str | Path) -> dict:
    """Majority-vote accuracy per annotator plus per-reviewer rows."""
    latest = replay_journal(journal_path)
    annotators: dict[str, dict[tuple[int, int], list[str]]] = defaultdict(lambda: defaultdict(list))
    reviewers: dict[str, dict[str, int]] = defaultdict(lambda: {"accepted": 0, "rejected": 0})
    for entry in latest.values():
        annotators[entry.get("annotator", "?")][
            (entry["trace_index"], entry["step_index"])].append(entry["verdict"])
        if entry["verdict"] in (Verdict.ACCEPTED.value, Verdict.REJECTED.value):
            reviewers[entry["reviewer"]][entry["verdict"]] += 1
    report: dict = {"annotators": {}, "reviewers": {}}
    for tag, tasks in sorted(annotators.items()):
        verdicts = [_majority(v) for v in tasks.values()]
        reviewed = [v for v in verdicts if v is not Verdict.PENDING]
        accepted = sum(1 for v in reviewed if v is Verdict.ACCEPTED)
        report["annotators"][tag] = {
            "reviewed": len(reviewed),
            "accepted": accepted,
            "rejected": len(reviewed) - accepted,
            "accuracy": accepted / len(reviewed) if reviewed else None,
        }
    for reviewer, counts in sorted(reviewers.items()):
        total = counts["accepted"] + counts["rejected"]
        report["reviewers"][reviewer] = {
            **counts,
            "accuracy": counts["accepted"] / total if total else None,
        }
    return report


class ReviewStore:
    """In-memory task state over a loaded dataset, backed by the journal.

    Appends are serialized by a lock and written as single lines; in-memory
    state is only updated after a successful write, so a failed append
    leaves both the journal and the served state unchanged.
    """

    def __init__(self, dataset: list[AnnotatedTrace], journal_path: str | Path):
        self.dataset = dataset
        self.journal_path = Path(journal_path)
        self._lock = threading.Lock()
        self.tasks: dict[str, dict] = {}
        for t_index, annotated in enumerate(dataset):
            for step in annotated.trace.steps:
                ann = annotated.annotations[step.index]
                self.tasks[task_id(t_index, step.index)] = {
                    "id": task_id(t_index, step.index),
                    "trace_index": t_index,
                    "step_index": step.index,
                    "question": annotated.problem_statement or annotated.trace.problem_id,
                    "gold_answer": annotated.gold_answer or "",
                    "step": step.text,
                    "rationale": ann.rationale,
                    "llm_score": ann.label,
                    "annotator": ann.annotator_tag,
                    "num_steps": annotated.num_steps,
                }
        # (trace_index, step_index, reviewer) -> latest verdict entry
        self.verdicts: dict[tuple[int, int, str], dict] = replay_journal(self.journal_path)

    @classmethod
    def from_paths(cls, dataset_path: str | Path, journal_path: str | Path) -> "ReviewStore":
        return cls(read_dataset(dataset_path), journal_path)

    # -- queries ------------------------------------------------------------

    def task_verdict(self, trace_index: int, step_index: int,
                     reviewer: str | None = None) -> Verdict:
        if reviewer is not None:
            entry = self.verdicts.get((trace_index, step_index, reviewer))
            return Verdict(entry["verdict"]) if entry else Verdict.PENDING
        collected = [e["verdict"] for (t, s, _), e in self.verdicts.items()
                     if t == trace_index and s == step_index]
        return _majority(collected)

    def pending_tasks(self, reviewer: str | None = None) -> list[dict]:
        out = []
        for tid in sorted(self.tasks,
                          key=lambda k: (self.tasks[k]["trace_index"],
                                         self.tasks[k]["step_index"])):
            task = self.tasks[tid]
            verdict = self.task_verdict(task["trace_index"], task["step_index"], reviewer)
            if verdict is Verdict.PENDING:
                out.append(task)
        return out

    def task_view(self, tid: str, reviewer: str | None = None) -> dict:
        task = dict(self.tasks[tid])
        task["verdict"] = self.task_verdict(
            task["trace_index"], task["step_index"], reviewer).value
        context = []
        for j in range(task["step_index"]):
            prior = self.tasks[task_id(task["trace_index"], j)]
            context.append({
                "step_index": j,
                "step": prior["step"],
                "llm_score": prior["llm_score"],
                "verdict": self.task_verdict(task["trace_index"], j, reviewer).value,
            })
        task["context"] = context
        return task

    def progress(self) -> dict:
        total = len(self.tasks)
        reviewed = accepted = rejected = 0
        for task in self.tasks.values():
            verdict = self.task_verdict(task["trace_index"], task["step_index"])
            if verdict is Verdict.PENDING:
                continue
            reviewed += 1
            if verdict is Verdict.ACCEPTED:
                accepted += 1
            else:
                rejected += 1
        return {"total": total, "reviewed": reviewed, "pending": total - reviewed,
                "accepted": accepted, "rejected": rejected,
                "complete": reviewed == total}

    def accuracy(self, annotator: str | None = None) -> dict:
        by_annotator: dict[str, dict[tuple[int, int], list[str]]] = defaultdict(
            lambda: defaultdict(list))
        for (t, s, _), entry in self.verdicts.items():
            tag = self.tasks.get(task_id(t, s), {}).get("annotator", entry.get("annotator", "?"))
            by_annotator[tag][(t, s)].append(entry["verdict"])

        def summarize(tasks: dict[tuple[int, int], list[str]]) -> dict:
            verdicts = [_majority(v) for v in tasks.values()]
            reviewed = [v for v in verdicts if v is not Verdict.PENDING]
            accepted = sum(1 for v in reviewed if v is Verdict.ACCEPTED)
            if not reviewed:
                return {"no_data": True}
            return {"reviewed": len(reviewed), "accepted": accepted,
                    "rejected": len(reviewed) - accepted,
                    "accuracy": accepted / len(reviewed)}

        if annotator is not None:
            summary = summarize(by_annotator.get(annotator, {}))
            return {"annotator": annotator, **summary}
        return {"annotators": {tag: summarize(tasks)
                               for tag, tasks in sorted(by_annotator.items())}}

    # -- mutation -----------------------------------------------------------

    def submit_verdict(self, tid: str, verdict: str, reviewer: str) -> dict:
        if tid not in self.tasks:
            raise KeyError(tid)
        if verdict not in (Verdict.ACCEPTED.value, Verdict.REJECTED.value):
            raise ValueError(f"verdict must be accepted or rejected, got {verdict!r}")
        if not reviewer:
            raise ValueError("reviewer must be nonempty")
        task = self.tasks[tid]
        entry = {
            "task_id": tid,
            "trace_index": task["trace_index"],
            "step_index": task["step_index"],
            "annotator": task["annotator"],
            "reviewer": reviewer,
            "verdict": verdict,
            "ts": time.time(),
        }
        line = json.dumps(entry, ensure_ascii=False) + "\n"
        with self._lock:
            with self.journal_path.open("a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
            self.verdicts[(task["trace_index"], task["step_index"], reviewer)] = entry
        return entry


def create_app(dataset_path: str | Path, journal_path: str | Path,
               ui_dir: str | Path | None = None) -> FastAPI:
    """FastAPI app serving the review API and, when built, the static UI."""
    store = ReviewStore.from_paths(dataset_path, journal_path)
    app = FastAPI(title="annotation review")
    app.state.store = store

    @app.get("/tasks")
    def get_tasks(reviewer: str | None = None, page: int = 0, page_size: int = 20):
        pending = store.pending_tasks(reviewer)
        window = pending[page * page_size:(page + 1) * page_size]
        return {
            "tasks": [store.task_view(t["id"], reviewer) for t in window],
            "total_pending": len(pending),
            "page": page,
            "page_size": page_size,
        }

    @app.post("/tasks/{tid}/verdict")
    async def post_verdict(tid: str, request: Request):
        try:
            body = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="body must be JSON")
        if not isinstance(body, dict):
            raise HTTPException(status_code=400, detail="body must be a JSON object")
        try:
            entry = store.submit_verdict(
                tid, body.get("verdict", ""), body.get("reviewer", ""))
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown task {tid!r}")
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        except OSError as exc:
            raise HTTPException(status_code=500, detail=f"journal write failed: {exc}")
        return {"ok": True, "task_id": tid, "verdict": entry["verdict"]}

    @app.get("/progress")
    def get_progress():
        return store.progress()

    @app.get("/accuracy")
    def get_accuracy(annotator: str | None = None):
        return store.accuracy(annotator)

    @app.exception_handler(404)
    async def not_found(request, exc):
        return JSONResponse(status_code=404, content={"detail": str(exc.detail) if
                            hasattr(exc, "detail") else "not found"})

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app


def serve(dataset_path: str | Path, journal_path: str | Path,
          host: str = "127.0.0.1", port: int = 8321,
          ui_dir: str | Path | None = None) -> None:
    """Run the review service (localhost by default)."""
    import uvicorn

    app = create_app(dataset_path, journal_path, ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
