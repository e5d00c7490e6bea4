"""Command-line entry points for every pipeline stage.

Exit codes: 0 success, 1 validation/usage error, 2 backend error.
Subcommands with ``--seed`` are byte-identical across runs.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .backends import BackendError, HttpBackendConfig, HttpCompletionBackend
from .config import ToolkitConfig, load_config
from .core import (
    DatasetFormatError,
    StepAnnotation,
    AnnotatedTrace,
    problem_of,
    read_dataset,
    split_ef_rb,
    write_dataset,
)
from .judge import AnnotationFailed, annotate_trace, expected_labels, jsonl_rejects_sink
from .mc import McConfig, RolloutBudget, agreement_by_bins, mc_annotate_trace
from .prm import (
    ToyPrmScorer,
    TrainConfig,
    fes_dataset,
    load_model,
    save_model,
    train,
    truncate_at_first_error,
)
from .segment import SegmentationConfig, Strategy, segment
from .simworld import (
    AntiOracleScorer,
    ConstantScorer,
    OracleScorer,
    SimCompletionBackend,
    SimGenerator,
    SimJudgeBackend,
    SimWorld,
    make_problem,
    sim_generate_trace,
)
from .evaluate import (
    EvalReport,
    dataset_stats,
    dataset_step_metrics,
    ef_rb_accuracy,
    prm_at_n,
    step_search_accuracy,
    write_plot_data,
)


class CliError(Exception):
    """Usage or validation problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: {message}\n{self.format_usage()}".rstrip())


def _world_from_args(args, cfg: ToolkitConfig) -> SimWorld:
    base = cfg.world
    return SimWorld(
        seed=args.world_seed if args.world_seed is not None else base.seed,
        p_err=args.p_err if args.p_err is not None else base.p_err,
        p_fix=args.p_fix if args.p_fix is not None else base.p_fix,
        strength=args.strength if getattr(args, "strength", None) is not None else base.strength,
        min_ops=args.min_ops if args.min_ops is not None else base.min_ops,
        max_ops=args.max_ops if args.max_ops is not None else base.max_ops,
    )


def _add_world_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--world-seed", type=int, default=None)
    parser.add_argument("--p-err", type=float, default=None)
    parser.add_argument("--p-fix", type=float, default=None)
    parser.add_argument("--strength", type=float, default=None)
    parser.add_argument("--min-ops", type=int, default=None)
    parser.add_argument("--max-ops", type=int, default=None)


def _http_backend(args, cfg: ToolkitConfig) -> HttpCompletionBackend:
    base = cfg.backend
    endpoint = args.endpoint or (base.endpoint if base else None)
    model = args.model or (base.model if base else None)
    if not endpoint or not model:
        raise CliError("http backend needs --endpoint and --model "
                       "(or a [backend] config section)")
    if base:
        http_cfg = HttpBackendConfig(**{**base.__dict__, "endpoint": endpoint, "model": model})
    else:
        http_cfg = HttpBackendConfig(endpoint=endpoint, model=model)
    return HttpCompletionBackend(http_cfg)


def _resolve_scorer(name: str, world: SimWorld):
    if name == "oracle":
        return OracleScorer(world)
    if name == "anti-oracle":
        return AntiOracleScorer(world)
    if name == "constant":
        return ConstantScorer()
    path = Path(name)
    if not path.exists():
        raise CliError(f"unknown scorer {name!r}: expected oracle, anti-oracle, "
                       f"constant, or a model file path")
    return ToyPrmScorer(load_model(path))


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_segment(args, cfg: ToolkitConfig) -> int:
    text = Path(args.input).read_text(encoding="utf-8")
    seg_cfg = cfg.segmentation
    if args.strategy:
        seg_cfg = SegmentationConfig(
            strategy=Strategy(args.strategy),
            reflection_words=seg_cfg.reflection_words,
            min_step_tokens=seg_cfg.min_step_tokens,
            max_steps=seg_cfg.max_steps,
            max_step_tokens=seg_cfg.max_step_tokens,
        )
    judge = None
    if seg_cfg.strategy is Strategy.LLM_ASSISTED:
        judge = _http_backend(args, cfg)
    steps = segment(text, seg_cfg, judge)
    payload = {"strategy": seg_cfg.strategy.value,
               "steps": [s.text for s in steps]}
    out = json.dumps(payload, ensure_ascii=False, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(out, encoding="utf-8")
    else:
        sys.stdout.write(out)
    print(f"segmented into {len(steps)} steps", file=sys.stderr)
    return 0


def cmd_simulate(args, cfg: ToolkitConfig) -> int:
    world = _world_from_args(args, cfg)
    records = []
    for index in range(args.traces):
        problem = make_problem(world, index)
        trace, tags = sim_generate_trace(world, problem, sample_seed=args.sample_seed)
        labels = expected_labels(tags)
        annotations = tuple(
            StepAnnotation(step_index=i, label=labels[i],
                           rationale=f"event: {tags[i].event.value}",
                           local_tag=tags[i], annotator_tag="oracle")
            for i in range(trace.num_steps)
        )
        records.append(AnnotatedTrace(
            trace=trace, annotations=annotations,
            solution_correct=tags[-1].final_answer_matches is True,
            gold_answer=problem.gold_answer,
            problem_statement=problem.statement,
        ))
    count = write_dataset(records, args.out)
    print(f"wrote {count} traces to {args.out}")
    return 0


def cmd_annotate(args, cfg: ToolkitConfig) -> int:
    dataset = read_dataset(args.dataset)
    if args.backend == "sim":
        world = _world_from_args(args, cfg)
        judge = SimJudgeBackend(world, accuracy=args.judge_accuracy, seed=args.seed)
    else:
        judge = _http_backend(args, cfg)
    rejects = jsonl_rejects_sink(args.rejects) if args.rejects else None

    # results are assembled by index, so the worker pool cannot reorder them
    annotated = []
    failures = 0
    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        futures = [
            pool.submit(annotate_trace, record.trace, problem_of(record), judge,
                        args.retries, rejects=rejects)
            for record in dataset
        ]
        for future in futures:
            try:
                annotated.append(future.result())
            except AnnotationFailed as exc:
                failures += 1
                print(f"annotation failed: {exc}", file=sys.stderr)
                if rejects is None:
                    raise CliError(
                        "annotation failures without --rejects would drop traces"
                    ) from exc
    count = write_dataset(annotated, args.out)
    print(f"annotated {count} traces with {judge.id} ({failures} failures)")
    return 0


def cmd_mc_annotate(args, cfg: ToolkitConfig) -> int:
    dataset = read_dataset(args.dataset)
    if args.backend == "sim":
        world = _world_from_args(args, cfg)
        completer = SimCompletionBackend(world, strength=args.strength)
    else:
        completer = _http_backend(args, cfg)
    mc_cfg = McConfig(k=args.k, seed=args.seed,
                      max_completion_tokens=cfg.mc.max_completion_tokens,
                      temperature=cfg.mc.temperature)
    budget = RolloutBudget()
    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        futures = [
            pool.submit(mc_annotate_trace, problem_of(record), record.trace,
                        completer, mc_cfg, budget)
            for record in dataset
        ]
        annotated = [future.result() for future in futures]
    count = write_dataset(annotated, args.out)
    print(f"mc-annotated {count} traces with {completer.id} (k={mc_cfg.k})")
    print(f"rollouts: {budget.rollouts}  completion tokens: {budget.completion_tokens}"
          f"  failed rollouts: {budget.failed_rollouts}")
    return 0


def cmd_train_toy(args, cfg: ToolkitConfig) -> int:
    dataset = read_dataset(args.dataset)
    if args.labels == "fe":
        dataset = truncate_at_first_error(dataset)
    elif args.labels == "fes":
        if not args.supplement:
            raise CliError("--labels fes requires --supplement")
        target = sum(t.num_steps for t in dataset)
        supplement = read_dataset(args.supplement)
        dataset = fes_dataset(dataset, supplement, target)
    train_cfg = TrainConfig(
        learning_rate=args.lr if args.lr is not None else cfg.train.learning_rate,
        epochs=args.epochs if args.epochs is not None else cfg.train.epochs,
        batch_size=args.batch_size if args.batch_size is not None else cfg.train.batch_size,
        l2=args.l2 if args.l2 is not None else cfg.train.l2,
        seed=args.seed,
    )
    model, report = train(dataset, train_cfg)
    save_model(model, args.out)
    if args.report:
        Path(args.report).write_text(
            json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"trained on {report.n_steps} steps from {report.n_traces} traces "
          f"(positive fraction {report.positive_fraction:.3f})")
    if report.degenerate_class_balance:
        print("warning: single-class dataset; the model cannot discriminate",
              file=sys.stderr)
    print(f"final loss {report.loss_curve[-1]:.4f}; model written to {args.out}")
    return 0


def cmd_eval_bon(args, cfg: ToolkitConfig) -> int:
    world = _world_from_args(args, cfg)
    problems = [make_problem(world, i) for i in range(args.problems)]
    generator = SimGenerator(world)
    scorer = _resolve_scorer(args.scorer, world)
    report = EvalReport(provenance={
        "metric": "prm_at_n", "scorer": scorer.id, "generator": generator.id,
        "world_seed": world.seed, "eval_seed": args.seed, "problems": args.problems,
    })
    per_problem_rows = []
    for n in args.n:
        result = prm_at_n(problems, generator, scorer, n, seed=args.seed)
        report.prm_at_n[n] = result.accuracy
        if result.skipped:
            report.provenance.setdefault("skipped", []).extend(result.skipped)
        per_problem_rows.extend({"n": n, **row} for row in result.per_problem)
        print(f"PRM@{n} = {result.accuracy:.3f}")
    if args.out:
        report.save(args.out)
    if args.per_problem:
        with open(args.per_problem, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["n", "problem_id", "chosen",
                                                    "correct"])
            writer.writeheader()
            writer.writerows(per_problem_rows)
    return 0


def cmd_eval_step_search(args, cfg: ToolkitConfig) -> int:
    world = _world_from_args(args, cfg)
    problems = [make_problem(world, i) for i in range(args.problems)]
    generator = SimGenerator(world)
    scorer = _resolve_scorer(args.scorer, world)
    report = EvalReport(provenance={
        "metric": "prm_at_n_step", "scorer": scorer.id, "generator": generator.id,
        "world_seed": world.seed, "eval_seed": args.seed, "problems": args.problems,
        "max_steps": args.max_steps,
    })
    for n in args.n:
        accuracy = step_search_accuracy(problems, generator, scorer, n,
                                        max_steps=args.max_steps, seed=args.seed)
        report.prm_at_n_step[n] = accuracy
        print(f"PRM@{n}-step = {accuracy:.3f}")
    if args.out:
        report.save(args.out)
    return 0


def cmd_eval_step_level(args, cfg: ToolkitConfig) -> int:
    predicted = read_dataset(args.pred)
    gold = read_dataset(args.gold)
    metrics = dataset_step_metrics(predicted, gold, threshold=args.threshold)
    print(f"precision {metrics.precision:.3f}")
    print(f"recall {metrics.recall:.3f}")
    print(f"F1 {metrics.f1:.3f}")
    if args.out:
        Path(args.out).write_text(json.dumps({
            "precision": metrics.precision, "recall": metrics.recall,
            "f1": metrics.f1, "threshold": metrics.threshold,
        }, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_eval_ef_rb(args, cfg: ToolkitConfig) -> int:
    dataset = read_dataset(args.dataset)
    ef, rb = split_ef_rb(dataset)
    if not ef or not rb:
        raise CliError(f"dataset has {len(ef)} error-free and {len(rb)} "
                       f"reflection-based solutions; both sets must be nonempty")
    world = _world_from_args(args, cfg)
    scorer = _resolve_scorer(args.scorer, world)
    result = ef_rb_accuracy(scorer, ef, rb, threshold=args.threshold,
                            mode=args.solution_score)
    print(f"EF accuracy = {result.ef_accuracy:.3f} over {len(ef)} solutions")
    print(f"RB accuracy = {result.rb_accuracy:.3f} over {len(rb)} solutions")
    print(f"gap (EF - RB) = {result.gap:.3f}")
    return 0


def cmd_eval_bins(args, cfg: ToolkitConfig) -> int:
    a = read_dataset(args.a)
    b = read_dataset(args.b)
    bins = agreement_by_bins(a, b, n_bins=args.bins)
    report = EvalReport(provenance={"metric": "agreement_by_bins",
                                    "a": str(args.a), "b": str(args.b)},
                        bins=bins)
    for bin_index, agreement in bins:
        print(f"bin {bin_index}: agreement {agreement:.3f}")
    if args.out:
        report.save(args.out)
    if args.emit_plot_data:
        for path in write_plot_data(report, args.emit_plot_data):
            print(f"wrote {path}", file=sys.stderr)
    return 0


def cmd_eval_stats(args, cfg: ToolkitConfig) -> int:
    dataset = read_dataset(args.dataset)
    stats = dataset_stats(dataset, cfg.segmentation.reflection_words)
    report = EvalReport(provenance={"metric": "dataset_stats",
                                    "dataset": str(args.dataset)},
                        dist_stats=stats)
    print(f"traces {stats.n_traces}  steps {stats.n_steps}")
    print(f"mean steps per solution {stats.mean_steps:.2f}")
    print(f"mean tokens per step {stats.mean_tokens_per_step:.2f}")
    print(f"mean reflection tokens per trace {stats.mean_reflection_tokens:.2f}")
    if args.out:
        report.save(args.out)
    if args.emit_plot_data:
        for path in write_plot_data(report, args.emit_plot_data):
            print(f"wrote {path}", file=sys.stderr)
    return 0


def cmd_review_serve(args, cfg: ToolkitConfig) -> int:
    from .review import serve

    dataset = args.dataset or cfg.review.dataset
    if not dataset:
        raise CliError("review serve needs --dataset (or [review].dataset in config)")
    journal = args.journal or cfg.review.journal
    ui_dir = args.ui_dir or cfg.review.ui_dir
    print(f"serving review API on http://{args.host or cfg.review.host}:"
          f"{args.port or cfg.review.port} (journal: {journal})")
    serve(dataset, journal,
          host=args.host or cfg.review.host,
          port=args.port or cfg.review.port,
          ui_dir=ui_dir)
    return 0


def cmd_review_accuracy(args, cfg: ToolkitConfig) -> int:
    from .review import annotation_accuracy, annotation_accuracy_report

    if args.annotator:
        accuracy = annotation_accuracy(args.journal, args.annotator)
        if accuracy is None:
            print(f"{args.annotator}: no data")
        else:
            print(f"{args.annotator}: {accuracy:.3f}")
        return 0
    report = annotation_accuracy_report(args.journal)
    for tag, row in report["annotators"].items():
        if row["accuracy"] is None:
            print(f"{tag}: no data")
        else:
            print(f"{tag}: {row['accuracy']:.3f} "
                  f"({row['accepted']}/{row['reviewed']} accepted)")
    for reviewer, row in report["reviewers"].items():
        print(f"reviewer {reviewer}: accepted {row['accepted']}, "
              f"rejected {row['rejected']}")
    return 0


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------

def _int_list(raw: str) -> list[int]:
    return [int(p) for p in raw.split(",") if p]


def build_parser() -> _Parser:
    parser = _Parser(prog="longprm",
                     description="Step-level reward-model data pipeline "
                                 "for long reflective reasoning traces.")
    parser.add_argument("--config", default=None, help="TOML config file")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("segment", help="split raw reasoning text into steps")
    p.add_argument("--input", required=True)
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default=None)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_segment)

    p = sub.add_parser("simulate", help="emit a simulated, oracle-labeled dataset")
    p.add_argument("--traces", type=int, required=True)
    p.add_argument("--seed", dest="world_seed", type=int, default=None,
                   help="world seed (alias of --world-seed)")
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--p-err", type=float, default=None)
    p.add_argument("--p-fix", type=float, default=None)
    p.add_argument("--strength", type=float, default=None)
    p.add_argument("--min-ops", type=int, default=None)
    p.add_argument("--max-ops", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("annotate", help="label steps with an LLM judge")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=["sim", "http"], default="sim")
    p.add_argument("--judge-accuracy", type=float, default=1.0)
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("--rejects", default=None, help="JSONL file for failed traces")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--model", default=None)
    _add_world_flags(p)
    p.set_defaults(handler=cmd_annotate)

    p = sub.add_parser("mc-annotate", help="label steps with Monte-Carlo rollouts")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=["sim", "http"], default="sim")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--model", default=None)
    _add_world_flags(p)
    p.set_defaults(handler=cmd_mc_annotate)

    p = sub.add_parser("train-toy", help="train the desk-scale step scorer")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--labels", choices=["full", "fe", "fes"], default="full")
    p.add_argument("--supplement", default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--l2", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_train_toy)

    p_eval = sub.add_parser("eval", help="evaluation protocols")
    eval_sub = p_eval.add_subparsers(dest="eval_command", parser_class=_Parser)

    p = eval_sub.add_parser("bon", help="best-of-N reranking accuracy")
    p.add_argument("--scorer", required=True,
                   help="oracle | anti-oracle | constant | path to model file")
    p.add_argument("--problems", type=int, default=100)
    p.add_argument("--n", type=_int_list, default=[8, 64])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--per-problem", default=None,
                   help="CSV of per-problem selection rows")
    _add_world_flags(p)
    p.set_defaults(handler=cmd_eval_bon)

    p = eval_sub.add_parser("step-search", help="reward-guided greedy decoding")
    p.add_argument("--scorer", required=True)
    p.add_argument("--problems", type=int, default=100)
    p.add_argument("--n", type=_int_list, default=[8])
    p.add_argument("--max-steps", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    _add_world_flags(p)
    p.set_defaults(handler=cmd_eval_step_search)

    p = eval_sub.add_parser("step-level", help="precision/recall/F1 of step labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_eval_step_level)

    p = eval_sub.add_parser("ef-rb", help="diagnostic-set solution accuracy gap")
    p.add_argument("--scorer", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--solution-score", choices=["final", "min"], default="final")
    _add_world_flags(p)
    p.set_defaults(handler=cmd_eval_ef_rb)

    p = eval_sub.add_parser("bins", help="annotator agreement binned by length")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", default=None)
    p.add_argument("--emit-plot-data", default=None)
    p.set_defaults(handler=cmd_eval_bins)

    p = eval_sub.add_parser("stats", help="dataset distribution statistics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--emit-plot-data", default=None)
    p.set_defaults(handler=cmd_eval_stats)

    p_review = sub.add_parser("review", help="human review of judge annotations")
    review_sub = p_review.add_subparsers(dest="review_command", parser_class=_Parser)

    p = review_sub.add_parser("serve", help="run the review API and UI")
    p.add_argument("--dataset", default=None)
    p.add_argument("--journal", default=None)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--ui-dir", default=None)
    p.set_defaults(handler=cmd_review_serve)

    p = review_sub.add_parser("accuracy", help="annotator accuracy from a journal")
    p.add_argument("--journal", required=True)
    p.add_argument("--annotator", default=None)
    p.set_defaults(handler=cmd_review_accuracy)

    return parser


def cli_dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help and friends
        return int(exc.code or 0)
    if not hasattr(args, "handler"):
        parser.print_help()
        return 1
    try:
        cfg = load_config(args.config)
        return args.handler(args, cfg)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return 1
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 2
    except (DatasetFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
