from __future__ import annotations

import json

import pytest

from longprm.cli import cli_dispatch
from longprm.core import (
    AnnotatedTrace,
    StepAnnotation,
    make_trace,
    read_dataset,
    write_dataset,
)
from longprm.prm import load_model


def run(capsys, *argv):
    code = cli_dispatch(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ---------------------------------------------------------------------------
# exit codes and usage
# ---------------------------------------------------------------------------

def test_unknown_subcommand_exits_1(capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code == 1
    assert "usage" in err.lower()


def test_unknown_flag_exits_1(capsys):
    code, _, err = run(capsys, "simulate", "--bogus")
    assert code == 1


def test_no_command_prints_help(capsys):
    code, out, _ = run(capsys)
    assert code == 1
    assert "segment" in out and "simulate" in out


def test_annotate_unreachable_endpoint_exits_2(capsys, tmp_path):
    dataset = tmp_path / "d.jsonl"
    code, _, _ = run(capsys, "simulate", "--traces", "2", "--seed", "3",
                     "--out", str(dataset))
    assert code == 0
    code, _, err = run(capsys, "annotate", "--dataset", str(dataset),
                       "--out", str(tmp_path / "a.jsonl"),
                       "--backend", "http",
                       "--endpoint", "http://127.0.0.1:1/v1/chat/completions",
                       "--model", "m")
    assert code == 2
    assert "127.0.0.1:1" in err


def test_missing_dataset_exits_1(capsys, tmp_path):
    code, _, err = run(capsys, "eval", "stats", "--dataset",
                       str(tmp_path / "nope.jsonl"))
    assert code == 1


# ---------------------------------------------------------------------------
# simulate / determinism
# ---------------------------------------------------------------------------

def test_simulate_byte_identical_across_runs(capsys, tmp_path):
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    assert run(capsys, "simulate", "--traces", "50", "--seed", "7",
               "--out", str(a))[0] == 0
    assert run(capsys, "simulate", "--traces", "50", "--seed", "7",
               "--out", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    dataset = read_dataset(a)
    assert len(dataset) == 50
    assert all(t.annotations[0].annotator_tag == "oracle" for t in dataset)


def test_simulate_seed_changes_output(capsys, tmp_path):
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    run(capsys, "simulate", "--traces", "10", "--seed", "7", "--out", str(a))
    run(capsys, "simulate", "--traces", "10", "--seed", "8", "--out", str(b))
    assert a.read_bytes() != b.read_bytes()


# ---------------------------------------------------------------------------
# annotation flows
# ---------------------------------------------------------------------------

def test_sim_annotate_perfect_judge_reproduces_oracle(capsys, tmp_path):
    dataset = tmp_path / "d.jsonl"
    run(capsys, "simulate", "--traces", "8", "--seed", "21", "--p-err", "0.3",
        "--out", str(dataset))
    out_path = tmp_path / "judged.jsonl"
    code, out, _ = run(capsys, "annotate", "--dataset", str(dataset),
                       "--out", str(out_path), "--world-seed", "21",
                       "--p-err", "0.3", "--judge-accuracy", "1.0")
    assert code == 0
    gold = read_dataset(dataset)
    judged = read_dataset(out_path)
    assert [t.labels for t in judged] == [t.labels for t in gold]


def test_mc_annotate_reports_budget(capsys, tmp_path):
    dataset = tmp_path / "d.jsonl"
    run(capsys, "simulate", "--traces", "3", "--seed", "31", "--out", str(dataset))
    code, out, _ = run(capsys, "mc-annotate", "--dataset", str(dataset),
                       "--out", str(tmp_path / "mc.jsonl"), "--world-seed", "31",
                       "--k", "4", "--seed", "5")
    assert code == 0
    total_steps = sum(t.num_steps for t in read_dataset(dataset))
    assert f"rollouts: {total_steps * 4}" in out
    assert "completion tokens:" in out


def test_mc_annotate_deterministic(capsys, tmp_path):
    dataset = tmp_path / "d.jsonl"
    run(capsys, "simulate", "--traces", "3", "--seed", "31", "--out", str(dataset))
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    for target in (a, b):
        run(capsys, "mc-annotate", "--dataset", str(dataset), "--out", str(target),
            "--world-seed", "31", "--k", "4", "--seed", "5")
    assert a.read_bytes() == b.read_bytes()


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------

def test_train_and_eval_flow(capsys, tmp_path):
    dataset = tmp_path / "train.jsonl"
    run(capsys, "simulate", "--traces", "60", "--seed", "41", "--p-err", "0.3",
        "--p-fix", "0.5", "--out", str(dataset))
    model_path = tmp_path / "model.txt"
    report_path = tmp_path / "report.json"
    code, out, _ = run(capsys, "train-toy", "--dataset", str(dataset),
                       "--out", str(model_path), "--report", str(report_path),
                       "--epochs", "3", "--seed", "1")
    assert code == 0
    model = load_model(model_path)
    assert len(model.weights) == 6
    report = json.loads(report_path.read_text())
    assert len(report["loss_curve"]) == 3

    code, out, _ = run(capsys, "eval", "bon", "--scorer", "oracle",
                       "--problems", "20", "--n", "1,8", "--world-seed", "41",
                       "--seed", "2")
    assert code == 0
    assert "PRM@1" in out and "PRM@8" in out

    code, out, _ = run(capsys, "eval", "ef-rb", "--scorer", str(model_path),
                       "--dataset", str(dataset))
    assert code == 0
    assert "gap (EF - RB)" in out


def test_train_fe_truncation_flag(capsys, tmp_path):
    dataset = tmp_path / "train.jsonl"
    run(capsys, "simulate", "--traces", "30", "--seed", "43", "--p-err", "0.4",
        "--out", str(dataset))
    code, out, _ = run(capsys, "train-toy", "--dataset", str(dataset),
                       "--out", str(tmp_path / "fe.txt"), "--labels", "fe",
                       "--epochs", "2")
    assert code == 0


def test_eval_step_search_runs(capsys, tmp_path):
    code, out, _ = run(capsys, "eval", "step-search", "--scorer", "oracle",
                       "--problems", "10", "--n", "4", "--world-seed", "47",
                       "--seed", "3")
    assert code == 0
    assert "PRM@4-step" in out


def test_eval_step_level_prints_reference_f1(capsys, tmp_path):
    """Datasets built to the 500/88/120/292 confusion matrix print the
    published-style 0.850/0.806/0.828 row."""
    def build(labels_pred, labels_gold, path):
        records = []
        for i, (lp, lg) in enumerate(zip(labels_pred, labels_gold)):
            trace = make_trace(f"p{i}", [f"step text {j}" for j in range(len(lp))])
            pred_ann = tuple(StepAnnotation(j, lp[j], "r", annotator_tag="pred")
                             for j in range(len(lp)))
            records.append(AnnotatedTrace(
                trace=trace, annotations=pred_ann,
                solution_correct=lp[-1] == 1,
                gold_answer="g", problem_statement="s"))
        write_dataset(records, path)

    # 10 steps per trace, 100 traces: tp=500, fp=88, fn=120, tn=292
    flat_pred = [1] * 500 + [1] * 88 + [0] * 120 + [0] * 292
    flat_gold = [1] * 500 + [0] * 88 + [1] * 120 + [0] * 292
    # keep every trace's last prediction consistent with solution_correct
    pred_rows = [flat_pred[i:i + 10] for i in range(0, 1000, 10)]
    gold_rows = [flat_gold[i:i + 10] for i in range(0, 1000, 10)]
    pred_path = tmp_path / "pred.jsonl"
    gold_path = tmp_path / "gold.jsonl"
    build(pred_rows, gold_rows, pred_path)
    build(gold_rows, gold_rows, gold_path)

    code, out, _ = run(capsys, "eval", "step-level", "--pred", str(pred_path),
                       "--gold", str(gold_path))
    assert code == 0
    assert "precision 0.850" in out
    assert "recall 0.806" in out
    assert "F1 0.828" in out


def test_eval_bins_and_stats(capsys, tmp_path):
    dataset = tmp_path / "d.jsonl"
    run(capsys, "simulate", "--traces", "30", "--seed", "53", "--out", str(dataset))
    code, out, _ = run(capsys, "eval", "bins", "--a", str(dataset),
                       "--b", str(dataset), "--bins", "5")
    assert code == 0
    assert out.count("agreement 1.000") == 5

    plot_dir = tmp_path / "plots"
    code, out, _ = run(capsys, "eval", "stats", "--dataset", str(dataset),
                       "--out", str(tmp_path / "stats.json"),
                       "--emit-plot-data", str(plot_dir))
    assert code == 0
    assert (plot_dir / "steps_per_solution.csv").exists()
    assert "mean steps per solution" in out


def test_eval_report_deterministic(capsys, tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    for target in (a, b):
        run(capsys, "eval", "bon", "--scorer", "oracle", "--problems", "10",
            "--n", "4", "--world-seed", "59", "--seed", "4", "--out", str(target))
    assert a.read_bytes() == b.read_bytes()


def test_help_exits_zero(capsys):
    assert cli_dispatch(["--help"]) == 0
    assert cli_dispatch(["simulate", "--help"]) == 0
    capsys.readouterr()


def test_annotate_workers_match_sequential(capsys, tmp_path):
    dataset = tmp_path / "d.jsonl"
    run(capsys, "simulate", "--traces", "8", "--seed", "61", "--out", str(dataset))
    seq = tmp_path / "seq.jsonl"
    par = tmp_path / "par.jsonl"
    for target, workers in ((seq, "1"), (par, "4")):
        code, _, _ = run(capsys, "annotate", "--dataset", str(dataset),
                         "--out", str(target), "--world-seed", "61",
                         "--workers", workers)
        assert code == 0
    assert seq.read_bytes() == par.read_bytes()


def test_mc_annotate_workers_match_sequential(capsys, tmp_path):
    dataset = tmp_path / "d.jsonl"
    run(capsys, "simulate", "--traces", "4", "--seed", "61", "--out", str(dataset))
    seq = tmp_path / "seq.jsonl"
    par = tmp_path / "par.jsonl"
    for target, workers in ((seq, "1"), (par, "3")):
        code, out, _ = run(capsys, "mc-annotate", "--dataset", str(dataset),
                           "--out", str(target), "--world-seed", "61",
                           "--k", "3", "--seed", "2", "--workers", workers)
        assert code == 0
    assert seq.read_bytes() == par.read_bytes()


def test_eval_bon_per_problem_csv(capsys, tmp_path):
    csv_path = tmp_path / "rows.csv"
    code, _, _ = run(capsys, "eval", "bon", "--scorer", "oracle",
                     "--problems", "5", "--n", "2", "--world-seed", "67",
                     "--seed", "1", "--per-problem", str(csv_path))
    assert code == 0
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "n,problem_id,chosen,correct"
    assert len(lines) == 6


# ---------------------------------------------------------------------------
# review accuracy offline
# ---------------------------------------------------------------------------

def test_review_accuracy_command(capsys, tmp_path):
    journal = tmp_path / "journal.jsonl"
    entries = []
    for i in range(10):
        entries.append({"task_id": f"t{i}s0", "trace_index": i, "step_index": 0,
                        "annotator": "judge-a", "reviewer": "r1",
                        "verdict": "accepted" if i < 9 else "rejected", "ts": 0.0})
    journal.write_text("".join(json.dumps(e) + "\n" for e in entries))
    code, out, _ = run(capsys, "review", "accuracy", "--journal", str(journal),
                       "--annotator", "judge-a")
    assert code == 0
    assert "0.900" in out
    code, out, _ = run(capsys, "review", "accuracy", "--journal", str(journal))
    assert code == 0
    assert "judge-a" in out and "reviewer r1" in out
