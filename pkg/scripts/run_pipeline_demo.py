#!/usr/bin/env python3
"""End-to-end pipeline demo against the simulated world.

Generates an oracle-labeled dataset, re-annotates it with the simulated
judge and with rollout hard labels, trains the desk-scale scorer, and runs
the evaluation protocols.  Everything lands in ./demo_run/ and every stage
is seeded, so repeated runs are byte-identical.

Usage: python scripts/run_pipeline_demo.py [--traces 200] [--out demo_run]
"""

from __future__ import annotations

import argparse
from pathlib import Path

from longprm.cli import cli_dispatch


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--traces", type=int, default=200)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", type=Path, default=Path("demo_run"))
    args = parser.parse_args()
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    seed = str(args.seed)

    stages: list[list[str]] = [
        ["simulate", "--traces", str(args.traces), "--seed", seed,
         "--p-err", "0.3", "--p-fix", "0.5",
         "--out", str(out / "oracle.jsonl")],
        ["annotate", "--dataset", str(out / "oracle.jsonl"),
         "--backend", "sim", "--world-seed", seed, "--p-err", "0.3",
         "--p-fix", "0.5", "--judge-accuracy", "0.963",
         "--out", str(out / "judged.jsonl")],
        ["mc-annotate", "--dataset", str(out / "oracle.jsonl"),
         "--backend", "sim", "--world-seed", seed, "--p-err", "0.3",
         "--p-fix", "0.5", "--k", "8", "--seed", "1",
         "--out", str(out / "mc.jsonl")],
        ["eval", "step-level", "--pred", str(out / "judged.jsonl"),
         "--gold", str(out / "oracle.jsonl")],
        ["eval", "step-level", "--pred", str(out / "mc.jsonl"),
         "--gold", str(out / "oracle.jsonl")],
        ["eval", "bins", "--a", str(out / "judged.jsonl"),
         "--b", str(out / "mc.jsonl"), "--bins", "10",
         "--out", str(out / "bins.json"),
         "--emit-plot-data", str(out / "plots")],
        ["train-toy", "--dataset", str(out / "oracle.jsonl"),
         "--out", str(out / "model.txt"), "--report", str(out / "train.json"),
         "--seed", "2"],
        ["eval", "bon", "--scorer", str(out / "model.txt"), "--problems", "50",
         "--n", "1,8,64", "--world-seed", seed, "--p-err", "0.3",
         "--p-fix", "0.5", "--seed", "3", "--out", str(out / "bon.json")],
        ["eval", "bon", "--scorer", "oracle", "--problems", "50",
         "--n", "1,8,64", "--world-seed", seed, "--p-err", "0.3",
         "--p-fix", "0.5", "--seed", "3", "--out", str(out / "bon_oracle.json")],
        ["eval", "step-search", "--scorer", str(out / "model.txt"),
         "--problems", "50", "--n", "4", "--world-seed", seed, "--p-err", "0.3",
         "--p-fix", "0.5", "--seed", "4", "--out", str(out / "search.json")],
        ["eval", "ef-rb", "--scorer", str(out / "model.txt"),
         "--dataset", str(out / "oracle.jsonl")],
        ["eval", "stats", "--dataset", str(out / "oracle.jsonl"),
         "--out", str(out / "stats.json"),
         "--emit-plot-data", str(out / "plots")],
    ]

    for argv in stages:
        print(f"\n$ longprm {' '.join(argv)}")
        code = cli_dispatch(argv)
        if code != 0:
            raise SystemExit(code)
    print(f"\nartifacts in {out}/")


if __name__ == "__main__":
    main()
