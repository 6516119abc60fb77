"""Command line entry point.

Subcommands:

* ``optimize --config c.json [--seed S] [--iterations K] [--out dir]``
* ``check --config c.json --seeds A..B [--out dir]``
* ``oracle --config c.json`` (exact enumeration on discrete domains)
* ``summarize log1 log2 ... [--csv out.csv] [--plots dir]``

Exit code is 0 iff every enabled check passes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import DivoptError
from .harness import (
    ExperimentConfig,
    RunLog,
    run_exact_oracle,
    run_experiment,
    summarize,
    write_summary_csv,
)


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "iterations", None) is not None:
        cfg.iterations = args.iterations
    if getattr(args, "out", None) is not None:
        os.makedirs(args.out, exist_ok=True)
        cfg.out = os.path.join(args.out, f"run_seed{cfg.seed}.jsonl")
    return cfg


def _parse_seed_range(text: str) -> list[int]:
    if ".." in text:
        a, b = text.split("..", 1)
        return list(range(int(a), int(b) + 1))
    return [int(s) for s in text.split(",")]


def _checks_pass(log: RunLog) -> bool:
    return all(c["pass"] for c in log.footer.get("checks", {}).values())


def cmd_optimize(args) -> int:
    cfg = _load_config(args)
    log = run_experiment(cfg)
    print(json.dumps(log.footer, indent=2, sort_keys=True))
    return 0 if _checks_pass(log) and log.footer.get("failure") is None else 1


def cmd_check(args) -> int:
    base = ExperimentConfig.load(args.config)
    logs = []
    for seed in _parse_seed_range(args.seeds):
        cfg = ExperimentConfig.from_dict(base.to_dict())
        cfg.seed = seed
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            cfg.out = os.path.join(args.out, f"run_seed{seed}.jsonl")
        log = run_experiment(cfg)
        status = "pass" if _checks_pass(log) else "FAIL"
        print(f"seed {seed}: {status}")
        logs.append(log)
    summary = summarize(logs)
    print(json.dumps(summary["checks"], indent=2, sort_keys=True))
    ok = all(c["run_pass_rate"] >= 0.9 for c in summary["checks"].values())
    return 0 if ok else 1


def cmd_oracle(args) -> int:
    cfg = _load_config(args)
    log = run_exact_oracle(cfg)
    print(json.dumps(log.footer, indent=2, sort_keys=True))
    return 0 if _checks_pass(log) and log.footer.get("failure") is None else 1


def cmd_summarize(args) -> int:
    logs = [RunLog.load(p) for p in args.logs]
    summary = summarize(logs)
    print(json.dumps(summary["checks"], indent=2, sort_keys=True))
    if args.csv:
        write_summary_csv(summary, args.csv)
        print(f"wrote {args.csv}")
    if args.plots:
        from .plots import render_summary_figures

        for path in render_summary_figures(summary, args.plots):
            print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="divopt",
                                     description="Divergence-decrease black-box optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    p_opt = sub.add_parser("optimize", help="run one experiment")
    p_opt.add_argument("--config", required=True)
    p_opt.add_argument("--seed", type=int)
    p_opt.add_argument("--iterations", type=int)
    p_opt.add_argument("--out")
    p_opt.set_defaults(func=cmd_optimize)

    p_chk = sub.add_parser("check", help="multi-seed sweep with check summary")
    p_chk.add_argument("--config", required=True)
    p_chk.add_argument("--seeds", required=True, help="range A..B or comma list")
    p_chk.add_argument("--out")
    p_chk.set_defaults(func=cmd_check)

    p_orc = sub.add_parser("oracle", help="exact enumeration mode (discrete)")
    p_orc.add_argument("--config", required=True)
    p_orc.add_argument("--seed", type=int)
    p_orc.add_argument("--iterations", type=int)
    p_orc.add_argument("--out")
    p_orc.set_defaults(func=cmd_oracle)

    p_sum = sub.add_parser("summarize", help="aggregate run logs")
    p_sum.add_argument("logs", nargs="+")
    p_sum.add_argument("--csv")
    p_sum.add_argument("--plots", help="directory for rendered figures")
    p_sum.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivoptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
