"""dpalloc command line interface.

    dpalloc run     --problem vra|title1|apportionment --mechanism ... --data ...
    dpalloc repair  vra|title1 ...
    dpalloc synth   --profile michigan-like|florida-like|india-like ...
    dpalloc tau     --epsilon E --delta D

Exit codes: 0 success, 2 bad input (flags, data files, schemas),
3 degenerate configuration (e.g. repair slack exceeding the noisy total).
"""
from __future__ import annotations

import argparse
import sys

from .errors import DegenerateConfiguration, DpAllocError, InputError
from .harness import ExperimentConfig, MECHANISMS, PROBLEMS, aggregate, run_ensemble
from .io import (
    SYNTH_PROFILES,
    emit_report,
    load_csv,
    save_csv,
    synth_generate,
    synth_problem,
)
from .mechanisms import GroupSmoothParams, indist_threshold
from .repair import RepairParams


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", required=True,
                   help="comma-separated list of positive privacy budgets")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", required=True, help="input CSV for the problem schema")
    p.add_argument("--rho", type=float, default=0.25,
                   help="partition-stage budget share for groupsmooth")
    p.add_argument("--max-bucket", type=int, default=None)
    p.add_argument("--out", required=True, help="report output path")
    p.add_argument("--format", choices=("json", "csv-long"), default="json")
    p.add_argument("--workers", type=int, default=1,
                   help="worker threads; never affects output bytes")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpalloc",
        description="Simulate allocation decisions made on differentially private statistics.",
    )
    sub = parser.add_subparsers(dest="command")

    run = sub.add_parser("run", help="run a mechanism/problem ensemble and report metrics")
    run.add_argument("--problem", required=True, choices=PROBLEMS)
    run.add_argument("--mechanism", required=True, choices=MECHANISMS)
    _add_run_options(run)

    repair = sub.add_parser("repair", help="run a repaired pipeline with a standard baseline")
    rsub = repair.add_subparsers(dest="target")
    rv = rsub.add_parser("vra", help="posterior coverage test on decomposed Laplace releases")
    rv.add_argument("--p", type=float, required=True,
                    help="cover when the posterior covered probability reaches p")
    rv.add_argument("--samples", type=int, default=100)
    _add_run_options(rv)
    rt = rsub.add_parser("title1", help="inflationary no-penalty allocation on Laplace releases")
    rt.add_argument("--delta", type=float, required=True,
                    help="allowed probability that some district falls below its true share")
    rt.add_argument("--slack-variant", choices=("appendix", "body"), default="appendix")
    _add_run_options(rt)

    synth = sub.add_parser("synth", help="write a synthetic data CSV")
    synth.add_argument("--profile", required=True, choices=SYNTH_PROFILES)
    synth.add_argument("--n", type=int, default=None)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)

    tau = sub.add_parser("tau", help="print the indistinguishability threshold")
    tau.add_argument("--epsilon", type=float, required=True)
    tau.add_argument("--delta", type=float, required=True)

    return parser


def _parse_epsilons(text: str) -> tuple[float, ...]:
    try:
        eps = tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise InputError(f"bad --epsilon list {text!r}: {exc}") from exc
    if not eps:
        raise InputError("--epsilon needs at least one value")
    return eps


def _run_pipeline(args, problem: str, mechanism: str,
                  vra_repair: RepairParams | None = None,
                  title1_repair_delta: float | None = None,
                  slack_variant: str = "appendix") -> int:
    cfg = ExperimentConfig(
        problem=problem,
        mechanism=mechanism,
        epsilons=_parse_epsilons(args.epsilon),
        n_trials=args.trials,
        base_seed=args.seed,
        smooth=GroupSmoothParams(rho=args.rho, max_bucket=args.max_bucket),
        vra_repair=vra_repair,
        title1_repair_delta=title1_repair_delta,
        slack_variant=slack_variant,
        data_path=args.data,
    )
    data = load_csv(args.data, problem)
    ensembles = run_ensemble(cfg, data, n_workers=args.workers)
    baseline = None
    if cfg.repair_mode:
        baseline = run_ensemble(cfg.without_repair(), data, n_workers=args.workers)
    report = aggregate(ensembles, data, cfg, baseline=baseline)
    emit_report(report, args.format, args.out)
    print(f"wrote {args.out}")
    return 0


def _dispatch(args) -> int:
    if args.command == "run":
        return _run_pipeline(args, args.problem, args.mechanism)
    if args.command == "repair":
        if args.target == "vra":
            return _run_pipeline(
                args, "vra", "dlaplace",
                vra_repair=RepairParams(p=args.p, n_samples=args.samples),
            )
        if args.target == "title1":
            return _run_pipeline(
                args, "title1", "laplace",
                title1_repair_delta=args.delta,
                slack_variant=args.slack_variant,
            )
        raise InputError("repair needs a target: vra or title1")
    if args.command == "synth":
        m = synth_generate(args.profile, args.n, args.seed)
        save_csv(m, args.out)
        print(f"wrote {args.out} ({synth_problem(args.profile)} schema, {m.n_assignees} assignees)")
        return 0
    if args.command == "tau":
        print(format(indist_threshold(args.epsilon, args.delta), ".17g"))
        return 0
    raise InputError("no command given; see dpalloc --help")


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return _dispatch(args)
    except DegenerateConfiguration as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DpAllocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
