"""``cfn`` command line: analyze a graph, simulate a SEM, or run an experiment."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .complexity import ComplexityError
from .graph import GraphError, parse_dag
from .harness import EXPERIMENTS, PlanMismatch
from .predictors import ModelError
from .sem import SemError, parse_sem, simulate
from .stability import normalize

FAULTS = (GraphError, SemError, ModelError, ComplexityError, PlanMismatch, ValueError, OSError)


def _analyze(args) -> None:
    graph = parse_dag(Path(args.graph).read_text(encoding="utf-8"))
    plan = normalize(graph, widen=args.widen)
    print(plan.report(trace=args.trace))
    print(plan.to_text(), end="")


def _simulate(args) -> None:
    graph = parse_dag(Path(args.graph).read_text(encoding="utf-8"))
    spec = parse_sem(Path(args.sem).read_text(encoding="utf-8"))
    if args.n < 1:
        raise ValueError("--n must be positive")
    data = simulate(spec, graph, args.n, args.seed)
    data.to_csv(args.out)


def _experiment(args) -> None:
    run, config_cls = EXPERIMENTS[args.name]
    kwargs = {"seed": args.seed}
    if args.replicates is not None:
        kwargs["replicates"] = args.replicates
    result = run(config_cls(**kwargs))
    for path in result.write(args.out_dir):
        print(path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="stable conditioning set and normalization plan for a DAG")
    p.add_argument("--graph", required=True)
    p.add_argument("--trace", action="store_true")
    p.add_argument("--widen", action="store_true", help="let split nodes absorb every observed parent")
    p.set_defaults(func=_analyze)

    p = sub.add_parser("simulate", help="draw rows from a SEM over a DAG")
    p.add_argument("--graph", required=True)
    p.add_argument("--sem", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_simulate)

    p = sub.add_parser("experiment", help="run one of the bundled experiments")
    p.add_argument("name", choices=sorted(EXPERIMENTS))
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--replicates", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except FAULTS as exc:
        print(f"cfn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
