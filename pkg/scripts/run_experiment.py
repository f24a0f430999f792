"""Run one experiment and print its headline table.

    python scripts/run_experiment.py cross-hospital --seed 0 --out-dir results/
"""

import argparse
import time

from cfnorm.harness import EXPERIMENTS

HEADLINE = {"linear-gaussian": "summary", "cross-hospital": "auroc_summary", "perturbation": "means",
            "selection-bias": "means"}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("name", choices=sorted(EXPERIMENTS))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--replicates", type=int)
    parser.add_argument("--out-dir", default="results")
    args = parser.parse_args()

    run, config_cls = EXPERIMENTS[args.name]
    kwargs = {"seed": args.seed}
    if args.replicates:
        kwargs["replicates"] = args.replicates
    start = time.perf_counter()
    result = run(config_cls(**kwargs))
    elapsed = time.perf_counter() - start
    for path in result.write(args.out_dir):
        print("wrote", path)
    print(result.csv_text(HEADLINE[args.name]))
    if args.name == "cross-hospital":
        print(result.csv_text("complexity_summary"))
    print(f"{elapsed:.1f}s")


if __name__ == "__main__":
    main()
