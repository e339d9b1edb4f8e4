"""Coverage/volume table across calibration sizes for one noise family.

    python scripts/sample_size_sweep.py --noise gaussian-hetero --reps 200 --out sweep.csv
"""
import argparse
import sys

from tscp.cli import benchmark_report
from tscp.simulation import ExperimentConfig, run_experiment

METHODS = ("bonferroni", "unscaled-max", "plugin", "split", "gwc", "tscp", "pop-oracle")


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--noise", default="gaussian-hetero")
    p.add_argument("--sizes", default="30,50,100,300,500")
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    args = p.parse_args()

    chunks = []
    for i, n_cal in enumerate(int(s) for s in args.sizes.split(",")):
        config = ExperimentConfig(d=args.d, n_cal=n_cal, noise=args.noise,
                                  repetitions=args.reps, seed=args.seed, methods=METHODS)
        text = benchmark_report(run_experiment(config, workers=args.workers))
        chunks.append(text if i == 0 else text.split("\n", 1)[1])
        print(f"n_cal={n_cal} done", file=sys.stderr)
    out = "".join(chunks)
    if args.out:
        open(args.out, "w").write(out)
    else:
        sys.stdout.write(out)


if __name__ == "__main__":
    main()
