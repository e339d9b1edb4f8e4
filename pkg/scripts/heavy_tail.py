"""Student-t noise at several degrees of freedom, small and large calibration sets."""
import argparse

from tscp.simulation import ExperimentConfig, run_experiment

p = argparse.ArgumentParser()
p.add_argument("--dfs", default="1.5,2,3")
p.add_argument("--sizes", default="100,500")
p.add_argument("--d", type=int, default=10)
p.add_argument("--reps", type=int, default=100)
p.add_argument("--seed", type=int, default=11)
args = p.parse_args()

print("n_cal,df,method,coverage_mean,coverage_std,volume_median")
for n_cal in (int(s) for s in args.sizes.split(",")):
    for df in (float(s) for s in args.dfs.split(",")):
        config = ExperimentConfig(d=args.d, n_cal=n_cal, noise=f"student-t({df})",
                                  repetitions=args.reps, seed=args.seed,
                                  methods=("bonferroni", "unscaled-max", "split", "gwc", "tscp"))
        for m, s in run_experiment(config).summaries.items():
            print(f"{n_cal},{df:g},{m},{s.coverage_mean:.4f},{s.coverage_std:.4f},"
                  f"{s.volume_median:.4g}")
