"""Wall time of gwc and tscp calibration as n and d grow."""
import argparse
import time

import numpy as np

from tscp import gwc_calibrate, tscp_calibrate

p = argparse.ArgumentParser()
p.add_argument("--ns", default="100,1000,10000")
p.add_argument("--ds", default="2,10,20,50")
p.add_argument("--alpha", type=float, default=0.1)
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()

rng = np.random.default_rng(args.seed)
print("n,d,gwc_seconds,tscp_seconds,max_row_evaluations")
for n in (int(s) for s in args.ns.split(",")):
    for d in (int(s) for s in args.ds.split(",")):
        e = np.abs(rng.standard_normal((n, d))) * np.linspace(10, 1, d)
        t0 = time.perf_counter()
        gwc_calibrate(e, args.alpha)
        t1 = time.perf_counter()
        res = tscp_calibrate(e, args.alpha)
        t2 = time.perf_counter()
        evals = max(res.evaluations) if res.searches else 0
        print(f"{n},{d},{t1 - t0:.4f},{t2 - t1:.4f},{evals}")
