"""Heuristic theta for free-knot splines as the number of data points grows."""
import argparse

import numpy as np

from lossland.schemes import Dataset, FreeKnotSpline
from lossland.theta import instability_scale, theta_heuristic

ap = argparse.ArgumentParser()
ap.add_argument("--knots", type=int, default=3)
ap.add_argument("--sizes", type=int, nargs="+", default=[4, 6, 8, 12])
ap.add_argument("--labels", type=int, default=16)
ap.add_argument("--jobs", type=int, default=1)
args = ap.parse_args()

sp = FreeKnotSpline(args.knots)
print(f"{'n':>4} {'theta_hat':>10} {'cap':>8} {'scale(C=1)':>11}")
for n in args.sizes:
    ds = Dataset(np.linspace(0, 1, n)[:, None])
    est = theta_heuristic(sp, ds, args.labels, num_starts=2, seed=0, jobs=args.jobs)
    th = min(est.heuristic, est.cap)
    sc = instability_scale(th, n, 1.0) if 0 < th < 1 else float("inf")
    print(f"{n:4d} {est.heuristic:10.4f} {est.cap:8.4f} {sc:11.3f}")
