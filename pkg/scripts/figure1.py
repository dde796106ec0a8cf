"""Sample the image clouds of the linear and lightning toy schemes on three points and export CSVs.

Usage: python3 scripts/figure1.py [--step 0.02] [--out results]
"""
import argparse
import json
import os

from lossland.projection_lab import CloudSpec, cloud_summary, figure1_dataset, find_multivalued, sample_image
from lossland.schemes import Polynomial, ToyLightning

ap = argparse.ArgumentParser()
ap.add_argument("--step", type=float, default=0.02)
ap.add_argument("--random-points", type=int, default=10**6)
ap.add_argument("--max-rows", type=int, default=200_000)
ap.add_argument("--out", default="results")
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

os.makedirs(args.out, exist_ok=True)
X = figure1_dataset()
spec = CloudSpec(step=args.step, random_points=args.random_points)
summary = {}
for name, scheme in (("linear", Polynomial(1)), ("toy", ToyLightning())):
    cloud = sample_image(scheme, X, spec, seed=args.seed)
    rows = cloud.export_csv(os.path.join(args.out, f"figure1_{name}.csv"), args.max_rows, args.seed)
    summary[name] = {**cloud_summary(cloud), "csv_rows": rows}
    if name == "toy":
        res = find_multivalued(cloud, seed=args.seed)
        summary[name]["multivalued_label"] = None if res is None else res.to_dict()
print(json.dumps(summary, indent=2, sort_keys=True, default=str))
