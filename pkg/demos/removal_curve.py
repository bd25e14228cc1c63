"""High- versus low-value removal on the shifted SlipGrid.

    python3 demos/removal_curve.py [--repetitions 3] [--out runs/demo_removal]
"""

import argparse
from dataclasses import replace

from dvorl import pipeline

parser = argparse.ArgumentParser()
parser.add_argument("--config", default="configs/slipgrid_removal.json")
parser.add_argument("--repetitions", type=int, default=3)
parser.add_argument("--out", default="runs/demo_removal")
args = parser.parse_args()

cfg = pipeline.load_config(args.config)
cfg = replace(cfg, removal=replace(cfg.removal, repetitions=args.repetitions))
summary = pipeline.run_removal_curve(cfg, args.out)

curve = {(c["side"], c["fraction"]): c for c in summary["curve"]}
print("fraction   remove highest      remove lowest")
for f in cfg.removal.fractions:
    hi, lo = curve[("highest", f)], curve[("lowest", f)]
    print(
        f"  {f:.1f}     {hi['mean_return']:7.3f} +- {hi['std_error']:.3f}   "
        f"{lo['mean_return']:7.3f} +- {lo['std_error']:.3f}"
    )
print(f"CSV: {args.out}/removal.csv")
