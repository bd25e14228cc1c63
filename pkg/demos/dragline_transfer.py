"""One DVORL run on the DragLine chain: full drag source, damped target.

    python3 demos/dragline_transfer.py [--seed 0]
"""

import argparse

from dvorl import pipeline

parser = argparse.ArgumentParser()
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--out", default="runs/demo_dragline")
args = parser.parse_args()

cfg = pipeline.config_from_dict(
    {
        "seed": args.seed,
        "source": {"env_kind": "dragline", "drag": 1.0},
        "target": {"env_kind": "dragline", "drag": 0.6},
        "buffers": {"source_size": 20000, "target_size": 500, "behavior_episodes": 2000},
        "dve": {"selection_threshold": 0.1, "kl": {"method": "histogram"}, "epochs": 10},
        "learner": {"iterations": 200},
    }
)
report = pipeline.run_single(cfg, args.out)
for arm, res in report["arms"].items():
    print(f"{arm:>8}: {res['mean_return']:.3f} +- {res['std_error']:.3f} on {res['buffer_size']} transitions")
print(f"kept fraction {report['values']['kept_fraction']:.3f}; report in {args.out}/report.json")
