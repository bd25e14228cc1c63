"""Train a value estimator on a slip-free source buffer against a slippery
target buffer and look at which transitions it keeps.

    python3 demos/value_transitions.py [--source-size 20000]
"""

import argparse

import numpy as np
from scipy.stats import spearmanr

from dvorl import dve, envs
from dvorl.divergence import KlEstimatorConfig
from dvorl.dve import DveConfig

parser = argparse.ArgumentParser()
parser.add_argument("--source-size", type=int, default=20000)
parser.add_argument("--epochs", type=int, default=20)
args = parser.parse_args()

source_cfg = envs.DomainConfig(slip_prob=0.0)
target_cfg = envs.DomainConfig(slip_prob=0.3)
behavior = envs.train_behavior(envs.make_env(source_cfg, 0), 3000, seed=0)
source = envs.generate_buffer(envs.make_env(source_cfg, 1), behavior, args.source_size, 0.5, seed=1)
target_behavior = envs.train_behavior(envs.make_env(target_cfg, 2), 3000, seed=2)
target = envs.generate_buffer(envs.make_env(target_cfg, 3), target_behavior, 500, 0.1, seed=3)

cfg = DveConfig(kl=KlEstimatorConfig(method="histogram"), epochs=args.epochs, seed=4)
net, state = dve.train_dve(source, target, cfg)
h = np.array(state.history)
per_epoch = len(h) // cfg.epochs
print(f"mean r_phi, first epoch {h[:per_epoch, 0].mean():.3f}, last epoch {h[-per_epoch:, 0].mean():.3f}")

values = dve.value_buffer(net, source).values
print(f"values: min {values.min():.3f} median {np.median(values):.3f} max {values.max():.3f}")
print(f"kept at eps=0.1: {np.mean(values >= 0.1):.1%}")

# per (x, u) pair: how often the target takes it vs the mean value given to it
a = source.arrays
t = target.arrays
names = ["up", "right", "down", "left"]
rows = []
for key in np.unique(np.hstack([a.states, a.actions[:, None]]), axis=0):
    mask = np.all(a.states == key[:2], axis=1) & (a.actions == key[2])
    tmask = np.all(t.states == key[:2], axis=1) & (t.actions == key[2])
    if mask.sum() >= 50:
        rows.append((tmask.mean() / mask.mean(), values[mask].mean(), key, mask.sum()))
rows.sort(key=lambda r: -r[0])
print("\n(x, u) pairs with >= 50 source rows, by target/source frequency ratio")
print("  ratio   mean w   cell     action   source rows")
for ratio, w, key, n in rows[:6] + rows[-6:]:
    cell = (int(round(key[0] * 4)), int(round(key[1] * 4)))
    print(f"  {ratio:5.2f}   {w:6.3f}   {str(cell):7}  {names[int(key[2])]:7}  {n}")
rho = spearmanr([r[0] for r in rows], [r[1] for r in rows])[0]
print(f"\nrank correlation of ratio and mean value over {len(rows)} pairs: {rho:.2f}")
